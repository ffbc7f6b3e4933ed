use super::*;
use crate::edge::BinaryMask;
use crate::nn::{Graph, Tensor};
use crate::rgba::{InpaintMask, RgbaImage};
use crate::rng::substream;
use crate::synth::synth_image;

fn tiny_config() -> AdapterConfig {
    let mut cfg = AdapterConfig {
        model: ModelConfig { widths: [4, 8], time_dim: 8, lora_rank: 2, lora_alpha: 4.0, ..ModelConfig::default() },
        image_size: 16,
        validation_batches: 1,
        ..AdapterConfig::default()
    };
    cfg.pretrain = PretrainConfig { max_steps: 4, batch_size: 2, eval_every: 2, ..PretrainConfig::default() };
    cfg.stage1 = StageConfig { steps: 2, batch_size: 2, ..StageConfig::stage1() };
    cfg.stage2 = StageConfig { steps: 2, batch_size: 1, ..StageConfig::stage2() };
    cfg
}

fn corpus(model: &AdapterModel, n: usize) -> Vec<EncodedImage> {
    let s = model.config.image_size;
    let items: Vec<(RgbaImage, String)> = (0..n as u64).map(|i| (synth_image(s, s, 7, i), format!("shape {i}"))).collect();
    encode_corpus(model, &items).unwrap()
}

fn randomize(model: &mut AdapterModel, prefixes: &[&str], seed: u64) {
    let mut rng = substream(seed, "randomize");
    for p in prefixes {
        let ids: Vec<_> = model.store.ids_with_prefix(p).collect();
        for id in ids {
            let shape = model.store.tensor(id).shape().to_vec();
            model.store.set(id, Tensor::randn(&shape, &mut rng).map(|v| 0.1 * v)).unwrap();
        }
    }
}

fn two_frame_input(model: &AdapterModel, seed: u64) -> DenoiseBatch {
    let mut rng = substream(seed, "input");
    let c = model.latent_channels();
    let zt = Tensor::randn(&[2, c, 4, 4], &mut rng);
    let cond = Tensor::randn(&[2, c + 1, 4, 4], &mut rng);
    DenoiseBatch {
        zt,
        cond,
        timesteps: vec![17, 17],
        prompts: model.frame_prompts(&["red ring".to_string()]),
        gates: model.frame_gates(1),
    }
}

fn split(b: &DenoiseBatch, i: usize) -> DenoiseBatch {
    let row = |t: &Tensor| {
        let n = t.len() / 2;
        let mut s = t.shape().to_vec();
        s[0] = 1;
        Tensor::new(&s, t.data()[i * n..(i + 1) * n].to_vec()).unwrap()
    };
    DenoiseBatch {
        zt: row(&b.zt),
        cond: row(&b.cond),
        timesteps: vec![b.timesteps[i]],
        prompts: vec![b.prompts[i].clone()],
        gates: vec![b.gates[i]],
    }
}

fn predict(model: &AdapterModel, b: &DenoiseBatch, two_frame: bool) -> Tensor {
    let mut g = Graph::no_grad();
    let v = model.forward(&mut g, b, two_frame).unwrap();
    g.value(v).clone()
}

#[test]
fn fresh_adapter_equals_independent_backbone_passes() {
    let mut model = AdapterModel::new(tiny_config()).unwrap();
    randomize(&mut model, &[BACKBONE_PREFIX], 0);
    for seed in 0..3 {
        let b = two_frame_input(&model, seed);
        let joint = predict(&model, &b, true);
        assert_eq!(joint.shape(), b.zt.shape());
        let mut sep = Vec::new();
        for i in 0..2 {
            let mut single = split(&b, i);
            single.gates = vec![0.0];
            sep.extend_from_slice(predict(&model, &single, false).data());
        }
        assert!(joint.data().iter().zip(&sep).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn lora_is_gated_to_the_alpha_frame() {
    let mut model = AdapterModel::new(tiny_config()).unwrap();
    randomize(&mut model, &[BACKBONE_PREFIX, LORA_PREFIX], 1);
    let b = two_frame_input(&model, 4);
    let joint = predict(&model, &b, true);
    let rgb = predict(&model, &{ let mut s = split(&b, 0); s.gates = vec![0.0]; s }, false);
    let alpha_on = predict(&model, &split(&b, 1), false);
    let alpha_off = predict(&model, &{ let mut s = split(&b, 1); s.gates = vec![0.0]; s }, false);
    let n = rgb.len();
    assert!(joint.data()[..n].iter().zip(rgb.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(joint.data()[n..].iter().zip(alpha_on.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(alpha_on.max_abs_diff(&alpha_off) > 1e-6);
}

#[test]
fn conditioning_mismatch_is_an_error() {
    let model = AdapterModel::new(tiny_config()).unwrap();
    let mut b = two_frame_input(&model, 0);
    b.cond = Tensor::zeros(&[2, 3, 4, 4]);
    assert!(matches!(model.forward(&mut Graph::no_grad(), &b, true), Err(AdapterError::Condition(_))));
    let mut b = two_frame_input(&model, 0);
    b.timesteps = vec![5000, 5000];
    assert!(model.forward(&mut Graph::no_grad(), &b, true).is_err());
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let report = loss_grad_check(tiny_config(), 4, 2, 1e-5, 1e-4, Some(3)).unwrap();
    assert!(report.entries.iter().any(|e| e.name.starts_with(ATTN_PREFIX)));
    assert!(report.entries.iter().any(|e| e.name.starts_with(ALIGN_PREFIX)));
    assert!(report.entries.iter().any(|e| e.name.starts_with(LORA_PREFIX)));
    assert!(!report.entries.iter().any(|e| e.name.starts_with(BACKBONE_PREFIX)));
    assert!(report.passed, "{:?}", report.worst());
}

#[test]
fn stages_update_only_their_parameters() {
    let mut model = AdapterModel::new(tiny_config()).unwrap();
    let data = corpus(&model, 3);
    let pre = pretrain_backbone(&mut model, &data, &data, |_, _| {}).unwrap();
    assert!(pre.steps > 0);
    assert!(model.store.trainable().is_empty());
    assert_eq!(model.stage, Stage::Pretrained);
    let hash = model.backbone_hash();
    assert_eq!(model.lora_delta_max(), 0.0);
    let adapters = model.store.records_with_prefix(ALIGN_PREFIX);
    let attn = model.store.records_with_prefix(ATTN_PREFIX);
    let lora0 = model.store.records_with_prefix(LORA_PREFIX);
    train_stage1(&mut model, &data, &data, |_, _| {}).unwrap();
    assert_eq!(model.backbone_hash(), hash);
    assert_eq!(model.store.records_with_prefix(ALIGN_PREFIX), adapters);
    assert_eq!(model.store.records_with_prefix(ATTN_PREFIX), attn);
    assert_ne!(model.store.records_with_prefix(LORA_PREFIX), lora0);
    // new modules are still zero: two-frame equals per-frame with stage-1 LoRA
    let b = two_frame_input(&model, 5);
    let joint = predict(&model, &b, true);
    let sep: Vec<f64> = (0..2).flat_map(|i| predict(&model, &split(&b, i), false).into_data()).collect();
    assert!(joint.data().iter().zip(&sep).all(|(a, b)| (a - b).abs() < 1e-12));
    train_stage2(&mut model, &data, &data, |_, _| {}).unwrap();
    assert_eq!(model.backbone_hash(), hash);
    assert_ne!(model.store.records_with_prefix(ATTN_PREFIX), attn);
    assert_eq!(model.stage, Stage::Stage2);
}

#[test]
fn stage_order_is_enforced() {
    let mut model = AdapterModel::new(tiny_config()).unwrap();
    let data = corpus(&model, 2);
    assert!(matches!(train_stage1(&mut model, &data, &data, |_, _| {}), Err(AdapterError::Untrained(_))));
    assert!(matches!(train_stage2(&mut model, &data, &data, |_, _| {}), Err(AdapterError::Untrained(_))));
    assert!(matches!(pretrain_backbone(&mut model, &[], &data, |_, _| {}), Err(AdapterError::EmptyCorpus)));
}

#[test]
fn pretraining_is_deterministic() {
    let run = || {
        let mut model = AdapterModel::new(tiny_config()).unwrap();
        let data = corpus(&model, 2);
        let r = pretrain_backbone(&mut model, &data, &data, |_, _| {}).unwrap();
        (r.losses, model.backbone_hash())
    };
    assert_eq!(run(), run());
}

fn trained_tiny() -> AdapterModel {
    let mut model = AdapterModel::new(tiny_config()).unwrap();
    let data = corpus(&model, 2);
    pretrain_backbone(&mut model, &data, &data, |_, _| {}).unwrap();
    model
}

fn centre_mask(n: usize) -> InpaintMask {
    InpaintMask::new(BinaryMask::from_fn(n, n, |x, y| (4..12).contains(&x) && (4..12).contains(&y))).unwrap()
}

#[test]
fn untrained_model_cannot_inpaint() {
    let model = AdapterModel::new(tiny_config()).unwrap();
    let img = synth_image(16, 16, 0, 0);
    let r = inpaint(&model, &img, &centre_mask(16), "x", NoiseStrategy::PureNoise, 2, 0);
    assert!(matches!(r, Err(AdapterError::Untrained(_))));
}

#[test]
fn zero_strength_returns_the_input() {
    let model = trained_tiny();
    let img = synth_image(16, 16, 0, 1);
    let out = inpaint(&model, &img, &centre_mask(16), "x", NoiseStrategy::BlendedNoise(0.0), 10, 3).unwrap();
    assert_eq!(out, img);
}

#[test]
fn sampling_keeps_unmasked_pixels_and_valid_alpha() {
    let model = trained_tiny();
    let img = synth_image(20, 18, 0, 2);
    let mask = InpaintMask::new(BinaryMask::from_fn(20, 18, |x, y| x > 6 && y < 12)).unwrap();
    for (seed, strategy) in [(0, NoiseStrategy::PureNoise), (1, NoiseStrategy::BlendedNoise(0.99)), (2, NoiseStrategy::BlendedNoise(0.3))] {
        let out = inpaint(&model, &img, &mask, "ring", strategy, 4, seed).unwrap();
        assert_eq!(out.dims(), img.dims());
        for i in 0..img.len() {
            if !mask.is_masked(i) {
                assert_eq!(out.alpha()[i], img.alpha()[i]);
                assert_eq!(out.rgb_at(i), img.rgb_at(i));
            }
            assert!((0.0..=1.0).contains(&out.alpha()[i]));
        }
        let again = inpaint(&model, &img, &mask, "ring", strategy, 4, seed).unwrap();
        assert_eq!(out, again);
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = trained_tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.tikt");
    model.save(&path).unwrap();
    let back = AdapterModel::load(&path).unwrap();
    assert_eq!(back.stage, Stage::Pretrained);
    assert_eq!(back.config, model.config);
    assert_eq!(back.store.records(), model.store.records());
    let names: Vec<String> = model.records().unwrap().into_iter().map(|r| r.0).collect();
    for p in [BACKBONE_PREFIX, LORA_PREFIX, ALIGN_PREFIX, ATTN_PREFIX, "meta/"] {
        assert!(names.iter().any(|n| n.starts_with(p)), "{p}");
    }
}

#[test]
fn bad_configs_are_rejected() {
    let mut cfg = tiny_config();
    cfg.image_size = 20;
    assert!(AdapterModel::new(cfg).is_err());
    let mut cfg = tiny_config();
    cfg.schedule.beta_end = 2.0;
    assert!(AdapterModel::new(cfg).is_err());
}

