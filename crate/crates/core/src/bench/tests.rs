use super::*;
use crate::adapter::NoiseStrategy;
use crate::aeq::{compute_aeq, AeqClassifier, AeqConfig};
use crate::rgba::{save_mask_png, save_png, InpaintMask, RgbaImage};
use crate::synth::synth_sample;

fn cases(n: u64) -> Vec<BenchmarkCase> {
    (0..n)
        .map(|i| {
            let s = synth_sample(32, 32, 5, i);
            let mask = generate_mask(&MaskSpec::new(MaskKind::Bezier, i), 32, 32, None).unwrap();
            BenchmarkCase::new(format!("c{i}"), s.image, mask, s.prompt, s.prompt_simple).unwrap()
        })
        .collect()
}

fn small_clf() -> AeqClassifier {
    AeqClassifier::new(AeqConfig::with_base_width(4, 1)).unwrap()
}

/// Changes one pixel outside the mask.
struct Leaky;

impl InpaintModel for Leaky {
    fn name(&self) -> String {
        "leaky".into()
    }

    fn inpaint(&self, image: &RgbaImage, mask: &InpaintMask, _: &str, _: NoiseStrategy, _: u64) -> Result<RgbaImage, BenchError> {
        let i = (0..image.len()).find(|&i| !mask.is_masked(i)).unwrap();
        let mut out = image.clone();
        let (x, y) = (i % image.width(), i / image.width());
        let mut p = out.pixel(x, y);
        p[3] = if p[3] > 0.5 { 0.0 } else { 1.0 };
        out.set_pixel(x, y, p);
        Ok(out)
    }
}

/// Fails on one specific case.
struct Flaky;

impl InpaintModel for Flaky {
    fn name(&self) -> String {
        "flaky".into()
    }

    fn inpaint(&self, image: &RgbaImage, m: &InpaintMask, p: &str, s: NoiseStrategy, seed: u64) -> Result<RgbaImage, BenchError> {
        if p == cases(3)[1].prompt {
            return Err(BenchError::Metric("boom".into()));
        }
        Identity.inpaint(image, m, p, s, seed)
    }
}

#[test]
fn identity_model_scores_the_caps_under_both_strategies() {
    let cs = cases(3);
    let clf = small_clf();
    let r = run_suite(&cs, &Identity, &SuiteConfig::default(), Some(&clf), None).unwrap();
    assert_eq!(r.rows.len(), 6);
    assert_eq!(r.aggregates.len(), 2);
    let expected_aeq: f64 =
        cs.iter().map(|c| compute_aeq(&c.image, Some(&c.mask), &clf).unwrap().score).sum::<f64>() / 3.0;
    for a in &r.aggregates {
        assert_eq!(a.ssim, 1.0);
        assert_eq!(a.psnr, PSNR_CAP);
        assert_eq!(a.failed, 0);
        assert!((a.aeq.unwrap() - expected_aeq).abs() < 1e-12);
    }
}

#[test]
fn grey_fill_scores_below_identity() {
    let cs = cases(3);
    let id = run_suite(&cs, &Identity, &SuiteConfig::default(), None, None).unwrap();
    let grey = run_suite(&cs, &GreyFill, &SuiteConfig::default(), None, None).unwrap();
    assert!(grey.aggregates[0].ssim < id.aggregates[0].ssim);
    assert!(grey.aggregates[0].psnr < id.aggregates[0].psnr);
}

#[test]
fn blend_contract_violations_are_rejected() {
    let cs = cases(2);
    let bad = Leaky.inpaint(&cs[0].image, &cs[0].mask, "", NoiseStrategy::PureNoise, 0).unwrap();
    let err = evaluate(&cs[0], &bad, &Scorers::default(), "t").unwrap_err();
    assert!(err.to_string().contains("blend contract violated"), "{err}");
    let r = run_suite(&cs, &Leaky, &SuiteConfig::default(), None, None).unwrap();
    assert!(r.rows.iter().all(|row| row.metrics.is_none()));
    assert!(r.rows.iter().all(|row| row.error.as_deref().unwrap().contains("blend contract violated")));
    assert_eq!(r.aggregates[0].failed, 2);
}

#[test]
fn failures_are_recorded_and_the_suite_continues() {
    let cs = cases(3);
    let r = run_suite(&cs, &Flaky, &SuiteConfig::default(), None, None).unwrap();
    let failed: Vec<&str> = r.rows.iter().filter(|x| x.error.is_some()).map(|x| x.case_id.as_str()).collect();
    assert_eq!(failed, ["c1", "c1"]);
    assert_eq!(r.aggregates[0].cases, 3);
    assert_eq!(r.aggregates[0].failed, 1);
}

#[test]
fn hidden_colour_changes_do_not_move_composite_metrics() {
    let c = &cases(1)[0];
    let n = c.image.len();
    let mut rgb = c.image.rgb().to_vec();
    let mut changed = 0;
    for i in 0..n {
        if c.mask.is_masked(i) && c.image.alpha()[i] == 0.0 {
            for k in 0..3 {
                rgb[k * n + i] = 1.0 - rgb[k * n + i];
            }
            changed += 1;
        }
    }
    assert!(changed > 0);
    let res = c.image.clone().with_rgb(rgb).unwrap();
    let m = evaluate(c, &res, &Scorers::default(), "t").unwrap();
    assert_eq!(m.psnr, PSNR_CAP);
    assert_eq!(m.ssim, 1.0);
}

#[test]
fn white_black_average_is_order_invariant_and_aggregates_are_plain_means() {
    let cs = cases(4);
    let r = run_suite(&cs, &GreyFill, &SuiteConfig::default(), None, None).unwrap();
    for row in &r.rows {
        let m = row.metrics.as_ref().unwrap();
        assert_eq!(m.psnr, 0.5 * (m.psnr_black + m.psnr_white));
        assert_eq!(m.ssim, 0.5 * (m.ssim_black + m.ssim_white));
    }
    let pure: Vec<f64> =
        r.rows.iter().filter(|x| x.strategy == "pure-noise").map(|x| x.metrics.as_ref().unwrap().ssim).collect();
    assert_eq!(r.aggregates[0].ssim, pure.iter().sum::<f64>() / pure.len() as f64);
}

#[test]
fn reports_are_deterministic() {
    let cs = cases(3);
    let clf = small_clf();
    let a = run_suite(&cs, &GreyFill, &SuiteConfig::default(), Some(&clf), None).unwrap();
    let b = run_suite(&cs, &GreyFill, &SuiteConfig::default(), Some(&clf), None).unwrap();
    assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
    assert_eq!(to_csv(&a).unwrap(), to_csv(&b).unwrap());
    let csv = to_csv(&a).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.starts_with("case_id,strategy,seed,status,aeq,psnr,ssim"));
    let svg = to_svg(&a, "ssim");
    assert!(svg.starts_with("<svg") && svg.contains("pure-noise"));
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&a, dir.path()).unwrap();
    assert_eq!(files.len(), 5);
}

#[test]
fn duplicate_ids_and_empty_strategy_lists_are_rejected() {
    let mut cs = cases(2);
    cs[1].id = cs[0].id.clone();
    assert!(run_suite(&cs, &Identity, &SuiteConfig::default(), None, None).is_err());
    let cfg = SuiteConfig { strategies: vec![], ..SuiteConfig::default() };
    assert!(run_suite(&cases(1), &Identity, &cfg, None, None).is_err());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cs = cases(2);
    save_png(&cs[0].image, dir.path().join("a.png")).unwrap();
    save_mask_png(cs[0].mask.mask(), dir.path().join("a_mask.png")).unwrap();
    save_png(&cs[1].image, dir.path().join("b.png")).unwrap();
    let manifest = serde_json::json!([
        {"image": "a.png", "mask": "a_mask.png", "prompt": "p", "prompt_simple": "q"},
        {"id": "second", "image": "b.png", "mask_spec": {"kind": "rectangle", "seed": 3, "box": [1, 2, 9, 10]}}
    ]);
    let path = dir.path().join("suite.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded[0].id, "case-000");
    assert_eq!(loaded[0].mask, cs[0].mask);
    assert_eq!(loaded[0].prompt_simple, "q");
    assert_eq!(loaded[1].id, "second");
    assert_eq!(loaded[1].mask.mask().count(), 64);
    std::fs::write(&path, r#"[{"image": "a.png"}]"#).unwrap();
    assert!(load_manifest(&path).is_err());
}
