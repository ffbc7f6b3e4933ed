use std::ffi::{CStr, CString};
use std::ptr;

use alphafill::adapter::{
    encode_corpus, pretrain_backbone, train_stage1, train_stage2, AdapterConfig, AdapterModel, ModelConfig,
    PretrainConfig, StageConfig,
};
use alphafill::aeq::{AeqClassifier, AeqConfig};
use alphafill::synth::synth_sample;
use alphafill_ffi::*;

fn last_error() -> String {
    let p = af_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn image(w: usize, h: usize) -> *mut AfImage {
    let bytes = synth_sample(w, h, 1, 0).image.to_rgba8();
    let mut img = ptr::null_mut();
    assert_eq!(unsafe { af_image_from_rgba8(w, h, bytes.as_ptr(), bytes.len(), &mut img) }, AfStatus::Ok);
    img
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(af_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn image_round_trip_through_bytes_and_png() {
    let img = image(12, 9);
    unsafe {
        assert_eq!((af_image_width(img), af_image_height(img)), (12, 9));
        let mut buf = vec![0u8; 12 * 9 * 4];
        assert_eq!(af_image_to_rgba8(img, buf.as_mut_ptr(), buf.len()), AfStatus::Ok);
        assert_eq!(buf, synth_sample(12, 9, 1, 0).image.to_rgba8());
        assert_eq!(af_image_to_rgba8(img, buf.as_mut_ptr(), 3), AfStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = cpath(&dir.path().join("x.png"));
        assert_eq!(af_image_save(img, path.as_ptr()), AfStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(af_image_load(path.as_ptr(), &mut back), AfStatus::Ok);
        let mut buf2 = vec![0u8; buf.len()];
        af_image_to_rgba8(back, buf2.as_mut_ptr(), buf2.len());
        assert_eq!(buf, buf2);
        af_image_free(back);
        af_image_free(img);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(af_image_load(ptr::null(), &mut out), AfStatus::NullArgument);
        assert!(last_error().contains("path"));
        let missing = CString::new("/nonexistent/dir/none.png").unwrap();
        assert_eq!(af_image_load(missing.as_ptr(), &mut out), AfStatus::Io);
        assert!(out.is_null());
        let bytes = [0u8; 8];
        assert_eq!(af_image_from_rgba8(3, 3, bytes.as_ptr(), 8, &mut out), AfStatus::InvalidArgument);

        let img = image(8, 8);
        assert_eq!(af_pad(img, 99, 0.5, 0, &mut out), AfStatus::InvalidArgument);
        assert!(last_error().contains("99"));
        assert_eq!(af_composite_over(img, 2.0, 0.0, 0.0, &mut out), AfStatus::InvalidArgument);
        af_image_free(img);
        af_image_free(ptr::null_mut());
    }
}

#[test]
fn composite_and_pad_match_the_library() {
    let bytes = synth_sample(16, 16, 1, 0).image.to_rgba8();
    let lib = alphafill::rgba::RgbaImage::from_rgba8(16, 16, &bytes).unwrap();
    let img = image(16, 16);
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(af_composite_over(img, 1.0, 1.0, 1.0, &mut out), AfStatus::Ok);
        let mut buf = vec![0u8; 16 * 16 * 4];
        af_image_to_rgba8(out, buf.as_mut_ptr(), buf.len());
        let bg = alphafill::rgba::Background::new([1.0; 3]).unwrap();
        assert_eq!(buf, alphafill::rgba::composite_over(&lib, bg).to_rgba().to_rgba8());
        af_image_free(out);

        assert_eq!(af_pad(img, AfPadding::GreyBackground as u32, 0.5, 0, &mut out), AfStatus::Ok);
        af_image_to_rgba8(out, buf.as_mut_ptr(), buf.len());
        for px in buf.chunks(4).filter(|p| p[3] < 128) {
            assert_eq!(&px[..3], &[128, 128, 128]);
        }
        af_image_free(out);
        af_image_free(img);
    }
}

#[test]
fn aeq_score_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.tikt");
    AeqClassifier::new(AeqConfig::with_base_width(4, 0)).unwrap().save(&path).unwrap();
    let img = image(16, 16);
    unsafe {
        let mut clf = ptr::null_mut();
        assert_eq!(af_classifier_load(cpath(&path).as_ptr(), &mut clf), AfStatus::Ok);
        let mut score = -1.0;
        assert_eq!(af_aeq_score(img, clf, ptr::null(), 0, &mut score), AfStatus::Ok);
        assert!((0.0..=1.0).contains(&score));
        let mask = [0u8; 5];
        assert_eq!(af_aeq_score(img, clf, mask.as_ptr(), mask.len(), &mut score), AfStatus::InvalidArgument);
        assert_eq!(af_aeq_score(img, ptr::null(), ptr::null(), 0, &mut score), AfStatus::NullArgument);
        af_classifier_free(clf);
        af_image_free(img);
    }
}

fn trained_adapter(path: &std::path::Path) {
    let mut cfg = AdapterConfig {
        model: ModelConfig { widths: [4, 8], time_dim: 8, ..ModelConfig::default() },
        image_size: 16,
        validation_batches: 1,
        ..AdapterConfig::default()
    };
    cfg.pretrain = PretrainConfig { max_steps: 2, batch_size: 1, eval_every: 1, ..PretrainConfig::default() };
    cfg.stage1 = StageConfig { steps: 1, batch_size: 1, ..StageConfig::stage1() };
    cfg.stage2 = StageConfig { steps: 1, batch_size: 1, ..StageConfig::stage2() };
    let mut model = AdapterModel::new(cfg).unwrap();
    let items = vec![(synth_sample(16, 16, 1, 0).image, "a shape".to_string())];
    let data = encode_corpus(&model, &items).unwrap();
    pretrain_backbone(&mut model, &data, &data, |_, _| {}).unwrap();
    train_stage1(&mut model, &data, &data, |_, _| {}).unwrap();
    train_stage2(&mut model, &data, &data, |_, _| {}).unwrap();
    model.save(path).unwrap();
}

#[test]
fn inpaint_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapter.tikt");
    trained_adapter(&path);
    let img = image(16, 16);
    let mut mask = vec![0u8; 256];
    for y in 4..10 {
        for x in 3..12 {
            mask[y * 16 + x] = 1;
        }
    }
    let prompt = CString::new("a shape").unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(af_adapter_load(cpath(&path).as_ptr(), &mut model), AfStatus::Ok);
        let mut out = ptr::null_mut();
        let st = af_inpaint(model, img, mask.as_ptr(), mask.len(), prompt.as_ptr(), AfStrategy::BlendedNoise as u32, 0.0, 4, 1, &mut out);
        assert_eq!(st, AfStatus::Ok, "{}", last_error());
        let (mut a, mut b) = (vec![0u8; 1024], vec![0u8; 1024]);
        af_image_to_rgba8(img, a.as_mut_ptr(), a.len());
        af_image_to_rgba8(out, b.as_mut_ptr(), b.len());
        assert_eq!(a, b);
        af_image_free(out);

        let st = af_inpaint(model, img, mask.as_ptr(), mask.len(), prompt.as_ptr(), AfStrategy::PureNoise as u32, 0.0, 4, 1, &mut out);
        assert_eq!(st, AfStatus::Ok);
        af_image_to_rgba8(out, b.as_mut_ptr(), b.len());
        for i in (0..256).filter(|&i| mask[i] == 0) {
            assert_eq!(a[4 * i..4 * i + 4], b[4 * i..4 * i + 4]);
        }
        af_image_free(out);

        let st = af_inpaint(model, img, mask.as_ptr(), mask.len(), prompt.as_ptr(), 7, 0.0, 4, 1, &mut out);
        assert_eq!(st, AfStatus::InvalidArgument);
        let st = af_inpaint(model, img, mask.as_ptr(), mask.len(), prompt.as_ptr(), AfStrategy::BlendedNoise as u32, 1.5, 4, 1, &mut out);
        assert_eq!(st, AfStatus::InvalidArgument);
        let empty = vec![0u8; 256];
        let st = af_inpaint(model, img, empty.as_ptr(), 256, prompt.as_ptr(), AfStrategy::PureNoise as u32, 0.0, 4, 1, &mut out);
        assert_eq!(st, AfStatus::Domain);
        af_adapter_free(model);
        af_image_free(img);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/alphafill.h")).unwrap();
    for name in [
        "af_last_error", "af_version", "af_image_load", "af_image_from_rgba8", "af_image_save", "af_image_width",
        "af_image_height", "af_image_to_rgba8", "af_image_free", "af_composite_over", "af_pad", "af_classifier_load",
        "af_classifier_free", "af_aeq_score", "af_adapter_load", "af_adapter_free", "af_inpaint",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name}");
    }
    assert!(header.contains("typedef struct AfImage AfImage;"));
    assert!(header.contains("AF_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"alphafill.h\"\nint main(void) { AfImage *img = 0; return af_image_width(img) == 0 ? AF_STATUS_OK : AF_PADDING_TELEA; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
