use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use brighteye::checkpoint::Checkpoint;
use brighteye::dataset::Task;
use brighteye::preprocess::{prepare_image, to_unit_pixels, PreprocessConfig, RgbImage};
use brighteye::{BrighteyeModel, DiscDetection, ModelConfig};
use brighteye_ffi::*;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_height: 32,
        image_width: 32,
        patch_size: 16,
        embed_dim: 16,
        depth: 1,
        heads: 2,
        agg_hidden: 16,
        ..ModelConfig::default()
    }
}

fn write_checkpoint(dir: &Path) -> (std::path::PathBuf, Checkpoint) {
    let ck = Checkpoint {
        task: Task::Glaucoma,
        preprocess: PreprocessConfig::default(),
        model: BrighteyeModel::init(tiny_config(), 9).unwrap(),
    };
    let path = dir.join("glaucoma.ckpt");
    ck.save(&path).unwrap();
    (path, ck)
}

fn c_path(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(be_last_error_message()) }.to_string_lossy().into_owned()
}

fn test_image() -> RgbImage {
    let data = (0..60u32)
        .flat_map(|y| (0..80u32).flat_map(move |x| [(x * 3) as u8, (y * 4) as u8, ((x + y) % 200) as u8]))
        .collect();
    RgbImage::from_raw(80, 60, data).unwrap()
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = write_checkpoint(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { be_classifiers_load(c_path(&path).as_ptr(), &mut handle) }, BeStatus::Ok);
    assert!(!handle.is_null());

    let (mut w, mut h) = (0, 0);
    assert_eq!(unsafe { be_classifiers_input_size(handle, &mut w, &mut h) }, BeStatus::Ok);
    assert_eq!((w, h), (32, 32));
    let mut present = false;
    assert_eq!(unsafe { be_classifiers_has_task(handle, 0, &mut present) }, BeStatus::Ok);
    assert!(present);
    assert_eq!(unsafe { be_classifiers_has_task(handle, 3, &mut present) }, BeStatus::Ok);
    assert!(!present);
    assert_eq!(
        unsafe { be_classifiers_has_task(handle, 11, &mut present) },
        BeStatus::InvalidArgument
    );

    let img = test_image();
    let det = BeDetection {
        cx: 40.0,
        cy: 30.0,
        w: 10.0,
        h: 12.0,
        confidence: 0.9,
    };
    let mut probs = [0f32; BE_NUM_TASKS];
    let mut used_crop = false;
    let status = unsafe {
        be_predict(handle, img.as_raw().as_ptr(), 80, 60, &det, 1, probs.as_mut_ptr(), &mut used_crop)
    };
    assert_eq!(status, BeStatus::Ok, "{}", last_error());
    assert!(used_crop);
    let d = DiscDetection {
        cx: 40.0,
        cy: 30.0,
        w: 10.0,
        h: 12.0,
        confidence: 0.9,
    };
    let (prepared, _) = prepare_image(&img, &[d], &ck.preprocess, 32, 32).unwrap();
    let expected = ck.model.predict(&to_unit_pixels(&prepared)).unwrap();
    assert_eq!(probs[0].to_bits(), expected.to_bits());
    assert!(probs[1..].iter().all(|p| p.is_nan()));

    let status = unsafe {
        be_predict(handle, img.as_raw().as_ptr(), 80, 60, ptr::null(), 0, probs.as_mut_ptr(), &mut used_crop)
    };
    assert_eq!(status, BeStatus::Ok);
    assert!(!used_crop);
    unsafe { be_classifiers_free(handle) };
}

#[test]
fn load_errors_have_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle = ptr::null_mut();
    let missing = c_path(&dir.path().join("none.ckpt"));
    assert_eq!(unsafe { be_classifiers_load(missing.as_ptr(), &mut handle) }, BeStatus::NotFound);
    assert!(handle.is_null());
    assert!(last_error().contains("none.ckpt"));

    let bogus = dir.path().join("bogus.ckpt");
    std::fs::write(&bogus, b"not a checkpoint\n").unwrap();
    assert_eq!(
        unsafe { be_classifiers_load(c_path(&bogus).as_ptr(), &mut handle) },
        BeStatus::Incompatible
    );
    assert_eq!(unsafe { be_classifiers_load(ptr::null(), &mut handle) }, BeStatus::NullPointer);
    unsafe { be_classifiers_free(ptr::null_mut()) };
}

#[test]
fn metric_entry_points() {
    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut out = f64::NAN;
    assert_eq!(
        unsafe { be_tpr_at_specificity(scores.as_ptr(), labels.as_ptr(), 4, 0.95, &mut out) },
        BeStatus::Ok
    );
    assert_eq!(out, 1.0);
    assert_eq!(unsafe { be_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) }, BeStatus::Ok);
    assert_eq!(out, 1.0);
    let single = [1u8; 4];
    assert_eq!(
        unsafe { be_auc(scores.as_ptr(), single.as_ptr(), 4, &mut out) },
        BeStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
    let pred = [1u8, 0, 0, 1];
    let truth = [1u8, 1, 0, 0];
    assert_eq!(
        unsafe { be_normalized_hamming(pred.as_ptr(), truth.as_ptr(), 4, &mut out) },
        BeStatus::Ok
    );
    assert_eq!(out, 0.5);
    assert!(last_error().is_empty());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(be_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_exports_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/brighteye.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "be_classifiers_load",
        "be_classifiers_free",
        "be_classifiers_input_size",
        "be_classifiers_has_task",
        "be_predict",
        "be_tpr_at_specificity",
        "be_auc",
        "be_normalized_hamming",
        "be_last_error_message",
        "be_version",
        "typedef struct BeClassifiers BeClassifiers;",
        "BE_STATUS_INCOMPATIBLE = 4",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // the C syntax check needs a compiler; skip quietly without one
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        return;
    };
    assert!(status.success());
}
