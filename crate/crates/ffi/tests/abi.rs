use std::ffi::{CStr, CString};
use std::ptr;

use reid_lstm::dataset::{generate_synthetic, save_dataset, SyntheticSpec};
use reid_lstm::model::embed;
use reid_lstm::{SeededRng, SiameseParams};
use reid_lstm_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = reid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        identities: 3,
        cameras: 2,
        images_per_camera: 1,
        rows: 4,
        d: 5,
        ..SyntheticSpec::default()
    }
}

#[test]
fn model_embedding_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    let params = SiameseParams::init(5, 3, 4, &mut SeededRng::new(7)).unwrap();
    params.save(&path).unwrap();

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { reid_model_load(cstr(&path).as_ptr(), &mut model) }, ReidStatus::Ok);
    let (mut r, mut d, mut n, mut e) = (0, 0, 0, 0);
    assert_eq!(unsafe { reid_model_dims(model, &mut r, &mut d, &mut n, &mut e) }, ReidStatus::Ok);
    assert_eq!((r, d, n, e), (4, 5, 3, 12));

    let set = generate_synthetic(&small_spec()).unwrap();
    let item = &set.items()[0];
    let mut out = vec![0.0; e];
    let feats = item.seq.concat();
    let status = unsafe { reid_model_embed(model, feats.as_ptr(), feats.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(status, ReidStatus::Ok);
    assert_eq!(out, embed(&params, &item.seq).unwrap());

    let status = unsafe { reid_model_embed(model, feats.as_ptr(), feats.len() - 1, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, ReidStatus::Dimension);
    assert!(last_error().contains("expected 4x5"));
    let status = unsafe { reid_model_embed(model, feats.as_ptr(), feats.len(), out.as_mut_ptr(), 2) };
    assert_eq!(status, ReidStatus::BufferTooSmall);
    unsafe { reid_model_free(model) };
}

#[test]
fn load_failures_report_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.model");
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { reid_model_load(cstr(&missing).as_ptr(), &mut model) }, ReidStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("nope.model"));

    let junk = dir.path().join("junk.model");
    std::fs::write(&junk, b"NOTAMODEL").unwrap();
    assert_eq!(unsafe { reid_model_load(cstr(&junk).as_ptr(), &mut model) }, ReidStatus::Format);

    assert_eq!(unsafe { reid_model_load(ptr::null(), &mut model) }, ReidStatus::NullPointer);
    assert_eq!(unsafe { reid_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, ReidStatus::NullPointer);
    unsafe { reid_model_free(ptr::null_mut()) };
}

#[test]
fn success_clears_last_error() {
    let mut out = 0.0;
    assert_eq!(unsafe { reid_contrastive_loss(-1.0, 0, 0.5, &mut out) }, ReidStatus::InvalidArgument);
    assert!(!reid_last_error().is_null());
    assert_eq!(unsafe { reid_contrastive_loss(0.0, 1, 0.5, &mut out) }, ReidStatus::Ok);
    assert!(reid_last_error().is_null());
    assert_eq!(out, 0.125);
}

#[test]
fn distance_and_loss() {
    let a = [0.0, 0.0];
    let b = [3.0, 4.0];
    let mut d = 0.0;
    assert_eq!(unsafe { reid_distance(a.as_ptr(), b.as_ptr(), 2, &mut d) }, ReidStatus::Ok);
    assert_eq!(d, 5.0);
    let mut l = 0.0;
    assert_eq!(unsafe { reid_contrastive_loss(d, 0, 0.5, &mut l) }, ReidStatus::Ok);
    assert_eq!(l, 12.5);
    assert_eq!(unsafe { reid_contrastive_loss(d, 2, 0.5, &mut l) }, ReidStatus::InvalidArgument);
}

#[test]
fn feature_set_access() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let set = generate_synthetic(&small_spec()).unwrap();
    save_dataset(&manifest, std::slice::from_ref(&set)).unwrap();

    let name = CString::new(set.name.clone()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { reid_features_load(cstr(&manifest).as_ptr(), name.as_ptr(), &mut handle) }, ReidStatus::Ok);
    let (mut count, mut rows, mut dim) = (0, 0, 0);
    assert_eq!(unsafe { reid_features_dims(handle, &mut count, &mut rows, &mut dim) }, ReidStatus::Ok);
    assert_eq!((count, rows, dim), (6, 4, 5));

    let mut buf = vec![0.0; rows * dim];
    let (mut id, mut cam) = (0u32, 0u32);
    for (k, item) in set.items().iter().enumerate() {
        let s = unsafe { reid_features_item(handle, k, buf.as_mut_ptr(), buf.len(), &mut id, &mut cam) };
        assert_eq!(s, ReidStatus::Ok);
        assert_eq!(buf, item.seq.concat());
        assert_eq!((id, cam), (item.identity, item.camera));
    }
    let s = unsafe { reid_features_item(handle, count, buf.as_mut_ptr(), buf.len(), &mut id, &mut cam) };
    assert_eq!(s, ReidStatus::InvalidArgument);
    unsafe { reid_features_free(handle) };

    let other = CString::new("hog").unwrap();
    let s = unsafe { reid_features_load(cstr(&manifest).as_ptr(), other.as_ptr(), &mut handle) };
    assert_eq!(s, ReidStatus::InvalidArgument);
    assert!(handle.is_null());
}
