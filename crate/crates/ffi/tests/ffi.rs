use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use occlusia::annotate::SegmentsFile;
use occlusia::synth::{make_scenes, random_scene, render};
use occlusia_ffi::*;

fn cstr(s: &std::path::Path) -> CString {
    CString::new(s.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(occ_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn samples<'a>(r: *const OccRaster) -> &'a [f32] {
    let n = occ_raster_width(r) * occ_raster_height(r) * occ_raster_channels(r);
    std::slice::from_raw_parts(occ_raster_data(r), n)
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
}

#[test]
fn raster_round_trips_through_fmap() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cstr(&tmp.path().join("r.fmap"));
    let data: Vec<f32> = (0..24).map(|v| v as f32 * 0.5).collect();
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(occ_raster_new(4, 3, 2, data.as_ptr(), &mut r), OccStatus::Ok);
        assert_eq!((occ_raster_width(r), occ_raster_height(r), occ_raster_channels(r)), (4, 3, 2));
        assert_eq!(occ_raster_save_fmap(r, path.as_ptr()), OccStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(occ_raster_load_fmap(path.as_ptr(), &mut back), OccStatus::Ok);
        assert_eq!(samples(back), &data[..]);
        occ_raster_free(r);
        occ_raster_free(back);
    }
}

#[test]
fn failures_report_status_and_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.fmap");
    fs::write(&bad, b"NOPE\0\x02\0\0\0\x02\0\0\0\x01\0").unwrap();
    let bad = cstr(&bad);
    let missing = cstr(&tmp.path().join("missing.fmap"));
    unsafe {
        let mut r = ptr::null_mut();
        assert_eq!(occ_raster_load_fmap(bad.as_ptr(), &mut r), OccStatus::Format);
        assert!(r.is_null());
        assert!(last_error().contains("magic"), "{}", last_error());
        assert_eq!(occ_raster_load_fmap(missing.as_ptr(), &mut r), OccStatus::Io);
        assert_eq!(occ_raster_load_fmap(ptr::null(), &mut r), OccStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(occ_raster_new(2, 2, 1, ptr::null(), &mut r), OccStatus::NullPointer);
        let data = [0.0f32; 4];
        assert_eq!(occ_raster_new(2, 2, 1, data.as_ptr(), ptr::null_mut()), OccStatus::NullPointer);
        assert_eq!(occ_raster_new(0, 2, 1, data.as_ptr(), &mut r), OccStatus::InvalidInput);
        assert_eq!(occ_raster_width(ptr::null()), 0);
        assert!(occ_raster_data(ptr::null()).is_null());
        occ_raster_free(ptr::null_mut());
        occ_model_free(ptr::null_mut());
        occ_scored_free(ptr::null_mut());
    }
}

#[test]
fn model_forward_predict_and_evaluate() {
    let (_, scene) = make_scenes(1, 5, 0.5, 40, 40, 0).unwrap().remove(0);
    let img = scene.image.data().to_vec();
    let gt_e = scene.gt.edge.data().to_vec();
    let gt_o = scene.gt.orient.data().to_vec();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(occ_model_init(scene.image.channels(), 3, &mut model), OccStatus::Ok);
        assert_eq!(occ_model_receptive_field(model, OccHead::Boundary), 15);
        assert_eq!(occ_model_receptive_field(model, OccHead::Orientation), 17);

        let mut image = ptr::null_mut();
        assert_eq!(occ_raster_new(40, 40, scene.image.channels(), img.as_ptr(), &mut image), OccStatus::Ok);
        let (mut e, mut o) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(occ_model_forward(model, image, &mut e, &mut o), OccStatus::Ok);
        assert!(samples(e).iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(occ_raster_width(o), 40);

        let mut single = ptr::null_mut();
        assert_eq!(occ_infer(e, o, 0.0, &mut single), OccStatus::Ok);
        let scales = [1.0];
        let mut pred = ptr::null_mut();
        assert_eq!(occ_predict(model, image, scales.as_ptr(), 1, &mut pred), OccStatus::Ok);
        for k in 0..4 {
            assert!(same_bits(samples(occ_scored_raster(single, k)), samples(occ_scored_raster(pred, k))));
        }
        assert!(occ_scored_raster(pred, 4).is_null());
        let orient = samples(occ_scored_raster(pred, 1));
        assert_eq!(occ_scored_support(pred), orient.iter().filter(|v| v.is_finite()).count());

        let (mut ge, mut go) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(occ_raster_new(40, 40, 1, gt_e.as_ptr(), &mut ge), OccStatus::Ok);
        assert_eq!(occ_raster_new(40, 40, 1, gt_o.as_ptr(), &mut go), OccStatus::Ok);
        let n = occ_threshold_count();
        assert_eq!(n, 33);
        let (mut recall, mut acc) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(occ_eval_aor(pred, ge, go, 0.0075, recall.as_mut_ptr(), acc.as_mut_ptr()), OccStatus::Ok);
        assert!(recall.iter().all(|r| (0.0..=1.0).contains(r)));
        assert!(recall.windows(2).all(|w| w[1] <= w[0]));
        assert!(acc.iter().all(|a| a.is_nan() || (0.0..=1.0).contains(a)));

        let tmp = tempfile::tempdir().unwrap();
        let path = cstr(&tmp.path().join("m.docm"));
        assert_eq!(occ_model_save(model, path.as_ptr()), OccStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(occ_model_load(path.as_ptr(), &mut loaded), OccStatus::Ok);
        let (mut e2, mut o2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(occ_model_forward(loaded, image, &mut e2, &mut o2), OccStatus::Ok);
        assert!(same_bits(samples(e), samples(e2)));

        let mut tiny = ptr::null_mut();
        assert_eq!(occ_raster_new(2, 2, scene.image.channels(), img.as_ptr(), &mut tiny), OccStatus::Ok);
        let mut none = ptr::null_mut();
        assert_ne!(occ_predict(model, tiny, scales.as_ptr(), 1, &mut none), OccStatus::Ok);
        assert!(none.is_null());

        for r in [image, e, o, ge, go, e2, o2, tiny] {
            occ_raster_free(r);
        }
        occ_scored_free(single);
        occ_scored_free(pred);
        occ_model_free(model);
        occ_model_free(loaded);
    }
}

#[test]
fn ground_truth_from_segments_json_matches_rendered_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = render(&random_scene(64, 64, 0.5, 11)).unwrap();
    let inst = tmp.path().join("s.instances.png");
    let cls = tmp.path().join("s.classes.json");
    fs::write(&inst, scene.instances.to_png_bytes().unwrap()).unwrap();
    fs::write(&cls, scene.instances.classes_json().unwrap()).unwrap();
    let doc = SegmentsFile {
        image: "s.png".into(),
        segments: scene.segments.clone(),
    };
    let json = CString::new(doc.to_json().unwrap()).unwrap();
    let (inst, cls) = (cstr(&inst), cstr(&cls));
    unsafe {
        let (mut e, mut o) = (ptr::null_mut(), ptr::null_mut());
        let st = occ_ground_truth_from_segments(inst.as_ptr(), cls.as_ptr(), json.as_ptr(), 0.0, &mut e, &mut o);
        assert_eq!(st, OccStatus::Ok, "{}", last_error());
        assert!(same_bits(samples(e), scene.gt.edge.data()));
        assert!(same_bits(samples(o), scene.gt.orient.data()));
        occ_raster_free(e);
        occ_raster_free(o);

        let bad = CString::new(r#"{"image": "s.png", "segments": [{"x0": 1, "y0": 1}]}"#).unwrap();
        let st = occ_ground_truth_from_segments(inst.as_ptr(), cls.as_ptr(), bad.as_ptr(), 0.0, &mut e, &mut o);
        assert_eq!(st, OccStatus::Format);
        assert!(e.is_null() && o.is_null());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(occ_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/occlusia.h")).unwrap();
    let src = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["OccStatus", "OccHead", "typedef struct OccRaster OccRaster", "OCC_STATUS_NULL_POINTER"] {
        assert!(header.contains(ty), "{ty}");
    }
}
