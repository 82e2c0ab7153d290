use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use loadcast::data::ScalerParams;
use loadcast::matrix::Matrix;
use loadcast::model::{CellKind, ForecastModel, Network};
use loadcast_ffi::*;

fn sample_model() -> ForecastModel {
    ForecastModel {
        network: Network::new(CellKind::Gru, 2, 5, 2, 3, 11).unwrap(),
        feature_names: vec!["cpu_rate".into(), "memory".into()],
        target_feature: 0,
        interval_seconds: 300,
        scaler: Some(ScalerParams::from_bounds(vec![0.0, 10.0], vec![2.0, 20.0]).unwrap()),
    }
}

fn saved(dir: &Path) -> CString {
    let path = dir.join("m.lcm");
    sample_model().save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = lc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_query_forecast_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(lc_model_load(path.as_ptr(), &mut h), LcStatus::Ok);
        assert!(lc_last_error_message().is_null());
        let model = sample_model();
        assert_eq!(lc_model_feature_count(h), 2);
        assert_eq!(lc_model_lookback(h), 3);
        assert_eq!(lc_model_target_feature(h), 0);
        assert_eq!(lc_model_param_count(h), model.network.param_count());
        assert_eq!(
            lc_model_flop_count(h),
            model.network.flop_count_per_forecast()
        );

        let raw = [1.0, 12.0, 1.5, 15.0, 0.5, 18.0];
        let mut out = [0.0; 4];
        assert_eq!(
            lc_model_forecast(h, raw.as_ptr(), 3, 2, 2, out.as_mut_ptr(), 4),
            LcStatus::Ok
        );

        let s = model.scaler.as_ref().unwrap();
        let scaled: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| s.scale_value(i % 2, v))
            .collect();
        let pred = model
            .network
            .forecast(&Matrix::from_vec(3, 2, scaled).unwrap(), 2)
            .unwrap();
        for (i, &p) in pred.as_slice().iter().enumerate() {
            assert_eq!(out[i], s.invert_value(i % 2, p));
        }
        lc_model_free(h);
    }
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("none.lcm").to_str().unwrap()).unwrap();
        assert_eq!(lc_model_load(missing.as_ptr(), &mut h), LcStatus::Data);
        assert!(h.is_null());
        assert!(last_error().contains("none.lcm"));

        assert_eq!(
            lc_model_load(ptr::null(), &mut h),
            LcStatus::InvalidArgument
        );
        let junk = b"not a model";
        assert_eq!(
            lc_model_from_bytes(junk.as_ptr(), junk.len(), &mut h),
            LcStatus::Data
        );

        let path = saved(dir.path());
        assert_eq!(lc_model_load(path.as_ptr(), &mut h), LcStatus::Ok);
        let mut out = [0.0; 2];
        let w = [0.0; 4];
        assert_eq!(
            lc_model_forecast(h, w.as_ptr(), 2, 2, 1, out.as_mut_ptr(), 2),
            LcStatus::Config
        );
        let w = [0.0; 6];
        assert_eq!(
            lc_model_forecast(h, w.as_ptr(), 3, 2, 2, out.as_mut_ptr(), 2),
            LcStatus::InvalidArgument
        );
        let mut p = ptr::null_mut();
        assert_eq!(
            lc_model_prune(h, LcPruneMethod::L1, 1.0, 0, &mut p),
            LcStatus::Config
        );
        assert!(last_error().contains("[0, 1)"));
        assert_eq!(lc_model_param_count(ptr::null()), 0);
        lc_model_free(ptr::null_mut());
        lc_model_free(h);
    }
}

#[test]
fn prune_save_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved(dir.path());
    let out_path = CString::new(dir.path().join("p.lcm").to_str().unwrap()).unwrap();
    let (mut h, mut p, mut back) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(lc_model_load(path.as_ptr(), &mut h), LcStatus::Ok);
        assert_eq!(
            lc_model_prune(h, LcPruneMethod::Random, 0.4, 3, &mut p),
            LcStatus::Ok
        );
        assert!(lc_model_flop_count(p) < lc_model_flop_count(h));
        assert_eq!(lc_model_save(p, out_path.as_ptr()), LcStatus::Ok);
        let bytes = std::fs::read(dir.path().join("p.lcm")).unwrap();
        assert_eq!(
            lc_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut back),
            LcStatus::Ok
        );
        assert_eq!(lc_model_param_count(back), lc_model_param_count(p));
        for m in [h, p, back] {
            lc_model_free(m);
        }
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(lc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/loadcast.h");
    let header = std::fs::read_to_string(&header_path).unwrap();
    for name in [
        "lc_last_error_message",
        "lc_version",
        "lc_model_load",
        "lc_model_from_bytes",
        "lc_model_save",
        "lc_model_free",
        "lc_model_feature_count",
        "lc_model_lookback",
        "lc_model_target_feature",
        "lc_model_param_count",
        "lc_model_flop_count",
        "lc_model_forecast",
        "lc_model_prune",
        "LC_STATUS_OK",
        "LC_PRUNE_METHOD_RANDOM",
        "typedef struct LcModel LcModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    // Compile-check the header when a C compiler is installed.
    if let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"])
        .arg(&header_path)
        .status()
    {
        assert!(status.success(), "header does not compile as C99");
    }
}
