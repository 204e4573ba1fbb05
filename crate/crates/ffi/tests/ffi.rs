use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use timecf::model::{Model, ModelConfig};
use timecf_ffi::*;

fn tiny_json() -> CString {
    CString::new(serde_json::to_string(&ModelConfig::tiny()).unwrap()).unwrap()
}

fn last_error() -> String {
    let p = timecf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_tiny(seed: u64) -> *mut TimecfModel {
    let mut h = ptr::null_mut();
    let s = unsafe { timecf_model_new(tiny_json().as_ptr(), seed, &mut h) };
    assert_eq!(s, TimecfStatus::Ok);
    h
}

#[test]
fn forecast_matches_native_model() {
    let h = new_tiny(7);
    let (mut t, mut f, mut ft) = (0, 0, 0);
    assert_eq!(
        unsafe { timecf_model_dims(h, &mut t, &mut f, &mut ft) },
        TimecfStatus::Ok
    );
    let cfg = ModelConfig::tiny();
    assert_eq!((t, f, ft), (cfg.lookback, cfg.horizon, cfg.time_features));

    let batch = 3;
    let history: Vec<f64> = (0..batch * t)
        .map(|i| (i as f64 * 0.37).sin() * 5.0 + 2.0)
        .collect();
    let marks: Vec<f64> = (0..batch * t * ft)
        .map(|i| (i % 7) as f64 / 7.0 - 0.5)
        .collect();
    let mut out = vec![0.0; batch * f];
    let s = unsafe {
        timecf_model_forecast(
            h,
            history.as_ptr(),
            marks.as_ptr(),
            batch,
            out.as_mut_ptr(),
            out.len(),
        )
    };
    assert_eq!(s, TimecfStatus::Ok);

    let native = Model::new(cfg.clone(), 7).unwrap();
    let xs: Vec<&[f64]> = history.chunks(t).collect();
    let ms: Vec<&[f64]> = marks.chunks(t * ft).collect();
    let expected = native
        .predict_batch(&timecf::model::Batch::new(&cfg, &xs, &ms, None).unwrap())
        .unwrap();
    assert_eq!(out, expected.concat());
    unsafe { timecf_model_free(h) };
}

#[test]
fn checkpoint_round_trip_through_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let h = new_tiny(3);
    assert_eq!(
        unsafe { timecf_model_save(h, path.as_ptr()) },
        TimecfStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { timecf_model_load(path.as_ptr(), &mut loaded) },
        TimecfStatus::Ok
    );
    let (mut a, mut b) = (0usize, 0usize);
    unsafe {
        timecf_model_parameter_count(h, &mut a);
        timecf_model_parameter_count(loaded, &mut b);
    }
    assert_eq!(a, b);
    assert_eq!(
        a,
        Model::new(ModelConfig::tiny(), 3)
            .unwrap()
            .parameter_count()
    );
    unsafe {
        timecf_model_free(h);
        timecf_model_free(loaded);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut h = ptr::null_mut();
    let bad = CString::new("{\"lookback\": 4}").unwrap();
    assert_eq!(
        unsafe { timecf_model_new(bad.as_ptr(), 0, &mut h) },
        TimecfStatus::InvalidArgument
    );
    assert!(last_error().contains("config"));
    assert!(h.is_null());

    assert_eq!(
        unsafe { timecf_model_new(ptr::null(), 0, &mut h) },
        TimecfStatus::NullPointer
    );

    let missing = CString::new("/no/such/checkpoint.json").unwrap();
    assert_eq!(
        unsafe { timecf_model_load(missing.as_ptr(), &mut h) },
        TimecfStatus::Io
    );

    let m = new_tiny(1);
    let mut out = vec![0.0; 1];
    let hist = vec![0.0; 64];
    let s =
        unsafe { timecf_model_forecast(m, hist.as_ptr(), hist.as_ptr(), 1, out.as_mut_ptr(), 1) };
    assert_eq!(s, TimecfStatus::Dimension);
    assert!(last_error().contains("out_len"));

    let mut n = 0usize;
    assert_eq!(
        unsafe { timecf_model_parameter_count(m, &mut n) },
        TimecfStatus::Ok
    );
    assert!(timecf_last_error().is_null());
    unsafe { timecf_model_free(m) };
    unsafe { timecf_model_free(ptr::null_mut()) };
}

#[test]
fn loss_matches_direct_computation() {
    let p = [1.0, 2.0, 0.5, -1.0];
    let y = [0.0, 2.5, 0.5, 1.0];
    let (mut total, mut freq, mut mse) = (0.0, 0.0, 0.0);
    let s = unsafe {
        timecf_samfre_loss(
            p.as_ptr(),
            y.as_ptr(),
            4,
            0.0,
            &mut total,
            &mut freq,
            &mut mse,
        )
    };
    assert_eq!(s, TimecfStatus::Ok);
    let direct = p
        .iter()
        .zip(&y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / 4.0;
    assert!((mse - direct).abs() < 1e-15);
    assert!((total - direct).abs() < 1e-12);
    assert!(freq > 0.0);

    let s = unsafe {
        timecf_samfre_loss(
            p.as_ptr(),
            y.as_ptr(),
            4,
            2.0,
            &mut total,
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(s, TimecfStatus::InvalidArgument);
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(timecf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/timecf.h");
    assert!(header.exists(), "header not generated");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ TimecfModel *m = 0; size_t n = 0;\n\
             return timecf_model_parameter_count(m, &n) == TIMECF_STATUS_OK; }}\n",
            header.display()
        ),
    )
    .unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("no C compiler; header syntax not checked"),
    }
}
