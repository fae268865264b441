use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use willow_ffi::*;

fn last_error() -> String {
    let p = willow_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut WillowModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { willow_model_load(name.as_ptr(), &mut m) }, WillowStatus::Ok);
    m
}

#[test]
fn model_roundtrip_and_eigen() {
    let q = [-1.0, 1.0, 1.0, -1.0];
    let mut m = ptr::null_mut();
    let s = unsafe { willow_model_new(2, q.as_ptr(), [0.2, 0.8].as_ptr(), [1.0, 2.0].as_ptr(), &mut m) };
    assert_eq!(s, WillowStatus::Ok);
    assert_eq!(unsafe { willow_model_k(m) }, 2);
    let (mut l, mut phi, mut pi) = (0.0, [0.0; 2], [0.0; 2]);
    assert_eq!(unsafe { willow_eigen(m, &mut l, phi.as_mut_ptr(), ptr::null_mut(), pi.as_mut_ptr()) }, WillowStatus::Ok);
    let reference = load("ref2type");
    let mut l2 = 0.0;
    assert_eq!(unsafe { willow_eigen(reference, &mut l2, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, WillowStatus::Ok);
    assert_eq!(l, l2);
    assert!((pi[0] + pi[1] - 1.0).abs() < 1e-12);
    assert!(phi.iter().all(|&x| x > 0.0));
    unsafe {
        willow_model_free(m);
        willow_model_free(reference);
    }
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    let mut m = ptr::null_mut();
    let bad_q = [1.0, -1.0, 1.0, -1.0];
    let s = unsafe { willow_model_new(2, bad_q.as_ptr(), [0.2, 0.8].as_ptr(), [1.0, 2.0].as_ptr(), &mut m) };
    assert_eq!(s, WillowStatus::Model);
    assert!(m.is_null());
    assert!(last_error().contains("invalid model"));

    let name = CString::new("no-such-model.toml").unwrap();
    assert_eq!(unsafe { willow_model_load(name.as_ptr(), &mut m) }, WillowStatus::Model);
    assert_eq!(unsafe { willow_model_load(ptr::null(), &mut m) }, WillowStatus::Usage);

    let m = load("ref2type");
    let nu = [1.0, 0.0];
    let mut p = ptr::null_mut();
    let s = unsafe { willow_particles_sample(m, nu.as_ptr(), 10.0, 1.0, 4, 0, 0, &mut p) };
    assert_eq!(s, WillowStatus::Model);
    assert!(last_error().contains("simulate_particles"));

    let check = CString::new("no-such-check").unwrap();
    let suite = CString::new("fast").unwrap();
    let s = unsafe { willow_verify_check(m, check.as_ptr(), suite.as_ptr(), 0, ptr::null_mut()) };
    assert_eq!(s, WillowStatus::Usage);
    unsafe { willow_model_free(m) };
}

#[test]
fn fields_and_samplers() {
    let m = load("ref2type");
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { willow_fields_new(m, 5.0, &mut f) }, WillowStatus::Ok);
    let (mut v, mut dv) = ([0.0; 2], [0.0; 2]);
    assert_eq!(unsafe { willow_fields_v(f, 1.0, v.as_mut_ptr()) }, WillowStatus::Ok);
    assert_eq!(unsafe { willow_fields_dv(f, 1.0, dv.as_mut_ptr()) }, WillowStatus::Ok);
    assert!(v.iter().all(|&x| x > 0.0) && dv.iter().all(|&x| x < 0.0));
    assert_eq!(unsafe { willow_fields_v(f, 50.0, v.as_mut_ptr()) }, WillowStatus::Numeric);

    let nu = [1.0, 0.0];
    let mut cdf = 0.0;
    assert_eq!(unsafe { willow_extinction_cdf(f, nu.as_ptr(), 1.0, &mut cdf) }, WillowStatus::Ok);
    unsafe { willow_fields_v(f, 1.0, v.as_mut_ptr()) };
    assert!((cdf - (-v[0]).exp()).abs() < 1e-14);

    let sample = |rep| {
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { willow_williams_sample(f, 1, 2.0, 0.1, 4, 11, rep, &mut p) }, WillowStatus::Ok);
        let n = unsafe { willow_path_len(p) };
        assert_eq!(n, 5);
        let (mut t, mut x) = (vec![0.0; n], vec![0.0; 2 * n]);
        assert_eq!(unsafe { willow_path_copy(p, t.as_mut_ptr(), x.as_mut_ptr()) }, WillowStatus::Ok);
        assert_eq!(unsafe { willow_path_extinction_time(p) }, 2.0);
        unsafe { willow_path_free(p) };
        (t, x)
    };
    let (a, b) = (sample(3), sample(3));
    assert_eq!(a, b);
    assert_eq!(a.0, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(&a.1[8..], &[0.0, 0.0]);
    unsafe {
        willow_fields_free(f);
        willow_model_free(m);
    }
}

#[test]
fn verify_check_through_the_abi() {
    let m = load("ref1");
    let check = CString::new("bismut-identity").unwrap();
    let suite = CString::new("fast").unwrap();
    let mut stat = f64::NAN;
    assert_eq!(unsafe { willow_verify_check(m, check.as_ptr(), suite.as_ptr(), 1, &mut stat) }, WillowStatus::Ok);
    assert!(stat < 1e-6);
    unsafe { willow_model_free(m) };
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        willow_model_free(ptr::null_mut());
        willow_fields_free(ptr::null_mut());
        willow_path_free(ptr::null_mut());
        assert_eq!(willow_model_k(ptr::null()), 0);
        assert_eq!(willow_path_len(ptr::null()), 0);
        assert!(willow_path_extinction_time(ptr::null()).is_nan());
    }
}

/// Compiles and runs a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libwillow_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("willow_smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
