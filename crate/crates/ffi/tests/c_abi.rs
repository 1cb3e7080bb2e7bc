use std::ffi::{CStr, CString};
use std::ptr;

use absorb_core::forward::marginal;
use absorb_core::state_space::{ModelSpec, Q0Source, SpecConfig};
use absorb_ffi::*;

struct Handle(*mut AbsorbSpec);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { absorb_spec_free(self.0) };
    }
}

fn open(json: &str) -> Handle {
    let text = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { absorb_spec_from_json(text.as_ptr(), &mut out) };
    assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    assert!(!out.is_null());
    Handle(out)
}

fn last_error() -> String {
    let p = absorb_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

const SPEC: &str = r#"{"S":3,"d":2,"q0":"product:0.5,0.3,0.2"}"#;

#[test]
fn info_reports_shape() {
    let h = open(SPEC);
    let (mut s, mut d, mut m, mut n) = (0usize, 0usize, 0u32, 0usize);
    let status = unsafe { absorb_spec_info(h.0, &mut s, &mut d, &mut m, &mut n) };
    assert_eq!(status, AbsorbStatus::Ok);
    assert_eq!((s, d, m, n), (3, 2, 2, 9));
}

#[test]
fn marginal_matches_core() {
    let h = open(SPEC);
    let mut buf = vec![0.0; 9];
    let status = unsafe { absorb_marginal(h.0, 0.7, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, AbsorbStatus::Ok);
    let cfg = SpecConfig::new(3, 2, None, Q0Source::parse("product:0.5,0.3,0.2").unwrap());
    let spec = ModelSpec::from_config(&cfg).unwrap();
    let expected = marginal(&spec, 0.7).unwrap();
    assert_eq!(buf.as_slice(), expected.mass());
}

#[test]
fn short_buffer_is_rejected() {
    let h = open(SPEC);
    let mut buf = vec![0.0; 4];
    let status = unsafe { absorb_marginal(h.0, 0.7, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, AbsorbStatus::BufferTooSmall);
    assert!(last_error().contains("need 9"));
}

#[test]
fn score_of_single_mask_is_posterior_ratio() {
    // Product data: q_t(b, a)/q_t(mask, a) = e^{-t} p(b) / (p(m) + (1 - e^{-t})(1 - p(m)))
    // where the data marginal p also puts mass p(m) = 0.2 on the mask token.
    let h = open(SPEC);
    let t = 0.4_f64;
    let x = [2u32, 0];
    let y = [1u32, 0];
    let mut out = 0.0;
    let status = unsafe { absorb_score(h.0, t, x.as_ptr(), y.as_ptr(), 2, &mut out) };
    assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    let keep = (-t).exp();
    let expected = keep * 0.3 / (0.2 + (1.0 - keep) * 0.8);
    assert!((out - expected).abs() < 1e-12 * expected);
}

#[test]
fn score_rejects_non_unmasking_pair() {
    let h = open(SPEC);
    let x = [0u32, 0];
    let y = [1u32, 0];
    let mut out = 0.0;
    let status = unsafe { absorb_score(h.0, 0.5, x.as_ptr(), y.as_ptr(), 2, &mut out) };
    assert_eq!(status, AbsorbStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn null_and_bad_inputs_map_to_codes() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { absorb_spec_from_json(ptr::null(), &mut out) },
        AbsorbStatus::NullPointer
    );
    let bad = CString::new(r#"{"S":1,"d":2,"q0":"uniform"}"#).unwrap();
    assert_ne!(
        unsafe { absorb_spec_from_json(bad.as_ptr(), &mut out) },
        AbsorbStatus::Ok
    );
    assert!(out.is_null());
    let junk = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { absorb_spec_from_json(junk.as_ptr(), &mut out) },
        AbsorbStatus::Config
    );
    let huge = CString::new(r#"{"S":64,"d":64,"q0":"uniform"}"#).unwrap();
    assert_eq!(
        unsafe { absorb_spec_from_json(huge.as_ptr(), &mut out) },
        AbsorbStatus::CapExceeded
    );
    let mut g = 0.0;
    assert_eq!(unsafe { absorb_gamma(ptr::null(), &mut g) }, AbsorbStatus::NullPointer);
    unsafe { absorb_spec_free(ptr::null_mut()) };
}

#[test]
fn errors_clear_on_success() {
    let mut g = 0.0;
    assert_ne!(unsafe { absorb_gamma(ptr::null(), &mut g) }, AbsorbStatus::Ok);
    assert!(!absorb_last_error().is_null());
    let h = open(SPEC);
    assert_eq!(unsafe { absorb_gamma(h.0, &mut g) }, AbsorbStatus::Ok);
    assert!(absorb_last_error().is_null());
}

#[test]
fn kl_and_tv_of_simple_pair() {
    let p = [0.5, 0.5];
    let q = [0.25, 0.75];
    let (mut kl, mut tv) = (0.0, 0.0);
    assert_eq!(
        unsafe { absorb_kl(p.as_ptr(), q.as_ptr(), 2, &mut kl) },
        AbsorbStatus::Ok
    );
    assert_eq!(
        unsafe { absorb_tv(p.as_ptr(), q.as_ptr(), 2, &mut tv) },
        AbsorbStatus::Ok
    );
    let expected = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - expected).abs() < 1e-14);
    assert!((tv - 0.25).abs() < 1e-14);
    let bad = [0.5, 0.6];
    assert_ne!(
        unsafe { absorb_kl(bad.as_ptr(), q.as_ptr(), 2, &mut kl) },
        AbsorbStatus::Ok
    );
}

#[test]
fn forward_kl_of_point_mass() {
    // q_T puts e^{-T} on the point and the rest on the mask; the reference
    // spreads e^{-T} uniformly over the S - 1 tokens.
    let h = open(r#"{"S":4,"d":1,"q0":"point:0"}"#);
    let horizon = 3.0_f64;
    let mut out = 0.0;
    assert_eq!(unsafe { absorb_forward_kl(h.0, horizon, &mut out) }, AbsorbStatus::Ok);
    let expected = (-horizon).exp() * 3.0f64.ln();
    assert!((out - expected).abs() < 1e-12);
}

#[test]
fn gamma_of_uniform_pair() {
    let h = open(r#"{"S":3,"d":2,"q0":"uniform"}"#);
    let mut g = 0.0;
    assert_eq!(unsafe { absorb_gamma(h.0, &mut g) }, AbsorbStatus::Ok);
    // uniform over all 9 states: mask mass equals every other token's mass
    assert!((g - 1.0).abs() < 1e-12);
}

#[test]
fn tau_leaping_law_is_normalized_and_close() {
    let h = open(SPEC);
    let mut law = vec![0.0; 9];
    let status = unsafe { absorb_tau_leaping_law(h.0, 12.0, 1e-3, 0.05, law.as_mut_ptr(), law.len()) };
    assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let mut target = vec![0.0; 9];
    unsafe { absorb_marginal(h.0, 0.0, target.as_mut_ptr(), 9) };
    let mut tv = 0.0;
    unsafe { absorb_tv(target.as_ptr(), law.as_ptr(), 9, &mut tv) };
    assert!(tv < 0.02, "tv = {tv}");
}

#[test]
fn samples_are_seeded_and_valid() {
    let h = open(SPEC);
    let mut a = [9u32; 2];
    let mut b = [9u32; 2];
    for (buf, seed) in [(&mut a, 7u64), (&mut b, 7u64)] {
        let status = unsafe { absorb_tau_leaping_sample(h.0, 12.0, 1e-3, 0.1, seed, buf.as_mut_ptr(), 2) };
        assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|&t| t < 3));

    let mut c = [9u32; 2];
    let mut events = 0u64;
    let status = unsafe { absorb_uniformization_sample(h.0, 12.0, 1e-3, 0.1, 1.0, 3, c.as_mut_ptr(), 2, &mut events) };
    assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    assert!(c.iter().all(|&t| t < 3));
    assert!(events > 0);
}

#[test]
fn uniformization_law_recovers_data() {
    let h = open(r#"{"S":2,"d":2,"q0":"uniform"}"#);
    let mut law = vec![0.0; 4];
    let status = unsafe { absorb_uniformization_law(h.0, 10.0, 1e-3, 0.5, law.as_mut_ptr(), 4) };
    assert_eq!(status, AbsorbStatus::Ok, "{}", last_error());
    let mut target = vec![0.0; 4];
    unsafe { absorb_marginal(h.0, 1e-3, target.as_mut_ptr(), 4) };
    let mut kl = 0.0;
    unsafe { absorb_kl(target.as_ptr(), law.as_ptr(), 4, &mut kl) };
    assert!(kl < 1e-3, "kl = {kl}");
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(absorb_version()) };
    assert!(!v.to_bytes().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/absorb.h")).unwrap();
    for name in [
        "absorb_spec_from_json",
        "absorb_spec_free",
        "absorb_spec_info",
        "absorb_marginal",
        "absorb_score",
        "absorb_kl",
        "absorb_tv",
        "absorb_forward_kl",
        "absorb_gamma",
        "absorb_tau_leaping_law",
        "absorb_tau_leaping_sample",
        "absorb_uniformization_sample",
        "absorb_uniformization_law",
        "absorb_last_error",
        "absorb_version",
        "ABSORB_STATUS_ZERO_MASS",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles a C program against the generated header and the static library
/// and runs it. Skipped when no C compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    use std::path::PathBuf;
    use std::process::Command;

    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let test_exe = std::env::current_exe().unwrap();
    // the test binary sits in <profile>/deps next to the un-uplifted library
    let deps = test_exe.parent().unwrap();
    let lib = [
        deps.join("libabsorb_ffi.a"),
        deps.parent().unwrap().join("libabsorb_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
    .expect("static library not built");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
