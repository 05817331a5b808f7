use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use chordsynth_ffi::*;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn last_error() -> String {
    let mut buf = vec![0 as libc::c_char; 256];
    unsafe { cs_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut CsSystem {
    let path = CString::new(data(name).to_str().unwrap()).unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { cs_system_load(path.as_ptr(), &mut sys) }, CsStatus::Ok);
    assert!(!sys.is_null());
    sys
}

#[test]
fn centralized_four_node_through_handles() {
    let sys = load("four_node.json");
    let mut n = 0;
    assert_eq!(unsafe { cs_system_subsystem_count(sys, &mut n) }, CsStatus::Ok);
    assert_eq!(n, 4);

    let mut res = ptr::null_mut();
    let st = unsafe { cs_synthesize(sys, CsMethod::Centralized, ptr::null(), &mut res) };
    assert_eq!(st, CsStatus::Ok);
    let mut status = CsSynthesisStatus::Infeasible;
    assert_eq!(unsafe { cs_result_status(res, &mut status) }, CsStatus::Ok);
    assert_eq!(status, CsSynthesisStatus::Success);
    let mut h2 = 0.0;
    assert_eq!(unsafe { cs_result_h2(res, &mut h2) }, CsStatus::Ok);
    assert!((h2 - 5.36).abs() < 0.02, "h2 {h2}");

    let expected = [7.34, 11.38, 6.16, 13.48];
    for (i, k) in expected.iter().enumerate() {
        let (mut r, mut c) = (0, 0);
        assert_eq!(unsafe { cs_result_gain_shape(res, i, &mut r, &mut c) }, CsStatus::Ok);
        assert_eq!((r, c), (1, 1));
        let mut v = [0.0];
        assert_eq!(unsafe { cs_result_gain(res, i, v.as_mut_ptr(), 1) }, CsStatus::Ok);
        assert!((v[0] - k).abs() < 0.05);
    }
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { cs_result_gain_shape(res, 4, &mut r, &mut c) }, CsStatus::OutOfRange);
    let mut it = 0;
    assert_eq!(unsafe { cs_result_iterations(res, &mut it) }, CsStatus::NoValue);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cs_result_to_json(res, &mut json) }, CsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    assert!(text.contains("\"status\":\"success\""), "{text}");
    unsafe {
        cs_string_free(json);
        cs_result_free(res);
        cs_system_free(sys);
    }
}

#[test]
fn distributed_reports_iterations_and_audit() {
    let sys = load("chain5.json");
    let mut opts = cs_admm_options_default();
    opts.max_iter = 50;
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { cs_synthesize(sys, CsMethod::Distributed, &opts, &mut res) }, CsStatus::Ok);
    let mut it = 0;
    assert_eq!(unsafe { cs_result_iterations(res, &mut it) }, CsStatus::Ok);
    assert!((1..=50).contains(&it));
    let mut pass = false;
    assert_eq!(unsafe { cs_result_audit_pass(res, &mut pass) }, CsStatus::Ok);
    assert!(pass);
    unsafe {
        cs_result_free(res);
        cs_system_free(sys);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { cs_system_from_json(ptr::null(), &mut sys) }, CsStatus::NullPointer);
    assert!(sys.is_null());
    assert!(last_error().contains("json"));

    let bad = CString::new("{\"partition\": 3}").unwrap();
    assert_eq!(unsafe { cs_system_from_json(bad.as_ptr(), &mut sys) }, CsStatus::Validation);
    assert!(sys.is_null());
    assert!(last_error().contains("validation"));

    let missing = CString::new("/nonexistent/system.json").unwrap();
    assert_eq!(unsafe { cs_system_load(missing.as_ptr(), &mut sys) }, CsStatus::Io);

    let mut n = 0;
    assert_eq!(unsafe { cs_system_subsystem_count(ptr::null(), &mut n) }, CsStatus::NullPointer);

    let under = load("two_node_underactuated.json");
    let mut res = ptr::null_mut();
    assert_eq!(
        unsafe { cs_synthesize(under, CsMethod::FullyActuated, ptr::null(), &mut res) },
        CsStatus::Domain
    );
    assert!(res.is_null());
    assert_eq!(unsafe { cs_synthesize(under, CsMethod::Centralized, ptr::null(), &mut res) }, CsStatus::Ok);
    let mut status = CsSynthesisStatus::Success;
    unsafe { cs_result_status(res, &mut status) };
    assert_eq!(status, CsSynthesisStatus::Infeasible);
    let mut h2 = 0.0;
    assert_eq!(unsafe { cs_result_h2(res, &mut h2) }, CsStatus::NoValue);
    let mut v = [0.0];
    assert_eq!(unsafe { cs_result_gain(res, 0, v.as_mut_ptr(), 1) }, CsStatus::NoValue);
    let mut sigma2 = true;
    assert_eq!(unsafe { cs_classify_sigma2(under, &mut sigma2) }, CsStatus::Ok);
    assert!(!sigma2);

    unsafe {
        cs_result_free(res);
        cs_system_free(under);
        cs_result_free(ptr::null_mut());
        cs_system_free(ptr::null_mut());
        cs_string_free(ptr::null_mut());
    }
}

#[test]
fn gain_buffer_too_small() {
    let sys = load("two_node_actuated.json");
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { cs_synthesize(sys, CsMethod::FullyActuated, ptr::null(), &mut res) }, CsStatus::Ok);
    assert_eq!(unsafe { cs_result_gain(res, 0, [0.0; 1].as_mut_ptr(), 0) }, CsStatus::BufferTooSmall);
    assert_eq!(unsafe { cs_result_gain(res, 0, ptr::null_mut(), 1) }, CsStatus::NullPointer);
    unsafe {
        cs_result_free(res);
        cs_system_free(sys);
    }
}

#[test]
fn check_gains_matches_cli_semantics() {
    let sys = load("two_node_underactuated.json");
    let k = CString::new(std::fs::read_to_string(data("gains_k2_1p5.json")).unwrap()).unwrap();
    let (mut hurwitz, mut h2) = (false, 0.0);
    assert_eq!(unsafe { cs_check_gains(sys, k.as_ptr(), &mut hurwitz, &mut h2) }, CsStatus::Ok);
    assert!(hurwitz && h2.is_finite());
    let zero = CString::new("{\"gains\": [[[0]], [[0]]]}").unwrap();
    assert_eq!(unsafe { cs_check_gains(sys, zero.as_ptr(), &mut hurwitz, &mut h2) }, CsStatus::Ok);
    assert!(!hurwitz && h2.is_nan());
    let wrong = CString::new("{\"gains\": [[[0]]]}").unwrap();
    assert_eq!(unsafe { cs_check_gains(sys, wrong.as_ptr(), &mut hurwitz, &mut h2) }, CsStatus::Dimension);
    unsafe { cs_system_free(sys) };
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/chordsynth.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "cs_last_error_message",
        "cs_admm_options_default",
        "cs_system_from_json",
        "cs_system_load",
        "cs_system_free",
        "cs_system_subsystem_count",
        "cs_classify_sigma2",
        "cs_synthesize",
        "cs_result_free",
        "cs_result_status",
        "cs_result_h2",
        "cs_result_iterations",
        "cs_result_audit_pass",
        "cs_result_gain_shape",
        "cs_result_gain",
        "cs_result_to_json",
        "cs_check_gains",
        "cs_string_free",
    ] {
        assert!(h.contains(&format!("{f}(")), "missing {f}");
    }
    assert!(h.contains("typedef struct CsSystem CsSystem;"));
    assert!(h.contains("CS_STATUS_NULL_POINTER = 1"));
}

// Compiles and links a C client against the static library when a C compiler
// is available.
#[test]
fn c_client_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("skipped: no C compiler");
        return;
    };
    let tmp = Path::new(env!("CARGO_TARGET_TMPDIR"));
    // `cargo test` only builds the rlib; build the archive explicitly.
    let mut cargo = Command::new(env!("CARGO"));
    cargo.args(["build", "--quiet", "-p", "chordsynth-ffi", "--lib"]);
    if !cfg!(debug_assertions) {
        cargo.arg("--release");
    }
    let build = cargo
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .unwrap();
    assert!(build.success());
    // target/<profile>/deps/abi-* -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let archive = exe.parent().and_then(Path::parent).unwrap().join("libchordsynth_ffi.a");
    assert!(archive.exists(), "{}", archive.display());
    let src = tmp.join("client.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "chordsynth.h"
int main(int argc, char **argv) {
    CsSystem *sys = NULL;
    if (cs_system_load(argv[1], &sys) != CS_STATUS_OK) return 10;
    CsResult *res = NULL;
    CsAdmmOptions opts = cs_admm_options_default();
    if (cs_synthesize(sys, CS_METHOD_CENTRALIZED, &opts, &res) != CS_STATUS_OK) return 11;
    double h2 = 0.0;
    if (cs_result_h2(res, &h2) != CS_STATUS_OK) return 12;
    printf("%.4f\n", h2);
    cs_result_free(res);
    cs_system_free(sys);
    if (cs_system_load(NULL, &sys) != CS_STATUS_NULL_POINTER) return 13;
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.join("client");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(data("four_node.json")).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let h2: f64 = String::from_utf8_lossy(&run.stdout).trim().parse().unwrap();
    assert!((h2 - 5.36).abs() < 0.02);
}
