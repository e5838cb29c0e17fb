use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use qpdelay_ffi::*;

fn config_text(name: &str) -> CString {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    CString::new(std::fs::read_to_string(path).unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { qp_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut QpProblem {
    let text = config_text(name);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { qp_problem_from_toml(text.as_ptr(), &mut p) }, QpStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn canonical_solve_round_trip() {
    let p = load("canonical.toml");
    assert_eq!(unsafe { qp_problem_dim(p) }, 1);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qp_solve(p, ptr::null(), 0, &mut s) }, QpStatus::Ok);
    let mut status = QpRunStatus::Failed;
    assert_eq!(unsafe { qp_solution_status(s, &mut status) }, QpStatus::Ok);
    assert_eq!(status, QpRunStatus::Converged);
    let (mut res, mut stages) = (f64::NAN, 0usize);
    assert_eq!(unsafe { qp_solution_summary(s, &mut res, &mut stages) }, QpStatus::Ok);
    assert!(res < 1e-11 && stages >= 2, "{res} {stages}");
    let mut x = [0.0f64; 2];
    assert_eq!(unsafe { qp_solution_eval(p, s, 0.5, x.as_mut_ptr(), 2) }, QpStatus::Ok);
    assert!(x.iter().all(|v| v.is_finite()) && x.iter().any(|v| *v != 0.0));
    assert_eq!(unsafe { qp_solution_eval(p, s, 0.5, x.as_mut_ptr(), 3) }, QpStatus::InvalidArgument);
    unsafe {
        qp_solution_free(s);
        qp_problem_free(p);
    }
}

#[test]
fn resonant_frequency_reports_excision() {
    let p = load("canonical.toml");
    let omega = [1.0f64];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qp_solve(p, omega.as_ptr(), 1, &mut s) }, QpStatus::Excised);
    assert!(!s.is_null());
    let mut status = QpRunStatus::Converged;
    unsafe { qp_solution_status(s, &mut status) };
    assert_eq!(status, QpRunStatus::Excised);
    let mut x = [0.0f64; 2];
    assert_eq!(unsafe { qp_solution_eval(p, s, 0.0, x.as_mut_ptr(), 2) }, QpStatus::Solver);
    assert!(last_error().contains("did not produce"));
    unsafe {
        qp_solution_free(s);
        qp_problem_free(p);
    }
}

#[test]
fn bad_inputs_are_reported() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { qp_problem_from_toml(ptr::null(), &mut p) }, QpStatus::InvalidArgument);
    let bad = CString::new("[problem]\nn = = 1\n").unwrap();
    assert_eq!(unsafe { qp_problem_from_toml(bad.as_ptr(), &mut p) }, QpStatus::Config);
    assert!(p.is_null());
    assert!(last_error().contains("line 2"));

    let p = load("canonical.toml");
    let omega = [1.3, 1.4];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qp_solve(p, omega.as_ptr(), 2, &mut s) }, QpStatus::InvalidArgument);
    assert!(s.is_null());
    assert_eq!(unsafe { qp_solution_summary(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, QpStatus::InvalidArgument);
    unsafe {
        qp_problem_free(p);
        qp_problem_free(ptr::null_mut());
        qp_solution_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qpdelay.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["qp_problem_from_toml", "qp_solve", "qp_solution_eval", "qp_last_error", "QP_STATUS_INTERNAL = 5"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"qpdelay.h\"\n\
         int main(void) {\n\
           QpProblem *p = 0; QpSolution *s = 0; QpRunStatus r; double x[2]; char buf[64];\n\
           if (qp_problem_from_toml(\"\", &p) != QP_STATUS_OK) return (int)qp_last_error(buf, sizeof buf);\n\
           qp_solve(p, 0, 0, &s); qp_solution_status(s, &r); qp_solution_summary(s, 0, 0);\n\
           qp_solution_eval(p, s, 0.0, x, 2); (void)qp_problem_dim(p);\n\
           qp_solution_free(s); qp_problem_free(p); return 0;\n\
         }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
