//! The generated header compiles as C and links against the built library.

use std::path::PathBuf;
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/quadflow.h")).unwrap();
    for name in [
        "qf_version",
        "qf_last_error",
        "qf_string_free",
        "qf_system_load",
        "qf_system_from_json",
        "qf_system_free",
        "qf_integrate",
        "qf_arc_final_state",
        "qf_arc_stats",
        "qf_lyapunov",
        "qf_spectrum_exponents",
        "qf_recurrences",
        "QF_STATUS_BALL_ESCAPE = 3",
        "typedef struct QfSystem QfSystem;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_is_valid_c() {
    if !have_cc() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let header = crate_dir().join("include/quadflow.h");
    for std in ["-std=c99", "-std=c11"] {
        let out = Command::new("cc")
            .args([std, "-Wall", "-Wextra", "-pedantic", "-fsyntax-only", "-x", "c"])
            .arg(&header)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

/// Directory holding the shared library built alongside this test binary.
fn lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?.to_path_buf();
    let up = deps.parent()?.to_path_buf();
    [up, deps].into_iter().find(|d| d.join("libquadflow_ffi.so").exists())
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = lib_dir() else {
        eprintln!("shared library not found next to the test binary; skipped");
        return;
    };
    if !have_cc() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-L")
        .arg(&lib)
        .args(["-lquadflow_ffi", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &lib).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let x: f64 = stdout.split(',').next().unwrap().parse().unwrap();
    assert!((x - 10.0 / 19.0).abs() < 1e-15, "{stdout}");
}
