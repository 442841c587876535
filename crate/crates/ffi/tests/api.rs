use std::ffi::{CStr, CString};
use std::ptr;

use quadflow_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    qf_string_free(s);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(qf_last_error()).to_string_lossy().into_owned()
}

#[test]
fn riccati_round_trip_through_the_c_api() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(qf_system_load(c("riccati.json").as_ptr(), 128, &mut sys), QfStatus::Ok);
        assert_eq!(qf_system_dim(sys), 2);
        assert_eq!(qf_system_bits(sys), 128);

        // x' = x^2 from 0.5 (constant coordinate 0): x(t) = 0.5 / (1 - 0.5 t)
        let mut arc = ptr::null_mut();
        let st = qf_integrate(sys, c("0.5,0").as_ptr(), c("0.1").as_ptr(), c("1e-20").as_ptr(), 1, &mut arc);
        assert_eq!(st, QfStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(qf_arc_final_state(arc, &mut out), QfStatus::Ok);
        let state = take(out);
        let x: f64 = state.split(',').next().unwrap().parse().unwrap();
        assert!((x - 10.0 / 19.0).abs() < 1e-15, "{state}");
        assert_eq!(qf_arc_final_time(arc, &mut out), QfStatus::Ok);
        assert_eq!(take(out).parse::<f64>().unwrap(), 0.1);
        let mut stats = QfArcStats::default();
        assert_eq!(qf_arc_stats(arc, &mut stats), QfStatus::Ok);
        assert!(stats.steps > 0 && stats.n_max > 0 && stats.escaped == 0);
        qf_arc_free(arc);
        qf_system_free(sys);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(qf_system_load(c("no/such/system.json").as_ptr(), 128, &mut sys), QfStatus::Io);
        assert!(last_error().contains("no/such/system.json"));
        assert!(sys.is_null());

        assert_eq!(qf_system_load(c("dong2019").as_ptr(), 8, &mut sys), QfStatus::InvalidArgument);
        assert!(last_error().contains("mantissa"));

        assert_eq!(qf_system_from_json(c("{").as_ptr(), 128, &mut sys), QfStatus::InvalidArgument);
        assert_eq!(qf_system_load(ptr::null(), 128, &mut sys), QfStatus::NullPointer);

        assert_eq!(qf_system_load(c("dong2019.json").as_ptr(), 128, &mut sys), QfStatus::Ok);
        let mut arc = ptr::null_mut();
        let bad = qf_integrate(sys, c("1,2").as_ptr(), c("1").as_ptr(), c("1e-20").as_ptr(), 1, &mut arc);
        assert_eq!(bad, QfStatus::InvalidArgument);
        assert!(last_error().contains("components"));
        let bad = qf_integrate(sys, c("1,2,3,4").as_ptr(), c("1").as_ptr(), c("1e-20").as_ptr(), 0, &mut arc);
        assert_eq!(bad, QfStatus::InvalidArgument);
        assert!(arc.is_null());

        // leaving the ball still hands back the arc
        let st = qf_integrate(sys, c("150,0,0,0").as_ptr(), c("1").as_ptr(), c("1e-20").as_ptr(), -1, &mut arc);
        assert_eq!(st, QfStatus::BallEscape);
        let mut stats = QfArcStats::default();
        assert_eq!(qf_arc_stats(arc, &mut stats), QfStatus::Ok);
        assert_eq!(stats.escaped, 1);
        qf_arc_free(arc);
        qf_system_free(sys);

        // NULL handles are tolerated by the destructors and queries
        qf_system_free(ptr::null_mut());
        qf_arc_free(ptr::null_mut());
        qf_spectrum_free(ptr::null_mut());
        qf_string_free(ptr::null_mut());
        assert_eq!(qf_system_dim(ptr::null()), 0);
        assert_eq!(qf_arc_stats(ptr::null(), &mut stats), QfStatus::NullPointer);
    }
}

#[test]
fn decay_spectrum_and_version() {
    unsafe {
        let json = r#"{"n": 1, "A": [["-1"]], "Q": [[["0"]]], "ball": {"center": ["0"], "radius": "10"}}"#;
        let mut sys = ptr::null_mut();
        assert_eq!(qf_system_from_json(c(json).as_ptr(), 128, &mut sys), QfStatus::Ok, "{}", last_error());
        let mut spec = ptr::null_mut();
        let st = qf_lyapunov(sys, c("1").as_ptr(), c("1").as_ptr(), 10, 1, c("1e-25").as_ptr(), &mut spec);
        assert_eq!(st, QfStatus::Ok, "{}", last_error());
        let mut out = ptr::null_mut();
        assert_eq!(qf_spectrum_exponents(spec, 1, &mut out), QfStatus::Ok);
        let le: f64 = take(out).parse().unwrap();
        assert!((le + 1.0).abs() < 1e-12, "{le}");
        assert_eq!(qf_spectrum_sum(spec, &mut out), QfStatus::Ok);
        assert!((take(out).parse::<f64>().unwrap() + 1.0).abs() < 1e-12);
        qf_spectrum_free(spec);

        let mut count = 99usize;
        let mut period = ptr::null_mut();
        let st = qf_recurrences(
            sys,
            c("1").as_ptr(),
            c("0.01").as_ptr(),
            c("1").as_ptr(),
            c("1").as_ptr(),
            c("1e-20").as_ptr(),
            &mut count,
            &mut period,
        );
        assert_eq!(st, QfStatus::Ok, "{}", last_error());
        // monotone decay never comes back
        assert_eq!(count, 0);
        assert_eq!(take(period), "");
        qf_system_free(sys);

        let v = CStr::from_ptr(qf_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
