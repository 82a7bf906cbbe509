//! Exercises the exported functions the way a C caller would.

use std::ffi::{CStr, CString};
use std::ptr;

use vkplate_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = vk_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn state(n: usize, v: &str) -> *mut VkState {
    let mut s = ptr::null_mut();
    let bend = c("pure_bend(1)");
    let st = vk_state_from_presets(1.0, 1.0, n, n, bend.as_ptr(), bend.as_ptr(), bend.as_ptr(), c(v).as_ptr(), &mut s);
    assert_eq!(st, VkStatus::Ok);
    s
}

#[test]
fn step_lowers_energy_and_slope_is_finite() {
    unsafe {
        let mut forms = ptr::null_mut();
        assert_eq!(vk_forms_catalog(1.0, 1.0, &mut forms), VkStatus::Ok);
        let s0 = state(9, "pure_bend(1)+bump(0.3)");

        let mut e0 = VkEnergy::default();
        assert_eq!(vk_energy(s0, forms, ptr::null(), 0, &mut e0), VkStatus::Ok);
        assert!(vk_last_error_message().is_null());
        assert!((e0.membrane + e0.bending + e0.load - e0.total).abs() <= 1e-12 * e0.total);

        let mut s1 = ptr::null_mut();
        assert_eq!(vk_step(s0, forms, 0.05, &mut s1), VkStatus::Ok);
        let mut e1 = VkEnergy::default();
        assert_eq!(vk_energy(s1, forms, ptr::null(), 0, &mut e1), VkStatus::Ok);
        let mut d = 0.0;
        assert_eq!(vk_dissipation(s0, s1, forms, &mut d), VkStatus::Ok);
        assert!(d > 0.0);
        assert!(e1.total + d * d / 0.1 <= e0.total + 1e-10);

        let mut sl = VkSlope::default();
        assert_eq!(vk_slope(s1, forms, &mut sl), VkStatus::Ok);
        assert!(sl.slope.is_finite() && sl.slope > 0.0 && sl.cg_iterations > 0);

        vk_state_free(s1);
        vk_state_free(s0);
        vk_forms_free(forms);
    }
}

#[test]
fn dofs_round_trip_through_buffers_and_files() {
    unsafe {
        let s = state(8, "sine(0.1)");
        let mut n = 0;
        assert_eq!(vk_state_n_dofs(s, &mut n), VkStatus::Ok);
        let mut buf = vec![0.0; n];
        assert_eq!(vk_state_get_dofs(s, buf.as_mut_ptr(), n), VkStatus::Ok);
        assert_eq!(vk_state_get_dofs(s, buf.as_mut_ptr(), n - 1), VkStatus::LengthMismatch);
        assert!(last_error().contains("length mismatch"));

        let mut t = ptr::null_mut();
        assert_eq!(vk_state_with_dofs(s, buf.as_ptr(), n, &mut t), VkStatus::Ok);
        let mut forms = ptr::null_mut();
        assert_eq!(vk_forms_catalog(1.0, 1.0, &mut forms), VkStatus::Ok);
        let mut d = 1.0;
        assert_eq!(vk_dissipation(s, t, forms, &mut d), VkStatus::Ok);
        assert_eq!(d, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().join("s.csv").to_str().unwrap());
        assert_eq!(vk_state_write(s, path.as_ptr()), VkStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(vk_state_read(path.as_ptr(), &mut r), VkStatus::Ok);
        let mut back = vec![0.0; n];
        assert_eq!(vk_state_get_dofs(r, back.as_mut_ptr(), n), VkStatus::Ok);
        assert_eq!(back, buf);

        for h in [s, t, r] {
            vk_state_free(h);
        }
        vk_forms_free(forms);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        let bad = c("pure_bend(");
        let ok = c("zero");
        let st = vk_state_from_presets(1.0, 1.0, 9, 9, ok.as_ptr(), ok.as_ptr(), ok.as_ptr(), bad.as_ptr(), &mut s);
        assert_ne!(st, VkStatus::Ok);
        assert!(s.is_null());
        assert!(!last_error().is_empty());

        let st = vk_state_from_presets(1.0, 1.0, 3, 9, ok.as_ptr(), ok.as_ptr(), ok.as_ptr(), ok.as_ptr(), &mut s);
        assert_ne!(st, VkStatus::Ok);

        assert_eq!(vk_forms_catalog(1.0, 1.0, ptr::null_mut()), VkStatus::NullPointer);
        assert!(last_error().contains("out_forms"));

        let mut forms = ptr::null_mut();
        let mut cw2 = [0.0; 9];
        cw2[0] = 1.0;
        let cd2 = [4.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 4.0];
        assert_eq!(vk_forms_from_tensors(cw2.as_ptr(), cd2.as_ptr(), &mut forms), VkStatus::Singular);
        assert!(forms.is_null());

        let a = state(9, "zero");
        let b = state(10, "zero");
        assert_eq!(vk_forms_catalog(1.0, 1.0, &mut forms), VkStatus::Ok);
        let mut d = 0.0;
        assert_eq!(vk_dissipation(a, b, forms, &mut d), VkStatus::GridMismatch);
        let mut next = ptr::null_mut();
        assert_eq!(vk_step(a, forms, -1.0, &mut next), VkStatus::InvalidArgument);
        vk_state_free(a);
        vk_state_free(b);
        vk_forms_free(forms);

        let mut x = 0.0;
        assert_eq!(vk_toy_run(1.0, 0.0, 1.0, &mut x), VkStatus::Config);
        assert_eq!(vk_toy_run(1.0, 0.1, 1.0, &mut x), VkStatus::Ok);
        assert!((x - 1.1f64.powi(-10)).abs() <= 1e-8);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/vkplate.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["vk_energy", "vk_step", "vk_last_error_message", "VK_STATUS_PANIC"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
