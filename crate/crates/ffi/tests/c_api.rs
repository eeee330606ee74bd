use std::ffi::c_char;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use predictive_offload_ffi::*;

#[test]
fn window_fit_and_errors() {
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(po_window_new(0, &mut w), PoStatus::InvalidArgument);
        assert!(w.is_null());
        assert_eq!(po_window_new(2, &mut w), PoStatus::Ok);
        assert_eq!(po_window_push(w, -1.0, 1.0), PoStatus::InvalidArgument);
        for (d, t) in [(1.0, 1.0), (2.0, 2.0), (3.0, 5.0)] {
            assert_eq!(po_window_push(w, d, t), PoStatus::Ok);
        }
        let mut len = 0;
        assert_eq!(po_window_len(w, &mut len), PoStatus::Ok);
        assert_eq!(len, 2);
        let mut m = PoLinearModel {
            slope: 0.0,
            intercept: 0.0,
            degenerate: true,
        };
        assert_eq!(po_window_fit(w, &mut m), PoStatus::Ok);
        assert!((m.slope - 3.0).abs() < 1e-12 && (m.intercept + 4.0).abs() < 1e-12);
        let mut p = 0.0;
        assert_eq!(po_predict(&m, 4.0, &mut p), PoStatus::Ok);
        assert!((p - 8.0).abs() < 1e-12);
        assert_eq!(po_window_fit(w, ptr::null_mut()), PoStatus::NullPointer);
        po_window_free(w);
        po_window_free(ptr::null_mut());
    }
}

#[test]
fn last_error_is_reported() {
    unsafe {
        let mut dec = PoDecision {
            target: PoTarget::Local,
            p_local: 0.0,
            p_cloud: 0.0,
        };
        assert_eq!(
            po_decide(f64::NAN, 1.0, &mut dec),
            PoStatus::InvalidPrediction
        );
        let mut buf = [0 as c_char; 256];
        let n = po_last_error(buf.as_mut_ptr(), buf.len());
        assert!(n > 0);
        let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy();
        assert!(msg.contains("invalid prediction"), "{msg}");
    }
}

#[test]
fn engine_plan_observe_cycle() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(po_engine_new(1, true, &mut e), PoStatus::InvalidArgument);
        assert_eq!(po_engine_new(2, true, &mut e), PoStatus::Ok);
        let mut plan = PoPlan {
            warmup: false,
            decision: PoDecision {
                target: PoTarget::Local,
                p_local: 0.0,
                p_cloud: 0.0,
            },
        };
        for (i, d) in [(1u64, 1.0), (2, 2.0)] {
            assert_eq!(po_engine_plan(e, i, d, &mut plan), PoStatus::Ok);
            assert!(plan.warmup);
            assert_eq!(
                po_engine_observe(e, PoTarget::Local, d, 0.3 * d),
                PoStatus::Ok
            );
            assert_eq!(
                po_engine_observe(e, PoTarget::Cloud, d, 0.1 * d + 0.05),
                PoStatus::Ok
            );
        }
        assert_eq!(po_engine_plan(e, 3, 3.0, &mut plan), PoStatus::Ok);
        assert!(!plan.warmup);
        assert_eq!(plan.decision.target, PoTarget::Cloud);
        assert!((plan.decision.p_local - 0.9).abs() < 1e-12);
        assert!((plan.decision.p_cloud - 0.35).abs() < 1e-12);
        let mut len = 0;
        assert_eq!(
            po_engine_window_len(e, PoTarget::Cloud, &mut len),
            PoStatus::Ok
        );
        assert_eq!(len, 2);
        po_engine_free(e);
    }
}

#[test]
fn frame_codec_matches_core() {
    unsafe {
        let f = PoFrame {
            kind: PoFrameKind::Response,
            task_id: 77,
            value: 0.125,
        };
        let mut buf = [0u8; PO_FRAME_LEN];
        assert_eq!(
            po_encode_frame(&f, buf.as_mut_ptr(), 20),
            PoStatus::BufferTooSmall
        );
        assert_eq!(
            po_encode_frame(&f, buf.as_mut_ptr(), buf.len()),
            PoStatus::Ok
        );
        let mut back = PoFrame {
            kind: PoFrameKind::Request,
            task_id: 0,
            value: 0.0,
        };
        let mut used = 0;
        assert_eq!(
            po_decode_frame(buf.as_ptr(), buf.len(), &mut back, &mut used),
            PoStatus::Ok
        );
        assert_eq!((back, used), (f, PO_FRAME_LEN));
        buf[4] = 0x03;
        assert_eq!(
            po_decode_frame(buf.as_ptr(), buf.len(), &mut back, &mut used),
            PoStatus::ProtocolError
        );
        assert_eq!(
            po_decode_frame(ptr::null(), 0, &mut back, &mut used),
            PoStatus::NeedMoreBytes
        );
    }
}

#[test]
fn input_size_and_pearson() {
    unsafe {
        let mut n = 0;
        assert_eq!(po_node_count(2.0, 0.1, &mut n), PoStatus::Ok);
        assert_eq!(n, 200);
        assert_eq!(po_node_count(2.0, 0.0, &mut n), PoStatus::InvalidArgument);
        let mut v = 0.0;
        assert_eq!(
            po_normalize_input_size(3_043_962.0, 1e6, &mut v),
            PoStatus::Ok
        );
        assert!((v - 3.043962).abs() < 1e-12);
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0];
        let mut r = 0.0;
        assert_eq!(
            po_pearson(xs.as_ptr(), ys.as_ptr(), 3, &mut r),
            PoStatus::Ok
        );
        assert!((r - 1.0).abs() < 1e-12);
        let flat = [1.0, 1.0, 1.0];
        assert_eq!(
            po_pearson(xs.as_ptr(), flat.as_ptr(), 3, &mut r),
            PoStatus::UndefinedCorrelation
        );
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpredictive_offload_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    assert!(lib.exists(), "missing {}", lib.display());
    let out = tempfile_path("po_smoke");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(
        run.status.success(),
        "smoke test failed: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}_{}", std::process::id()))
}
