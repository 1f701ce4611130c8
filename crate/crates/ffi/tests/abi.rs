use std::ffi::CStr;
use std::ptr;

use trilayer_ffi::*;

fn new_policer(bandwidth: f64, queue: u64) -> *mut TlPolicer {
    let params = tl_params_default(bandwidth);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { tl_policer_new(&params, queue, &mut p) }, TlStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    let m = tl_last_error_message();
    assert!(!m.is_null());
    unsafe { CStr::from_ptr(m) }.to_string_lossy().into_owned()
}

#[test]
fn invalid_params_are_rejected() {
    let mut params = tl_params_default(1000.0);
    params.lambda = 1.5;
    let mut p = ptr::null_mut();
    let s = unsafe { tl_policer_new(&params, 10, &mut p) };
    assert_eq!(s, TlStatus::InvalidParameter);
    assert!(p.is_null());
    assert!(last_error().contains("lambda"));
}

#[test]
fn null_pointers_are_reported() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { tl_policer_new(ptr::null(), 10, &mut p) },
        TlStatus::NullPointer
    );
    assert_eq!(unsafe { tl_policer_allow(ptr::null_mut(), 1) }, TlStatus::NullPointer);
    let h = new_policer(100.0, 10);
    assert_eq!(
        unsafe { tl_policer_window_total(h, ptr::null_mut()) },
        TlStatus::NullPointer
    );
    unsafe { tl_policer_free(h) };
    unsafe { tl_policer_free(ptr::null_mut()) };
}

#[test]
fn admission_requires_allowlist() {
    let h = new_policer(1000.0, 100);
    assert_eq!(unsafe { tl_policer_admit(h, 7, 0) }, TlStatus::NotAllowlisted);
    assert!(last_error().contains("allowlist"));
    assert_eq!(unsafe { tl_policer_allow(h, 7) }, TlStatus::Ok);
    assert_eq!(unsafe { tl_policer_admit(h, 7, 0) }, TlStatus::Ok);
    let mut info = TlFlowInfo::default();
    assert_eq!(unsafe { tl_policer_flow(h, 7, &mut info) }, TlStatus::Ok);
    assert_eq!(info.window, 1000.0);
    let mut fair = 0.0;
    assert_eq!(unsafe { tl_policer_fair_share(h, &mut fair) }, TlStatus::Ok);
    assert_eq!(fair, 1000.0);
    unsafe { tl_policer_free(h) };
}

#[test]
fn burst_matches_single_packets() {
    let a = new_policer(1000.0, 400);
    let b = new_policer(1000.0, 400);
    for h in [a, b] {
        for s in 1..=3 {
            unsafe { tl_policer_allow(h, s) };
        }
        let mut n = 0;
        assert_eq!(
            unsafe { tl_policer_admit_batch(h, [1u32, 2, 3].as_ptr(), 3, 0, &mut n) },
            TlStatus::Ok
        );
        assert_eq!(n, 3);
    }
    let mut burst = TlBurstResult::default();
    unsafe { tl_policer_process_burst(a, 2, 10, false, 500, &mut burst) };
    let mut singles = TlBurstResult::default();
    for _ in 0..500 {
        let mut o = TlOutcome::Denied;
        unsafe { tl_policer_process(b, 2, 10, false, &mut o) };
        match o {
            TlOutcome::Enqueued => singles.enqueued += 1,
            TlOutcome::DroppedByWindow => singles.window_drops += 1,
            TlOutcome::DroppedByQueue => singles.queue_drops += 1,
            TlOutcome::Denied => singles.denied += 1,
            TlOutcome::SynQueued => singles.syn_queued += 1,
        }
    }
    assert_eq!(burst, singles);
    assert_eq!(burst.enqueued, 333);
    assert_eq!(burst.window_drops, 167);

    let mut sources = vec![0u32; 400];
    let mut drained = 0;
    assert_eq!(
        unsafe { tl_policer_drain(a, 400, sources.as_mut_ptr(), &mut drained) },
        TlStatus::Ok
    );
    assert_eq!(drained, 333);
    assert!(sources[..333].iter().all(|&s| s == 2));
    let mut left = 1;
    unsafe { tl_policer_queue_len(a, &mut left) };
    assert_eq!(left, 0);
    unsafe {
        tl_policer_free(a);
        tl_policer_free(b);
    }
}

#[test]
fn unknown_sources_are_denied_and_syns_queued() {
    let h = new_policer(1000.0, 10);
    let mut o = TlOutcome::Enqueued;
    unsafe { tl_policer_process(h, 42, 0, false, &mut o) };
    assert_eq!(o, TlOutcome::Denied);
    unsafe { tl_policer_process(h, 42, 0, true, &mut o) };
    assert_eq!(o, TlOutcome::SynQueued);
    let mut n = 1;
    unsafe { tl_policer_len(h, &mut n) };
    assert_eq!(n, 0);
    unsafe { tl_policer_free(h) };
}

#[test]
fn eviction_and_reset() {
    let h = new_policer(1000.0, 10);
    for s in 1..=4 {
        unsafe {
            tl_policer_allow(h, s);
            tl_policer_admit(h, s, 0);
        }
    }
    let mut evicted = 0;
    assert_eq!(
        unsafe { tl_policer_evict_idle(h, 10_000, 10, &mut evicted) },
        TlStatus::Ok
    );
    assert_eq!(evicted, 4);
    unsafe { tl_policer_admit(h, 1, 10_000) };
    assert_eq!(unsafe { tl_policer_reset(h) }, TlStatus::Ok);
    let mut n = 1;
    unsafe { tl_policer_len(h, &mut n) };
    assert_eq!(n, 0);
    unsafe { tl_policer_free(h) };
}

#[test]
fn bounds() {
    let mut b = TlBounds::default();
    assert_eq!(
        unsafe { tl_fair_share_bound(100, 500, 1000.0, 0.05, &mut b) },
        TlStatus::Ok
    );
    assert!((b.fair - 1000.0 / 600.0).abs() < 1e-12);
    assert!((b.attacker_cap - 1.05 * 500.0 * 1000.0 / 600.0).abs() < 1e-9);
    assert!((b.legit_floor - 1.05 * 1000.0 / 600.0).abs() < 1e-12);
    assert_eq!(
        unsafe { tl_fair_share_bound(0, 0, 1000.0, 0.05, &mut b) },
        TlStatus::InvalidParameter
    );
}

#[test]
fn names() {
    let v = unsafe { CStr::from_ptr(tl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    let n = unsafe { CStr::from_ptr(tl_status_name(TlStatus::NotAllowlisted)) };
    assert_eq!(n.to_str().unwrap(), "not allowlisted");
}
