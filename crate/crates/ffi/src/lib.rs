//! C ABI over the congestion-accountability policer.
//!
//! A `TlPolicer` owns a policer together with the service queue it feeds.
//! Every fallible call returns a [`TlStatus`]; on failure a description is
//! available from [`tl_last_error_message`] on the same thread. Handles are
//! not thread safe: callers serialize access to one handle themselves.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use trilayer::model::Admission;
use trilayer::policer::BurstOutcome;
use trilayer::{
    Error, FlowId, FlowTable, PacketKind, PacketOutcome, PacketQueue, PacketRecord, Policer, PolicerParams,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    NotAllowlisted = 3,
    /// The flow table has no entries, so the fair share is undefined.
    EmptyTable = 4,
    NotFound = 5,
    /// A Rust panic was caught at the boundary. The handle should be freed.
    Internal = 6,
}

/// What happened to one policed packet.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlOutcome {
    Enqueued = 0,
    DroppedByWindow = 1,
    DroppedByQueue = 2,
    Denied = 3,
    SynQueued = 4,
}

/// Policer tunables. `bandwidth` is in packets per detection period.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlParams {
    pub detection_period: u32,
    pub lambda: f64,
    pub loss_threshold: f64,
    pub bandwidth: f64,
    pub syn_budget_fraction: f64,
}

/// Snapshot of one flow entry.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TlFlowInfo {
    pub period_start: u32,
    pub window: f32,
    pub received: u32,
    pub dropped: u32,
    pub loss_rate: f64,
}

/// Per-outcome counts for a burst.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TlBurstResult {
    pub enqueued: u32,
    pub window_drops: u32,
    pub queue_drops: u32,
    pub denied: u32,
    pub syn_queued: u32,
}

/// Per-sender guarantees, in the unit of the bandwidth passed in.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TlBounds {
    pub fair: f64,
    pub attacker_cap: f64,
    pub legit_floor: f64,
}

/// Opaque policer handle.
pub struct TlPolicer {
    policer: Policer,
    queue: PacketQueue,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TlStatus {
    match e {
        Error::NotAllowlisted(_) => TlStatus::NotAllowlisted,
        Error::EmptyTable => TlStatus::EmptyTable,
        _ => TlStatus::InvalidParameter,
    }
}

fn fail(status: TlStatus, msg: impl Into<String>) -> TlStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`TlStatus::Internal`].
fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TlStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(TlStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(TlStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

fn kind(syn: bool) -> PacketKind {
    if syn {
        PacketKind::Syn
    } else {
        PacketKind::Regular
    }
}

impl From<PacketOutcome> for TlOutcome {
    fn from(o: PacketOutcome) -> Self {
        match o {
            PacketOutcome::Enqueued => Self::Enqueued,
            PacketOutcome::DroppedByWindow => Self::DroppedByWindow,
            PacketOutcome::DroppedByQueue => Self::DroppedByQueue,
            PacketOutcome::Denied => Self::Denied,
            PacketOutcome::SynQueued => Self::SynQueued,
        }
    }
}

impl From<BurstOutcome> for TlBurstResult {
    fn from(b: BurstOutcome) -> Self {
        Self {
            enqueued: b.enqueued,
            window_drops: b.window_drops,
            queue_drops: b.queue_drops,
            denied: b.denied,
            syn_queued: b.syn_queued,
        }
    }
}

/// Default tunables for a congestion layer of `bandwidth` packets per period.
#[no_mangle]
pub extern "C" fn tl_params_default(bandwidth: f64) -> TlParams {
    let p = PolicerParams::new(bandwidth);
    TlParams {
        detection_period: p.detection_period,
        lambda: p.lambda,
        loss_threshold: p.loss_threshold,
        bandwidth: p.bandwidth,
        syn_budget_fraction: p.syn_budget_fraction,
    }
}

/// Creates a policer whose service queue holds `queue_capacity` packets.
/// On success `*out` receives a handle to release with [`tl_policer_free`].
///
/// # Safety
/// `params` must point to a valid `TlParams` and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_new(
    params: *const TlParams,
    queue_capacity: u64,
    out: *mut *mut TlPolicer,
) -> TlStatus {
    guard(|| {
        let p = *deref!(params);
        let out = deref_mut!(out);
        *out = std::ptr::null_mut();
        let mut core = PolicerParams::new(p.bandwidth).with_detection_period(p.detection_period);
        core.lambda = p.lambda;
        core.loss_threshold = p.loss_threshold;
        core.syn_budget_fraction = p.syn_budget_fraction;
        match Policer::new(core, FlowTable::new()) {
            Ok(policer) => {
                *out = Box::into_raw(Box::new(TlPolicer {
                    policer,
                    queue: PacketQueue::new(queue_capacity),
                }));
                TlStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `p` must come from [`tl_policer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_free(p: *mut TlPolicer) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Adds `source` to the allowlist.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_allow(p: *mut TlPolicer, source: u32) -> TlStatus {
    guard(|| {
        deref_mut!(p).policer.table.allow(FlowId(source));
        TlStatus::Ok
    })
}

/// Admits an allowlisted `source` at time `now` with the current fair share.
/// Admitting a present source is a no-op.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_admit(p: *mut TlPolicer, source: u32, now: u32) -> TlStatus {
    guard(|| match deref_mut!(p).policer.admit_flow(FlowId(source), now) {
        Ok(Admission::Admitted(_) | Admission::AlreadyPresent) => TlStatus::Ok,
        Err(e) => fail(status_of(&e), e.to_string()),
    })
}

/// Admits every source in `sources[0..n]` at once, all at the same fair share.
///
/// # Safety
/// `p` must be a live handle and `sources` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_admit_batch(
    p: *mut TlPolicer,
    sources: *const u32,
    n: usize,
    now: u32,
    admitted: *mut usize,
) -> TlStatus {
    guard(|| {
        let h = deref_mut!(p);
        let admitted = deref_mut!(admitted);
        let ids: &[u32] = if n == 0 {
            &[]
        } else if sources.is_null() {
            return fail(TlStatus::NullPointer, "sources is null");
        } else {
            std::slice::from_raw_parts(sources, n)
        };
        *admitted = h.policer.admit_batch(ids.iter().copied().map(FlowId), now);
        TlStatus::Ok
    })
}

/// Polices one packet.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_process(
    p: *mut TlPolicer,
    source: u32,
    arrival: u32,
    syn: bool,
    out: *mut TlOutcome,
) -> TlStatus {
    guard(|| {
        let h = deref_mut!(p);
        let out = deref_mut!(out);
        let pkt = PacketRecord::new(FlowId(source), arrival, kind(syn));
        *out = h.policer.process_packet(&mut h.queue, pkt).into();
        TlStatus::Ok
    })
}

/// Polices `count` packets from one source arriving together. Same result as
/// `count` calls to [`tl_policer_process`].
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_process_burst(
    p: *mut TlPolicer,
    source: u32,
    arrival: u32,
    syn: bool,
    count: u32,
    out: *mut TlBurstResult,
) -> TlStatus {
    guard(|| {
        let h = deref_mut!(p);
        let out = deref_mut!(out);
        *out = h
            .policer
            .process_burst(&mut h.queue, FlowId(source), arrival, kind(syn), count)
            .into();
        TlStatus::Ok
    })
}

/// Removes up to `max` packets from the head of the service queue and writes
/// their sources to `sources` (which may be null when only the count matters).
///
/// # Safety
/// `p` must be a live handle, `drained` writable, and `sources`, if not null,
/// must have room for `max` elements.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_drain(
    p: *mut TlPolicer,
    max: u64,
    sources: *mut u32,
    drained: *mut u64,
) -> TlStatus {
    guard(|| {
        let h = deref_mut!(p);
        let drained = deref_mut!(drained);
        let mut i = 0usize;
        *drained = h.queue.pop_n(max, |run| {
            if !sources.is_null() {
                for _ in 0..run.count {
                    *sources.add(i) = run.source.0;
                    i += 1;
                }
            }
        });
        TlStatus::Ok
    })
}

/// Packets waiting in the service queue.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_queue_len(p: *const TlPolicer, out: *mut u64) -> TlStatus {
    guard(|| {
        *deref_mut!(out) = deref!(p).queue.len();
        TlStatus::Ok
    })
}

/// Number of admitted sources.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_len(p: *const TlPolicer, out: *mut u64) -> TlStatus {
    guard(|| {
        *deref_mut!(out) = deref!(p).policer.table.len() as u64;
        TlStatus::Ok
    })
}

/// Copies the entry for `source`, or returns [`TlStatus::NotFound`].
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_flow(p: *const TlPolicer, source: u32, out: *mut TlFlowInfo) -> TlStatus {
    guard(|| {
        let h = deref!(p);
        let out = deref_mut!(out);
        match h.policer.table.get(FlowId(source)) {
            Some(e) => {
                *out = TlFlowInfo {
                    period_start: e.period_start,
                    window: e.window,
                    received: e.received,
                    dropped: e.dropped,
                    loss_rate: e.loss_rate,
                };
                TlStatus::Ok
            }
            None => fail(TlStatus::NotFound, format!("source {source} is not in the flow table")),
        }
    })
}

/// Sum of all rate limiting windows.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_window_total(p: *const TlPolicer, out: *mut f64) -> TlStatus {
    guard(|| {
        *deref_mut!(out) = deref!(p).policer.table.window_total();
        TlStatus::Ok
    })
}

/// Current per-sender fair share, bandwidth over the admitted count.
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_fair_share(p: *const TlPolicer, out: *mut f64) -> TlStatus {
    guard(|| {
        *deref_mut!(out) = deref!(p).policer.params.fair_share;
        TlStatus::Ok
    })
}

/// Drops entries idle for at least `idle_periods` detection periods.
///
/// # Safety
/// `p` must be a live handle and `evicted` writable.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_evict_idle(
    p: *mut TlPolicer,
    now: u32,
    idle_periods: u32,
    evicted: *mut u64,
) -> TlStatus {
    guard(|| {
        let h = deref_mut!(p);
        *deref_mut!(evicted) = h.policer.evict_idle(now, idle_periods) as u64;
        TlStatus::Ok
    })
}

/// Forgets every admitted source. The allowlist is kept.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tl_policer_reset(p: *mut TlPolicer) -> TlStatus {
    guard(|| {
        deref_mut!(p).policer.reset();
        TlStatus::Ok
    })
}

/// Fair share, attacker aggregate cap and legitimate floor for a population.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tl_fair_share_bound(
    n_legit: u64,
    n_attack: u64,
    bandwidth: f64,
    loss_threshold: f64,
    out: *mut TlBounds,
) -> TlStatus {
    guard(|| {
        let out = deref_mut!(out);
        match trilayer::sim::fair_share_bound(n_legit, n_attack, bandwidth, loss_threshold) {
            Ok(b) => {
                *out = TlBounds {
                    fair: b.fair,
                    attacker_cap: b.attacker_cap,
                    legit_floor: b.legit_floor,
                };
                TlStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Description of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn tl_status_name(status: TlStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        TlStatus::Ok => b"ok\0",
        TlStatus::NullPointer => b"null pointer\0",
        TlStatus::InvalidParameter => b"invalid parameter\0",
        TlStatus::NotAllowlisted => b"not allowlisted\0",
        TlStatus::EmptyTable => b"empty table\0",
        TlStatus::NotFound => b"not found\0",
        TlStatus::Internal => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// Library version, NUL terminated.
#[no_mangle]
pub extern "C" fn tl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
