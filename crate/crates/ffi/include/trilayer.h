#ifndef TRILAYER_H
#define TRILAYER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// What happened to one policed packet.
typedef enum TlOutcome {
  TL_OUTCOME_ENQUEUED = 0,
  TL_OUTCOME_DROPPED_BY_WINDOW = 1,
  TL_OUTCOME_DROPPED_BY_QUEUE = 2,
  TL_OUTCOME_DENIED = 3,
  TL_OUTCOME_SYN_QUEUED = 4,
} TlOutcome;

// Result code of every fallible call.
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_PARAMETER = 2,
  TL_STATUS_NOT_ALLOWLISTED = 3,
  // The flow table has no entries, so the fair share is undefined.
  TL_STATUS_EMPTY_TABLE = 4,
  TL_STATUS_NOT_FOUND = 5,
  // A Rust panic was caught at the boundary. The handle should be freed.
  TL_STATUS_INTERNAL = 6,
} TlStatus;

// Opaque policer handle.
typedef struct TlPolicer TlPolicer;

// Policer tunables. `bandwidth` is in packets per detection period.
typedef struct TlParams {
  uint32_t detection_period;
  double lambda;
  double loss_threshold;
  double bandwidth;
  double syn_budget_fraction;
} TlParams;

// Per-outcome counts for a burst.
typedef struct TlBurstResult {
  uint32_t enqueued;
  uint32_t window_drops;
  uint32_t queue_drops;
  uint32_t denied;
  uint32_t syn_queued;
} TlBurstResult;

// Snapshot of one flow entry.
typedef struct TlFlowInfo {
  uint32_t period_start;
  float window;
  uint32_t received;
  uint32_t dropped;
  double loss_rate;
} TlFlowInfo;

// Per-sender guarantees, in the unit of the bandwidth passed in.
typedef struct TlBounds {
  double fair;
  double attacker_cap;
  double legit_floor;
} TlBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Default tunables for a congestion layer of `bandwidth` packets per period.
struct TlParams tl_params_default(double bandwidth);

// Creates a policer whose service queue holds `queue_capacity` packets.
// On success `*out` receives a handle to release with [`tl_policer_free`].
//
// # Safety
// `params` must point to a valid `TlParams` and `out` to writable storage.
enum TlStatus tl_policer_new(const struct TlParams *params,
                             uint64_t queue_capacity,
                             struct TlPolicer **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `p` must come from [`tl_policer_new`] and not be used afterwards.
void tl_policer_free(struct TlPolicer *p);

// Adds `source` to the allowlist.
//
// # Safety
// `p` must be a live handle.
enum TlStatus tl_policer_allow(struct TlPolicer *p, uint32_t source);

// Admits an allowlisted `source` at time `now` with the current fair share.
// Admitting a present source is a no-op.
//
// # Safety
// `p` must be a live handle.
enum TlStatus tl_policer_admit(struct TlPolicer *p, uint32_t source, uint32_t now);

// Admits every source in `sources[0..n]` at once, all at the same fair share.
//
// # Safety
// `p` must be a live handle and `sources` must hold `n` elements.
enum TlStatus tl_policer_admit_batch(struct TlPolicer *p,
                                     const uint32_t *sources,
                                     size_t n,
                                     uint32_t now,
                                     size_t *admitted);

// Polices one packet.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_process(struct TlPolicer *p,
                                 uint32_t source,
                                 uint32_t arrival,
                                 bool syn,
                                 enum TlOutcome *out);

// Polices `count` packets from one source arriving together. Same result as
// `count` calls to [`tl_policer_process`].
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_process_burst(struct TlPolicer *p,
                                       uint32_t source,
                                       uint32_t arrival,
                                       bool syn,
                                       uint32_t count,
                                       struct TlBurstResult *out);

// Removes up to `max` packets from the head of the service queue and writes
// their sources to `sources` (which may be null when only the count matters).
//
// # Safety
// `p` must be a live handle, `drained` writable, and `sources`, if not null,
// must have room for `max` elements.
enum TlStatus tl_policer_drain(struct TlPolicer *p,
                               uint64_t max,
                               uint32_t *sources,
                               uint64_t *drained);

// Packets waiting in the service queue.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_queue_len(const struct TlPolicer *p, uint64_t *out);

// Number of admitted sources.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_len(const struct TlPolicer *p, uint64_t *out);

// Copies the entry for `source`, or returns [`TlStatus::NotFound`].
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_flow(const struct TlPolicer *p, uint32_t source, struct TlFlowInfo *out);

// Sum of all rate limiting windows.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_window_total(const struct TlPolicer *p, double *out);

// Current per-sender fair share, bandwidth over the admitted count.
//
// # Safety
// `p` must be a live handle and `out` writable.
enum TlStatus tl_policer_fair_share(const struct TlPolicer *p, double *out);

// Drops entries idle for at least `idle_periods` detection periods.
//
// # Safety
// `p` must be a live handle and `evicted` writable.
enum TlStatus tl_policer_evict_idle(struct TlPolicer *p,
                                    uint32_t now,
                                    uint32_t idle_periods,
                                    uint64_t *evicted);

// Forgets every admitted source. The allowlist is kept.
//
// # Safety
// `p` must be a live handle.
enum TlStatus tl_policer_reset(struct TlPolicer *p);

// Fair share, attacker aggregate cap and legitimate floor for a population.
//
// # Safety
// `out` must be writable.
enum TlStatus tl_fair_share_bound(uint64_t n_legit,
                                  uint64_t n_attack,
                                  double bandwidth,
                                  double loss_threshold,
                                  struct TlBounds *out);

// Description of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *tl_last_error_message(void);

// Static name of a status code.
const char *tl_status_name(enum TlStatus status);

// Library version, NUL terminated.
const char *tl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRILAYER_H */
