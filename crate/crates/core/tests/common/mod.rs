//! Oracles shared by the integration tests.

/// Water-filling by bisection on the common level: queue i gets
/// `min(backlog_i, w_i * level)` and the level is raised until the link or the
/// backlog runs out.
pub fn water_fill_oracle(weights: &[f64], backlog: &[u64], capacity: f64) -> Vec<f64> {
    let total: f64 = backlog.iter().map(|&b| b as f64).sum();
    let want = capacity.min(total);
    let alloc = |level: f64| -> Vec<f64> {
        weights
            .iter()
            .zip(backlog)
            .map(|(w, &b)| (w * level).min(b as f64))
            .collect()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while alloc(hi).iter().sum::<f64>() < want {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    alloc(hi)
}
