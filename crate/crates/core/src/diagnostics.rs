//! Trailing-window cross-covariance estimator, noise scalars, and shoulder
//! occupancy / escape statistics.
//!
//! The window records, per iteration, the batch-driven summand of the
//! pre-readout iterate (the body emission; identically zero for backends
//! whose materialization does not depend on the conditioning batch) together
//! with the pre-readout gradient on the iteration's loss batch. Fluctuations
//! are centered with the trailing window mean. The slack-channel reading of
//! the estimator is the contraction with the slack Jacobian: the identity
//! when the backend carries a slack bias, zero otherwise.

use crate::ad::logistic;


/// Shoulder width sigma_s.
pub const SHOULDER_SIGMA: f64 = 0.05;

/// Pre-readout threshold solving softplus'(t) = sigma_s: logit(0.05).
pub fn shoulder_threshold() -> f64 {
    (SHOULDER_SIGMA / (1.0 - SHOULDER_SIGMA)).ln()
}

/// Ring buffer of (pre-readout jitter, pre-readout gradient) pairs with
/// incrementally maintained Gram matrices, so the per-iteration scalars cost
/// O(T d) on record and O(T^2) on readout rather than O(T^2 d) or O(d^2).
pub struct TrailingWindow {
    capacity: usize,
    d: usize,
    theta: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
    /// Next ring slot to overwrite once full.
    head: usize,
    /// Raw Gram caches over ring slots: theta.theta, grad.grad, theta.grad.
    gram_tt: Vec<f64>,
    gram_gg: Vec<f64>,
    gram_tg: Vec<f64>,
}

/// Full cross-covariance estimate with its norms.
pub struct CrossCov {
    /// Row-major d x d matrix (1/T) sum delta_theta delta_g^T.
    pub matrix: Vec<f64>,
    pub frob: f64,
    pub trace: f64,
}

impl TrailingWindow {
    pub fn new(capacity: usize, d: usize) -> Self {
        assert!(capacity >= 2);
        TrailingWindow {
            capacity,
            d,
            theta: Vec::with_capacity(capacity),
            grad: Vec::with_capacity(capacity),
            head: 0,
            gram_tt: vec![0.0; capacity * capacity],
            gram_gg: vec![0.0; capacity * capacity],
            gram_tg: vec![0.0; capacity * capacity],
        }
    }

    pub fn fill(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Append a pair, evicting the oldest entry beyond capacity, and refresh
    /// the Gram rows/columns of the written slot.
    pub fn record(&mut self, theta_jitter: &[f64], grad: &[f64]) {
        assert_eq!(theta_jitter.len(), self.d, "window theta length mismatch");
        assert_eq!(grad.len(), self.d, "window gradient length mismatch");
        let slot = if self.theta.len() < self.capacity {
            self.theta.push(theta_jitter.to_vec());
            self.grad.push(grad.to_vec());
            self.theta.len() - 1
        } else {
            let s = self.head;
            self.head = (self.head + 1) % self.capacity;
            self.theta[s].copy_from_slice(theta_jitter);
            self.grad[s].copy_from_slice(grad);
            s
        };
        let cap = self.capacity;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<f64>();
        for q in 0..self.theta.len() {
            let tt = dot(&self.theta[slot], &self.theta[q]);
            self.gram_tt[slot * cap + q] = tt;
            self.gram_tt[q * cap + slot] = tt;
            let gg = dot(&self.grad[slot], &self.grad[q]);
            self.gram_gg[slot * cap + q] = gg;
            self.gram_gg[q * cap + slot] = gg;
            self.gram_tg[slot * cap + q] = dot(&self.theta[slot], &self.grad[q]);
            self.gram_tg[q * cap + slot] = dot(&self.theta[q], &self.grad[slot]);
        }
    }

    /// Frobenius norm and trace of the estimator without materializing the
    /// d x d matrix, via the Gram identity
    /// `||S||_F^2 = (1/T^2) sum_{s,u} (dth_s . dth_u)(dg_s . dg_u)`.
    /// `None` while the window has fewer than two entries.
    pub fn scalars(&self) -> Option<(f64, f64)> {
        let t = self.fill();
        if t < 2 {
            return None;
        }
        let cap = self.capacity;
        let tf = t as f64;
        let row_sum = |g: &[f64], p: usize| -> f64 { (0..t).map(|q| g[p * cap + q]).sum() };
        let col_sum = |g: &[f64], q: usize| -> f64 { (0..t).map(|p| g[p * cap + q]).sum() };
        let total = |g: &[f64]| -> f64 { (0..t).map(|p| row_sum(g, p)).sum() };

        let rt: Vec<f64> = (0..t).map(|p| row_sum(&self.gram_tt, p)).collect();
        let rg: Vec<f64> = (0..t).map(|p| row_sum(&self.gram_gg, p)).collect();
        let tot_t: f64 = rt.iter().sum();
        let tot_g: f64 = rg.iter().sum();

        let mut frob_sq = 0.0;
        for s in 0..t {
            for u in 0..t {
                let ct = self.gram_tt[s * cap + u] - rt[s] / tf - rt[u] / tf + tot_t / (tf * tf);
                let cg = self.gram_gg[s * cap + u] - rg[s] / tf - rg[u] / tf + tot_g / (tf * tf);
                frob_sq += ct * cg;
            }
        }

        let ctot = total(&self.gram_tg);
        let mut trace = 0.0;
        for s in 0..t {
            let diag = self.gram_tg[s * cap + s];
            trace += diag - row_sum(&self.gram_tg, s) / tf - col_sum(&self.gram_tg, s) / tf
                + ctot / (tf * tf);
        }
        Some(((frob_sq.max(0.0) / (tf * tf)).sqrt(), trace / tf))
    }

    /// Full d x d estimator; `None` while fewer than two entries.
    pub fn cross_cov(&self) -> Option<CrossCov> {
        let t = self.fill();
        if t < 2 {
            return None;
        }
        let tf = t as f64;
        let mut mt = vec![0.0; self.d];
        let mut mg = vec![0.0; self.d];
        for (th, g) in self.theta.iter().zip(&self.grad) {
            for i in 0..self.d {
                mt[i] += th[i];
                mg[i] += g[i];
            }
        }
        mt.iter_mut().for_each(|v| *v /= tf);
        mg.iter_mut().for_each(|v| *v /= tf);
        let mut m = vec![0.0; self.d * self.d];
        for (th, g) in self.theta.iter().zip(&self.grad) {
            for i in 0..self.d {
                let dt = th[i] - mt[i];
                if dt == 0.0 {
                    continue;
                }
                for j in 0..self.d {
                    m[i * self.d + j] += dt * (g[j] - mg[j]);
                }
            }
        }
        let inv = 1.0 / tf;
        m.iter_mut().for_each(|v| *v *= inv);
        let frob = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let trace = (0..self.d).map(|i| m[i * self.d + i]).sum();
        Some(CrossCov { matrix: m, frob, trace })
    }
}

/// The three regime scalars and their dimensionless ratio.
#[derive(Clone, Copy, Debug)]
pub struct NoiseScalars {
    pub sigma_obj_sq: f64,
    pub sigma_jac_sq: f64,
    pub sigma_s: f64,
    /// sigma_jac^2 / (sigma_s^2 sigma_obj^2); infinite when the gradient is
    /// noiseless.
    pub rho_ratio: f64,
}

/// Trace of the empirical per-coordinate variance of gradient replicas taken
/// at fixed parameters on fresh batches.
pub fn gradient_variance_trace(replicas: &[Vec<f64>]) -> f64 {
    assert!(replicas.len() >= 2, "need at least two gradient replicas");
    let k = replicas.len() as f64;
    let d = replicas[0].len();
    let mut mean = vec![0.0; d];
    for r in replicas {
        assert_eq!(r.len(), d);
        for i in 0..d {
            mean[i] += r[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= k);
    let mut acc = 0.0;
    for r in replicas {
        for i in 0..d {
            let dv = r[i] - mean[i];
            acc += dv * dv;
        }
    }
    acc / (k - 1.0)
}

/// Assemble the noise scalars from the window (slack-gated) and a set of
/// constrained-coordinate gradient replicas.
pub fn noise_scalars(window: &TrailingWindow, replicas: &[Vec<f64>], has_slack: bool) -> NoiseScalars {
    let sigma_obj_sq = gradient_variance_trace(replicas);
    let sigma_jac_sq = if has_slack {
        window.scalars().map(|(_, tr)| tr).unwrap_or(0.0)
    } else {
        0.0
    };
    let sigma_s = logistic(shoulder_threshold());
    let rho_ratio = if sigma_obj_sq == 0.0 {
        f64::INFINITY
    } else {
        sigma_jac_sq / (sigma_s * sigma_s * sigma_obj_sq)
    };
    NoiseScalars { sigma_obj_sq, sigma_jac_sq, sigma_s, rho_ratio }
}

/// Occupancy curve plus conditional escape statistics from a uniform-stride
/// history of pre-readout snapshots.
#[derive(Clone, Debug)]
pub struct EscapeStats {
    /// Fraction of coordinates below threshold, per snapshot.
    pub occupancy: Vec<f64>,
    /// P(exit at t+1 | in shoulder at t); absent if nothing ever enters.
    pub leave_rate: Option<f64>,
    /// Mean over entering coordinates of the fraction of the remaining run
    /// spent in the shoulder after first entry.
    pub dwell_fraction: Option<f64>,
    /// Pooled counts: exits and at-risk (in shoulder with a successor).
    pub exits: u64,
    pub at_risk: u64,
    /// Per-coordinate dwell fractions for coordinates that enter.
    pub dwell_per_coord: Vec<f64>,
}

pub fn shoulder_escape_stats(snapshots: &[Vec<f64>], threshold: f64) -> EscapeStats {
    let t_n = snapshots.len();
    assert!(t_n >= 1, "need at least one snapshot");
    let d = snapshots[0].len();
    let inside: Vec<Vec<bool>> = snapshots
        .iter()
        .map(|s| {
            assert_eq!(s.len(), d);
            s.iter().map(|&v| v < threshold).collect()
        })
        .collect();
    let occupancy: Vec<f64> = inside
        .iter()
        .map(|row| row.iter().filter(|&&b| b).count() as f64 / d.max(1) as f64)
        .collect();

    let mut exits = 0u64;
    let mut at_risk = 0u64;
    for t in 0..t_n.saturating_sub(1) {
        for c in 0..d {
            if inside[t][c] {
                at_risk += 1;
                if !inside[t + 1][c] {
                    exits += 1;
                }
            }
        }
    }

    let mut dwell_per_coord = Vec::new();
    for c in 0..d {
        if let Some(first) = (0..t_n).find(|&t| inside[t][c]) {
            let span = t_n - first;
            let in_count = (first..t_n).filter(|&t| inside[t][c]).count();
            dwell_per_coord.push(in_count as f64 / span as f64);
        }
    }

    let leave_rate = if at_risk > 0 { Some(exits as f64 / at_risk as f64) } else { None };
    let dwell_fraction = if dwell_per_coord.is_empty() {
        None
    } else {
        Some(dwell_per_coord.iter().sum::<f64>() / dwell_per_coord.len() as f64)
    };
    EscapeStats { occupancy, leave_rate, dwell_fraction, exits, at_risk, dwell_per_coord }
}
