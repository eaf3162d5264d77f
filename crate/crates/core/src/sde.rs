//! Synthetic bias-channel escape SDE: drift-free Euler-Maruyama replicates
//! started below an absorbing shoulder threshold, driven by a
//! readout-attenuated objective-noise term and an unattenuated second term.

use crate::ad::logistic;
use crate::rng::substream_indexed;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct SdeConfig {
    /// Initial point, below the absorbing threshold.
    pub w0: f64,
    /// Absorbing threshold; escape is upward.
    pub ws: f64,
    pub replicates: usize,
    pub max_steps: u64,
    /// Step size in iteration units.
    pub dt: f64,
    pub sigma_obj: f64,
    pub sigma_jac_grid: Vec<f64>,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            w0: -16.0,
            ws: -13.82,
            replicates: 256,
            max_steps: 20_000,
            dt: 1.0,
            sigma_obj: 1.0,
            // all cells sit in the budget-capped diffusive regime, where the
            // idealized envelope is an upper reference (see envelope())
            sigma_jac_grid: vec![0.0, 0.01, 0.02],
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.w0 >= self.ws {
            return Err("w0 must sit below the absorbing threshold".into());
        }
        if self.replicates < 1 {
            return Err("need at least one replicate".into());
        }
        if self.dt <= 0.0 {
            return Err("dt must be positive".into());
        }
        Ok(())
    }
}

/// Escape summary for one sigma_jac cell.
#[derive(Clone, Debug)]
pub struct EscapeResult {
    pub sigma_jac: f64,
    pub escapes: usize,
    pub escape_rate: f64,
    /// Mean first-passage time (in steps) over escaped replicates; NaN when
    /// nothing escapes.
    pub mean_fpt: f64,
    pub envelope: f64,
}

/// Idealized diffusive envelope (ws - w0)^2 / sigma_jac^2 in step units;
/// infinite at sigma_jac = 0.
pub fn envelope(cfg: &SdeConfig, sigma_jac: f64) -> f64 {
    if sigma_jac == 0.0 {
        return f64::INFINITY;
    }
    let gap = cfg.ws - cfg.w0;
    gap * gap / (sigma_jac * sigma_jac)
}

/// Run all sigma_jac cells. Each replicate has its own substream, so cells
/// and replicates are reproducible independently of execution order.
pub fn simulate(cfg: &SdeConfig, seed: u64) -> Vec<EscapeResult> {
    cfg.validate().expect("invalid SDE config");
    let sqrt_dt = cfg.dt.sqrt();
    cfg.sigma_jac_grid
        .iter()
        .enumerate()
        .map(|(cell, &sigma_jac)| {
            let mut escapes = 0usize;
            let mut fpt_sum = 0.0f64;
            for rep in 0..cfg.replicates {
                let mut rng =
                    substream_indexed(seed, "sde", (cell * cfg.replicates + rep) as u64);
                let mut w = cfg.w0;
                for step in 1..=cfg.max_steps {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    w += -logistic(w) * cfg.sigma_obj * sqrt_dt * z1 + sigma_jac * sqrt_dt * z2;
                    if w >= cfg.ws {
                        escapes += 1;
                        fpt_sum += step as f64;
                        break;
                    }
                }
            }
            EscapeResult {
                sigma_jac,
                escapes,
                escape_rate: escapes as f64 / cfg.replicates as f64,
                mean_fpt: if escapes > 0 { fpt_sum / escapes as f64 } else { f64::NAN },
                envelope: envelope(cfg, sigma_jac),
            }
        })
        .collect()
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let ranks = |v: &[f64]| -> Vec<f64> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean).powi(2);
        dy += (ry[i] - mean).powi(2);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

/// CSV rows in the schema `sigma_jac,escapes,rate,mean_fpt,envelope`.
pub fn results_csv(results: &[EscapeResult]) -> String {
    let mut s = String::from("sigma_jac,escapes,rate,mean_fpt,envelope\n");
    for r in results {
        s.push_str(&format!(
            "{:?},{},{:?},{},{}\n",
            r.sigma_jac,
            r.escapes,
            r.escape_rate,
            if r.mean_fpt.is_nan() { String::new() } else { format!("{:?}", r.mean_fpt) },
            if r.envelope.is_infinite() { String::from("inf") } else { format!("{:?}", r.envelope) },
        ));
    }
    s
}
