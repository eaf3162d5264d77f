//! Log-concave target densities, samplers, quadrature grids, and the
//! total-variation metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, StandardNormal};
use std::f64::consts::PI;

/// Lanczos approximation of log Gamma, accurate to ~1e-13 relative.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        PI.ln() - (PI * x).sin().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + G + 0.5;
        let mut a = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// One-dimensional log-concave target families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target1D {
    Gumbel { mu: f64, beta: f64 },
    Laplace { mu: f64, b: f64 },
    Gamma { k: f64, theta: f64 },
    Beta { a: f64, b: f64 },
}

impl Target1D {
    pub fn gumbel_std() -> Self {
        Target1D::Gumbel { mu: 0.0, beta: 1.0 }
    }
    pub fn laplace_std() -> Self {
        Target1D::Laplace { mu: 0.0, b: 1.0 }
    }
    pub fn gamma_default() -> Self {
        Target1D::Gamma { k: 3.0, theta: 1.0 }
    }
    pub fn beta_default() -> Self {
        Target1D::Beta { a: 2.0, b: 5.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target1D::Gumbel { .. } => "gumbel",
            Target1D::Laplace { .. } => "laplace",
            Target1D::Gamma { .. } => "gamma",
            Target1D::Beta { .. } => "beta",
        }
    }

    /// Closed quadrature support covering all but <=1e-4 of the mass under the
    /// default parameters.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Target1D::Gumbel { .. } => (-6.0, 12.0),
            Target1D::Laplace { .. } => (-10.0, 10.0),
            Target1D::Gamma { .. } => (1e-6, 25.0),
            Target1D::Beta { .. } => (1e-6, 1.0 - 1e-6),
        }
    }

    /// Exact analytic log-density; negative infinity outside the support of
    /// Gamma/Beta.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Target1D::Gumbel { mu, beta } => {
                let z = (x - mu) / beta;
                -z - (-z).exp() - beta.ln()
            }
            Target1D::Laplace { mu, b } => -((x - mu).abs() / b) - (2.0 * b).ln(),
            Target1D::Gamma { k, theta } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()
            }
            Target1D::Beta { a, b } => {
                if x <= 0.0 || x >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta
            }
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        assert!(n >= 1, "sample count must be >= 1");
        match *self {
            Target1D::Gumbel { mu, beta } => (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    mu - beta * (-u.ln()).ln()
                })
                .collect(),
            Target1D::Laplace { mu, b } => (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(-0.5..0.5);
                    mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                })
                .collect(),
            Target1D::Gamma { k, theta } => {
                let d = GammaDist::new(k, theta).expect("gamma params");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Target1D::Beta { a, b } => {
                let d = BetaDist::new(a, b).expect("beta params");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }

    pub fn grid(&self, step: f64) -> QuadratureGrid {
        let (lo, hi) = self.support();
        QuadratureGrid::line(lo, hi, step)
    }
}

/// Two-dimensional targets: point-cloud samplers, with analytic densities
/// where they exist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target2D {
    EightGaussians { radius: f64, sigma: f64 },
    TwoSpirals { noise: f64 },
    /// Product of two independent Gamma densities; unimodal with its bulk in
    /// the positive quadrant.
    GammaMode { k: f64, theta: f64 },
}

impl Target2D {
    pub fn eight_gaussians_default() -> Self {
        Target2D::EightGaussians { radius: 2.0, sigma: 0.2 }
    }
    pub fn two_spirals_default() -> Self {
        Target2D::TwoSpirals { noise: 0.1 }
    }
    pub fn gamma_mode_default() -> Self {
        Target2D::GammaMode { k: 3.0, theta: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target2D::EightGaussians { .. } => "eight_gaussians",
            Target2D::TwoSpirals { .. } => "two_spirals",
            Target2D::GammaMode { .. } => "gamma_mode2d",
        }
    }

    pub fn centers(radius: f64) -> [[f64; 2]; 8] {
        let mut c = [[0.0; 2]; 8];
        for (k, ck) in c.iter_mut().enumerate() {
            let a = 2.0 * PI * k as f64 / 8.0;
            *ck = [radius * a.cos(), radius * a.sin()];
        }
        c
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        assert!(n >= 1, "sample count must be >= 1");
        match *self {
            Target2D::EightGaussians { radius, sigma } => {
                let centers = Self::centers(radius);
                (0..n)
                    .map(|_| {
                        let k = rng.gen_range(0..8usize);
                        let z1: f64 = StandardNormal.sample(rng);
                        let z2: f64 = StandardNormal.sample(rng);
                        [centers[k][0] + sigma * z1, centers[k][1] + sigma * z2]
                    })
                    .collect()
            }
            Target2D::TwoSpirals { noise } => (0..n)
                .map(|_| {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let t = u.sqrt() * 3.0 * PI;
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let z1: f64 = StandardNormal.sample(rng);
                    let z2: f64 = StandardNormal.sample(rng);
                    [
                        sign * (-(t.cos()) * t) / 3.0 + noise * z1,
                        sign * (t.sin() * t) / 3.0 + noise * z2,
                    ]
                })
                .collect(),
            Target2D::GammaMode { k, theta } => {
                let d = GammaDist::new(k, theta).expect("gamma params");
                (0..n).map(|_| [d.sample(rng), d.sample(rng)]).collect()
            }
        }
    }

    /// Analytic log-density where available (the spirals have none).
    pub fn log_density(&self, x: [f64; 2]) -> Option<f64> {
        match *self {
            Target2D::EightGaussians { radius, sigma } => {
                let centers = Self::centers(radius);
                let mut best = f64::NEG_INFINITY;
                let terms: Vec<f64> = centers
                    .iter()
                    .map(|c| {
                        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                        let t = -d2 / (2.0 * sigma * sigma);
                        if t > best {
                            best = t;
                        }
                        t
                    })
                    .collect();
                let lse = best + terms.iter().map(|t| (t - best).exp()).sum::<f64>().ln();
                Some(lse - (8.0f64).ln() - (2.0 * PI * sigma * sigma).ln())
            }
            Target2D::TwoSpirals { .. } => None,
            Target2D::GammaMode { k, theta } => {
                let g = Target1D::Gamma { k, theta };
                Some(g.log_density(x[0]) + g.log_density(x[1]))
            }
        }
    }

    /// Quadrature grid over the bulk, for targets with an analytic density.
    pub fn grid(&self, n_per_axis: usize) -> Option<QuadratureGrid> {
        match self {
            Target2D::GammaMode { .. } => {
                Some(QuadratureGrid::plane([1e-6, 1e-6], [15.0, 15.0], n_per_axis))
            }
            _ => None,
        }
    }
}

/// Uniform midpoint grid in one or two dimensions.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    dim: usize,
    step: f64,
    /// Flattened points, `dim` coordinates each.
    points: Vec<f64>,
}

impl QuadratureGrid {
    pub fn line(lo: f64, hi: f64, step: f64) -> Self {
        assert!(hi > lo && step > 0.0);
        let n = ((hi - lo) / step).round().max(1.0) as usize;
        let step = (hi - lo) / n as f64;
        let points = (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect();
        QuadratureGrid { dim: 1, step, points }
    }

    pub fn plane(lo: [f64; 2], hi: [f64; 2], n_per_axis: usize) -> Self {
        assert!(n_per_axis >= 1);
        let step = (hi[0] - lo[0]) / n_per_axis as f64;
        let step_y = (hi[1] - lo[1]) / n_per_axis as f64;
        assert!(
            (step - step_y).abs() < 1e-12,
            "plane grid requires equal spacing per axis"
        );
        let mut points = Vec::with_capacity(n_per_axis * n_per_axis * 2);
        for i in 0..n_per_axis {
            for j in 0..n_per_axis {
                points.push(lo[0] + (i as f64 + 0.5) * step);
                points.push(lo[1] + (j as f64 + 0.5) * step);
            }
        }
        QuadratureGrid { dim: 2, step, points }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    /// Volume of one grid cell: step in 1D, step^2 in 2D.
    pub fn cell_measure(&self) -> f64 {
        self.step.powi(self.dim as i32)
    }

    /// Quadrature mass of exp(log_density) over the grid.
    pub fn mass(&self, log_density: impl Fn(&[f64]) -> f64) -> f64 {
        let cell = self.cell_measure();
        (0..self.n_points())
            .map(|i| log_density(self.point(i)).exp() * cell)
            .sum()
    }
}

fn normalize_on_grid(logp: &[f64], grid: &QuadratureGrid) -> Option<Vec<f64>> {
    let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let z: f64 = logp.iter().map(|&l| (l - m).exp()).sum::<f64>() * grid.cell_measure();
    Some(logp.iter().map(|&l| (l - m).exp() / z).collect())
}

/// Total-variation distance between two grid-normalized log-densities:
/// 0.5 * sum |p - q| * cell. A non-normalizable side (all -inf) counts as
/// distance 1.
pub fn tv_between(model_logp: &[f64], other_logp: &[f64], grid: &QuadratureGrid) -> f64 {
    assert_eq!(model_logp.len(), grid.n_points());
    assert_eq!(other_logp.len(), grid.n_points());
    let (Some(p), Some(q)) = (
        normalize_on_grid(model_logp, grid),
        normalize_on_grid(other_logp, grid),
    ) else {
        return 1.0;
    };
    0.5 * p
        .iter()
        .zip(&q)
        .map(|(&a, &b)| (a - b).abs())
        .sum::<f64>()
        * grid.cell_measure()
}

/// TV distance of a model's grid log-density evaluation to a 1D target.
pub fn tv_distance(model_logp: &[f64], target: &Target1D, grid: &QuadratureGrid) -> f64 {
    let target_logp: Vec<f64> = (0..grid.n_points())
        .map(|i| target.log_density(grid.point(i)[0]))
        .collect();
    tv_between(model_logp, &target_logp, grid)
}
