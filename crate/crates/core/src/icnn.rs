//! Input-convex energy networks with positivity-tagged inter-layer weights.
//!
//! The recursion is the standard one: the first layer sees only the input,
//! hidden layers add a non-negative weighted carry of the previous activation
//! to an unconstrained input skip, and the readout layer is linear. A
//! `strong_convexity * ||x||^2 / 2` term is added on top. With the flagged
//! tensors elementwise non-negative and a convex non-decreasing activation,
//! the energy is convex in its input.

use crate::ad::{Scalar, Tape, Var};
use crate::params::{ParamStore, ParamTensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcnnConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub n_layers: usize,
    pub strong_convexity: f64,
}

impl IcnnConfig {
    pub fn new(input_dim: usize, hidden_width: usize, n_layers: usize, strong_convexity: f64) -> Self {
        assert!(n_layers >= 2, "need at least two weight layers");
        assert!(hidden_width >= 1);
        assert!(strong_convexity >= 0.0);
        assert!(input_dim == 1 || input_dim == 2, "targets are 1- or 2-dimensional");
        IcnnConfig { input_dim, hidden_width, n_layers, strong_convexity }
    }

    /// Default energy network for 1D EBM targets.
    pub fn ebm_1d() -> Self {
        IcnnConfig::new(1, 32, 3, 0.0)
    }

    /// Default energy network for 2D EBM targets.
    pub fn ebm_2d() -> Self {
        IcnnConfig::new(2, 64, 3, 0.0)
    }

    /// Convex potential for the 2D flow: width 64, three layers, quadratic
    /// floor 0.05.
    pub fn cpflow_2d() -> Self {
        IcnnConfig::new(2, 64, 3, 0.05)
    }

    /// Output width of weight layer `l` (0-based; the last layer is scalar).
    fn out_width(&self, l: usize) -> usize {
        if l + 1 == self.n_layers {
            1
        } else {
            self.hidden_width
        }
    }

    /// Zero-valued parameter template fixing names, shapes, and flags.
    ///
    /// Layer `l` contributes `w{l}` (flagged, `[width, out]`, absent for
    /// layer 0), `u{l}` (input skip, `[input_dim, out]`), and bias `c{l}`.
    pub fn param_template(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for l in 0..self.n_layers {
            let out = self.out_width(l);
            if l > 0 {
                store.push(ParamTensor::new(
                    &format!("w{l}"),
                    vec![self.hidden_width, out],
                    vec![0.0; self.hidden_width * out],
                    true,
                ));
            }
            store.push(ParamTensor::new(
                &format!("u{l}"),
                vec![self.input_dim, out],
                vec![0.0; self.input_dim * out],
                false,
            ));
            store.push(ParamTensor::new(&format!("c{l}"), vec![out], vec![0.0; out], false));
        }
        store
    }

    /// Flagged dimension d of this architecture.
    pub fn flagged_len(&self) -> usize {
        self.param_template().flagged_len()
    }

    pub fn total_params(&self) -> usize {
        self.param_template().total_len()
    }
}

/// Folded-normal initialization: flagged tensors |N(0, s^2)|, unconstrained
/// weight matrices N(0, s^2), biases zero, with s = 1/sqrt(fan_in).
pub fn folded_normal_init(cfg: &IcnnConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = cfg.param_template();
    for t in store.tensors_mut() {
        if t.name.starts_with('c') {
            continue;
        }
        let s = 1.0 / (t.fan_in() as f64).sqrt();
        for v in t.data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = if t.pos_required { (z * s).abs() } else { z * s };
        }
    }
    store
}

/// Per-layer tape handles for an ICNN's (materialized) tensors.
#[derive(Clone, Debug)]
pub struct IcnnVars {
    /// `w[l]` is the flagged carry weight feeding layer `l+1`.
    pub w: Vec<Var>,
    pub u: Vec<Var>,
    pub c: Vec<Var>,
}

/// Push every tensor of `store` as a leaf and bundle the handles.
pub fn leaf_vars<S: Scalar>(tape: &mut Tape<S>, cfg: &IcnnConfig, store: &ParamStore) -> IcnnVars {
    let mut w = Vec::new();
    let mut u = Vec::new();
    let mut c = Vec::new();
    for l in 0..cfg.n_layers {
        if l > 0 {
            let t = store.get(&format!("w{l}")).expect("w tensor");
            w.push(tape.leaf_f64s(t.shape.clone(), &t.data));
        }
        let tu = store.get(&format!("u{l}")).expect("u tensor");
        u.push(tape.leaf_f64s(tu.shape.clone(), &tu.data));
        let tc = store.get(&format!("c{l}")).expect("c tensor");
        c.push(tape.leaf_f64s(tc.shape.clone(), &tc.data));
    }
    IcnnVars { w, u, c }
}

/// Energy of a batch of points: `x` is `[n, input_dim]`, result `[n]`.
pub fn energy<S: Scalar>(tape: &mut Tape<S>, cfg: &IcnnConfig, vars: &IcnnVars, x: Var) -> Var {
    let n = tape.value(x).rows();
    let mut z = {
        let lin = tape.matmul(x, vars.u[0]);
        let biased = tape.add_row(lin, vars.c[0]);
        tape.softplus(biased)
    };
    for l in 1..cfg.n_layers {
        let carry = tape.matmul(z, vars.w[l - 1]);
        let skip = tape.matmul(x, vars.u[l]);
        let both = tape.add(carry, skip);
        let biased = tape.add_row(both, vars.c[l]);
        z = if l + 1 == cfg.n_layers {
            biased // linear readout
        } else {
            tape.softplus(biased)
        };
    }
    let flat = tape.reshape(z, vec![n]);
    if cfg.strong_convexity > 0.0 {
        let sq = tape.square(x);
        let norms = tape.sum_rows(sq);
        let quad = tape.scale(norms, 0.5 * cfg.strong_convexity);
        tape.add(flat, quad)
    } else {
        flat
    }
}

/// Energy values at a batch of points, flagged weights taken directly from
/// `store` (deployed weights, no reparametrization).
pub fn energy_values(cfg: &IcnnConfig, store: &ParamStore, points: &[f64]) -> Vec<f64> {
    let n = points.len() / cfg.input_dim;
    let mut tape = Tape::<f64>::new();
    let vars = leaf_vars(&mut tape, cfg, store);
    let x = tape.leaf_f64s(vec![n, cfg.input_dim], points);
    let e = energy(&mut tape, cfg, &vars, x);
    tape.value(e).data().to_vec()
}

/// Maximum midpoint-convexity violation over `n_pairs` random pairs drawn
/// uniformly from `[-8, 8]^input_dim`:
/// `max E((x+y)/2) - (E(x)+E(y))/2`. Non-positive (up to roundoff) whenever
/// the flagged weights are non-negative.
pub fn convexity_probe(
    cfg: &IcnnConfig,
    store: &ParamStore,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    use rand::Rng;
    let k = cfg.input_dim;
    let mut xs = Vec::with_capacity(n_pairs * k);
    let mut ys = Vec::with_capacity(n_pairs * k);
    let mut mids = Vec::with_capacity(n_pairs * k);
    for _ in 0..n_pairs {
        for _ in 0..k {
            let a: f64 = rng.gen_range(-8.0..8.0);
            let b: f64 = rng.gen_range(-8.0..8.0);
            xs.push(a);
            ys.push(b);
            mids.push(0.5 * (a + b));
        }
    }
    let ex = energy_values(cfg, store, &xs);
    let ey = energy_values(cfg, store, &ys);
    let em = energy_values(cfg, store, &mids);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n_pairs {
        worst = worst.max(em[i] - 0.5 * (ex[i] + ey[i]));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::softplus_inv;
    use crate::rng::substream;

    #[test]
    fn zero_net_is_constant_energy() {
        let cfg = IcnnConfig::new(1, 8, 3, 0.0);
        let store = cfg.param_template(); // all zeros
        let e = energy_values(&cfg, &store, &[-3.0, 0.0, 1.5, 7.0]);
        for &v in &e[1..] {
            assert_eq!(v, e[0]);
        }
    }

    #[test]
    fn pure_quadratic_when_alpha_one() {
        let cfg = IcnnConfig::new(2, 4, 2, 1.0);
        let store = cfg.param_template();
        let e = energy_values(&cfg, &store, &[3.0, 4.0]);
        // constant offset from the zeroed net is softplus(0)-fed readout = 0 here
        // (readout weights are zero), so E = 0.5 * ||x||^2
        assert!((e[0] - 12.5).abs() < 1e-12);
    }

    #[test]
    fn folded_init_flagged_nonnegative() {
        let cfg = IcnnConfig::ebm_1d();
        let mut rng = substream(0, "init");
        let store = folded_normal_init(&cfg, &mut rng);
        for t in store.tensors() {
            if t.pos_required {
                assert!(t.data.iter().all(|&v| v >= 0.0));
            }
        }
        assert_eq!(store.flagged_len(), 32 * 32 + 32);
    }

    #[test]
    fn folded_normal_mean_matches_half_normal() {
        let mut rng = substream(1, "folded");
        let n = 1_000_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += z.abs();
        }
        let mean = acc / n as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - want).abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn softplus_inverse_matches_at_half() {
        let v = 0.5;
        assert!((crate::ad::softplus(softplus_inv(v)) - v).abs() < 1e-12);
    }

    #[test]
    fn random_nonneg_net_is_midpoint_convex() {
        let cfg = IcnnConfig::new(1, 16, 3, 0.0);
        let mut rng = substream(2, "probe-init");
        let store = folded_normal_init(&cfg, &mut rng);
        let mut prng = substream(3, "probe-pairs");
        let v = convexity_probe(&cfg, &store, 10_000, &mut prng);
        assert!(v <= 1e-9, "violation {v}");
    }

    #[test]
    fn negative_weight_breaks_convexity_somewhere() {
        // one flagged weight forced negative; scan for a violating pair
        let cfg = IcnnConfig::new(1, 4, 3, 0.0);
        let mut store = cfg.param_template();
        // ramp the first layer so the carry path has curvature to expose
        store.get_mut("u0").unwrap().data.copy_from_slice(&[1.0, -1.0, 2.0, -2.0]);
        store.get_mut("u1").unwrap().data.copy_from_slice(&[0.0, 0.0, 0.0, 0.0]);
        let w1 = store.get_mut("w1").unwrap();
        w1.data.iter_mut().for_each(|v| *v = 0.0);
        w1.data[0] = -1.0; // negative carry weight
        store.get_mut("w2").unwrap().data.copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);

        let mut worst = f64::NEG_INFINITY;
        for i in 0..200 {
            let a = -6.0 + 12.0 * i as f64 / 199.0;
            for j in 0..200 {
                let b = -6.0 + 12.0 * j as f64 / 199.0;
                let e = energy_values(&cfg, &store, &[a, b, 0.5 * (a + b)]);
                worst = worst.max(e[2] - 0.5 * (e[0] + e[1]));
            }
        }
        assert!(worst > 0.0, "expected a violation, worst {worst}");
    }

    #[test]
    fn energy_finite_on_wide_inputs() {
        let cfg = IcnnConfig::ebm_1d();
        let mut rng = substream(4, "finite");
        let store = folded_normal_init(&cfg, &mut rng);
        let e = energy_values(&cfg, &store, &[-50.0, -12.3, 0.0, 12.3, 50.0]);
        assert!(e.iter().all(|v| v.is_finite()));
    }
}
