//! DeepSets emission body: a per-point branch, a mean pool over the
//! conditioning batch, and a post-pool branch that emits the pre-readout
//! vector for the body-bearing backends.

use crate::ad::{Scalar, Tape, Var};
use crate::params::{ParamStore, ParamTensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq)]
pub struct HyperConfig {
    pub input_dim: usize,
    /// Body widths; all but the last belong to the per-point branch, the last
    /// is the post-pool hidden layer.
    pub hidden_sizes: Vec<usize>,
    pub emission_dim: usize,
    pub n_cond: usize,
}

impl HyperConfig {
    pub fn new(input_dim: usize, emission_dim: usize) -> Self {
        HyperConfig { input_dim, hidden_sizes: vec![64, 64, 96], emission_dim, n_cond: 1 }
    }

    fn per_point_sizes(&self) -> &[usize] {
        &self.hidden_sizes[..self.hidden_sizes.len() - 1]
    }

    fn post_pool_size(&self) -> usize {
        *self.hidden_sizes.last().expect("hidden_sizes nonempty")
    }

    /// Zero template for the body tensors (per-point branch `p*`, post-pool
    /// branch `q*`, final emission layer `q{last}`).
    pub fn param_template(&self) -> ParamStore {
        assert!(self.hidden_sizes.len() >= 2, "need per-point and post-pool widths");
        assert!(self.n_cond >= 1);
        let mut store = ParamStore::new();
        let mut prev = self.input_dim;
        for (i, &w) in self.per_point_sizes().iter().enumerate() {
            store.push(ParamTensor::new(&format!("pw{i}"), vec![prev, w], vec![0.0; prev * w], false));
            store.push(ParamTensor::new(&format!("pc{i}"), vec![w], vec![0.0; w], false));
            prev = w;
        }
        let mid = self.post_pool_size();
        store.push(ParamTensor::new("qw0", vec![prev, mid], vec![0.0; prev * mid], false));
        store.push(ParamTensor::new("qc0", vec![mid], vec![0.0; mid], false));
        store.push(ParamTensor::new(
            "qw1",
            vec![mid, self.emission_dim],
            vec![0.0; mid * self.emission_dim],
            false,
        ));
        store.push(ParamTensor::new("qc1", vec![self.emission_dim], vec![0.0; self.emission_dim], false));
        store
    }

    pub fn total_params(&self) -> usize {
        self.param_template().total_len()
    }
}

/// Body weights. The final emission layer starts at zero so the emitted
/// correction is exactly zero until training moves it.
pub fn init_body(cfg: &HyperConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = cfg.param_template();
    for t in store.tensors_mut() {
        let is_weight_matrix = t.shape.len() == 2;
        if !is_weight_matrix || t.name == "qw1" {
            continue; // biases and the final emission layer stay at zero
        }
        let s = 1.0 / (t.fan_in() as f64).sqrt();
        for v in t.data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * s;
        }
    }
    store
}

/// Tape handles for the body tensors, in template order.
pub fn body_leaf_vars<S: Scalar>(tape: &mut Tape<S>, store: &ParamStore) -> Vec<(String, Var)> {
    store
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), tape.leaf_f64s(t.shape.clone(), &t.data)))
        .collect()
}

fn var_of(vars: &[(String, Var)], name: &str) -> Var {
    vars.iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("missing body tensor {name}"))
        .1
}

/// Emission h(X) on the tape: per-point branch, canonical mean pool, post-pool
/// branch. `x_cond` is `[n, input_dim]` with `n >= 1`; the result is `[d]`.
pub fn emit_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &HyperConfig,
    vars: &[(String, Var)],
    x_cond: Var,
) -> Var {
    let n = tape.value(x_cond).rows();
    assert!(n >= 1, "empty conditioning batch");
    let mut z = x_cond;
    for i in 0..cfg.per_point_sizes().len() {
        let lin = tape.matmul(z, var_of(vars, &format!("pw{i}")));
        let biased = tape.add_row(lin, var_of(vars, &format!("pc{i}")));
        z = tape.tanh(biased);
    }
    let pooled = tape.mean_pool(z);
    let code_dim = tape.value(pooled).len();
    let code = tape.reshape(pooled, vec![1, code_dim]);
    let lin = tape.matmul(code, var_of(vars, "qw0"));
    let biased = tape.add_row(lin, var_of(vars, "qc0"));
    let hid = tape.tanh(biased);
    let out = tape.matmul(hid, var_of(vars, "qw1"));
    let out = tape.add_row(out, var_of(vars, "qc1"));
    tape.reshape(out, vec![cfg.emission_dim])
}

/// Emission values for a conditioning batch given as flattened points.
pub fn emit_values(cfg: &HyperConfig, store: &ParamStore, points: &[f64]) -> Vec<f64> {
    assert!(!points.is_empty(), "empty conditioning batch");
    let n = points.len() / cfg.input_dim;
    let mut tape = Tape::<f64>::new();
    let vars = body_leaf_vars(&mut tape, store);
    let x = tape.leaf_f64s(vec![n, cfg.input_dim], points);
    let h = emit_on_tape(&mut tape, cfg, &vars, x);
    tape.value(h).data().to_vec()
}

/// Per-coordinate empirical variance of `emit(rep)` over `reps` draws.
pub fn empirical_variance(reps: usize, mut emit: impl FnMut(usize) -> Vec<f64>) -> Vec<f64> {
    assert!(reps >= 2, "need at least two replicates");
    let first = emit(0);
    let d = first.len();
    let mut sum = first.clone();
    let mut sumsq: Vec<f64> = first.iter().map(|v| v * v).collect();
    for r in 1..reps {
        let e = emit(r);
        for i in 0..d {
            sum[i] += e[i];
            sumsq[i] += e[i] * e[i];
        }
    }
    let n = reps as f64;
    (0..d)
        .map(|i| (sumsq[i] - sum[i] * sum[i] / n) / (n - 1.0))
        .collect()
}

/// Variance of the body emission over fresh conditioning draws at fixed
/// weights.
pub fn emission_variance(
    cfg: &HyperConfig,
    store: &ParamStore,
    mut sample_batch: impl FnMut(usize, &mut ChaCha8Rng) -> Vec<f64>,
    n_cond: usize,
    reps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    empirical_variance(reps, |_| {
        let pts = sample_batch(n_cond, rng);
        emit_values(cfg, store, &pts)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn random_body(cfg: &HyperConfig, seed: u64) -> ParamStore {
        // fully random, including the emission layer (tests need h != 0)
        let mut rng = substream(seed, "body");
        let mut store = cfg.param_template();
        for t in store.tensors_mut() {
            let s = 1.0 / (t.fan_in() as f64).sqrt();
            for v in t.data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * s;
            }
        }
        store
    }

    #[test]
    fn single_point_pool_is_identity() {
        let cfg = HyperConfig::new(2, 5);
        let store = random_body(&cfg, 1);
        let x = [0.3, -1.2];
        let one = emit_values(&cfg, &store, &x);
        // duplicated batch of any size equals the single-point emission
        let four: Vec<f64> = x.iter().copied().cycle().take(8).collect();
        let dup = emit_values(&cfg, &store, &four);
        assert_eq!(one, dup);
    }

    #[test]
    fn permutation_invariance_bitwise() {
        let cfg = HyperConfig::new(2, 7);
        let store = random_body(&cfg, 2);
        let mut rng = substream(3, "perm");
        for &n in &[2usize, 4, 8] {
            let pts: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let base = emit_values(&cfg, &store, &pts);
            for _ in 0..100 {
                // Fisher-Yates on the points
                let mut idx: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                let permuted: Vec<f64> = idx
                    .iter()
                    .flat_map(|&i| pts[i * 2..i * 2 + 2].to_vec())
                    .collect();
                let out = emit_values(&cfg, &store, &permuted);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&base), bits(&out), "n={n}");
            }
        }
    }

    #[test]
    fn zero_body_emits_constant() {
        let cfg = HyperConfig::new(1, 4);
        let store = cfg.param_template();
        let mut rng = substream(4, "zero");
        let var = emission_variance(
            &cfg,
            &store,
            |n, r| (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
            1,
            32,
            &mut rng,
        );
        assert!(var.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_mean_body_variance_scales_as_inverse_n() {
        // h(X) = mean(X) on N(0,1) data has variance exactly 1/n
        for &n in &[4usize, 16] {
            let mut rng = substream(5, "linvar");
            let var = empirical_variance(10_000, |_| {
                let m: f64 = (0..n).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).sum::<f64>()
                    / n as f64;
                vec![m]
            });
            let want = 1.0 / n as f64;
            assert!(
                (var[0] - want).abs() < 0.1 * want,
                "n={n}: var {} want {want}",
                var[0]
            );
        }
    }

    #[test]
    fn conditioning_size_one_maximizes_variance() {
        let cfg = HyperConfig::new(2, 6);
        let store = random_body(&cfg, 6);
        let mut sample = |n: usize, r: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n * 2).map(|_| -> f64 { StandardNormal.sample(r) }).collect()
        };
        let mut rng1 = substream(7, "var-n1");
        let v1 = emission_variance(&cfg, &store, &mut sample, 1, 10_000, &mut rng1);
        let mut rng16 = substream(7, "var-n16");
        let v16 = emission_variance(&cfg, &store, &mut sample, 16, 10_000, &mut rng16);
        let mut rng64 = substream(7, "var-n64");
        let v64 = emission_variance(&cfg, &store, &mut sample, 64, 10_000, &mut rng64);
        let tot = |v: &[f64]| v.iter().sum::<f64>();
        assert!(tot(&v1) > tot(&v16), "{} vs {}", tot(&v1), tot(&v16));
        assert!(tot(&v16) > tot(&v64));
        assert!(tot(&v1) / tot(&v64) >= 10.0, "ratio {}", tot(&v1) / tot(&v64));
    }

    #[test]
    fn emission_gradient_matches_finite_differences() {
        let cfg = HyperConfig::new(1, 3);
        let store = random_body(&cfg, 8);
        let x = [0.4];

        // loss = sum(emit); gradient wrt every body tensor vs central differences
        let loss = |st: &ParamStore| -> f64 { emit_values(&cfg, st, &x).iter().sum() };
        let mut tape = Tape::<f64>::new();
        let vars = body_leaf_vars(&mut tape, &store);
        let xv = tape.leaf_f64s(vec![1, 1], &x);
        let h = emit_on_tape(&mut tape, &cfg, &vars, xv);
        let root = tape.sum(h);
        let grads = tape.backward(root);

        let h_step = 1e-5;
        for (name, var) in &vars {
            let got = grads.wrt(*var, store.get(name).unwrap().len());
            for i in 0..got.len() {
                let mut plus = store.clone();
                plus.get_mut(name).unwrap().data[i] += h_step;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap().data[i] -= h_step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h_step);
                // the FD oracle itself carries ~eps/h = 2e-11 absolute noise,
                // so tiny partials are compared against a 1e-4 floor
                let denom = got[i].abs().max(fd.abs()).max(1e-4);
                assert!(
                    ((got[i] - fd) / denom).abs() < 1e-5,
                    "{name}[{i}]: {} vs {fd}",
                    got[i]
                );
            }
        }
    }
}
