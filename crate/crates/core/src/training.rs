//! Training loops: forward-KL energy fitting with quadrature normalization,
//! the 2D convex-potential-flow likelihood with exact Hessian log-dets, Adam
//! on every backend, validation checkpointing, and per-iteration diagnostics.

use crate::ad::{Array, Jet2, Scalar, Tape, Var};
use crate::adam::AdamHyper;
use crate::backends::{BackendKind, BackendState, Materialized};
use crate::diagnostics::{gradient_variance_trace, shoulder_threshold, TrailingWindow, SHOULDER_SIGMA};
use crate::icnn::{convexity_probe, energy, energy_values, leaf_vars, IcnnConfig};
use crate::params::ParamStore;
use crate::rng::substream;
use crate::targets::{tv_distance, QuadratureGrid, Target1D, Target2D};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    ForwardKl,
    CpflowNll,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetSpec {
    D1(Target1D),
    D2(Target2D),
}

impl TargetSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            TargetSpec::D1(_) => 1,
            TargetSpec::D2(_) => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            TargetSpec::D1(t) => t.name().to_string(),
            TargetSpec::D2(t) => t.name().to_string(),
        }
    }

    /// Row-major flattened sample of n points.
    pub fn sample_flat(&self, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        match self {
            TargetSpec::D1(t) => t.sample(n, rng),
            TargetSpec::D2(t) => t.sample(n, rng).into_iter().flatten().collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub target: TargetSpec,
    pub loss: LossKind,
    pub icnn: IcnnConfig,
    pub hyper_hidden: Vec<usize>,
    pub iterations: u64,
    pub batch_size: usize,
    pub n_cond: usize,
    pub seed: u64,
    pub adam: AdamHyper,
    /// Trailing-window length T.
    pub window: usize,
    pub snapshot_stride: u64,
    pub val_cadence: u64,
    pub val_size: usize,
    /// Gradient replicas for the objective-noise variance.
    pub sigma_replicas: usize,
    /// Normalization-grid step for 1D forward KL.
    pub train_grid_step: f64,
    /// Per-axis node count for the 2D normalization grid.
    pub grid_nodes_2d: usize,
    /// Shared pre-readout N(0, sigma^2) jitter added at init (symmetric across
    /// backends; 0 disables).
    pub init_jitter_sigma: f64,
    /// Constant pre-readout starting point; `None` matches the folded-normal
    /// weight draw instead.
    pub pre_readout_base: Option<f64>,
    /// Record the trainable-parameter vector for lifted-space landscape axes.
    pub record_backend_snapshots: bool,
    pub backend_snapshot_stride: u64,
    /// Convexity-probe pairs per validation point.
    pub probe_pairs: usize,
    /// Dump the full cross-covariance matrix every this many iterations
    /// (0 disables). Only the lift maintains a window to dump.
    pub cross_cov_dump_stride: u64,
}

impl RunConfig {
    /// 1D energy-model defaults: 3000 iterations, batch 128, validation every
    /// 50 iterations on 1024 held-out points.
    pub fn ebm_1d(backend: BackendKind, target: Target1D, seed: u64) -> Self {
        RunConfig {
            backend,
            target: TargetSpec::D1(target),
            loss: LossKind::ForwardKl,
            icnn: IcnnConfig::ebm_1d(),
            hyper_hidden: vec![64, 64, 96],
            iterations: 3000,
            batch_size: 128,
            n_cond: 1,
            seed,
            adam: AdamHyper::default(),
            window: 64,
            snapshot_stride: 10,
            val_cadence: 50,
            val_size: 1024,
            sigma_replicas: 8,
            train_grid_step: 0.01,
            grid_nodes_2d: 200,
            init_jitter_sigma: 0.0,
            pre_readout_base: None,
            record_backend_snapshots: false,
            backend_snapshot_stride: 50,
            probe_pairs: 64,
            cross_cov_dump_stride: 0,
        }
    }

    /// 2D convex-potential-flow defaults: 6000 Adam iterations at lr 1e-3,
    /// batch 64, held-out 1024-sample test loss, symmetric pre-readout jitter.
    pub fn cpflow_2d(backend: BackendKind, target: Target2D, seed: u64) -> Self {
        RunConfig {
            backend,
            target: TargetSpec::D2(target),
            loss: LossKind::CpflowNll,
            icnn: IcnnConfig::cpflow_2d(),
            hyper_hidden: vec![64, 64, 96],
            iterations: 6000,
            batch_size: 64,
            n_cond: 1,
            seed,
            adam: AdamHyper::default(),
            window: 64,
            snapshot_stride: 100,
            val_cadence: 100,
            val_size: 1024,
            sigma_replicas: 8,
            train_grid_step: 0.005,
            grid_nodes_2d: 200,
            init_jitter_sigma: 0.1,
            pre_readout_base: Some(0.0),
            record_backend_snapshots: false,
            backend_snapshot_stride: 100,
            probe_pairs: 64,
            cross_cov_dump_stride: 0,
        }
    }

    fn norm_grid(&self) -> Option<QuadratureGrid> {
        match (&self.loss, &self.target) {
            (LossKind::ForwardKl, TargetSpec::D1(t)) => Some(t.grid(self.train_grid_step)),
            (LossKind::ForwardKl, TargetSpec::D2(t)) => {
                Some(t.grid(self.grid_nodes_2d).expect("2D forward KL needs a density grid"))
            }
            (LossKind::CpflowNll, _) => None,
        }
    }
}

/// One CSV row of the per-iteration log.
#[derive(Clone, Debug)]
pub struct IterRow {
    pub iteration: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub sigma_jac_sq: Option<f64>,
    pub sigma_obj_sq: Option<f64>,
    pub rho_ratio: Option<f64>,
    pub occupancy: f64,
    pub frob_cross_cov: Option<f64>,
    /// ADMM only: primal residual, dual residual, rho.
    pub admm: Option<(f64, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub iteration: u64,
    /// Materialized pre-readout vector of this iteration (raw flagged weights
    /// for the projection backends).
    pub theta_tilde: Vec<f64>,
    /// Deployed parameter vector (anchor-frozen readout), `flatten_all` order.
    pub deployed: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: u64,
    pub val_loss: f64,
    pub deployed: ParamStore,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<IterRow>,
    pub snapshots: Vec<Snapshot>,
    /// Lifted-space (trainable-parameter) snapshots, when recorded.
    pub backend_snapshots: Vec<(u64, Vec<f64>)>,
    /// (iteration, row-major d x d estimator) at the dump stride.
    pub cross_cov_dumps: Vec<(u64, Vec<f64>)>,
    pub best: Checkpoint,
    pub final_val_loss: f64,
    /// Worst convexity-probe violation observed at any validation point.
    pub max_probe_violation: f64,
    pub aborted: Option<String>,
}

impl RunRecord {
    /// The declared RunRecord CSV schema; ADMM runs append their residual
    /// columns.
    pub fn to_csv(&self) -> String {
        let is_admm = self.rows.iter().any(|r| r.admm.is_some());
        let mut s = String::from(
            "iteration,train_loss,val_loss,sigma_jac_sq,sigma_obj_sq,rho_ratio,occupancy,frob_cross_cov",
        );
        if is_admm {
            s.push_str(",admm_primal,admm_dual,admm_rho");
        }
        s.push('\n');
        let opt = |v: &Option<f64>| match v {
            Some(x) if x.is_finite() => format!("{x:?}"),
            Some(x) if x.is_infinite() => "inf".to_string(),
            _ => String::new(),
        };
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:?},{},{},{},{},{:?},{}",
                r.iteration,
                r.train_loss,
                opt(&r.val_loss),
                opt(&r.sigma_jac_sq),
                opt(&r.sigma_obj_sq),
                opt(&r.rho_ratio),
                r.occupancy,
                opt(&r.frob_cross_cov),
            ));
            if is_admm {
                match r.admm {
                    Some((p, d, rho)) => s.push_str(&format!(",{p:?},{d:?},{rho:?}")),
                    None => s.push_str(",,,"),
                }
            }
            s.push('\n');
        }
        s
    }
}

pub struct TrainOutput {
    pub record: RunRecord,
    pub backend: BackendState,
}

/// Forward-KL loss on the tape: mini-batch mean energy plus the quadrature
/// log-normalizer, differentiable through both terms.
pub fn forward_kl_loss<S: Scalar>(
    tape: &mut Tape<S>,
    cfg: &IcnnConfig,
    vars: &crate::icnn::IcnnVars,
    batch: Var,
    grid_points: Var,
    grid: &QuadratureGrid,
) -> Var {
    let n = tape.value(batch).rows();
    let e_batch = energy(tape, cfg, vars, batch);
    let sum = tape.sum(e_batch);
    let data_term = tape.scale(sum, 1.0 / n as f64);
    let e_grid = energy(tape, cfg, vars, grid_points);
    let neg = tape.scale(e_grid, -1.0);
    let lse = tape.log_sum_exp(neg);
    let log_z = tape.add_const(lse, grid.cell_measure().ln());
    tape.add(data_term, log_z)
}

/// Forward-KL loss value for fixed deployed weights.
pub fn forward_kl_value(
    cfg: &IcnnConfig,
    store: &ParamStore,
    batch: &[f64],
    grid: &QuadratureGrid,
) -> f64 {
    let mut tape = Tape::<f64>::new();
    let vars = leaf_vars(&mut tape, cfg, store);
    let n = batch.len() / cfg.input_dim;
    let b = tape.leaf_f64s(vec![n, cfg.input_dim], batch);
    let g = tape.leaf_f64s(vec![grid.n_points(), grid.dim()], grid.flat_points());
    let loss = forward_kl_loss(&mut tape, cfg, &vars, b, g, grid);
    tape.value(loss).item()
}

/// Change-of-variables likelihood of a batch under the convex-potential map:
/// per-point gradient and Hessian carried by second-order jets, exact 2x2
/// determinant.
pub struct CpflowBatch {
    pub nll: f64,
    pub min_det: f64,
    /// Gradient wrt the flat flagged vector, layer order; empty on infeasible
    /// batches.
    pub grad_flagged: Vec<f64>,
    /// Gradients wrt the unflagged tensors by name.
    pub grad_unflagged: Vec<(String, Vec<f64>)>,
}

fn cpflow_forward(
    cfg: &IcnnConfig,
    store: &ParamStore,
    batch: &[f64],
) -> (Tape<Jet2>, crate::icnn::IcnnVars, Var, Vec<Jet2>) {
    assert_eq!(cfg.input_dim, 2, "the potential flow is two-dimensional");
    let n = batch.len() / 2;
    let mut tape = Tape::<Jet2>::new();
    let vars = leaf_vars(&mut tape, cfg, store);
    let data: Vec<Jet2> = batch
        .chunks(2)
        .flat_map(|p| [Jet2::seed(p[0], 0), Jet2::seed(p[1], 1)])
        .collect();
    let x = tape.leaf(Array::new(vec![n, 2], data));
    let e = energy(&mut tape, cfg, &vars, x);
    let jets = tape.value(e).data().to_vec();
    (tape, vars, e, jets)
}

pub(crate) fn log_density_of_jet(j: &Jet2) -> (f64, f64) {
    let det = j.h11 * j.h22 - j.h12 * j.h12;
    let logp = -0.5 * (j.d1 * j.d1 + j.d2 * j.d2) - (2.0 * PI).ln() + det.max(0.0).ln();
    (logp, det)
}

/// Evaluation-only NLL: (nll, min_det); nll is infinite when any point's
/// Hessian determinant is non-positive.
pub fn cpflow_nll_eval(cfg: &IcnnConfig, store: &ParamStore, batch: &[f64]) -> (f64, f64) {
    let (_, _, _, jets) = cpflow_forward(cfg, store, batch);
    let mut min_det = f64::INFINITY;
    let mut acc = 0.0;
    for j in &jets {
        let (logp, det) = log_density_of_jet(j);
        min_det = min_det.min(det);
        acc += logp;
    }
    let nll = if min_det <= 0.0 { f64::INFINITY } else { -acc / jets.len() as f64 };
    (nll, min_det)
}

/// NLL with gradients wrt every tensor, assembled from three seeded reverse
/// passes over the jet tape.
pub fn cpflow_nll_and_grads(cfg: &IcnnConfig, store: &ParamStore, batch: &[f64]) -> CpflowBatch {
    let (tape, vars, e, jets) = cpflow_forward(cfg, store, batch);
    let n = jets.len();
    let nf = n as f64;
    let mut min_det = f64::INFINITY;
    let mut acc = 0.0;
    let mut seeds_a = Vec::with_capacity(n);
    let mut seeds_b = Vec::with_capacity(n);
    let mut seeds_c = Vec::with_capacity(n);
    for j in &jets {
        let (logp, det) = log_density_of_jet(j);
        min_det = min_det.min(det);
        acc += logp;
        if det > 0.0 {
            let a11 = j.h22 / det;
            let a12 = -j.h12 / det;
            let a22 = j.h11 / det;
            // d NLL / d (grad f) = g/n; d NLL / d H = -(1/n) H^{-1}
            let (u_d1, u_d2) = (j.d1 / nf, j.d2 / nf);
            let (u_h11, u_h12, u_h22) = (-a11 / nf, -2.0 * a12 / nf, -a22 / nf);
            seeds_a.push(Jet2 { v: u_h11, d1: u_d1 / 2.0, d2: u_d2 / 2.0, h11: 0.0, h12: 0.0, h22: 0.0 });
            seeds_b.push(Jet2::constant(u_h12));
            seeds_c.push(Jet2::constant(u_h22 - u_h11));
        } else {
            seeds_a.push(Jet2::constant(0.0));
            seeds_b.push(Jet2::constant(0.0));
            seeds_c.push(Jet2::constant(0.0));
        }
    }
    if min_det <= 0.0 {
        return CpflowBatch {
            nll: f64::INFINITY,
            min_det,
            grad_flagged: Vec::new(),
            grad_unflagged: Vec::new(),
        };
    }
    let nll = -acc / nf;

    let ga = tape.backward_seeded(e, Array::new(vec![n], seeds_a));
    let gb = tape.backward_seeded(e, Array::new(vec![n], seeds_b));
    let gc = tape.backward_seeded(e, Array::new(vec![n], seeds_c));
    let read = |v: Var, len: usize| -> Vec<f64> {
        let a = ga.get(v);
        let b = gb.get(v);
        let c = gc.get(v);
        (0..len)
            .map(|i| {
                let ja = a.map(|x| x.data()[i]).unwrap_or(Jet2::constant(0.0));
                let jb = b.map(|x| x.data()[i]).unwrap_or(Jet2::constant(0.0));
                let jc = c.map(|x| x.data()[i]).unwrap_or(Jet2::constant(0.0));
                ja.h11 + ja.h22 + jb.h12 + jc.h22
            })
            .collect()
    };

    let mut grad_flagged = Vec::new();
    for (l, wv) in vars.w.iter().enumerate() {
        let t = store.get(&format!("w{}", l + 1)).expect("flagged tensor");
        grad_flagged.extend(read(*wv, t.len()));
    }
    let mut grad_unflagged = Vec::new();
    for l in 0..cfg.n_layers {
        for prefix in ["u", "c"] {
            let name = format!("{prefix}{l}");
            let t = store.get(&name).expect("net tensor");
            let v = if prefix == "u" { vars.u[l] } else { vars.c[l] };
            grad_unflagged.push((name, read(v, t.len())));
        }
    }
    CpflowBatch { nll, min_det, grad_flagged, grad_unflagged }
}

/// TV distance of the deployed energy model to a 1D target on a grid.
pub fn tv_eval(cfg: &IcnnConfig, deployed: &ParamStore, target: &Target1D, grid: &QuadratureGrid) -> f64 {
    let e = energy_values(cfg, deployed, grid.flat_points());
    let logp: Vec<f64> = e
        .iter()
        .map(|&v| if v.is_finite() { -v } else { f64::NEG_INFINITY })
        .collect();
    tv_distance(&logp, target, grid)
}

fn materialized_w_store(cfg: &IcnnConfig, backend: &BackendState, m: &Materialized, tape: &Tape<f64>) -> ParamStore {
    let mut store = cfg.param_template();
    let mut flat = Vec::with_capacity(backend.flagged_len());
    for wv in &m.vars.w {
        flat.extend(tape.value(*wv).primals());
    }
    store.unflatten_flagged(&flat);
    for l in 0..cfg.n_layers {
        for prefix in ["u", "c"] {
            let name = format!("{prefix}{l}");
            store.get_mut(&name).unwrap().data =
                backend.train.get(&name).expect("net tensor").data.clone();
        }
    }
    store
}

/// Train one backend on one target. Deterministic in (config, seed).
pub fn train(cfg: &RunConfig) -> TrainOutput {
    let mut backend = BackendState::init(
        cfg.backend,
        cfg.icnn,
        &cfg.hyper_hidden,
        cfg.seed,
        cfg.init_jitter_sigma,
        cfg.pre_readout_base,
    );
    let d = backend.flagged_len();
    let dim = cfg.target.input_dim();
    assert_eq!(dim, cfg.icnn.input_dim, "target and network dimension mismatch");

    let mut batch_rng = substream(cfg.seed, "batch");
    let mut cond_rng = substream(cfg.seed, "cond");
    let mut val_rng = substream(cfg.seed, "val");
    let mut sigma_rng = substream(cfg.seed, "sigma");

    let val_points = cfg.target.sample_flat(cfg.val_size, &mut val_rng);
    let anchor: Vec<f64> = val_points[..cfg.n_cond * dim].to_vec();
    let anchor_opt = || {
        if cfg.backend.has_body() {
            Some(&anchor[..])
        } else {
            None
        }
    };
    let grid = cfg.norm_grid();

    let val_loss_of = |deployed: &ParamStore| -> f64 {
        match cfg.loss {
            LossKind::ForwardKl => {
                forward_kl_value(&cfg.icnn, deployed, &val_points, grid.as_ref().unwrap())
            }
            LossKind::CpflowNll => cpflow_nll_eval(&cfg.icnn, deployed, &val_points).0,
        }
    };

    let threshold = shoulder_threshold();
    // Only the full lift has both a slack Jacobian and a batch-driven jitter
    // stream; for every other backend the slack-channel reading is
    // structurally zero (zero contraction or an identically-zero jitter
    // stream), so the window is not materialized.
    let use_window = cfg.backend.has_slack() && cfg.backend.has_body();
    let mut window = if use_window { Some(TrailingWindow::new(cfg.window, d)) } else { None };
    let mut rows: Vec<IterRow> = Vec::with_capacity(cfg.iterations as usize);
    let mut snapshots = Vec::new();
    let mut backend_snapshots = Vec::new();
    let mut cross_cov_dumps = Vec::new();
    let mut aborted = None;
    let mut max_probe_violation = f64::NEG_INFINITY;

    let init_deployed = backend.evaluation_readout(anchor_opt());
    let init_val = val_loss_of(&init_deployed);
    let mut best = Checkpoint { iteration: 0, val_loss: init_val, deployed: init_deployed };
    let mut final_val = init_val;
    let mut probe_rng = substream(cfg.seed, "probe");
    max_probe_violation =
        max_probe_violation.max(convexity_probe(&cfg.icnn, &best.deployed, cfg.probe_pairs, &mut probe_rng));

    let mut sigma_cache: Option<(f64, f64)> = None; // (sigma_obj_sq, rho upstream cache)

    for t in 0..cfg.iterations {
        let batch = cfg.target.sample_flat(cfg.batch_size, &mut batch_rng);
        let cond: Option<Vec<f64>> = if cfg.backend.has_body() {
            Some(cfg.target.sample_flat(cfg.n_cond, &mut cond_rng))
        } else {
            None
        };

        let mut tape = Tape::<f64>::new();
        let m = backend.materialize(&mut tape, cond.as_deref());

        let (train_loss, g_pre, step_grads, extra): (f64, Vec<f64>, crate::ad::Gradients<f64>, Vec<(String, Vec<f64>)>) =
            match cfg.loss {
                LossKind::ForwardKl => {
                    let grid = grid.as_ref().unwrap();
                    let b = tape.leaf_f64s(vec![cfg.batch_size, dim], &batch);
                    let g =
                        tape.leaf_f64s(vec![grid.n_points(), grid.dim()], grid.flat_points());
                    let loss = forward_kl_loss(&mut tape, &cfg.icnn, &m.vars, b, g, grid);
                    let loss_val = tape.value(loss).item();
                    if !loss_val.is_finite() {
                        aborted = Some(format!("non-finite loss at iteration {t}"));
                        break;
                    }
                    let grads = tape.backward(loss);
                    let g_pre = if use_window {
                        backend.pre_readout_grad(&grads, &m)
                    } else {
                        Vec::new()
                    };
                    (loss_val, g_pre, grads, Vec::new())
                }
                LossKind::CpflowNll => {
                    let w_store = materialized_w_store(&cfg.icnn, &backend, &m, &tape);
                    let out = cpflow_nll_and_grads(&cfg.icnn, &w_store, &batch);
                    if !out.nll.is_finite() {
                        aborted = Some(format!(
                            "infeasible log-det (min det {:.3e}) at iteration {t}",
                            out.min_det
                        ));
                        break;
                    }
                    // chain the flagged gradient through the readout with a
                    // linear proxy root
                    let mut proxy = None;
                    let mut off = 0;
                    for wv in &m.vars.w {
                        let len = tape.value(*wv).len();
                        let flat = tape.reshape(*wv, vec![len]);
                        let dot = tape.dot_const(flat, &out.grad_flagged[off..off + len]);
                        off += len;
                        proxy = Some(match proxy {
                            None => dot,
                            Some(p) => tape.add(p, dot),
                        });
                    }
                    let grads = tape.backward(proxy.expect("at least one flagged tensor"));
                    let g_pre = if use_window {
                        backend.pre_readout_grad(&grads, &m)
                    } else {
                        Vec::new()
                    };
                    (out.nll, g_pre, grads, out.grad_unflagged)
                }
            };

        let gated = match window.as_mut() {
            Some(w) => {
                w.record(&m.jitter, &g_pre);
                w.scalars()
            }
            // structural zero, with the same fewer-than-two-entries absence
            None => (t >= 1).then_some((0.0, 0.0)),
        };
        let occupancy = m
            .theta_tilde_values
            .iter()
            .filter(|&&v| v < threshold)
            .count() as f64
            / d as f64;

        if t % cfg.snapshot_stride == 0 {
            let deployed = backend.evaluation_readout(anchor_opt());
            snapshots.push(Snapshot {
                iteration: t,
                theta_tilde: m.theta_tilde_values.clone(),
                deployed: deployed.flatten_all(),
            });
        }
        if cfg.record_backend_snapshots && t % cfg.backend_snapshot_stride == 0 {
            backend_snapshots.push((t, backend.train_flat()));
        }
        if cfg.cross_cov_dump_stride > 0 && t % cfg.cross_cov_dump_stride == 0 {
            if let Some(cc) = window.as_ref().and_then(|w| w.cross_cov()) {
                cross_cov_dumps.push((t, cc.matrix));
            }
        }

        backend.step(&cfg.adam, &step_grads, &m, &extra);

        let is_val = (t + 1) % cfg.val_cadence == 0 || t + 1 == cfg.iterations;
        let mut val_loss = None;
        if is_val {
            let deployed = backend.evaluation_readout(anchor_opt());
            let v = val_loss_of(&deployed);
            final_val = v;
            val_loss = Some(v);
            if v.is_finite() && v < best.val_loss {
                best = Checkpoint { iteration: t + 1, val_loss: v, deployed: deployed.clone() };
            }
            max_probe_violation = max_probe_violation.max(convexity_probe(
                &cfg.icnn,
                &deployed,
                cfg.probe_pairs,
                &mut probe_rng,
            ));

            // objective-noise variance over fresh batches at the deployed weights
            let replicas: Vec<Vec<f64>> = (0..cfg.sigma_replicas)
                .map(|_| {
                    let rb = cfg.target.sample_flat(cfg.batch_size, &mut sigma_rng);
                    constrained_gradient(&cfg.icnn, &deployed, &rb, grid.as_ref(), cfg.loss)
                })
                .collect();
            let sigma_obj_sq = gradient_variance_trace(&replicas);
            let sigma_jac_sq = gated.map(|(_, tr)| tr).unwrap_or(0.0);
            let sigma_s = SHOULDER_SIGMA;
            let rho = if sigma_obj_sq == 0.0 {
                f64::INFINITY
            } else {
                sigma_jac_sq / (sigma_s * sigma_s * sigma_obj_sq)
            };
            sigma_cache = Some((sigma_obj_sq, rho));
        }

        let (frob, trace) = match gated {
            Some((f, tr)) => (Some(f), Some(tr)),
            None => (None, None),
        };
        rows.push(IterRow {
            iteration: t,
            train_loss,
            val_loss,
            sigma_jac_sq: trace,
            sigma_obj_sq: sigma_cache.map(|(s, _)| s),
            rho_ratio: sigma_cache.map(|(_, r)| r),
            occupancy,
            frob_cross_cov: frob,
            admm: backend
                .admm
                .as_ref()
                .map(|a| (a.primal_residual, a.dual_residual, a.rho)),
        });
    }

    let record = RunRecord {
        rows,
        snapshots,
        backend_snapshots,
        cross_cov_dumps,
        best,
        final_val_loss: final_val,
        max_probe_violation,
        aborted,
    };
    TrainOutput { record, backend }
}

/// Gradient of the loss wrt the constrained (deployed) weights at fixed
/// parameters, used for the objective-noise replicas.
fn constrained_gradient(
    cfg: &IcnnConfig,
    w_store: &ParamStore,
    batch: &[f64],
    grid: Option<&QuadratureGrid>,
    loss: LossKind,
) -> Vec<f64> {
    match loss {
        LossKind::ForwardKl => {
            let grid = grid.expect("forward KL needs a grid");
            let mut tape = Tape::<f64>::new();
            let vars = leaf_vars(&mut tape, cfg, w_store);
            let n = batch.len() / cfg.input_dim;
            let b = tape.leaf_f64s(vec![n, cfg.input_dim], batch);
            let g = tape.leaf_f64s(vec![grid.n_points(), grid.dim()], grid.flat_points());
            let root = forward_kl_loss(&mut tape, cfg, &vars, b, g, grid);
            let grads = tape.backward(root);
            let mut out = Vec::with_capacity(w_store.flagged_len());
            for (l, wv) in vars.w.iter().enumerate() {
                let len = w_store.get(&format!("w{}", l + 1)).unwrap().len();
                out.extend(grads.wrt(*wv, len));
            }
            out
        }
        LossKind::CpflowNll => {
            let out = cpflow_nll_and_grads(cfg, w_store, batch);
            if out.grad_flagged.is_empty() {
                vec![0.0; w_store.flagged_len()]
            } else {
                out.grad_flagged
            }
        }
    }
}
