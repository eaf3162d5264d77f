//! The six positivity-enforcement strategies for the flagged inter-layer
//! weights: direct softplus, direct-with-bias, body-without-bias, the full
//! slack-plus-body lift, projected gradient descent, and ADMM consensus
//! splitting with three penalty schedules.

use crate::ad::{softplus, softplus_inv, Gradients, Scalar, Tape, Var};
use crate::adam::{AdamHyper, AdamState};
use crate::hypernet::{emit_on_tape, init_body, HyperConfig};
use crate::icnn::{folded_normal_init, IcnnConfig, IcnnVars};
use crate::params::{ParamStore, ParamTensor};
use crate::rng::substream;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdmmSchedule {
    FixedRho(f64),
    ResidualBalance { mu: f64, tau: f64 },
    Doubling { period: u64 },
}

impl AdmmSchedule {
    pub fn residual_balance_default() -> Self {
        AdmmSchedule::ResidualBalance { mu: 10.0, tau: 2.0 }
    }
    pub fn doubling_default() -> Self {
        AdmmSchedule::Doubling { period: 500 }
    }
    fn initial_rho(&self) -> f64 {
        match *self {
            AdmmSchedule::FixedRho(r) => r,
            _ => 1.0,
        }
    }
    pub fn name(&self) -> &'static str {
        match self {
            AdmmSchedule::FixedRho(_) => "fixed_rho",
            AdmmSchedule::ResidualBalance { .. } => "residual_balance",
            AdmmSchedule::Doubling { .. } => "doubling",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BackendKind {
    DirectSoftplus,
    DirectWithBias,
    BodyNoBias,
    Lift,
    Pgd,
    Admm(AdmmSchedule),
}

impl BackendKind {
    /// A learnable slack bias with identity Jacobian into the pre-readout
    /// iterate. Gates the slack-channel reading of the cross-covariance.
    pub fn has_slack(&self) -> bool {
        matches!(self, BackendKind::DirectWithBias | BackendKind::Lift)
    }
    /// A batch-conditioned emission body.
    pub fn has_body(&self) -> bool {
        matches!(self, BackendKind::BodyNoBias | BackendKind::Lift)
    }
    /// Softplus readout between the free iterate and the deployed weights.
    pub fn uses_readout(&self) -> bool {
        !matches!(self, BackendKind::Pgd | BackendKind::Admm(_))
    }
    pub fn name(&self) -> String {
        match self {
            BackendKind::DirectSoftplus => "direct_softplus".into(),
            BackendKind::DirectWithBias => "direct_with_bias".into(),
            BackendKind::BodyNoBias => "body_no_bias".into(),
            BackendKind::Lift => "lift".into(),
            BackendKind::Pgd => "pgd".into(),
            BackendKind::Admm(s) => format!("admm_{}", s.name()),
        }
    }
}

/// Consensus splitting state: auxiliary non-negative primal `z`, dual `y`,
/// and the penalty weight with its schedule.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
    pub schedule: AdmmSchedule,
    pub iter: u64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho_clamped: bool,
}

impl AdmmState {
    pub fn new(theta0: &[f64], schedule: AdmmSchedule) -> Self {
        AdmmState {
            z: theta0.iter().map(|&v| v.max(0.0)).collect(),
            y: vec![0.0; theta0.len()],
            rho: schedule.initial_rho(),
            schedule,
            iter: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            rho_clamped: false,
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient of the augmented penalty (rho/2)||theta - z + y/rho||^2 in theta.
pub fn admm_penalty_grad(st: &AdmmState, theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(&st.z)
        .zip(&st.y)
        .map(|((&t, &z), &y)| st.rho * (t - z) + y)
        .collect()
}

/// Closed-form z-prox, dual ascent, residuals, and the schedule update.
pub fn admm_update(st: &mut AdmmState, theta: &[f64]) {
    st.iter += 1;
    let z_prev = st.z.clone();
    for i in 0..theta.len() {
        st.z[i] = (theta[i] + st.y[i] / st.rho).max(0.0);
    }
    for i in 0..theta.len() {
        st.y[i] += st.rho * (theta[i] - st.z[i]);
    }
    let diff: Vec<f64> = theta.iter().zip(&st.z).map(|(&t, &z)| t - z).collect();
    st.primal_residual = l2(&diff);
    let zd: Vec<f64> = st.z.iter().zip(&z_prev).map(|(&a, &b)| a - b).collect();
    st.dual_residual = st.rho * l2(&zd);
    match st.schedule {
        AdmmSchedule::FixedRho(_) => {}
        AdmmSchedule::ResidualBalance { mu, tau } => {
            if st.primal_residual > mu * st.dual_residual {
                st.rho *= tau;
            } else if st.dual_residual > mu * st.primal_residual {
                st.rho /= tau;
            }
        }
        AdmmSchedule::Doubling { period } => {
            if period > 0 && st.iter % period == 0 {
                st.rho = (st.rho * 2.0).min(1e6);
            }
        }
    }
    if st.rho > 1e12 {
        st.rho = 1e12;
        st.rho_clamped = true;
    }
}

/// Tape handles produced by materializing a backend's flagged weights.
pub struct Materialized {
    pub vars: IcnnVars,
    /// Pre-readout vector node (softplus backends only).
    pub theta_tilde: Option<Var>,
    /// Leaf handles of the trainable tensors, in store order.
    pub leaves: Vec<(String, Var)>,
    /// Raw flagged leaf handles (projection backends only), in layer order.
    pub flagged_leaves: Vec<Var>,
    /// Materialized pre-readout values (or raw flagged weights), length d.
    pub theta_tilde_values: Vec<f64>,
    /// Batch-driven summand of the pre-readout iterate: the body emission for
    /// body-bearing backends, zeros otherwise. This is what the trailing
    /// window sees.
    pub jitter: Vec<f64>,
}

#[derive(Clone)]
pub struct BackendState {
    pub kind: BackendKind,
    pub icnn_cfg: IcnnConfig,
    pub hyper_cfg: Option<HyperConfig>,
    /// Trainable tensors (unflagged net tensors plus the backend's own).
    pub train: ParamStore,
    opt: Vec<AdamState>,
    pub admm: Option<AdmmState>,
    /// Flagged tensor layout (name, shape) in flattening order.
    flagged_layout: Vec<(String, Vec<usize>)>,
}

impl BackendState {
    /// Build a backend at a shared starting point. Every arm starts at
    /// exactly the same deployed weights: the pre-readout vector is either
    /// matched to a folded-normal draw (softplus-inverse of |N(0, s^2)|) or
    /// set to a constant base, and the optional `init_jitter_sigma` adds the
    /// same per-element perturbation to every arm. Projection backends start
    /// from the softplus image of the same pre-readout vector.
    pub fn init(
        kind: BackendKind,
        icnn_cfg: IcnnConfig,
        hyper_hidden: &[usize],
        seed: u64,
        init_jitter_sigma: f64,
        pre_readout_base: Option<f64>,
    ) -> Self {
        let mut icnn_rng = substream(seed, "init-icnn");
        let mut folded = folded_normal_init(&icnn_cfg, &mut icnn_rng);
        let d = folded.flagged_len();
        let mut theta0: Vec<f64> = match pre_readout_base {
            None => folded.flatten_flagged().iter().map(|&v| softplus_inv(v)).collect(),
            Some(mu) => vec![mu; d],
        };
        if init_jitter_sigma > 0.0 {
            let mut jrng = substream(seed, "init-jitter");
            for t in theta0.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut jrng);
                *t += init_jitter_sigma * z;
            }
        }
        if !kind.uses_readout() {
            // raw weights start at the same deployed point as the softplus arms
            let w_init: Vec<f64> = theta0.iter().map(|&t| softplus(t)).collect();
            folded.unflatten_flagged(&w_init);
        }
        let w0 = folded.flatten_flagged();
        let flagged_layout: Vec<(String, Vec<usize>)> = folded
            .tensors()
            .iter()
            .filter(|t| t.pos_required)
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();

        let mut train = ParamStore::new();
        if kind.uses_readout() {
            for t in folded.tensors().iter().filter(|t| !t.pos_required) {
                train.push(t.clone());
            }
        } else {
            for t in folded.tensors() {
                train.push(t.clone());
            }
        }

        let mut hyper_cfg = None;
        match kind {
            BackendKind::DirectSoftplus => {
                train.push(ParamTensor::new("theta_tilde", vec![d], theta0, false));
            }
            BackendKind::DirectWithBias => {
                train.push(ParamTensor::new("b", vec![d], vec![0.0; d], false));
                train.push(ParamTensor::new("theta_tilde", vec![d], theta0, false));
            }
            BackendKind::BodyNoBias | BackendKind::Lift => {
                let mut cfg = HyperConfig::new(icnn_cfg.input_dim, d);
                cfg.hidden_sizes = hyper_hidden.to_vec();
                let mut body_rng = substream(seed, "init-body");
                let mut body = init_body(&cfg, &mut body_rng);
                if kind == BackendKind::BodyNoBias {
                    // the final emission bias carries the folded starting point
                    body.get_mut("qc1").unwrap().data.copy_from_slice(&theta0);
                }
                for t in body.tensors() {
                    train.push(t.clone());
                }
                if kind == BackendKind::Lift {
                    train.push(ParamTensor::new("b", vec![d], theta0, false));
                }
                hyper_cfg = Some(cfg);
            }
            BackendKind::Pgd => {}
            BackendKind::Admm(_) => {}
        }

        let admm = match kind {
            BackendKind::Admm(schedule) => Some(AdmmState::new(&w0, schedule)),
            _ => None,
        };
        let opt = train.tensors().iter().map(|t| AdamState::new(t.len())).collect();
        BackendState { kind, icnn_cfg, hyper_cfg, train, opt, admm, flagged_layout }
    }

    pub fn flagged_len(&self) -> usize {
        self.flagged_layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Push the trainable tensors as leaves and materialize the flagged
    /// weights. Body-bearing backends require a conditioning batch
    /// (flattened points, row-major).
    pub fn materialize<S: Scalar>(&self, tape: &mut Tape<S>, x_cond: Option<&[f64]>) -> Materialized {
        let leaves: Vec<(String, Var)> = self
            .train
            .tensors()
            .iter()
            .map(|t| (t.name.clone(), tape.leaf_f64s(t.shape.clone(), &t.data)))
            .collect();
        let leaf = |name: &str| -> Var {
            leaves
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("missing trainable tensor {name}"))
                .1
        };
        let d = self.flagged_len();

        let (theta_tilde, jitter) = if self.kind.uses_readout() {
            let emission = if self.kind.has_body() {
                let cfg = self.hyper_cfg.as_ref().expect("body backend has hyper cfg");
                let pts = x_cond.expect("body-bearing backend needs a conditioning batch");
                assert!(!pts.is_empty(), "empty conditioning batch");
                let n = pts.len() / cfg.input_dim;
                let xv = tape.leaf_f64s(vec![n, cfg.input_dim], pts);
                Some(emit_on_tape(tape, cfg, &leaves, xv))
            } else {
                None
            };
            let node = match self.kind {
                BackendKind::DirectSoftplus => leaf("theta_tilde"),
                BackendKind::DirectWithBias => {
                    let b = leaf("b");
                    let th = leaf("theta_tilde");
                    tape.add(b, th)
                }
                BackendKind::BodyNoBias => emission.expect("emission"),
                BackendKind::Lift => {
                    let b = leaf("b");
                    tape.add(b, emission.expect("emission"))
                }
                _ => unreachable!(),
            };
            let jit = match emission {
                Some(e) => tape.value(e).primals(),
                None => vec![0.0; d],
            };
            (Some(node), jit)
        } else {
            (None, vec![0.0; d])
        };

        let (vars, flagged_leaves, theta_vals) = if let Some(th) = theta_tilde {
            let wflat = tape.softplus(th);
            let mut w = Vec::new();
            let mut off = 0;
            for (_, shape) in &self.flagged_layout {
                let len: usize = shape.iter().product();
                let sl = tape.slice(wflat, off, len);
                w.push(tape.reshape(sl, shape.clone()));
                off += len;
            }
            let vars = IcnnVars {
                w,
                u: (0..self.icnn_cfg.n_layers).map(|l| leaf(&format!("u{l}"))).collect(),
                c: (0..self.icnn_cfg.n_layers).map(|l| leaf(&format!("c{l}"))).collect(),
            };
            (vars, Vec::new(), tape.value(th).primals())
        } else {
            let mut w = Vec::new();
            let mut vals = Vec::with_capacity(d);
            for (name, _) in &self.flagged_layout {
                let v = leaf(name);
                vals.extend(tape.value(v).primals());
                w.push(v);
            }
            let vars = IcnnVars {
                w: w.clone(),
                u: (0..self.icnn_cfg.n_layers).map(|l| leaf(&format!("u{l}"))).collect(),
                c: (0..self.icnn_cfg.n_layers).map(|l| leaf(&format!("c{l}"))).collect(),
            };
            (vars, w, vals)
        };

        Materialized {
            vars,
            theta_tilde,
            leaves,
            flagged_leaves,
            theta_tilde_values: theta_vals,
            jitter,
        }
    }

    /// Pre-readout gradient for the trailing window: the adjoint at the
    /// pre-readout node, or the concatenated raw flagged adjoints for the
    /// projection backends.
    pub fn pre_readout_grad(&self, grads: &Gradients<f64>, m: &Materialized) -> Vec<f64> {
        match m.theta_tilde {
            Some(node) => grads.wrt(node, self.flagged_len()),
            None => {
                let mut out = Vec::with_capacity(self.flagged_len());
                for (leaf, (_, shape)) in m.flagged_leaves.iter().zip(&self.flagged_layout) {
                    out.extend(grads.wrt(*leaf, shape.iter().product()));
                }
                out
            }
        }
    }

    /// One optimizer step from accumulated per-tensor gradients.
    ///
    /// `extra` holds gradients to add by tensor name (used when part of the
    /// loss gradient is computed off-tape). PGD projects its flagged tensors
    /// after the Adam update; ADMM steps the augmented objective, then runs
    /// the z-prox, dual ascent, and penalty schedule.
    pub fn step(
        &mut self,
        hp: &AdamHyper,
        grads: &Gradients<f64>,
        m: &Materialized,
        extra: &[(String, Vec<f64>)],
    ) {
        let penalty: Option<Vec<f64>> = self.admm.as_ref().map(|st| {
            let theta = self.train.flatten_flagged();
            admm_penalty_grad(st, &theta)
        });
        let mut flag_off = 0;
        for (i, (name, leaf)) in m.leaves.iter().enumerate() {
            let t = &mut self.train.tensors_mut()[i];
            debug_assert_eq!(&t.name, name);
            let mut g = grads.wrt(*leaf, t.len());
            if let Some((_, e)) = extra.iter().find(|(n, _)| n == name) {
                for (gi, ei) in g.iter_mut().zip(e) {
                    *gi += ei;
                }
            }
            if t.pos_required {
                if let Some(p) = &penalty {
                    for (gi, pi) in g.iter_mut().zip(&p[flag_off..flag_off + t.len()]) {
                        *gi += pi;
                    }
                }
                flag_off += t.len();
            }
            self.opt[i].step(hp, &mut t.data, &g);
        }
        match self.kind {
            BackendKind::Pgd => {
                for t in self.train.tensors_mut() {
                    if t.pos_required {
                        for v in t.data.iter_mut() {
                            *v = v.max(0.0);
                        }
                    }
                }
            }
            BackendKind::Admm(_) => {
                let theta = self.train.flatten_flagged();
                admm_update(self.admm.as_mut().unwrap(), &theta);
            }
            _ => {}
        }
    }

    /// Pre-readout vector used for deployment: the anchor-frozen emission for
    /// body-bearing backends, the free iterate otherwise. For projection
    /// backends this is the raw flagged vector.
    pub fn eval_pre_readout(&self, anchor: Option<&[f64]>) -> Vec<f64> {
        let d = self.flagged_len();
        match self.kind {
            BackendKind::DirectSoftplus => self.train.get("theta_tilde").unwrap().data.clone(),
            BackendKind::DirectWithBias => {
                let b = &self.train.get("b").unwrap().data;
                let th = &self.train.get("theta_tilde").unwrap().data;
                b.iter().zip(th).map(|(&x, &y)| x + y).collect()
            }
            BackendKind::BodyNoBias | BackendKind::Lift => {
                let cfg = self.hyper_cfg.as_ref().unwrap();
                let pts = anchor.expect("body-bearing backend needs a frozen evaluation anchor");
                let h = crate::hypernet::emit_values(cfg, &self.train, pts);
                if self.kind == BackendKind::Lift {
                    let b = &self.train.get("b").unwrap().data;
                    b.iter().zip(&h).map(|(&x, &y)| x + y).collect()
                } else {
                    h
                }
            }
            BackendKind::Pgd | BackendKind::Admm(_) => {
                let mut out = Vec::with_capacity(d);
                for (name, _) in &self.flagged_layout {
                    out.extend_from_slice(&self.train.get(name).unwrap().data);
                }
                out
            }
        }
    }

    /// Deployable weight store: flagged tensors from the readout (softplus of
    /// the anchor-frozen pre-readout, identity for PGD, cone projection for
    /// ADMM), unflagged tensors as trained.
    pub fn evaluation_readout(&self, anchor: Option<&[f64]>) -> ParamStore {
        let pre = self.eval_pre_readout(anchor);
        let flat: Vec<f64> = match self.kind {
            BackendKind::Pgd => pre,
            BackendKind::Admm(_) => pre.iter().map(|&v| v.max(0.0)).collect(),
            _ => pre.iter().map(|&v| softplus(v)).collect(),
        };
        let mut store = self.icnn_cfg.param_template();
        store.unflatten_flagged(&flat);
        for l in 0..self.icnn_cfg.n_layers {
            for prefix in ["u", "c"] {
                let name = format!("{prefix}{l}");
                let src = self.train.get(&name).expect("net tensor").data.clone();
                store.get_mut(&name).unwrap().data = src;
            }
        }
        store
    }

    /// Flat view of the trainable parameters (the lifted-space coordinates).
    pub fn train_flat(&self) -> Vec<f64> {
        self.train.flatten_all()
    }

    pub fn total_train_params(&self) -> usize {
        self.train.total_len()
    }
}
