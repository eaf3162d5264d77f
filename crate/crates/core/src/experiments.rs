//! Multi-run experiment drivers: the four-architecture ablation, paired-seed
//! sweeps, and the widened-direct capacity comparison.

use crate::backends::BackendKind;
use crate::hypernet::HyperConfig;
use crate::icnn::IcnnConfig;
use crate::targets::{Target1D, Target2D};
use crate::training::{train, tv_eval, RunConfig, TrainOutput};

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One architecture/seed cell of the cross-covariance ablation.
#[derive(Clone, Debug)]
pub struct AblateRow {
    pub backend: BackendKind,
    pub seed: u64,
    /// Time-averaged slack-channel ||S||_F over iterations with at least one
    /// pre-readout coordinate below the shoulder threshold; absent when the
    /// run never touches the shoulder.
    pub avg_frob_shoulder: Option<f64>,
    pub shoulder_iterations: usize,
    /// Largest reading at any iteration, shoulder or not.
    pub max_frob: f64,
    pub tv: f64,
}

/// Run the four-architecture ablation (optionally plus PGD) on a 1D target.
pub fn ablate(
    target: Target1D,
    seeds: &[u64],
    iterations: u64,
    include_pgd: bool,
    base: impl Fn(BackendKind, u64) -> RunConfig,
) -> Vec<AblateRow> {
    let mut backends = vec![
        BackendKind::DirectSoftplus,
        BackendKind::DirectWithBias,
        BackendKind::BodyNoBias,
        BackendKind::Lift,
    ];
    if include_pgd {
        backends.push(BackendKind::Pgd);
    }
    let grid = target.grid(0.005);
    let mut rows = Vec::new();
    for &backend in &backends {
        for &seed in seeds {
            let mut cfg = base(backend, seed);
            cfg.iterations = iterations;
            let out = train(&cfg);
            let vals: Vec<f64> = out
                .record
                .rows
                .iter()
                .filter(|r| r.occupancy > 0.0)
                .filter_map(|r| r.frob_cross_cov)
                .collect();
            let avg = if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let max_frob = out
                .record
                .rows
                .iter()
                .filter_map(|r| r.frob_cross_cov)
                .fold(0.0f64, f64::max);
            let tv = tv_eval(&cfg.icnn, &out.record.best.deployed, &target, &grid);
            rows.push(AblateRow {
                backend,
                seed,
                avg_frob_shoulder: avg,
                shoulder_iterations: vals.len(),
                max_frob,
                tv,
            });
        }
    }
    rows
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    let mut s = String::from("backend,seed,avg_frob_cross_cov_shoulder,shoulder_iterations,tv\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:?}\n",
            r.backend.name(),
            r.seed,
            r.avg_frob_shoulder.map(|v| format!("{v:?}")).unwrap_or_default(),
            r.shoulder_iterations,
            r.tv
        ));
    }
    s
}

/// Per-seed metric of a paired sweep (same seed, each method).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepMetric {
    /// TV distance of the best checkpoint's density to the 1D target.
    TvToTarget,
    /// Held-out loss of the best checkpoint.
    BestValLoss,
}

pub struct SweepRun {
    pub backend: BackendKind,
    pub seed: u64,
    pub metric: f64,
    pub output: TrainOutput,
}

pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    /// (backend, median metric) in backend order.
    pub medians: Vec<(BackendKind, f64)>,
}

/// Paired-seed sweep: every backend trained on every seed with otherwise
/// identical configuration.
pub fn paired_sweep(
    backends: &[BackendKind],
    seeds: &[u64],
    metric: SweepMetric,
    base: impl Fn(BackendKind, u64) -> RunConfig,
) -> SweepResult {
    let mut runs = Vec::new();
    for &backend in backends {
        for &seed in seeds {
            let cfg = base(backend, seed);
            let out = train(&cfg);
            let m = match (metric, &cfg.target) {
                (SweepMetric::TvToTarget, crate::training::TargetSpec::D1(t)) => {
                    tv_eval(&cfg.icnn, &out.record.best.deployed, t, &t.grid(0.005))
                }
                (SweepMetric::TvToTarget, _) => {
                    panic!("TV metric needs a 1D target")
                }
                (SweepMetric::BestValLoss, _) => out.record.best.val_loss,
            };
            runs.push(SweepRun { backend, seed, metric: m, output: out });
        }
    }
    let medians = backends
        .iter()
        .map(|&b| {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.backend == b)
                .map(|r| r.metric)
                .collect();
            (b, median(&vals))
        })
        .collect();
    SweepResult { runs, medians }
}

pub fn sweep_csv(result: &SweepResult, metric_name: &str) -> String {
    let mut s = format!("kind,backend,seed,{metric_name}\n");
    for r in &result.runs {
        s.push_str(&format!("run,{},{},{:?}\n", r.backend.name(), r.seed, r.metric));
    }
    for (b, m) in &result.medians {
        s.push_str(&format!("median,{},,{:?}\n", b.name(), m));
    }
    s
}

/// The widened direct energy network of the capacity comparison.
pub fn widened_direct_icnn() -> IcnnConfig {
    IcnnConfig::new(1, 512, 5, 0.0)
}

/// Trainable-parameter count of a lift run at energy-network width `w`.
pub fn lift_param_count(w: usize, hyper_hidden: &[usize]) -> usize {
    let icnn = IcnnConfig::new(1, w, 3, 0.0);
    let d = icnn.flagged_len();
    let unflagged = icnn.total_params() - d;
    let mut hyper = HyperConfig::new(1, d);
    hyper.hidden_sizes = hyper_hidden.to_vec();
    unflagged + hyper.total_params() + d // body + slack
}

/// Energy-network width whose lift parameter total best matches `budget`.
pub fn matched_lift_width(budget: usize, hyper_hidden: &[usize]) -> usize {
    let mut best = (usize::MAX, 2usize);
    for w in 2..=512 {
        let total = lift_param_count(w, hyper_hidden);
        let diff = total.abs_diff(budget);
        if diff < best.0 {
            best = (diff, w);
        }
    }
    best.1
}

#[derive(Clone, Debug)]
pub struct CapacityRow {
    pub arm: String,
    pub seed: u64,
    pub params: usize,
    pub tv: f64,
}

pub struct CapacityResult {
    pub rows: Vec<CapacityRow>,
    pub widened_params: usize,
    pub lift_params: usize,
    pub lift_width: usize,
    pub medians: Vec<(String, f64)>,
}

/// Widened direct softplus (512 wide, 5 layers) against the lift at a matched
/// trainable-parameter budget.
pub fn capacity(
    target: Target1D,
    seeds: &[u64],
    iterations: u64,
    base: impl Fn(BackendKind, u64) -> RunConfig,
) -> CapacityResult {
    let widened = widened_direct_icnn();
    let widened_params = widened.total_params();
    let hyper_hidden = vec![64, 64, 96];
    let lift_width = matched_lift_width(widened_params, &hyper_hidden);
    let lift_params = lift_param_count(lift_width, &hyper_hidden);
    let grid = target.grid(0.005);

    let mut rows = Vec::new();
    for &seed in seeds {
        let mut cfg = base(BackendKind::DirectSoftplus, seed);
        cfg.icnn = widened;
        cfg.iterations = iterations;
        let out = train(&cfg);
        rows.push(CapacityRow {
            arm: "widened_direct".into(),
            seed,
            params: widened_params,
            tv: tv_eval(&cfg.icnn, &out.record.best.deployed, &target, &grid),
        });
    }
    for &seed in seeds {
        let mut cfg = base(BackendKind::Lift, seed);
        cfg.icnn = IcnnConfig::new(1, lift_width, 3, 0.0);
        cfg.iterations = iterations;
        let out = train(&cfg);
        rows.push(CapacityRow {
            arm: "lift".into(),
            seed,
            params: lift_params,
            tv: tv_eval(&cfg.icnn, &out.record.best.deployed, &target, &grid),
        });
    }
    let medians = ["widened_direct", "lift"]
        .iter()
        .map(|arm| {
            let vals: Vec<f64> =
                rows.iter().filter(|r| &r.arm == arm).map(|r| r.tv).collect();
            (arm.to_string(), median(&vals))
        })
        .collect();
    CapacityResult { rows, widened_params, lift_params, lift_width, medians }
}

pub fn capacity_csv(result: &CapacityResult) -> String {
    let mut s = String::from("kind,arm,seed,params,tv\n");
    for r in &result.rows {
        s.push_str(&format!("run,{},{},{},{:?}\n", r.arm, r.seed, r.params, r.tv));
    }
    for (arm, m) in &result.medians {
        s.push_str(&format!("median,{arm},,,{m:?}\n"));
    }
    s
}

/// Landscape slices around a trained lift/direct pair.
pub struct LandscapePair {
    pub constrained_plane: crate::landscape::SlicePlane,
    pub constrained_grid: crate::landscape::GridEval,
    /// (iteration, slice coordinates) per deployed snapshot.
    pub lift_trajectory: Vec<(u64, [f64; 2])>,
    pub direct_trajectory: Vec<(u64, [f64; 2])>,
    pub lifted_plane: Option<crate::landscape::SlicePlane>,
    pub lifted_grid: Option<crate::landscape::GridEval>,
    pub lifted_trajectory: Vec<(u64, [f64; 2])>,
}

/// Train the lift and the direct softplus on the same seed, slice the loss
/// around the converged lift in constrained weight space (end-difference +
/// trajectory-PCA axes), and optionally in the lifted parameter space (top
/// two trajectory-PCA axes of the trainable-parameter snapshots).
pub fn landscape_pair(
    seed: u64,
    resolution: usize,
    half_extent: f64,
    with_lifted: bool,
    base: impl Fn(BackendKind, u64) -> RunConfig,
) -> Result<LandscapePair, crate::landscape::PlaneError> {
    landscape_pair_with_axes(seed, resolution, half_extent, with_lifted, false, base)
}

/// As [`landscape_pair`], with `random_axes` swapping the adaptive
/// constrained-space axes for random filter-normalized directions.
pub fn landscape_pair_with_axes(
    seed: u64,
    resolution: usize,
    half_extent: f64,
    with_lifted: bool,
    random_axes: bool,
    base: impl Fn(BackendKind, u64) -> RunConfig,
) -> Result<LandscapePair, crate::landscape::PlaneError> {
    use crate::landscape::*;
    use crate::rng::substream;
    use crate::training::{cpflow_nll_eval, forward_kl_value, LossKind};

    let mut lift_cfg = base(BackendKind::Lift, seed);
    lift_cfg.record_backend_snapshots = with_lifted;
    let direct_cfg = base(BackendKind::DirectSoftplus, seed);
    let lift = train(&lift_cfg);
    let direct = train(&direct_cfg);

    let icnn = lift_cfg.icnn;
    let template = icnn.param_template();
    let blocks = template.block_layout();
    let dim = lift_cfg.target.input_dim();
    let mut val_rng = substream(seed, "val");
    let eval_points = lift_cfg.target.sample_flat(lift_cfg.val_size, &mut val_rng);
    let norm_grid = match lift_cfg.loss {
        LossKind::ForwardKl => match &lift_cfg.target {
            crate::training::TargetSpec::D1(t) => Some(t.grid(lift_cfg.train_grid_step)),
            crate::training::TargetSpec::D2(t) => t.grid(lift_cfg.grid_nodes_2d),
        },
        LossKind::CpflowNll => None,
    };
    let loss_of_store = |store: &crate::params::ParamStore| -> Option<f64> {
        match lift_cfg.loss {
            LossKind::ForwardKl => {
                let v = forward_kl_value(&icnn, store, &eval_points, norm_grid.as_ref().unwrap());
                v.is_finite().then_some(v)
            }
            LossKind::CpflowNll => {
                let (nll, min_det) = cpflow_nll_eval(&icnn, store, &eval_points);
                (min_det > 0.0 && nll.is_finite()).then_some(nll)
            }
        }
    };

    let anchor = lift.record.best.deployed.flatten_all();
    let other = direct.record.best.deployed.flatten_all();
    let lift_snaps: Vec<Vec<f64>> =
        lift.record.snapshots.iter().map(|s| s.deployed.clone()).collect();
    let mut plane_rng = substream(seed, "plane");
    let plane = if random_axes {
        build_plane_random(&anchor, &blocks, &mut plane_rng)
    } else {
        build_plane_constrained(&anchor, &other, &lift_snaps, &blocks, &mut plane_rng)?
    };

    let mut store = template.clone();
    let grid = evaluate_grid(&plane, resolution, half_extent, |v| {
        store.unflatten_all(v);
        loss_of_store(&store)
    });

    let project = |snaps: &[crate::training::Snapshot]| -> Vec<(u64, [f64; 2])> {
        let pts: Vec<Vec<f64>> = snaps.iter().map(|s| s.deployed.clone()).collect();
        snaps
            .iter()
            .map(|s| s.iteration)
            .zip(project_trajectory(&plane, &pts))
            .collect()
    };
    let lift_trajectory = project(&lift.record.snapshots);
    let direct_trajectory = project(&direct.record.snapshots);

    let (lifted_plane, lifted_grid, lifted_trajectory) = if with_lifted {
        let anchor_l = lift.backend.train_flat();
        let snaps_l: Vec<Vec<f64>> =
            lift.record.backend_snapshots.iter().map(|(_, v)| v.clone()).collect();
        let blocks_l = lift.backend.train.block_layout();
        let plane_l = build_plane_lifted(&anchor_l, &snaps_l, &blocks_l, &mut plane_rng)?;
        let anchor_pts: Vec<f64> = eval_points[..lift_cfg.n_cond * dim].to_vec();
        let mut probe_backend = lift.backend.clone();
        let grid_l = evaluate_grid(&plane_l, resolution, half_extent, |v| {
            probe_backend.train.unflatten_all(v);
            let deployed = probe_backend.evaluation_readout(Some(&anchor_pts));
            loss_of_store(&deployed)
        });
        let coords = project_trajectory(&plane_l, &snaps_l);
        let traj: Vec<(u64, [f64; 2])> = lift
            .record
            .backend_snapshots
            .iter()
            .map(|(it, _)| *it)
            .zip(coords)
            .collect();
        (Some(plane_l), Some(grid_l), traj)
    } else {
        (None, None, Vec::new())
    };

    Ok(LandscapePair {
        constrained_plane: plane,
        constrained_grid: grid,
        lift_trajectory,
        direct_trajectory,
        lifted_plane,
        lifted_grid,
        lifted_trajectory,
    })
}

/// Convenience target list used by the sweep command.
pub fn all_1d_targets() -> [Target1D; 4] {
    [
        Target1D::gumbel_std(),
        Target1D::laplace_std(),
        Target1D::gamma_default(),
        Target1D::beta_default(),
    ]
}

pub fn all_2d_targets() -> [Target2D; 3] {
    [
        Target2D::eight_gaussians_default(),
        Target2D::two_spirals_default(),
        Target2D::gamma_mode_default(),
    ]
}
