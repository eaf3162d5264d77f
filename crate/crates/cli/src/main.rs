//! Experiment driver: configuration-driven training runs, ablations, SDE
//! sweeps, landscape slices, and capacity comparisons, all emitting CSV
//! artifacts.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical abort.

mod config;

use conelift::backends::{AdmmSchedule, BackendKind};
use conelift::experiments::{
    ablate, ablate_csv, capacity, capacity_csv, landscape_pair_with_axes, paired_sweep,
    sweep_csv, SweepMetric,
};
use conelift::landscape::trajectory_csv;
use conelift::params::{ParamStore, ParamTensor};
use conelift::sde::{results_csv, simulate, SdeConfig};
use conelift::targets::{Target1D, Target2D};
use conelift::training::{train, tv_eval, LossKind, RunConfig, TargetSpec};
use config::{CfgError, Config};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const RUN_KEYS: (&str, &[&str]) = (
    "run",
    &[
        "backend",
        "target",
        "loss",
        "iterations",
        "batch",
        "seed",
        "lr",
        "window",
        "snapshot_stride",
        "val_cadence",
        "val_size",
        "n_cond",
        "train_grid_step",
        "grid_nodes_2d",
        "init_jitter_sigma",
        "pre_readout_base",
        "width",
        "layers",
        "strong_convexity",
        "sigma_replicas",
        "record_backend_snapshots",
        "backend_snapshot_stride",
        "probe_pairs",
        "cross_cov_dump_stride",
    ],
);

const ALL_KEYS: [(&str, &[&str]); 6] = [
    RUN_KEYS,
    (
        "sde",
        &["w0", "ws", "replicates", "max_steps", "dt", "sigma_obj", "sigma_jac_grid"],
    ),
    ("ablate", &["iterations", "include_pgd"]),
    ("sweep", &["targets"]),
    ("capacity", &["iterations"]),
    ("landscape", &["resolution", "half_extent", "with_lifted", "axes"]),
];

struct Flags {
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    seeds: Option<u64>,
    quiet: bool,
}

fn usage() -> String {
    "usage: conelift <train|ablate|sde|landscape|sweep|capacity> --config FILE \
     [--out DIR] [--seed N] [--seeds COUNT] [--quiet]"
        .to_string()
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut seed = None;
    let mut seeds = None;
    let mut quiet = false;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" => config = Some(PathBuf::from(it.next().ok_or("--config needs a path")?)),
            "--out" => out = PathBuf::from(it.next().ok_or("--out needs a path")?),
            "--seed" => {
                seed = Some(
                    it.next()
                        .ok_or("--seed needs a value")?
                        .parse()
                        .map_err(|_| "--seed must be an integer")?,
                )
            }
            "--seeds" => {
                seeds = Some(
                    it.next()
                        .ok_or("--seeds needs a count")?
                        .parse()
                        .map_err(|_| "--seeds must be an integer")?,
                )
            }
            "--quiet" => quiet = true,
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(Flags {
        config: config.ok_or("--config is required")?,
        out,
        seed,
        seeds,
        quiet,
    })
}

fn parse_backend(value: &str, line: usize) -> Result<BackendKind, CfgError> {
    Ok(match value {
        "direct_softplus" => BackendKind::DirectSoftplus,
        "direct_with_bias" => BackendKind::DirectWithBias,
        "body_no_bias" => BackendKind::BodyNoBias,
        "lift" => BackendKind::Lift,
        "pgd" => BackendKind::Pgd,
        "admm_fixed_rho" => BackendKind::Admm(AdmmSchedule::FixedRho(10.0)),
        "admm_residual_balance" => BackendKind::Admm(AdmmSchedule::residual_balance_default()),
        "admm_doubling" => BackendKind::Admm(AdmmSchedule::doubling_default()),
        other => {
            return Err(CfgError {
                line,
                msg: format!(
                    "unknown backend `{other}` (expected direct_softplus, direct_with_bias, \
                     body_no_bias, lift, pgd, admm_fixed_rho, admm_residual_balance, admm_doubling)"
                ),
            })
        }
    })
}

fn parse_target(value: &str, line: usize) -> Result<TargetSpec, CfgError> {
    Ok(match value {
        "gumbel" => TargetSpec::D1(Target1D::gumbel_std()),
        "laplace" => TargetSpec::D1(Target1D::laplace_std()),
        "gamma" => TargetSpec::D1(Target1D::gamma_default()),
        "beta" => TargetSpec::D1(Target1D::beta_default()),
        "eight_gaussians" => TargetSpec::D2(Target2D::eight_gaussians_default()),
        "two_spirals" => TargetSpec::D2(Target2D::two_spirals_default()),
        "gamma_mode2d" => TargetSpec::D2(Target2D::gamma_mode_default()),
        other => {
            return Err(CfgError {
                line,
                msg: format!(
                    "unknown target `{other}` (expected gumbel, laplace, gamma, beta, \
                     eight_gaussians, two_spirals, gamma_mode2d)"
                ),
            })
        }
    })
}

/// Assemble the base run configuration from the [run] section. `backend` may
/// be overridden by commands that iterate over architectures.
fn run_config(cfg: &Config, flags: &Flags) -> Result<RunConfig, CfgError> {
    let target_entry = cfg.require("run", "target")?;
    let target = parse_target(&target_entry.value, target_entry.line)?;
    let backend = match cfg.get("run", "backend") {
        Some(e) => parse_backend(&e.value, e.line)?,
        None => BackendKind::Lift,
    };
    let loss = match cfg.get("run", "loss") {
        Some(e) => match e.value.as_str() {
            "forward_kl" => LossKind::ForwardKl,
            "cpflow_nll" => LossKind::CpflowNll,
            other => {
                return Err(CfgError {
                    line: e.line,
                    msg: format!("unknown loss `{other}` (expected forward_kl or cpflow_nll)"),
                })
            }
        },
        None => match target {
            TargetSpec::D1(_) => LossKind::ForwardKl,
            TargetSpec::D2(Target2D::GammaMode { .. }) => LossKind::ForwardKl,
            TargetSpec::D2(_) => LossKind::CpflowNll,
        },
    };
    if loss == LossKind::CpflowNll && target.input_dim() != 2 {
        return Err(CfgError {
            line: target_entry.line,
            msg: "the change-of-variables loss needs a two-dimensional target".into(),
        });
    }
    if loss == LossKind::ForwardKl && matches!(target, TargetSpec::D2(Target2D::TwoSpirals { .. })) {
        return Err(CfgError {
            line: target_entry.line,
            msg: "two_spirals has no analytic density; use the cpflow_nll loss".into(),
        });
    }

    let mut rc = match (&target, loss) {
        (TargetSpec::D1(t), _) => RunConfig::ebm_1d(backend, *t, 0),
        (TargetSpec::D2(t), LossKind::CpflowNll) => RunConfig::cpflow_2d(backend, *t, 0),
        (TargetSpec::D2(t), LossKind::ForwardKl) => {
            let mut c = RunConfig::ebm_1d(backend, Target1D::gumbel_std(), 0);
            c.target = TargetSpec::D2(*t);
            c.icnn = conelift::IcnnConfig::ebm_2d();
            c
        }
    };
    rc.loss = loss;

    if let Some(v) = cfg.get_u64("run", "seed")? {
        rc.seed = v;
    }
    if let Some(v) = flags.seed {
        rc.seed = v;
    }
    if let Some(v) = cfg.get_u64("run", "iterations")? {
        rc.iterations = v;
    }
    if let Some(v) = cfg.get_usize("run", "batch")? {
        rc.batch_size = v.max(1);
    }
    if let Some(v) = cfg.get_f64("run", "lr")? {
        rc.adam.lr = v;
    }
    if let Some(v) = cfg.get_usize("run", "window")? {
        rc.window = v.max(2);
    }
    if let Some(v) = cfg.get_u64("run", "snapshot_stride")? {
        rc.snapshot_stride = v.max(1);
    }
    if let Some(v) = cfg.get_u64("run", "val_cadence")? {
        rc.val_cadence = v.max(1);
    }
    if let Some(v) = cfg.get_usize("run", "val_size")? {
        rc.val_size = v.max(1);
    }
    if let Some(v) = cfg.get_usize("run", "n_cond")? {
        rc.n_cond = v.max(1);
    }
    if let Some(v) = cfg.get_f64("run", "train_grid_step")? {
        rc.train_grid_step = v;
    }
    if let Some(v) = cfg.get_usize("run", "grid_nodes_2d")? {
        rc.grid_nodes_2d = v;
    }
    if let Some(v) = cfg.get_f64("run", "init_jitter_sigma")? {
        rc.init_jitter_sigma = v;
    }
    if let Some(v) = cfg.get_f64("run", "pre_readout_base")? {
        rc.pre_readout_base = Some(v);
    }
    if let Some(v) = cfg.get_usize("run", "sigma_replicas")? {
        rc.sigma_replicas = v.max(2);
    }
    if let Some(v) = cfg.get_bool("run", "record_backend_snapshots")? {
        rc.record_backend_snapshots = v;
    }
    if let Some(v) = cfg.get_u64("run", "backend_snapshot_stride")? {
        rc.backend_snapshot_stride = v.max(1);
    }
    if let Some(v) = cfg.get_usize("run", "probe_pairs")? {
        rc.probe_pairs = v.max(1);
    }
    if let Some(v) = cfg.get_u64("run", "cross_cov_dump_stride")? {
        rc.cross_cov_dump_stride = v;
    }
    let width = cfg.get_usize("run", "width")?;
    let layers = cfg.get_usize("run", "layers")?;
    let alpha = cfg.get_f64("run", "strong_convexity")?;
    if width.is_some() || layers.is_some() || alpha.is_some() {
        rc.icnn = conelift::IcnnConfig::new(
            rc.icnn.input_dim,
            width.unwrap_or(rc.icnn.hidden_width),
            layers.unwrap_or(rc.icnn.n_layers),
            alpha.unwrap_or(rc.icnn.strong_convexity),
        );
    }
    Ok(rc)
}

fn write(path: &Path, content: &str) -> Result<(), String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    std::fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}

fn seeds_list(flags: &Flags, default_count: u64) -> Vec<u64> {
    let base = flags.seed.unwrap_or(0);
    let count = flags.seeds.unwrap_or(default_count).max(1);
    (base..base + count).collect()
}

fn snapshot_store(rc: &RunConfig, snap: &conelift::training::Snapshot) -> ParamStore {
    let mut store = rc.icnn.param_template();
    store.unflatten_all(&snap.deployed);
    store.push(ParamTensor::new(
        "theta_tilde",
        vec![snap.theta_tilde.len()],
        snap.theta_tilde.clone(),
        false,
    ));
    store
}

fn cmd_train(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let rc = run_config(cfg, flags)?;
    let out = train(&rc);
    let name = format!("run_{}_{}_seed{}", rc.backend.name(), rc.target.name(), rc.seed);
    write(&flags.out.join(format!("{name}.csv")), &out.record.to_csv()).map_err(io_err)?;
    for snap in &out.record.snapshots {
        let store = snapshot_store(&rc, snap);
        write(
            &flags.out.join(format!("run_{}_iter_{}.csv", rc.seed, snap.iteration)),
            &store.to_snapshot_csv(),
        )
        .map_err(io_err)?;
    }
    for (it, matrix) in &out.record.cross_cov_dumps {
        let d = (matrix.len() as f64).sqrt() as usize;
        let mut text = String::new();
        for row in matrix.chunks(d) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write(&flags.out.join(format!("crosscov_{}_iter_{}.csv", rc.seed, it)), &text)
            .map_err(io_err)?;
    }
    if let TargetSpec::D1(t) = rc.target {
        let tv = tv_eval(&rc.icnn, &out.record.best.deployed, &t, &t.grid(0.005));
        if !flags.quiet {
            println!(
                "{name}: best val {:.6} @ iter {}, tv {:.6}",
                out.record.best.val_loss, out.record.best.iteration, tv
            );
        }
    } else if !flags.quiet {
        println!(
            "{name}: best val {:.6} @ iter {}",
            out.record.best.val_loss, out.record.best.iteration
        );
    }
    if let Some(msg) = &out.record.aborted {
        eprintln!("run aborted: {msg}");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_ablate(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let base = run_config(cfg, flags)?;
    let TargetSpec::D1(target) = base.target else {
        return Err(CfgError { line: 0, msg: "the ablation runs on a 1D target".into() });
    };
    let iterations = cfg.get_u64("ablate", "iterations")?.unwrap_or(base.iterations);
    let include_pgd = cfg.get_bool("ablate", "include_pgd")?.unwrap_or(true);
    let seeds = seeds_list(flags, 3);
    let rows = ablate(target, &seeds, iterations, include_pgd, |backend, seed| {
        let mut rc = base.clone();
        rc.backend = backend;
        rc.seed = seed;
        rc
    });
    write(&flags.out.join("ablate.csv"), &ablate_csv(&rows)).map_err(io_err)?;
    if !flags.quiet {
        for r in &rows {
            println!(
                "{:<18} seed {}: avg ||S||_F (shoulder) {:?}, tv {:.4}",
                r.backend.name(),
                r.seed,
                r.avg_frob_shoulder,
                r.tv
            );
        }
    }
    Ok(0)
}

fn cmd_sde(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let mut sc = SdeConfig::default();
    if let Some(v) = cfg.get_f64("sde", "w0")? {
        sc.w0 = v;
    }
    if let Some(v) = cfg.get_f64("sde", "ws")? {
        sc.ws = v;
    }
    if let Some(v) = cfg.get_usize("sde", "replicates")? {
        sc.replicates = v;
    }
    if let Some(v) = cfg.get_u64("sde", "max_steps")? {
        sc.max_steps = v;
    }
    if let Some(v) = cfg.get_f64("sde", "dt")? {
        sc.dt = v;
    }
    if let Some(v) = cfg.get_f64("sde", "sigma_obj")? {
        sc.sigma_obj = v;
    }
    if let Some(v) = cfg.get_f64_list("sde", "sigma_jac_grid")? {
        sc.sigma_jac_grid = v;
    }
    if let Err(msg) = sc.validate() {
        return Err(CfgError { line: 0, msg });
    }
    let seed = flags.seed.or(cfg.get_u64("run", "seed")?).unwrap_or(0);
    let results = simulate(&sc, seed);
    write(&flags.out.join("sde.csv"), &results_csv(&results)).map_err(io_err)?;
    if !flags.quiet {
        for r in &results {
            println!(
                "sigma_jac {:.4}: {} escapes, rate {:.4}, mean fpt {:.1}, envelope {:.1}",
                r.sigma_jac, r.escapes, r.escape_rate, r.mean_fpt, r.envelope
            );
        }
    }
    Ok(0)
}

fn cmd_sweep(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let base = run_config(cfg, flags)?;
    let target_names = cfg
        .get_str_list("sweep", "targets")
        .unwrap_or_else(|| vec![base.target.name()]);
    let seeds = seeds_list(flags, 5);
    let mut failed = false;
    for name in &target_names {
        let line = cfg.get("sweep", "targets").map(|e| e.line).unwrap_or(0);
        let target = parse_target(name, line)?;
        let metric = match target {
            TargetSpec::D1(_) => SweepMetric::TvToTarget,
            TargetSpec::D2(_) => SweepMetric::BestValLoss,
        };
        let result = paired_sweep(
            &[BackendKind::Lift, BackendKind::DirectSoftplus],
            &seeds,
            metric,
            |backend, seed| {
                let mut rc = match target {
                    TargetSpec::D1(t) => {
                        let mut c = base.clone();
                        c.target = TargetSpec::D1(t);
                        c
                    }
                    TargetSpec::D2(t) => RunConfig::cpflow_2d(backend, t, seed),
                };
                rc.backend = backend;
                rc.seed = seed;
                rc
            },
        );
        failed |= result.runs.iter().any(|r| r.output.record.aborted.is_some());
        let metric_name = match metric {
            SweepMetric::TvToTarget => "tv",
            SweepMetric::BestValLoss => "best_val_loss",
        };
        write(
            &flags.out.join(format!("sweep_{name}.csv")),
            &sweep_csv(&result, metric_name),
        )
        .map_err(io_err)?;
        if !flags.quiet {
            for (b, m) in &result.medians {
                println!("{name}: {} median {metric_name} {m:.4}", b.name());
            }
        }
    }
    Ok(if failed { 3 } else { 0 })
}

fn cmd_capacity(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let mut base = run_config(cfg, flags)?;
    let TargetSpec::D1(target) = base.target else {
        return Err(CfgError { line: 0, msg: "the capacity comparison runs on a 1D target".into() });
    };
    // jumbo nets: keep the normalization grid and validation affordable
    base.train_grid_step = base.train_grid_step.max(0.05);
    base.batch_size = base.batch_size.min(64);
    base.val_cadence = base.val_cadence.max(100);
    base.snapshot_stride = base.snapshot_stride.max(200);
    let iterations = cfg.get_u64("capacity", "iterations")?.unwrap_or(400);
    let seeds = seeds_list(flags, 3);
    let result = capacity(target, &seeds, iterations, |backend, seed| {
        let mut rc = base.clone();
        rc.backend = backend;
        rc.seed = seed;
        rc
    });
    write(&flags.out.join("capacity.csv"), &capacity_csv(&result)).map_err(io_err)?;
    if !flags.quiet {
        println!(
            "widened params {} vs lift params {} (width {})",
            result.widened_params, result.lift_params, result.lift_width
        );
        for (arm, m) in &result.medians {
            println!("{arm}: median tv {m:.4}");
        }
    }
    Ok(0)
}

fn cmd_landscape(cfg: &Config, flags: &Flags) -> Result<i32, CfgError> {
    cfg.reject_unknown(&ALL_KEYS)?;
    let base = run_config(cfg, flags)?;
    let resolution = cfg.get_usize("landscape", "resolution")?.unwrap_or(41);
    let half_extent = cfg.get_f64("landscape", "half_extent")?.unwrap_or(1.5);
    let with_lifted = cfg.get_bool("landscape", "with_lifted")?.unwrap_or(true);
    let random_axes = match cfg.get("landscape", "axes") {
        None => false,
        Some(e) => match e.value.as_str() {
            "adaptive" => false,
            "random" => true,
            other => {
                return Err(CfgError {
                    line: e.line,
                    msg: format!("unknown axes mode `{other}` (expected adaptive or random)"),
                })
            }
        },
    };
    let seed = base.seed;
    let pair = landscape_pair_with_axes(seed, resolution, half_extent, with_lifted, random_axes, |backend, s| {
        let mut rc = base.clone();
        rc.backend = backend;
        rc.seed = s;
        rc
    })
    .map_err(|e| CfgError { line: 0, msg: e.to_string() })?;

    write(
        &flags.out.join("landscape_constrained.csv"),
        &pair.constrained_grid.to_csv(),
    )
    .map_err(io_err)?;
    let fmt = |rows: &[(u64, [f64; 2])], m: &str| -> String {
        let its: Vec<u64> = rows.iter().map(|(i, _)| *i).collect();
        let cs: Vec<[f64; 2]> = rows.iter().map(|(_, c)| *c).collect();
        trajectory_csv(m, &its, &cs)
    };
    let mut traj = String::from("method,iteration,a,b\n");
    traj.push_str(&fmt(&pair.lift_trajectory, "lift"));
    traj.push_str(&fmt(&pair.direct_trajectory, "direct_softplus"));
    write(&flags.out.join("trajectory_constrained.csv"), &traj).map_err(io_err)?;
    if let Some(grid) = &pair.lifted_grid {
        write(&flags.out.join("landscape_lifted.csv"), &grid.to_csv()).map_err(io_err)?;
        let mut t = String::from("method,iteration,a,b\n");
        t.push_str(&fmt(&pair.lifted_trajectory, "lift"));
        write(&flags.out.join("trajectory_lifted.csv"), &t).map_err(io_err)?;
    }
    if !flags.quiet {
        println!(
            "constrained grid: {}x{} cells, {:.1}% finite, anchor loss {:?}",
            resolution,
            resolution,
            100.0 * pair.constrained_grid.finite_fraction(),
            pair.constrained_grid.center_cell()
        );
    }
    Ok(0)
}

fn io_err(msg: String) -> CfgError {
    CfgError { line: 0, msg }
}

fn real_main() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first().cloned() else {
        eprintln!("{}", usage());
        return 2;
    };
    let flags = match parse_flags(&args[1..]) {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("{msg}\n{}", usage());
            return 2;
        }
    };
    let text = match std::fs::read_to_string(&flags.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", flags.config.display());
            return 2;
        }
    };
    let cfg = match Config::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}:{}: {}", flags.config.display(), e.line, e.msg);
            return 2;
        }
    };
    let result = match command.as_str() {
        "train" => cmd_train(&cfg, &flags),
        "ablate" => cmd_ablate(&cfg, &flags),
        "sde" => cmd_sde(&cfg, &flags),
        "sweep" => cmd_sweep(&cfg, &flags),
        "capacity" => cmd_capacity(&cfg, &flags),
        "landscape" => cmd_landscape(&cfg, &flags),
        other => {
            eprintln!("unknown command `{other}`\n{}", usage());
            return 2;
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if e.line > 0 {
                eprintln!("{}:{}: {}", flags.config.display(), e.line, e.msg);
            } else {
                eprintln!("{}: {}", flags.config.display(), e.msg);
            }
            2
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(real_main() as u8)
}
