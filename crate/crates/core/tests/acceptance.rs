//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values. Run with
//! `cargo test -p conelift --test acceptance -- --nocapture`.

use std::sync::OnceLock;
use std::time::Instant;

use conelift::ad::{hvp, Dual, Tape, Var};
use conelift::adam::{AdamHyper, AdamState};
use conelift::backends::{admm_penalty_grad, admm_update, AdmmSchedule, AdmmState, BackendKind};
use conelift::diagnostics::{shoulder_escape_stats, shoulder_threshold, TrailingWindow};
use conelift::experiments::{
    ablate, capacity, landscape_pair, paired_sweep, SweepMetric, SweepResult,
};
use conelift::icnn::{energy, folded_normal_init, leaf_vars, IcnnConfig};
use conelift::landscape::{build_plane_random, evaluate_grid, quadratic_fit_residual};
use conelift::rng::substream;
use conelift::sde::{simulate, spearman, SdeConfig};
use conelift::targets::{Target1D, Target2D};
use conelift::training::{forward_kl_value, train, RunConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn hms(t: Instant) -> String {
    format!("{:.1}s", t.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------
// criterion 1: autodiff correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_autodiff_gradients_and_hessian_symmetry() {
    let t0 = Instant::now();
    let mut rng = substream(100, "accept-ad");
    let mut max_rel = 0.0f64;
    for net in 0..100 {
        let input_dim = 1 + (net % 2);
        let width = 2 + net % 6;
        let cfg = IcnnConfig::new(input_dim, width, 2 + net % 2, 0.1);
        let store = folded_normal_init(&cfg, &mut rng);
        let xs: Vec<f64> = (0..3 * input_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let loss_of = |s: &conelift::ParamStore| -> f64 {
            let mut tape = Tape::<f64>::new();
            let vars = leaf_vars(&mut tape, &cfg, s);
            let x = tape.leaf_f64s(vec![3, input_dim], &xs);
            let e = energy(&mut tape, &cfg, &vars, x);
            let sq = tape.square(e);
            let root = tape.sum(sq);
            tape.value(root).item()
        };

        let mut tape = Tape::<f64>::new();
        let vars = leaf_vars(&mut tape, &cfg, &store);
        let x = tape.leaf_f64s(vec![3, input_dim], &xs);
        let e = energy(&mut tape, &cfg, &vars, x);
        let sq = tape.square(e);
        let root = tape.sum(sq);
        let grads = tape.backward(root);

        let h = 1e-5;
        let leaves: Vec<(String, Var)> = store
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let var = match t.name.chars().next().unwrap() {
                    'w' => vars.w[t.name[1..].parse::<usize>().unwrap() - 1],
                    'u' => vars.u[t.name[1..].parse::<usize>().unwrap()],
                    _ => vars.c[t.name[1..].parse::<usize>().unwrap()],
                };
                let _ = i;
                (t.name.clone(), var)
            })
            .collect();
        for (name, var) in &leaves {
            let len = store.get(name).unwrap().len();
            let got = grads.wrt(*var, len);
            for i in 0..len {
                let mut plus = store.clone();
                plus.get_mut(name).unwrap().data[i] += h;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap().data[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (got[i] - fd).abs() / got[i].abs().max(fd.abs()).max(1e-4);
                max_rel = max_rel.max(rel);
                assert!(rel < 1e-5, "net {net} {name}[{i}]: {} vs {fd}", got[i]);
            }
        }
    }

    // Hessian symmetry via forward-over-reverse on 100 random 2D potentials
    let mut max_asym = 0.0f64;
    for k in 0..100 {
        let cfg = IcnnConfig::new(2, 3 + k % 5, 2 + k % 2, 0.05);
        let store = folded_normal_init(&cfg, &mut rng);
        let x0 = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let f = |tape: &mut Tape<Dual>, x: Var| -> Var {
            let vars = leaf_vars(tape, &cfg, &store);
            let xm = tape.reshape(x, vec![1, 2]);
            let e = energy(tape, &cfg, &vars, xm);
            tape.reshape(e, vec![])
        };
        let col1 = hvp(f, &x0, &[1.0, 0.0]);
        let col2 = hvp(f, &x0, &[0.0, 1.0]);
        let asym = (col1[1] - col2[0]).abs();
        max_asym = max_asym.max(asym);
        assert!(asym < 1e-8, "net {k}: H12 {} vs H21 {}", col1[1], col2[0]);
    }
    println!(
        "criterion 1 PASS: max FD relative error {max_rel:.2e} (< 1e-5), \
         max Hessian asymmetry {max_asym:.2e} (< 1e-8) [{}]",
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 2: structural zeros of the four-architecture ablation
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_ablation_structural_zeros() {
    let t0 = Instant::now();
    let rows = ablate(Target1D::gumbel_std(), &[0, 1, 2], 3000, true, |backend, seed| {
        RunConfig::ebm_1d(backend, Target1D::gumbel_std(), seed)
    });
    for r in &rows {
        match r.backend {
            BackendKind::DirectSoftplus | BackendKind::DirectWithBias | BackendKind::Pgd => {
                assert!(r.shoulder_iterations > 0 || r.avg_frob_shoulder.is_none());
                if let Some(v) = r.avg_frob_shoulder {
                    assert_eq!(
                        v.to_bits(),
                        0.0f64.to_bits(),
                        "{} seed {} must read exactly 0.0",
                        r.backend.name(),
                        r.seed
                    );
                }
                assert_eq!(r.max_frob.to_bits(), 0.0f64.to_bits(), "{}", r.backend.name());
            }
            BackendKind::Lift => {
                let v = r.avg_frob_shoulder.expect("lift enters the shoulder");
                assert!(v > 0.0, "lift seed {} read {v}", r.seed);
            }
            BackendKind::BodyNoBias => {
                if let Some(v) = r.avg_frob_shoulder {
                    assert_eq!(v.to_bits(), 0.0f64.to_bits());
                }
                assert_eq!(r.max_frob.to_bits(), 0.0f64.to_bits());
            }
            _ => unreachable!(),
        }
    }
    let lifts: Vec<f64> = rows
        .iter()
        .filter(|r| r.backend == BackendKind::Lift)
        .map(|r| r.avg_frob_shoulder.unwrap())
        .collect();
    let lifts: Vec<String> = lifts.iter().map(|v| format!("{v:.3e}")).collect();
    println!(
        "criterion 2 PASS: deletions read bitwise 0.0; lift shoulder-averaged \
         ||S||_F = {lifts:?} > 0 on 3 seeds [{}]",
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 3: O(T^-1/2) estimator consistency on decoupled streams
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_decoupled_streams_decay_slope() {
    let t0 = Instant::now();
    let mut rng = substream(101, "accept-decay");
    let windows = [64usize, 256, 1024, 4096];
    let reps = [200usize, 120, 48, 12];
    let mut mags = Vec::new();
    for (&t, &r) in windows.iter().zip(&reps) {
        let mut w = TrailingWindow::new(t, 1);
        let mut acc = 0.0;
        for _ in 0..r {
            for _ in 0..t {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                w.record(&[a], &[b]);
            }
            acc += w.scalars().unwrap().0;
        }
        mags.push(acc / r as f64);
    }
    let xs: Vec<f64> = windows.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = mags.iter().map(|&m| m.ln()).collect();
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxy: f64 = xs.iter().zip(&ys).map(|(&a, &b)| a * b).sum();
    let sxx: f64 = xs.iter().map(|&a| a * a).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(
        (-0.7..=-0.3).contains(&slope),
        "fitted log-log slope {slope} outside [-0.7, -0.3]"
    );
    println!("criterion 3 PASS: fitted slope {slope:.3} in [-0.7, -0.3] [{}]", hms(t0));
}

// ---------------------------------------------------------------------------
// criterion 4: escape SDE
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_sde_escape_statistics() {
    let t0 = Instant::now();
    let cfg = SdeConfig::default();
    assert_eq!(cfg.w0, -16.0);
    assert_eq!(cfg.ws, -13.82);
    assert_eq!(cfg.replicates, 256);
    assert_eq!(cfg.max_steps, 20_000);
    let results = simulate(&cfg, 0);

    assert_eq!(results[0].sigma_jac, 0.0);
    assert_eq!(results[0].escapes, 0, "no escapes without the unattenuated channel");

    let rates: Vec<f64> = results.iter().map(|r| r.escape_rate).collect();
    let grid: Vec<f64> = results.iter().map(|r| r.sigma_jac).collect();
    let rho = spearman(&rates, &grid);
    assert!(rho >= 0.95, "Spearman {rho}");

    let qualified: Vec<_> = results.iter().filter(|r| r.escapes >= 10).collect();
    assert!(qualified.len() >= 2, "need at least two cells with >= 10 escapes");
    for pair in qualified.windows(2) {
        assert!(
            pair[0].mean_fpt > pair[1].mean_fpt,
            "mean FPT must strictly decrease: {} -> {}",
            pair[0].mean_fpt,
            pair[1].mean_fpt
        );
    }
    for r in &qualified {
        assert!(
            r.mean_fpt <= r.envelope,
            "sigma {}: FPT {} above envelope {}",
            r.sigma_jac,
            r.mean_fpt,
            r.envelope
        );
    }
    println!(
        "criterion 4 PASS: zero escapes at 0, Spearman {rho:.3}, FPTs {:?} under envelopes {:?} [{}]",
        qualified.iter().map(|r| r.mean_fpt.round()).collect::<Vec<_>>(),
        qualified.iter().map(|r| r.envelope.round()).collect::<Vec<_>>(),
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 5: trace positivity of PSD products
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_psd_trace_positivity() {
    let t0 = Instant::now();
    let mut rng = substream(102, "accept-psd");
    let dim = 6usize;
    let mut min_tr = f64::INFINITY;
    for _ in 0..1000 {
        let gram = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let a: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(rng)).collect();
            let mut out = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for k in 0..dim {
                        acc += a[i * dim + k] * a[j * dim + k];
                    }
                    out[i * dim + j] = acc;
                }
            }
            out
        };
        let v = gram(&mut rng);
        let h = gram(&mut rng);
        let mut tr = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                tr += v[i * dim + j] * h[j * dim + i];
            }
        }
        min_tr = min_tr.min(tr);
        assert!(tr >= -1e-12, "tr(VH) = {tr}");
    }
    println!("criterion 5 PASS: min tr(VH) = {min_tr:.3e} >= -1e-12 over 1000 pairs [{}]", hms(t0));
}

// ---------------------------------------------------------------------------
// criteria 6 and 7 share the five-seed Gumbel sweep
// ---------------------------------------------------------------------------

fn gumbel_sweep() -> &'static SweepResult {
    static SWEEP: OnceLock<SweepResult> = OnceLock::new();
    SWEEP.get_or_init(|| {
        paired_sweep(
            &[BackendKind::Lift, BackendKind::DirectSoftplus],
            &[0, 1, 2, 3, 4],
            SweepMetric::TvToTarget,
            |backend, seed| RunConfig::ebm_1d(backend, Target1D::gumbel_std(), seed),
        )
    })
}

#[test]
fn criterion_06_gumbel_sweep_median_tv() {
    let t0 = Instant::now();
    let sweep = gumbel_sweep();
    let median_of = |b: BackendKind| -> f64 {
        sweep.medians.iter().find(|(k, _)| *k == b).unwrap().1
    };
    let lift = median_of(BackendKind::Lift);
    let direct = median_of(BackendKind::DirectSoftplus);
    for run in &sweep.runs {
        assert!(run.output.record.aborted.is_none(), "{} seed {} aborted", run.backend.name(), run.seed);
        // validation descends over training (first validation above the best)
        let first_val = run
            .output
            .record
            .rows
            .iter()
            .find_map(|r| r.val_loss)
            .unwrap();
        assert!(run.output.record.best.val_loss <= first_val);
        // deployed weights stay convex wherever logged
        assert!(
            run.output.record.max_probe_violation <= 1e-9,
            "probe violation {}",
            run.output.record.max_probe_violation
        );
    }
    assert!(lift < direct, "lift median {lift} vs direct median {direct}");
    assert!(lift < 0.1, "lift median TV {lift}");
    println!(
        "criterion 6 PASS: median TV lift {lift:.4} < direct {direct:.4} and < 0.1 [{}]",
        hms(t0)
    );
}

#[test]
fn criterion_07_shoulder_escape_statistics() {
    let t0 = Instant::now();
    let sweep = gumbel_sweep();
    let threshold = shoulder_threshold();
    let pooled = |b: BackendKind| -> (u64, u64, Vec<f64>) {
        let mut exits = 0;
        let mut at_risk = 0;
        let mut dwell = Vec::new();
        for run in sweep.runs.iter().filter(|r| r.backend == b) {
            let snaps: Vec<Vec<f64>> = run
                .output
                .record
                .snapshots
                .iter()
                .map(|s| s.theta_tilde.clone())
                .collect();
            let st = shoulder_escape_stats(&snaps, threshold);
            exits += st.exits;
            at_risk += st.at_risk;
            dwell.extend(st.dwell_per_coord);
        }
        (exits, at_risk, dwell)
    };
    let (le, la, ld) = pooled(BackendKind::Lift);
    let (de, da, dd) = pooled(BackendKind::DirectSoftplus);
    assert!(la > 0 && da > 0, "both methods must visit the shoulder");
    let lift_rate = le as f64 / la as f64;
    let direct_rate = de as f64 / da as f64;
    assert!(
        lift_rate >= 3.0 * direct_rate,
        "leave rates: lift {lift_rate} vs direct {direct_rate}"
    );
    let lift_dwell = ld.iter().sum::<f64>() / ld.len() as f64;
    let direct_dwell = dd.iter().sum::<f64>() / dd.len() as f64;
    assert!(
        lift_dwell < direct_dwell,
        "dwell fractions: lift {lift_dwell} vs direct {direct_dwell}"
    );
    println!(
        "criterion 7 PASS: pooled leave-rate lift {lift_rate:.4} >= 3x direct {direct_rate:.5} \
         (ratio {:.1}), dwell lift {lift_dwell:.3} < direct {direct_dwell:.3} [{}]",
        lift_rate / direct_rate,
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 8: 2D convex potential flow, ten paired seeds
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_cpflow_eight_gaussians_nll_gap() {
    let t0 = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let sweep = paired_sweep(
        &[BackendKind::Lift, BackendKind::DirectSoftplus],
        &seeds,
        SweepMetric::BestValLoss,
        |backend, seed| {
            let cfg = RunConfig::cpflow_2d(backend, Target2D::eight_gaussians_default(), seed);
            assert_eq!(cfg.iterations, 6000);
            assert_eq!(cfg.batch_size, 64);
            cfg
        },
    );
    for run in &sweep.runs {
        assert!(run.output.record.aborted.is_none(), "{} seed {} aborted", run.backend.name(), run.seed);
        assert!(run.output.record.max_probe_violation <= 1e-9);
    }
    let median_of = |b: BackendKind| -> f64 {
        sweep.medians.iter().find(|(k, _)| *k == b).unwrap().1
    };
    let lift = median_of(BackendKind::Lift);
    let direct = median_of(BackendKind::DirectSoftplus);
    assert!(
        lift < direct - 1.0,
        "median NLL gap too small: lift {lift} vs direct {direct}"
    );
    println!(
        "criterion 8 PASS: median test NLL lift {lift:.3} vs direct {direct:.3}, gap {:.2} nats [{}]",
        direct - lift,
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 9: capacity ablation
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_capacity_widened_direct_vs_lift() {
    let t0 = Instant::now();
    let result = capacity(Target1D::gumbel_std(), &[0, 1, 2], 400, |backend, seed| {
        let mut cfg = RunConfig::ebm_1d(backend, Target1D::gumbel_std(), seed);
        cfg.train_grid_step = 0.05;
        cfg.batch_size = 64;
        cfg.val_cadence = 100;
        cfg.snapshot_stride = 200;
        cfg
    });
    let ratio = result.lift_params as f64 / result.widened_params as f64;
    assert!((0.9..=1.1).contains(&ratio), "parameter ratio {ratio}");
    let widened = result.medians.iter().find(|(a, _)| a == "widened_direct").unwrap().1;
    let lift = result.medians.iter().find(|(a, _)| a == "lift").unwrap().1;
    assert!(lift < widened, "median TV lift {lift} vs widened {widened}");
    println!(
        "criterion 9 PASS: median TV lift {lift:.4} < widened-direct {widened:.4} \
         at matched budget ({} vs {} params) [{}]",
        result.lift_params, result.widened_params, hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 10: structural identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_structural_identities() {
    let t0 = Instant::now();

    // bitwise permutation invariance of the emission
    {
        use conelift::hypernet::{emit_values, HyperConfig};
        let cfg = HyperConfig::new(2, 9);
        let mut store = cfg.param_template();
        let mut rng = substream(103, "accept-perm");
        for t in store.tensors_mut() {
            for v in t.data.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.3 * z;
            }
        }
        for &n in &[2usize, 4, 8] {
            let pts: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let base = emit_values(&cfg, &store, &pts);
            for _ in 0..100 {
                let mut idx: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                let permuted: Vec<f64> =
                    idx.iter().flat_map(|&i| pts[2 * i..2 * i + 2].to_vec()).collect();
                let out = emit_values(&cfg, &store, &permuted);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&base), bits(&out));
            }
        }
    }

    // lift collapses to direct softplus: bit-identical pre-readout gradients
    {
        use conelift::backends::BackendState;
        use conelift::training::forward_kl_loss;
        let icnn = IcnnConfig::new(1, 8, 3, 0.0);
        let seed = 17;
        let mut lift = BackendState::init(BackendKind::Lift, icnn, &[16, 16, 16], seed, 0.0, None);
        let mut direct =
            BackendState::init(BackendKind::DirectSoftplus, icnn, &[16, 16, 16], seed, 0.0, None);
        let d = lift.flagged_len();
        lift.train.get_mut("b").unwrap().data = vec![0.0; d];
        direct.train.get_mut("theta_tilde").unwrap().data = vec![0.0; d];
        let target = Target1D::gumbel_std();
        let grid = target.grid(0.05);
        let mut brng = substream(seed, "accept-collapse");
        let batch = target.sample(64, &mut brng);
        let grad_bits = |st: &BackendState, cond: Option<&[f64]>, leaf: &str| -> Vec<u64> {
            let mut tape = Tape::<f64>::new();
            let m = st.materialize(&mut tape, cond);
            let b = tape.leaf_f64s(vec![batch.len(), 1], &batch);
            let g = tape.leaf_f64s(vec![grid.n_points(), 1], grid.flat_points());
            let loss = forward_kl_loss(&mut tape, &icnn, &m.vars, b, g, &grid);
            let grads = tape.backward(loss);
            let var = m.leaves.iter().find(|(n, _)| n == leaf).unwrap().1;
            grads.wrt(var, d).iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(
            grad_bits(&lift, Some(&[0.7]), "b"),
            grad_bits(&direct, None, "theta_tilde")
        );
    }

    // convexity probe stays non-positive for every backend's deployed weights
    {
        let mut worst = f64::NEG_INFINITY;
        for kind in [
            BackendKind::DirectSoftplus,
            BackendKind::DirectWithBias,
            BackendKind::BodyNoBias,
            BackendKind::Lift,
            BackendKind::Pgd,
            BackendKind::Admm(AdmmSchedule::FixedRho(10.0)),
        ] {
            let mut cfg = RunConfig::ebm_1d(kind, Target1D::gumbel_std(), 5);
            cfg.iterations = 300;
            cfg.val_cadence = 50;
            cfg.val_size = 256;
            cfg.train_grid_step = 0.02;
            let out = train(&cfg);
            assert!(out.record.aborted.is_none(), "{} aborted", kind.name());
            worst = worst.max(out.record.max_probe_violation);
            assert!(
                out.record.max_probe_violation <= 1e-9,
                "{}: probe violation {}",
                kind.name(),
                out.record.max_probe_violation
            );
        }
        println!("  (probe worst violation {worst:.2e})");
    }

    // ADMM quadratic toy converges under all three penalty schedules
    {
        for schedule in [
            AdmmSchedule::FixedRho(10.0),
            AdmmSchedule::residual_balance_default(),
            AdmmSchedule::doubling_default(),
        ] {
            let hp = AdamHyper::with_lr(0.05);
            let mut theta = vec![0.0];
            let mut adam = AdamState::new(1);
            let mut st = AdmmState::new(&theta, schedule);
            let mut ok = false;
            for _ in 0..500 {
                let mut g = vec![theta[0] - 2.0];
                g[0] += admm_penalty_grad(&st, &theta)[0];
                adam.step(&hp, &mut theta, &g);
                admm_update(&mut st, &theta);
                if (theta[0] - 2.0).abs() < 1e-4 && (st.z[0] - 2.0).abs() < 1e-4 {
                    ok = true;
                    break;
                }
            }
            assert!(ok, "{} did not reach 2 within 1e-4 in 500 steps", schedule.name());
        }
    }

    println!(
        "criterion 10 PASS: permutation invariance bitwise, lift collapse bitwise, \
         probes <= 1e-9 on all six backends, ADMM toy converged on all schedules [{}]",
        hms(t0)
    );
}

// ---------------------------------------------------------------------------
// criterion 11: landscape module
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_landscape_slices() {
    let t0 = Instant::now();

    // exact paraboloid fit on a synthetic quadratic loss
    {
        let p = 10usize;
        let anchor: Vec<f64> = (0..p).map(|i| 0.1 * i as f64 - 0.4).collect();
        let mut rng = substream(104, "accept-land");
        let plane = build_plane_random(&anchor, &[(0, p)], &mut rng);
        let quad = |x: &[f64]| -> Option<f64> {
            Some(
                x.iter()
                    .enumerate()
                    .map(|(i, &v)| (0.3 + 0.05 * i as f64) * v * v - 0.1 * v)
                    .sum(),
            )
        };
        let grid = evaluate_grid(&plane, 41, 1.5, quad);
        let resid = quadratic_fit_residual(&grid);
        assert!(resid < 1e-10, "paraboloid residual {resid}");
        assert_eq!(grid.center_cell().unwrap().to_bits(), quad(&anchor).unwrap().to_bits());
    }

    // constrained-space plane from the converged Gumbel pair
    let target = Target1D::gumbel_std();
    let base = |backend: BackendKind, seed: u64| RunConfig::ebm_1d(backend, target, seed);
    let pair = landscape_pair(0, 41, 1.5, false, base).expect("plane construction");
    assert!(pair.constrained_plane.orthogonality < 1e-10);
    assert!(!pair.constrained_plane.random_axis2);
    let finite = pair.constrained_grid.finite_fraction();
    assert!(finite >= 0.9, "finite fraction {finite}");

    // the anchor cell reproduces the anchor's evaluation loss exactly
    let cfg = base(BackendKind::Lift, 0);
    let lift_out = train(&cfg);
    let mut vrng = substream(0, "val");
    let eval_points = cfg.target.sample_flat(cfg.val_size, &mut vrng);
    let grid = target.grid(cfg.train_grid_step);
    let anchor_loss =
        forward_kl_value(&cfg.icnn, &lift_out.record.best.deployed, &eval_points, &grid);
    assert_eq!(
        pair.constrained_grid.center_cell().unwrap().to_bits(),
        anchor_loss.to_bits(),
        "anchor cell must equal the anchor loss exactly"
    );
    // trajectories project into the plane with the anchor at the origin
    let last = pair.lift_trajectory.last().unwrap();
    let _ = last;

    println!(
        "criterion 11 PASS: paraboloid residual < 1e-10, anchor cell exact, \
         41x41 grid {:.1}% finite [{}]",
        100.0 * finite,
        hms(t0)
    );
}
