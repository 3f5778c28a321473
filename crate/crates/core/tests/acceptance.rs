//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed
//! under `cargo test`. Criterion 10 needs recorded datasets and reports
//! SKIP unless `TRAJGAME_HIGHD_TRACKS` / `TRAJGAME_HEE_TRACKS` name track
//! CSVs (optional `TRAJGAME_HIGHD_GEOMETRY` / `TRAJGAME_HEE_GEOMETRY` give
//! road geometry JSON; column mappings come from `TRAJGAME_CONFIG`).

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use trajgame::game::{GameParams, PotentialGame, QuadraticGame};
use trajgame::implicit::{backward_one, BackwardOptions, JacobianMethod, SubspaceFamily};
use trajgame::io::{filter_merge_scenes, import_tracks_file, Config, TrackFormat};
use trajgame::par::{self, ExecMode};
use trajgame::pipeline::{
    cross_validate, decision_transfer, evaluate, evaluate_constant_velocity, expand_compact, format_table,
    prepare_scenes, refinement_accuracy, synth_generate, train_full, train_refinement, LabeledScene, ModelConfig,
    OptimizerKind, ParamPreset, Scene, SynthConfig, TableRow, TglModel, TrainConfig,
};
use trajgame::scenarios::{
    invert_pedestrian_preferences, DrivingConfig, DrivingScenario, PedestrianScenario, RoadGeometry, HIGHWAY_CAR,
};
use trajgame::solver::{maximize_on_polytope, verify_local_ne, Polytope, SolveOptions, SolveReport};

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { verdict: if pass { Verdict::Pass } else { Verdict::Fail }, detail }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn solve_interior<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    opts: &SolveOptions,
    min_slack: f64,
) -> Option<SolveReport> {
    let r = maximize_on_polytope(game, theta, poly, opts).ok()?;
    (r.converged() && r.active_constraints.is_empty() && poly.min_slack(r.argmax.as_slice()) > min_slack).then_some(r)
}

/// A random driving instance with an interior maximizer on some subspace.
fn interior_driving<R: Rng>(rng: &mut R, horizon: usize, opts: &SolveOptions) -> (DrivingScenario, GameParams, usize, SolveReport) {
    loop {
        let (sc, theta) = driving(rng, horizon);
        let found = par::map_range(ExecMode::Parallel, sc.len(), |k| {
            solve_interior(sc.game_on(k), &theta, SubspaceFamily::polytope(&sc, k), opts, 1e-4)
        });
        let hits: Vec<(usize, SolveReport)> = found.into_iter().enumerate().filter_map(|(k, r)| Some((k, r?))).collect();
        if !hits.is_empty() {
            let (k, r) = hits[rng.random_range(0..hits.len())].clone();
            return (sc, theta, k, r);
        }
    }
}

fn interior_pedestrian<R: Rng>(rng: &mut R, opts: &SolveOptions) -> (PedestrianScenario, GameParams, usize, SolveReport) {
    loop {
        let (sc, theta) = pedestrian(rng);
        let k = rng.random_range(0..sc.len());
        if let Some(r) = solve_interior(sc.game_on(k), &theta, SubspaceFamily::polytope(&sc, k), opts, 1e-4) {
            return (sc, theta, k, r);
        }
    }
}

/// Central differences of the solver's argmax in `θ`, solved cold.
fn solver_fd<G: PotentialGame + ?Sized>(
    game: &G,
    theta: &GameParams,
    poly: &Polytope,
    opts: &SolveOptions,
    h: f64,
) -> Option<nalgebra::DMatrix<f64>> {
    let n = game.action_dim();
    let cols = par::map_range(ExecMode::Parallel, theta.len(), |j| {
        let s = h * (1.0 + theta[j].abs());
        let at = |sign: f64| {
            let mut th = theta.clone();
            th[j] += sign * s;
            let r = maximize_on_polytope(game, &th, poly, opts).ok()?;
            r.converged().then_some(r.argmax)
        };
        Some((at(1.0)? - at(-1.0)?) / (2.0 * s))
    });
    let mut m = nalgebra::DMatrix::zeros(n, theta.len());
    for (j, c) in cols.into_iter().enumerate() {
        m.set_column(j, &c?);
    }
    Some(m)
}

fn potential_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let draws = 10_000;
    let check = |game: &dyn PotentialGame, theta: &GameParams, poly: &Polytope, rng: &mut ChaCha8Rng| -> f64 {
        let a = interior_point(poly, rng);
        let i = rng.random_range(0..game.num_agents());
        let mut d = vec![0.0; a.len()];
        for j in game.agent_range(i) {
            d[j] = rng.random_range(-1.0..1.0);
        }
        let t = ray_extent(poly, a.as_slice(), &d);
        let t = if t.is_finite() { rng.random_range(0.0..1.0) * t } else { 1.0 };
        let b = DVector::from_fn(a.len(), |j, _| a[j] + t * d[j]);
        let du = game.utility(i, theta, &b).unwrap() - game.utility(i, theta, &a).unwrap();
        let dphi = game.potential(theta, &b).unwrap() - game.potential(theta, &a).unwrap();
        (du - dphi).abs() / (1.0 + du.abs())
    };
    let mut worst_ped: f64 = 0.0;
    let mut worst_drv: f64 = 0.0;
    for _ in 0..draws / 100 {
        let (sc, th) = pedestrian(&mut rng);
        for _ in 0..100 {
            let k = rng.random_range(0..sc.len());
            worst_ped = worst_ped.max(check(sc.game_on(k), &th, SubspaceFamily::polytope(&sc, k), &mut rng));
        }
        let (sc, th) = driving(&mut rng, 34);
        for _ in 0..100 {
            let k = rng.random_range(0..sc.len());
            worst_drv = worst_drv.max(check(sc.game_on(k), &th, SubspaceFamily::polytope(&sc, k), &mut rng));
        }
    }
    outcome(
        worst_ped <= 1e-9 && worst_drv <= 1e-9,
        format!("{draws} draws per scenario; worst |Δu−Δφ|/(1+|Δu|): pedestrian {worst_ped:.2e}, driving {worst_drv:.2e} (limit 1e-9)"),
    )
}

fn derivative_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = [[0.0f64; 3]; 2];
    for s in 0..2 {
        for _ in 0..100 {
            let (game, theta, a): (Box<dyn PotentialGame>, GameParams, DVector<f64>) = if s == 0 {
                let (sc, th) = pedestrian(&mut rng);
                let k = rng.random_range(0..sc.len());
                let a = interior_point(SubspaceFamily::polytope(&sc, k), &mut rng);
                (Box::new(sc.game_on(k).clone()), th, a)
            } else {
                let (sc, th) = driving(&mut rng, 34);
                let k = rng.random_range(0..sc.len());
                let a = interior_point(SubspaceFamily::polytope(&sc, k), &mut rng);
                (Box::new(sc.game_on(k).clone()), th, a)
            };
            let n = a.len();
            let g = game.potential_gradient(&theta, &a).unwrap();
            let g_fd = fd_gradient(|x| game.potential(&theta, x).unwrap(), &a);
            let h = game.potential_hessian(&theta, &a).unwrap();
            let h_fd = fd_jacobian(|x| game.potential_gradient(&theta, x).unwrap(), &a, n);
            let j = game.mixed_jacobian(&theta, &a).unwrap();
            let j_fd = fd_jacobian(|t| game.potential_gradient(t, &a).unwrap(), &theta, n);
            let e = [rel_err_vec(&g, &g_fd), rel_err(&h, &h_fd), rel_err(&j, &j_fd)];
            for q in 0..3 {
                worst[s][q] = worst[s][q].max(e[q]);
            }
        }
    }
    let limits = [1e-5, 1e-4, 1e-5];
    let pass = (0..2).all(|s| (0..3).all(|q| worst[s][q] <= limits[q]));
    outcome(
        pass,
        format!(
            "100 points per scenario; worst rel err ∇φ/H/J: pedestrian {:.1e}/{:.1e}/{:.1e}, driving {:.1e}/{:.1e}/{:.1e} (limits 1e-5/1e-4/1e-5)",
            worst[0][0], worst[0][1], worst[0][2], worst[1][0], worst[1][1], worst[1][2]
        ),
    )
}

fn implicit_jacobian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let opts = SolveOptions::default();
    let bopts = BackwardOptions::default();
    let mut counts = [0usize; 2];
    let mut worst = [0.0f64; 2];
    for i in 0..100 {
        let (ift, fd) = {
            let (sc, th, k, r) = interior_pedestrian(&mut rng, &opts);
            let poly = SubspaceFamily::polytope(&sc, k);
            let j = backward_one(sc.game_on(k), &th, poly, &r, &opts, &bopts).unwrap();
            (j, solver_fd(sc.game_on(k), &th, poly, &opts, 1e-4))
        };
        let e = fd.map_or(f64::INFINITY, |fd| rel_err(&ift.matrix, &fd));
        worst[0] = worst[0].max(e);
        counts[0] += (ift.method == JacobianMethod::InteriorIft && e <= 1e-3) as usize;
        let (ift, fd) = {
            let (sc, th, k, r) = interior_driving(&mut rng, 10, &opts);
            let poly = SubspaceFamily::polytope(&sc, k);
            let j = backward_one(sc.game_on(k), &th, poly, &r, &opts, &bopts).unwrap();
            (j, solver_fd(sc.game_on(k), &th, poly, &opts, 1e-4))
        };
        let e = fd.map_or(f64::INFINITY, |fd| rel_err(&ift.matrix, &fd));
        worst[1] = worst[1].max(e);
        counts[1] += (ift.method == JacobianMethod::InteriorIft && e <= 1e-3) as usize;
        let _ = i;
    }
    outcome(
        counts[0] >= 95 && counts[1] >= 95,
        format!(
            "within 1e-3: pedestrian {}/100 (worst {:.1e}), driving T=10 {}/100 (worst {:.1e}); need ≥95",
            counts[0], worst[0], counts[1], worst[1]
        ),
    )
}

fn boundary_gradient() -> Outcome {
    let game = QuadraticGame::scalar();
    let b = 0.5;
    let poly = Polytope::builder(1).bounds(0, -50.0, b).build(0, "clamp").unwrap();
    let opts = SolveOptions::default();
    let mut exact = 0;
    let mut worst_fd: f64 = 0.0;
    for s in 0..50 {
        let th = DVector::from_element(1, b + 0.1 + 4.9 * s as f64 / 49.0);
        let r = maximize_on_polytope(&game, &th, &poly, &opts).unwrap();
        let j = backward_one(&game, &th, &poly, &r, &opts, &BackwardOptions::default()).unwrap();
        exact += (j.method == JacobianMethod::BoundaryKkt && j.matrix[(0, 0)] == 0.0) as usize;
        let fd = solver_fd(&game, &th, &poly, &opts, 1e-4).map_or(f64::INFINITY, |m| m[(0, 0)].abs());
        worst_fd = worst_fd.max(fd);
    }
    outcome(
        exact == 50 && worst_fd <= 1e-6,
        format!("KKT block gives exactly 0 on {exact}/50 sweep points; worst |FD| {worst_fd:.1e} (limit 1e-6)"),
    )
}

fn local_ne_certificate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let opts = SolveOptions::default();
    let mut worst_lib = f64::NEG_INFINITY;
    let mut worst_oracle = f64::NEG_INFINITY;
    let mut checked = 0;
    for _ in 0..25 {
        let (sc, th, k, r) = interior_pedestrian(&mut rng, &opts);
        let poly = SubspaceFamily::polytope(&sc, k);
        worst_lib = worst_lib.max(verify_local_ne(sc.game_on(k), &th, &r.argmax, poly, 1e-3, 1000, rng.random()).unwrap());
        worst_oracle = worst_oracle.max(best_unilateral_gain(sc.game_on(k), &th, &r.argmax, poly, 1e-3, 1000, &mut rng));
        checked += 1;
    }
    let synth = synth_generate(
        &SynthConfig { n_scenes: 40, ..SynthConfig::default() },
        &DrivingConfig::default(),
        &RoadGeometry::default(),
        &opts,
        &mut rng,
    )
    .unwrap();
    for s in &synth {
        if checked == 50 {
            break;
        }
        let sc = s.scene.scenario(&DrivingConfig::default()).unwrap();
        let poly = SubspaceFamily::polytope(&sc, s.subspace);
        let r = maximize_on_polytope(sc.game_on(s.subspace), &s.theta, poly, &opts).unwrap();
        if !r.converged() || !r.active_constraints.is_empty() {
            continue;
        }
        worst_lib = worst_lib.max(verify_local_ne(sc.game_on(s.subspace), &s.theta, &r.argmax, poly, 1e-3, 1000, rng.random()).unwrap());
        worst_oracle = worst_oracle.max(best_unilateral_gain(sc.game_on(s.subspace), &s.theta, &r.argmax, poly, 1e-3, 1000, &mut rng));
        checked += 1;
    }
    outcome(
        checked >= 50 && worst_lib <= 1e-8 && worst_oracle <= 1e-8,
        format!(
            "{checked} interior instances, 1000 deviations per agent at radius 1e-3; worst gain {worst_oracle:.1e} (certificate {worst_lib:.1e}, limit 1e-8)"
        ),
    )
}

fn max_eigenvalue(h: &nalgebra::DMatrix<f64>) -> f64 {
    h.clone().symmetric_eigen().eigenvalues.max()
}

fn concavity_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = f64::NEG_INFINITY;
    let mut audited = 0;
    for _ in 0..20 {
        let (sc, th) = pedestrian(&mut rng);
        for k in 0..sc.len() {
            for _ in 0..5 {
                let a = interior_point(SubspaceFamily::polytope(&sc, k), &mut rng);
                worst = worst.max(max_eigenvalue(&sc.game_on(k).potential_hessian(&th, &a).unwrap()));
                audited += 1;
            }
        }
    }
    let config = DrivingConfig::default();
    for _ in 0..3 {
        let (sc, _) = driving(&mut rng, config.horizon_steps);
        let th = driving_theta(&mut rng, &config, ParamPreset::Terminal);
        let hessians = par::map_range(ExecMode::Parallel, sc.len(), |k| {
            let mut r = ChaCha8Rng::seed_from_u64(k as u64);
            (0..3)
                .map(|_| {
                    let a = interior_point(SubspaceFamily::polytope(&sc, k), &mut r);
                    max_eigenvalue(&sc.game_on(k).potential_hessian(&th, &a).unwrap())
                })
                .fold(f64::NEG_INFINITY, f64::max)
        });
        audited += 3 * hessians.len();
        worst = hessians.into_iter().fold(worst, f64::max);
    }
    outcome(
        worst <= -1e-8,
        format!("{audited} sampled Hessians over every subspace; largest eigenvalue {worst:.2e} (limit −1e-8, ridge {:.0e})", config.ridge),
    )
}

fn identifiability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let opts = SolveOptions::default();
    let mut worst_theta: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    for _ in 0..100 {
        let (sc, th, k, r) = interior_pedestrian(&mut rng, &opts);
        let res = sc.game_on(k).potential_gradient(&th, &r.argmax).unwrap().amax();
        worst_res = worst_res.max(res);
        let v = invert_pedestrian_preferences(&r.argmax, [th[0], th[2]], &sc.config, &sc.subspaces[k]).unwrap();
        let truth = [th[1], th[3]];
        let e = ((v[0] - truth[0]).powi(2) + (v[1] - truth[1]).powi(2)).sqrt() / (truth[0].hypot(truth[1]));
        worst_theta = worst_theta.max(e);
    }
    outcome(
        worst_theta <= 1e-6 && worst_res <= 1e-8,
        format!("100 interior instances; worst θ^v rel err {worst_theta:.1e} (limit 1e-6), worst stationarity residual {worst_res:.1e} (limit 1e-8)"),
    )
}

/// Configuration of the synthetic end-to-end run: dropout off, phase 2
/// with momentum at 3e-3.
fn synthetic_setup() -> (ModelConfig, TrainConfig) {
    let model = ModelConfig { dropout: 0.0, ..ModelConfig::default() };
    let mut train = TrainConfig { seed: 11, ..TrainConfig::default() };
    train.full.optimizer.kind = OptimizerKind::Momentum;
    train.full.optimizer.lr = 3e-3;
    (model, train)
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let driving = DrivingConfig::default();
    let solve = SolveOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let synth = synth_generate(&SynthConfig::default(), &driving, &RoadGeometry::default(), &solve, &mut rng).unwrap();
    let scenes: Vec<Scene> = synth.iter().map(|s| s.scene.clone()).collect();
    let (mc, cfg) = synthetic_setup();
    let mut model = TglModel::new(mc, driving.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let (labeled, dropped) = prepare_scenes(&model, &scenes, ExecMode::Parallel);
    if !dropped.is_empty() || labeled.len() != 50 {
        return outcome(false, format!("labeling dropped {dropped:?}"));
    }
    let (train_set, test_set): (Vec<LabeledScene>, Vec<LabeledScene>) = (labeled[..40].to_vec(), labeled[40..].to_vec());
    let test_scenes = &scenes[40..];
    train_refinement(&mut model, &train_set, &cfg).unwrap();
    let acc = refinement_accuracy(&model, &test_set).unwrap();
    train_full(&mut model, &train_set, &cfg).unwrap();
    let tgl = evaluate(&model, test_scenes, &solve, ExecMode::Parallel).unwrap();
    let cv = evaluate_constant_velocity(test_scenes, driving.horizon_steps + 1, driving.dt).unwrap();
    let gain = 1.0 - tgl.mae_avg / cv.mae_avg;
    let elapsed = start.elapsed();
    outcome(
        acc.in_refined >= 0.9 && gain >= 0.5 && tgl.failures.is_empty() && within(Duration::from_secs(900), elapsed),
        format!(
            "held-out (order, merge-step) label in refined set {:.0}% (top-1 {:.0}%, order {:.0}%); MAE {:.2} m vs constant velocity {:.2} m = {:.0}% better (need ≥50%); {:.0} s",
            100.0 * acc.in_refined,
            100.0 * acc.top1,
            100.0 * acc.order,
            tgl.mae_avg,
            cv.mae_avg,
            100.0 * gain,
            elapsed.as_secs_f64()
        ),
    )
}

fn decision_transfer_brake() -> Outcome {
    let config = DrivingConfig::default();
    // both cars at 5 m/s near the end of the on-ramp, the merger 5 m behind
    let past = straight_past(225.0, 5.0, 220.0, 5.0, -3.5, config.dt, 15);
    let sc = DrivingScenario::two_car_merge(RoadGeometry::default(), past, config.clone()).unwrap();
    let mut c = [[1.0; 6]; 2];
    c[0][0] = 5.0;
    c[1][0] = 5.0;
    let theta = expand_compact(&config, ParamPreset::Terminal, &c, 20.0);
    let r = decision_transfer(&sc, &theta, HIGHWAY_CAR, Some(0.0), &SolveOptions::default(), ExecMode::Parallel).unwrap();
    let genuine: Vec<_> = r.genuine().collect();
    let front = genuine.iter().find(|e| e.merger_first && e.merger_ahead_at_end && e.ego_terminal_speed <= 0.5);
    let behind = genuine.iter().find(|e| !e.merger_first && !e.merger_ahead_at_end && e.ego_terminal_speed > 0.0);
    let detail = genuine
        .iter()
        .map(|e| format!("{} (ego {:.2} m/s, merger {})", e.description, e.ego_terminal_speed, if e.merger_ahead_at_end { "ahead" } else { "behind" }))
        .collect::<Vec<_>>()
        .join("; ");
    let distinct = matches!((front, behind), (Some(a), Some(b)) if a.subspace != b.subspace);
    outcome(genuine.len() >= 2 && distinct, format!("{} local NE: {detail}", genuine.len()))
}

fn dataset_check() -> Outcome {
    let sets = [("highD", "TRAJGAME_HIGHD", TrackFormat::HighDLike, 25), ("HEE", "TRAJGAME_HEE", TrackFormat::HeeLike, 23)];
    let config = match Config::load(None) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("config: {e}")),
    };
    let mut ran = Vec::new();
    let mut pass = true;
    let mut rows = Vec::new();
    for (name, var, format, expected) in sets {
        let Some(tracks) = std::env::var_os(format!("{var}_TRACKS")).map(PathBuf::from) else { continue };
        let geometry = match std::env::var_os(format!("{var}_GEOMETRY")) {
            Some(p) => RoadGeometry::from_json(&std::fs::read_to_string(p).unwrap()).unwrap(),
            None => config.geometry.clone(),
        };
        let raw = match import_tracks_file(&tracks, format, &config.import) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        let scenes = filter_merge_scenes(&raw, &geometry, &config.import, format.source());
        pass &= scenes.len() == expected;
        ran.push(format!("{name}: {} scenes (expected {expected})", scenes.len()));
        if scenes.len() >= 4 {
            let (report, _) = cross_validate(&scenes, &config.model, &config.driving, &config.train, 4).unwrap();
            let cv = evaluate_constant_velocity(&scenes, config.driving.horizon_steps + 1, config.driving.dt).unwrap();
            rows.push(TableRow { dataset: name.into(), method: "CV".into(), report: cv });
            rows.push(TableRow { dataset: name.into(), method: "TGL-D".into(), report });
        }
    }
    if ran.is_empty() {
        return Outcome { verdict: Verdict::Skip, detail: "no recorded datasets supplied".into() };
    }
    if !rows.is_empty() {
        println!("{}", format_table(&rows));
    }
    outcome(pass, ran.join("; "))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 10] = [
        ("potential-game identity", potential_identity, Some(10)),
        ("derivative oracles", derivative_oracles, Some(30)),
        ("implicit-layer Jacobian", implicit_jacobian, Some(300)),
        ("boundary gradient", boundary_gradient, None),
        ("local-NE certificate", local_ne_certificate, None),
        ("concavity audit", concavity_audit, None),
        ("identifiability roundtrip", identifiability, None),
        ("synthetic end-to-end", synthetic_end_to_end, Some(900)),
        ("decision transfer", decision_transfer_brake, None),
        ("recorded datasets", dataset_check, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut out = run();
        let secs = t.elapsed().as_secs_f64();
        if let (Some(l), Verdict::Pass) = (limit, &out.verdict) {
            if secs > *l as f64 {
                out = outcome(false, format!("{} [over the {l} s budget]", out.detail));
            }
        }
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} [{:>2}] {name}: {} ({secs:.1} s)", i + 1, out.detail);
    }
    println!("acceptance: {} of 10 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
