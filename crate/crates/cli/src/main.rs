//! `trajgame` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use trajgame::implicit::SubspaceFamily;
use trajgame::io::{self, Config, TrackFormat};
use trajgame::pipeline::{
    cross_validate, decision_transfer, evaluate, evaluate_constant_velocity, fold_assignment, aggregate_folds,
    format_table, gradcheck, synth_generate, tgl_forward, train, GradcheckOptions, GradcheckScenario, Scene,
    SynthConfig, TableRow, TglModel, Variant,
};
use trajgame::scenarios::{RoadGeometry, HIGHWAY_CAR, MERGER};
use trajgame::solver::maximize_on_polytope;

#[derive(Parser)]
#[command(name = "trajgame", version, about = "Game-theoretic trajectory prediction")]
struct Cli {
    /// Config file (TOML); defaults to $TRAJGAME_CONFIG, then built-in values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Highd,
    Hee,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ego {
    Highway,
    Merger,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckScenario {
    Pedestrian,
    Driving,
}

#[derive(Subcommand)]
enum Command {
    /// Import recorded tracks and extract two-car merge scenes.
    Import {
        #[arg(long, value_enum)]
        format: Format,
        /// Tracks CSV.
        #[arg(long)]
        tracks: PathBuf,
        /// Road geometry JSON; defaults to the config geometry.
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise-free synthetic merge scenes drawn from known games.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Gaussian position noise in meters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximize the potential of one scene on one subspace.
    Solve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// JSON array of game parameters.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        subspace: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-phase training on a scene file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_weights: PathBuf,
        /// Loss log CSV; defaults to the weights path with `.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Multi-modal prediction for one scene.
    Predict {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAE/RMSE per horizon; cross-validates when no weights are given.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        /// Dataset name in the table; defaults to the scenes' source.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the text table; printed to stdout otherwise.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Local equilibria of the fitted game under a changed ego preference.
    Decide {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_enum, default_value_t = Ego::Highway)]
        ego: Ego,
        /// Set the ego's desired speed to zero.
        #[arg(long)]
        emergency_brake: bool,
        #[arg(long, conflicts_with = "emergency_brake")]
        desired_speed: Option<f64>,
        /// Directory for per-equilibrium trajectory CSVs.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Implicit-layer Jacobians against finite differences of the solver.
    Gradcheck {
        #[arg(long, value_enum)]
        scenario: CheckScenario,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG and tidy CSV of a prediction.
    Plot {
        #[arg(long)]
        prediction: PathBuf,
        /// Scene file supplying the ground-truth future.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// CSV path; defaults to the SVG path with `.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: String,
    command: &'a str,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn pick_scene(path: &Path, index: usize) -> Result<Scene> {
    let mut scenes = io::read_scenes(path)?;
    if index >= scenes.len() {
        bail!("{}: scene index {index} out of range ({} scenes)", path.display(), scenes.len());
    }
    Ok(scenes.swap_remove(index))
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Tgl => "TGL",
        Variant::TglD => "TGL-D",
        Variant::TglDp => "TGL-DP",
    }
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
        #[cfg(not(feature = "parallel"))]
        log::info!("built without parallelism; ignoring --threads {n}");
    }
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
        config.train.seed = s;
    }
    let exec = config.train.exec;
    match cli.command {
        Command::Import { format, tracks, geometry, out } => {
            let format = match format {
                Format::Highd => TrackFormat::HighDLike,
                Format::Hee => TrackFormat::HeeLike,
            };
            if format == TrackFormat::HeeLike {
                eprintln!("warning: HEE-style recordings may be noisy in places; inspect the imported scenes");
            }
            let geometry = match geometry {
                Some(p) => RoadGeometry::from_json(&std::fs::read_to_string(&p).with_context(|| p.display().to_string())?)?,
                None => config.geometry.clone(),
            };
            let raw = io::import_tracks_file(&tracks, format, &config.import)?;
            let scenes = io::filter_merge_scenes(&raw, &geometry, &config.import, format.source());
            io::write_scenes(&out, &scenes)?;
            eprintln!("{} tracks, {} merge scenes written to {}", raw.len(), scenes.len(), out.display());
        }
        Command::Synth { n, noise, out } => {
            let cfg = SynthConfig {
                n_scenes: n,
                noise_std: noise,
                past_window: config.model.past_window,
                preset: config.model.preset,
                ..SynthConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let scenes = synth_generate(&cfg, &config.driving, &config.geometry, &config.solve, &mut rng)?;
            let scenes: Vec<Scene> = scenes.into_iter().map(|s| s.scene).collect();
            io::write_scenes(&out, &scenes)?;
            eprintln!("{} synthetic scenes written to {}", scenes.len(), out.display());
        }
        Command::Solve { scene, index, theta, subspace, out } => {
            let scene = pick_scene(&scene, index)?;
            let theta: Vec<f64> = io::read_json(&theta)?;
            let scenario = scene.scenario(&config.driving)?;
            if subspace >= scenario.len() {
                bail!("subspace {subspace} out of range ({} subspaces)", scenario.len());
            }
            let theta = nalgebra::DVector::from_vec(theta);
            let report = maximize_on_polytope(scenario.game_on(subspace), &theta, scenario.polytope(subspace), &config.solve)?;
            emit(&report, out.as_deref())?;
        }
        Command::Train { dataset, out_weights, log } => {
            let scenes = io::read_scenes(&dataset)?;
            if scenes.is_empty() {
                bail!("{}: no scenes to train on", dataset.display());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut model = TglModel::new(config.model.clone(), config.driving.clone(), &mut rng)?;
            let (l1, l2) = train(&mut model, &scenes, &config.train)?;
            io::write_weights(&out_weights, &model)?;
            let log_path = log.unwrap_or_else(|| with_extension(&out_weights, ".loss.csv"));
            let mut text = l1.to_csv();
            text.extend(l2.to_csv().lines().skip(1).map(|l| format!("{l}\n")));
            std::fs::write(&log_path, text).with_context(|| log_path.display().to_string())?;
            eprintln!(
                "refinement best epoch {} (val {:.4}); full best epoch {} (val {:.4}); {} scenes excluded",
                l1.best_epoch,
                l1.best_val_loss,
                l2.best_epoch,
                l2.best_val_loss,
                l2.excluded.len()
            );
        }
        Command::Predict { scene, index, weights, out } => {
            let scene = pick_scene(&scene, index)?;
            let model = io::read_weights(&weights)?;
            let pred = tgl_forward(&model, &scene.past, &scene.geometry, &config.solve, exec)?;
            emit(&pred, out.as_deref())?;
        }
        Command::Eval { dataset, weights, folds, name, out, table } => {
            let scenes = io::read_scenes(&dataset)?;
            if scenes.is_empty() {
                bail!("{}: dataset is empty", dataset.display());
            }
            let name = name.unwrap_or_else(|| {
                serde_json::to_value(scenes[0].source).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
            });
            let (report, variant) = match weights {
                Some(w) => {
                    let model = io::read_weights(&w)?;
                    let report = if folds >= 2 {
                        let parts = fold_assignment(scenes.len(), folds, config.seed)?
                            .into_iter()
                            .map(|idx| {
                                let part: Vec<Scene> = idx.iter().map(|&i| scenes[i].clone()).collect();
                                evaluate(&model, &part, &config.solve, exec)
                            })
                            .collect::<trajgame::Result<Vec<_>>>()?;
                        aggregate_folds(parts)?
                    } else {
                        evaluate(&model, &scenes, &config.solve, exec)?
                    };
                    (report, model.config.variant)
                }
                None => {
                    let (report, _) = cross_validate(&scenes, &config.model, &config.driving, &config.train, folds)?;
                    (report, config.model.variant)
                }
            };
            let stages = config.driving.horizon_steps + 1;
            let cv = evaluate_constant_velocity(&scenes, stages, config.driving.dt)?;
            let rows = vec![
                TableRow { dataset: name.clone(), method: "CV".into(), report: cv },
                TableRow { dataset: name, method: variant_name(variant).into(), report: report.clone() },
            ];
            emit(&report, out.as_deref())?;
            let text = format_table(&rows);
            match table {
                Some(p) => std::fs::write(&p, text).with_context(|| p.display().to_string())?,
                None if out.is_some() => print!("{text}"),
                None => eprint!("{text}"),
            }
        }
        Command::Decide { scene, index, weights, ego, emergency_brake, desired_speed, out_dir } => {
            let scene = pick_scene(&scene, index)?;
            let model = io::read_weights(&weights)?;
            let pred = tgl_forward(&model, &scene.past, &scene.geometry, &config.solve, exec)?;
            let scenario = scene.scenario(&model.driving)?;
            let ego = match ego {
                Ego::Highway => HIGHWAY_CAR,
                Ego::Merger => MERGER,
            };
            let speed = if emergency_brake { Some(0.0) } else { desired_speed };
            let theta = nalgebra::DVector::from_vec(pred.theta.clone());
            let result = decision_transfer(&scenario, &theta, ego, speed, &config.solve, exec)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                for e in &result.equilibria {
                    let mut text = String::from("agent,step,t,x,y\n");
                    for (i, traj) in e.trajectory.iter().enumerate() {
                        for (t, p) in traj.iter().enumerate() {
                            text.push_str(&format!("{i},{t},{},{},{}\n", t as f64 * scenario.config.dt, p[0], p[1]));
                        }
                    }
                    let path = dir.join(format!("equilibrium_{:03}.csv", e.subspace));
                    std::fs::write(&path, text).with_context(|| path.display().to_string())?;
                }
            }
            emit(&result, None)?;
        }
        Command::Gradcheck { scenario, instances, out } => {
            let scenario = match scenario {
                CheckScenario::Pedestrian => GradcheckScenario::Pedestrian,
                CheckScenario::Driving => GradcheckScenario::Driving,
            };
            let opts = GradcheckOptions { instances, ..GradcheckOptions::default() };
            let report = gradcheck(scenario, config.seed, &opts, &config.solve, exec)?;
            emit(&report, out.as_deref())?;
            eprintln!(
                "{}: {}/{} within {:e}, max rel err {:.3e}",
                if report.pass { "PASS" } else { "FAIL" },
                report.passed,
                report.cases.len(),
                report.tolerance,
                report.max_rel_err
            );
            return Ok(report.pass);
        }
        Command::Plot { prediction, scene, index, out, csv } => {
            let pred: trajgame::pipeline::Prediction = io::read_json(&prediction)?;
            let scene = scene.map(|p| pick_scene(&p, index)).transpose()?;
            let geometry = scene.as_ref().map_or_else(|| config.geometry.clone(), |s| s.geometry.clone());
            let series = io::prediction_series(&pred, scene.as_ref().map(|s| s.future.as_slice()), config.driving.dt);
            std::fs::write(&out, io::series_svg(&series, &geometry)).with_context(|| out.display().to_string())?;
            let csv_path = csv.unwrap_or_else(|| out.with_extension("csv"));
            std::fs::write(&csv_path, io::series_csv(&series)?).with_context(|| csv_path.display().to_string())?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = match &cli.command {
        Command::Import { .. } => "import",
        Command::Synth { .. } => "synth",
        Command::Solve { .. } => "solve",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Eval { .. } => "eval",
        Command::Decide { .. } => "decide",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Plot { .. } => "plot",
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            let report = ErrorReport { error: format!("{e:#}"), command };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
