#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ridegym::bench::{run_experiment, BaselineKind, ExperimentConfig};
use ridegym::estimators::{
    evaluate_auc, fit_beta_param_model, fit_logistic_with, Dataset, Standardizer, Target, TrainConfig,
};
use ridegym::rla::{write_curve_csv, BackboneConfig, RlSetup, RolloutMode, TrainOptions};
use ridegym::sim::{collect_randomized, Episode, EpisodeKey, Phase, ScenarioConfig};
use ridegym::{Error, Result};

#[derive(Parser)]
#[command(name = "ridegym", version, about = "Coupon allocation on a simulated ride-hailing aggregator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate methods over seeds and write report, summary and trace CSVs.
    Run {
        /// Scene numbers, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        scene: Vec<usize>,
        /// opt, pdm-a, pdm-s, fca-rl or rl-nofca, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        /// JSON experiment configuration; command-line values take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario JSON replacing the built-in scene.
        #[arg(long)]
        scene_file: Option<PathBuf>,
        /// RL training episodes per policy.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        ablation: bool,
        /// Window lengths to sweep with FCA-RL, comma separated.
        #[arg(long, value_delimiter = ',')]
        window_sweep: Vec<usize>,
    },
    /// Fit one backbone model on the pretrain split and report held-out AUC.
    Train {
        #[arg(long)]
        scene: usize,
        /// w, f_in, z or beta.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the multiplier policy with PPO.
    TrainRl {
        #[arg(long)]
        scene: usize,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        window: usize,
        #[arg(long)]
        no_fca: bool,
        /// Re-simulate the remaining slots for every training signal.
        #[arg(long)]
        nested: bool,
        #[arg(long, default_value = "runs/train_rl")]
        out: PathBuf,
    },
    /// Write a built-in scene as JSON, ready to edit and pass to `run --scene-file`.
    ExportScene {
        #[arg(long)]
        scene: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_cmd(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scene, method, seeds, out, config, scene_file, episodes, ablation, window_sweep } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_json_file(p)?,
                None => ExperimentConfig::default(),
            };
            cfg.scenes = scene;
            cfg.methods = method.iter().map(|m| m.parse()).collect::<Result<Vec<BaselineKind>>>()?;
            cfg.seeds = seeds;
            if let Some(p) = scene_file {
                cfg.scenario = Some(ScenarioConfig::from_json_file(p)?);
            }
            if let Some(e) = episodes {
                cfg.rl_episodes = e;
            }
            cfg.ablation |= ablation;
            if !window_sweep.is_empty() {
                cfg.window_sweep = window_sweep;
            }
            let report = run_experiment(&cfg, &out)?;
            for s in &report.summary {
                println!(
                    "scene {} {:<8} l={:<2} CRE {:.4}±{:.4} ({}) FROI {:.3} RLR {:.3}",
                    s.scene,
                    s.method.name(),
                    s.window,
                    s.cre_mean,
                    s.cre_std,
                    s.direction,
                    s.froi_mean,
                    s.rlr_mean
                );
            }
            for (cell, err) in &report.failures {
                eprintln!("failed: {cell}: {err}");
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train { scene, target, seed, out } => {
            let target: Target = target.parse()?;
            let cfg = ScenarioConfig::scene(scene)?;
            let mut ep = Episode::new(&cfg, EpisodeKey { phase: Phase::Pretrain, stream: 0 }, cfg.slots_pretrain)?;
            let samples = collect_randomized(&mut ep)?;
            let (train, test) = Dataset::from_samples(&samples, &cfg.coupons, target).split_every(5);
            let tc = TrainConfig { seed, ..TrainConfig::default() };
            let standardizer = Standardizer::fit(&train.x);
            let (ckpt, scores) = if target == Target::Beta {
                let m = fit_beta_param_model(&train, &tc, (cfg.num_rsps + 1) as f64)?.model;
                let s = test.x.iter().zip(&test.d).map(|(x, &d)| m.predict_mean(x, d)).collect::<Result<Vec<_>>>()?;
                (m.to_checkpoint(), s)
            } else {
                let m = fit_logistic_with(&train, &tc, standardizer)?.model;
                (m.to_checkpoint(), m.predict_batch(&test.x, &test.d)?)
            };
            let auc = evaluate_auc(&scores, &test.y)?;
            println!("scene {scene} target {} held-out AUC {auc:.4} ({} samples)", target.name(), test.len());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join(format!("model_{}.ckpt", target.name()));
                ckpt.save(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::TrainRl { scene, episodes, seed, window, no_fca, nested, out } => {
            if window == 0 {
                return Err(Error::Config("window must be positive".into()));
            }
            let cfg = ScenarioConfig::scene(scene)?;
            let setup = RlSetup::prepare(&cfg, &BackboneConfig::default(), Default::default())?;
            let opts = TrainOptions {
                episodes,
                seed,
                mode: if no_fca { RolloutMode::NoFca } else { RolloutMode::Fca },
                window,
                nested,
                checkpoint_dir: Some(out.clone()),
                ..TrainOptions::default()
            };
            let agent = ridegym::rla::train_rl(&setup, &opts)?;
            write_curve_csv(&agent.curve, std::io::stdout().lock())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::ExportScene { scene, out } => {
            ScenarioConfig::scene(scene)?.to_json_file(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run_cmd(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
