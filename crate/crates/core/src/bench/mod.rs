//! Experiment harness: baselines, metrics, multi-seed aggregation and CSV
//! export.

pub mod metrics;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::optimal_coupon_row;
use crate::error::{Error, Result};
use crate::estimators::Checkpoint;
use crate::fca::{write_snapshot_csv, SnapshotRow, DEFAULT_WINDOW};
use crate::rla::{
    rollout_episode, solve_static_lambda, train_rl, zero_coupon_totals, BackboneConfig, CrDenominator, EpisodeInputs,
    PolicyNetwork, PpoConfig, RlSetup, RolloutMode, RolloutOptions, SlotRecord, TrainOptions,
};
use crate::sim::{Episode, ScenarioConfig};
pub use metrics::{froi_against, mean_std, metric_cre, metric_froi, metric_rlr, Direction, EpisodeTotals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "opt")]
    Opt,
    #[serde(rename = "pdm-a")]
    PdmA,
    #[serde(rename = "pdm-s")]
    PdmS,
    #[serde(rename = "fca-rl")]
    FcaRl,
    #[serde(rename = "rl-nofca")]
    RlNoFca,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] =
        [BaselineKind::Opt, BaselineKind::PdmA, BaselineKind::PdmS, BaselineKind::FcaRl, BaselineKind::RlNoFca];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Opt => "opt",
            BaselineKind::PdmA => "pdm-a",
            BaselineKind::PdmS => "pdm-s",
            BaselineKind::FcaRl => "fca-rl",
            BaselineKind::RlNoFca => "rl-nofca",
        }
    }

    pub fn rollout_mode(self) -> Option<RolloutMode> {
        match self {
            BaselineKind::FcaRl => Some(RolloutMode::Fca),
            BaselineKind::RlNoFca => Some(RolloutMode::NoFca),
            _ => None,
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Argument(format!("unknown method {s:?}")))
    }
}

/// Key of a trained policy within a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentKey {
    pub mode: RolloutMode,
    pub window: usize,
}

impl AgentKey {
    pub fn tag(&self) -> String {
        match self.mode {
            RolloutMode::Fca => format!("fca_l{}", self.window),
            RolloutMode::NoFca => "nofca".into(),
        }
    }
}

/// One scene's trained backbone, static multipliers and policies.
#[derive(Debug, Clone)]
pub struct SceneBench {
    pub scene: usize,
    pub setup: RlSetup,
    pub agents: BTreeMap<AgentKey, PolicyNetwork>,
}

impl SceneBench {
    pub fn prepare(scene: usize, config: &ScenarioConfig, bc: &BackboneConfig, ppo: PpoConfig) -> Result<Self> {
        Ok(Self { scene, setup: RlSetup::prepare(config, bc, ppo)?, agents: BTreeMap::new() })
    }

    fn key(mode: RolloutMode, window: usize) -> AgentKey {
        match mode {
            RolloutMode::Fca => AgentKey { mode, window },
            RolloutMode::NoFca => AgentKey { mode, window: 0 },
        }
    }

    pub fn agent(&self, mode: RolloutMode, window: usize) -> Result<&PolicyNetwork> {
        let key = Self::key(mode, window);
        self.agents
            .get(&key)
            .ok_or_else(|| Error::Config(format!("no trained policy for scene {} ({})", self.scene, key.tag())))
    }

    pub fn insert_agent(&mut self, mode: RolloutMode, window: usize, policy: PolicyNetwork) {
        self.agents.insert(Self::key(mode, window), policy);
    }

    /// Loads `policy_final.ckpt` from a checkpoint directory.
    pub fn load_agent(&mut self, mode: RolloutMode, window: usize, dir: &Path) -> Result<()> {
        let path = dir.join("policy_final.ckpt");
        if !path.exists() {
            return Err(Error::Config(format!("missing checkpoint {}", path.display())));
        }
        self.insert_agent(mode, window, PolicyNetwork::from_checkpoint(&Checkpoint::load(path)?)?);
        Ok(())
    }
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: BaselineKind,
    pub scene: usize,
    pub seed: u64,
    pub window: usize,
    pub cre: f64,
    pub direction: Direction,
    /// Absent when no coupon money was spent.
    pub froi: Option<f64>,
    pub rlr: f64,
    pub cost_rate: f64,
    pub completions: f64,
}

/// Result of one experiment cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub row: ReportRow,
    pub records: Vec<SlotRecord>,
    pub snapshots: Vec<SnapshotRow>,
}

fn run_static(ep: &Episode, z: &[Vec<Vec<f64>>], g: &[Vec<f64>], lambda: f64) -> Result<Vec<SlotRecord>> {
    let cfg = ep.config();
    let mut records = Vec::with_capacity(ep.len());
    let (mut cost, mut gmv) = (0.0, 0.0);
    for t in 0..ep.len() {
        let assignment: Vec<usize> = z[t]
            .iter()
            .zip(&g[t])
            .map(|(row, &g)| optimal_coupon_row(row, g, &cfg.coupons, cfg.budget_rate, lambda).0)
            .collect();
        let out = ep.evaluate(t, &assignment)?;
        cost += out.total_cost;
        gmv += out.total_gmv;
        records.push(SlotRecord {
            slot: out.slot,
            orders: out.orders(),
            irr: out.in_range_rate(),
            lambda,
            action: 1.0,
            cost_rate: if gmv > 0.0 { cost / gmv } else { 0.0 },
            completions: out.completions,
            cost: out.total_cost,
            gmv: out.total_gmv,
        });
    }
    Ok(records)
}

/// Evaluates one method on the test episode of `seed`. RL methods need a
/// trained policy for `window` in the scene bench.
pub fn run_baseline(bench: &SceneBench, kind: BaselineKind, seed: u64, window: usize) -> Result<CellOutput> {
    let setup = &bench.setup;
    let cfg = &setup.config;
    let ep = Episode::test(cfg, seed)?;
    let inputs = EpisodeInputs::new(&setup.backbone, &ep)?;
    let g: Vec<Vec<f64>> = inputs.estimates.iter().map(|e| e.base_prices.clone()).collect();
    let (records, snapshots) = match kind {
        BaselineKind::Opt => {
            // hindsight optimum of the test episode under ground truth
            let (lambda, _) =
                solve_static_lambda(inputs.truth.concat(), g.concat(), &cfg.coupons, cfg.budget_rate, None)?;
            (run_static(&ep, &inputs.truth, &g, lambda)?, Vec::new())
        }
        BaselineKind::PdmA => {
            let z: Vec<_> = inputs.estimates.iter().map(|e| e.z_model.clone()).collect();
            (run_static(&ep, &z, &g, setup.statics.pdm_a)?, Vec::new())
        }
        BaselineKind::PdmS => {
            let z: Vec<_> = inputs.estimates.iter().map(|e| e.decomposed(&e.w_logit)).collect();
            (run_static(&ep, &z, &g, setup.statics.pdm_s)?, Vec::new())
        }
        BaselineKind::FcaRl | BaselineKind::RlNoFca => {
            let mode = kind.rollout_mode().expect("RL kind");
            let policy = bench.agent(mode, window)?;
            let opts = RolloutOptions {
                mode,
                window,
                deterministic: true,
                nested: false,
                cr_denominator: CrDenominator::Gmv,
                seed,
                record_snapshots: mode == RolloutMode::Fca,
            };
            let ro = rollout_episode(setup, policy, &ep, &inputs, setup.lambda0(), &opts)?;
            (ro.records, ro.snapshots)
        }
    };
    let totals = records.iter().fold(EpisodeTotals::default(), |mut t, r| {
        t.completions += r.completions as f64;
        t.cost += r.cost;
        t.gmv += r.gmv;
        t
    });
    let zero = zero_coupon_totals(&ep)?;
    let (cre, direction) = metric_cre(totals.cost, totals.gmv, cfg.budget_rate)?;
    let cost_rate = totals.cost_rate()?;
    let r_obs: Vec<f64> = records.iter().map(|r| r.completions as f64).collect();
    let r_star = setup.statics.r_star * ep.len() as f64 / cfg.slots_test as f64;
    let row = ReportRow {
        method: kind,
        scene: bench.scene,
        seed,
        window: if kind == BaselineKind::FcaRl { window } else { 0 },
        cre,
        direction,
        froi: froi_against(&totals, &zero).ok(),
        rlr: metric_rlr(&r_obs, r_star, cost_rate, cfg.budget_rate)?,
        cost_rate,
        completions: totals.completions,
    };
    Ok(CellOutput { row, records, snapshots })
}

/// Mean and spread of one method on one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: BaselineKind,
    pub scene: usize,
    pub window: usize,
    pub seeds: usize,
    pub cre_mean: f64,
    pub cre_std: f64,
    /// Side of the target the mean cost rate ended on.
    pub direction: Direction,
    pub froi_mean: f64,
    pub froi_std: f64,
    pub rlr_mean: f64,
    pub rlr_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    /// Cells that failed, with the error text.
    pub failures: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn summary_for(&self, method: BaselineKind, scene: usize, window: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method && s.scene == scene && s.window == window)
    }
}

type GroupKey = (BaselineKind, usize, usize);

/// Groups rows by `(method, scene, window)` in order of first appearance.
pub fn summarize(rows: &[ReportRow], budget_rate: impl Fn(usize) -> f64) -> Vec<SummaryRow> {
    let mut groups: Vec<(GroupKey, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        let key = (r.method, r.scene, r.window);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, scene, window), g)| {
            let cre: Vec<f64> = g.iter().map(|r| r.cre).collect();
            let froi: Vec<f64> = g.iter().filter_map(|r| r.froi).collect();
            let rlr: Vec<f64> = g.iter().map(|r| r.rlr).collect();
            let (cre_mean, cre_std) = mean_std(&cre);
            let (froi_mean, froi_std) = mean_std(&froi);
            let (rlr_mean, rlr_std) = mean_std(&rlr);
            let cr_mean = g.iter().map(|r| r.cost_rate).sum::<f64>() / g.len() as f64;
            let direction = if cr_mean > budget_rate(scene) { Direction::Over } else { Direction::Under };
            SummaryRow {
                method,
                scene,
                window,
                seeds: g.len(),
                cre_mean,
                cre_std,
                direction,
                froi_mean,
                froi_std,
                rlr_mean,
                rlr_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenes: Vec<usize>,
    pub methods: Vec<BaselineKind>,
    /// Evaluation seeds are `seed_offset .. seed_offset + seeds`.
    pub seeds: usize,
    pub seed_offset: u64,
    pub rl_episodes: usize,
    pub train_seed: u64,
    pub window: usize,
    pub nested: bool,
    pub backbone: BackboneConfig,
    pub ppo: PpoConfig,
    /// Also run FCA-RL and RL without the tracker on every scene.
    pub ablation: bool,
    pub window_sweep: Vec<usize>,
    pub window_sweep_scenes: Vec<usize>,
    /// Replaces the built-in scene definitions when set.
    pub scenario: Option<ScenarioConfig>,
    pub write_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenes: vec![1, 2, 3, 4],
            methods: BaselineKind::ALL.to_vec(),
            seeds: 5,
            seed_offset: 0,
            rl_episodes: 200,
            train_seed: 0,
            window: DEFAULT_WINDOW,
            nested: false,
            backbone: BackboneConfig::default(),
            ppo: PpoConfig::default(),
            ablation: false,
            window_sweep: Vec::new(),
            window_sweep_scenes: vec![3],
            scenario: None,
            write_traces: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }

    pub fn scene_config(&self, scene: usize) -> Result<ScenarioConfig> {
        match &self.scenario {
            Some(c) => Ok(c.clone()),
            None => ScenarioConfig::scene(scene),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.scenes.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("need at least one scene and one method".into()));
        }
        if self.window == 0 || self.window_sweep.contains(&0) {
            return Err(Error::Config("window lengths must be positive".into()));
        }
        self.ppo.validate()
    }

    fn train_options(&self, key: AgentKey, dir: Option<PathBuf>) -> TrainOptions {
        TrainOptions {
            episodes: self.rl_episodes,
            seed: self.train_seed,
            mode: key.mode,
            window: if key.window == 0 { self.window } else { key.window },
            nested: self.nested,
            cr_denominator: CrDenominator::Gmv,
            checkpoint_dir: dir,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    scene: usize,
    kind: BaselineKind,
    seed: u64,
    window: usize,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f)
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["method", "scene", "seed", "CRE", "direction", "FROI", "RLR"])?;
    for r in rows {
        wr.write_record([
            r.method.name().to_string(),
            r.scene.to_string(),
            r.seed.to_string(),
            fmt_f(r.cre),
            r.direction.to_string(),
            fmt_opt(r.froi),
            fmt_f(r.rlr),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(records: &[SlotRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["slot", "irr_mean", "lambda", "cost_rate", "completions"])?;
    for r in records {
        wr.write_record([
            r.slot.to_string(),
            fmt_f(r.irr),
            format!("{:.8}", r.lambda),
            fmt_f(r.cost_rate),
            r.completions.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "method",
        "scene",
        "window",
        "seeds",
        "CRE_mean",
        "CRE_std",
        "direction",
        "FROI_mean",
        "FROI_std",
        "RLR_mean",
        "RLR_std",
    ])?;
    for s in rows {
        wr.write_record([
            s.method.name().to_string(),
            s.scene.to_string(),
            s.window.to_string(),
            s.seeds.to_string(),
            fmt_f(s.cre_mean),
            fmt_f(s.cre_std),
            s.direction.to_string(),
            fmt_f(s.froi_mean),
            fmt_f(s.froi_std),
            fmt_f(s.rlr_mean),
            fmt_f(s.rlr_std),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// With and without the tracker, per scene.
pub fn write_ablation_csv<W: Write>(report: &MetricsReport, window: usize, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scene", "variant", "CRE_mean", "CRE_std", "FROI_mean", "RLR_mean"])?;
    let mut scenes: Vec<usize> = report.summary.iter().map(|s| s.scene).collect();
    scenes.dedup();
    scenes.sort_unstable();
    scenes.dedup();
    for scene in scenes {
        for (kind, win, label) in [(BaselineKind::FcaRl, window, "with_fca"), (BaselineKind::RlNoFca, 0, "without_fca")]
        {
            if let Some(s) = report.summary_for(kind, scene, win) {
                wr.write_record([
                    scene.to_string(),
                    label.to_string(),
                    fmt_f(s.cre_mean),
                    fmt_f(s.cre_std),
                    fmt_f(s.froi_mean),
                    fmt_f(s.rlr_mean),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_window_sweep_csv<W: Write>(
    report: &MetricsReport,
    scenes: &[usize],
    windows: &[usize],
    w: W,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scene", "window", "seeds", "CRE_mean", "CRE_std", "FROI_mean", "RLR_mean"])?;
    for &scene in scenes {
        for &l in windows {
            if let Some(s) = report.summary_for(BaselineKind::FcaRl, scene, l) {
                wr.write_record([
                    scene.to_string(),
                    l.to_string(),
                    s.seeds.to_string(),
                    fmt_f(s.cre_mean),
                    fmt_f(s.cre_std),
                    fmt_f(s.froi_mean),
                    fmt_f(s.rlr_mean),
                ])?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs the cross-product of scenes, methods and seeds (plus the ablation and
/// window sweep when configured) and writes every CSV under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut scenes = cfg.scenes.clone();
    scenes.sort_unstable();
    scenes.dedup();
    let sweep_scenes: Vec<usize> = if cfg.window_sweep.is_empty() {
        Vec::new()
    } else {
        cfg.window_sweep_scenes.iter().copied().filter(|s| scenes.contains(s)).collect()
    };
    let mut methods = cfg.methods.clone();
    if cfg.ablation {
        methods.extend([BaselineKind::FcaRl, BaselineKind::RlNoFca]);
    }
    methods.sort_unstable();
    methods.dedup();

    let mut benches: Vec<SceneBench> = scenes
        .par_iter()
        .map(|&s| SceneBench::prepare(s, &cfg.scene_config(s)?, &cfg.backbone, cfg.ppo.clone()))
        .collect::<Result<_>>()?;

    // policies to train
    let mut jobs: Vec<(usize, AgentKey)> = Vec::new();
    for (i, &scene) in scenes.iter().enumerate() {
        let mut keys = Vec::new();
        for m in &methods {
            if let Some(mode) = m.rollout_mode() {
                keys.push(SceneBench::key(mode, cfg.window));
            }
        }
        if sweep_scenes.contains(&scene) {
            keys.extend(cfg.window_sweep.iter().map(|&l| SceneBench::key(RolloutMode::Fca, l)));
        }
        keys.sort_unstable();
        keys.dedup();
        jobs.extend(keys.into_iter().map(|k| (i, k)));
    }
    let trained: Vec<Result<PolicyNetwork>> = jobs
        .par_iter()
        .map(|&(i, key)| {
            let dir = out.join("checkpoints").join(format!("scene{}_{}", scenes[i], key.tag()));
            log::info!("training scene {} {}", scenes[i], key.tag());
            Ok(train_rl(&benches[i].setup, &cfg.train_options(key, Some(dir)))?.policy)
        })
        .collect();
    let mut failures = Vec::new();
    for (&(i, key), res) in jobs.iter().zip(trained) {
        match res {
            Ok(p) => benches[i].agents.insert(key, p).map_or((), |_| ()),
            Err(e) => failures.push((format!("train scene{} {}", scenes[i], key.tag()), e.to_string())),
        }
    }

    let mut cells = Vec::new();
    for (i, &scene) in scenes.iter().enumerate() {
        for &kind in &methods {
            for k in 0..cfg.seeds as u64 {
                cells.push((i, Cell { scene, kind, seed: cfg.seed_offset + k, window: cfg.window }));
            }
        }
        if sweep_scenes.contains(&scene) {
            for &l in cfg.window_sweep.iter().filter(|&&l| l != cfg.window || !methods.contains(&BaselineKind::FcaRl)) {
                for k in 0..cfg.seeds as u64 {
                    cells.push((i, Cell { scene, kind: BaselineKind::FcaRl, seed: cfg.seed_offset + k, window: l }));
                }
            }
        }
    }
    let results: Vec<Result<CellOutput>> =
        cells.par_iter().map(|(i, c)| run_baseline(&benches[*i], c.kind, c.seed, c.window)).collect();

    let mut rows = Vec::with_capacity(cells.len());
    for ((_, c), res) in cells.iter().zip(results) {
        match res {
            Ok(cell) => {
                if cfg.write_traces {
                    let suffix = if c.kind == BaselineKind::FcaRl && c.window != cfg.window {
                        format!("_l{}", c.window)
                    } else {
                        String::new()
                    };
                    let stem = format!("{}_{}_{}{}", c.scene, c.kind.name(), c.seed, suffix);
                    write_trace_csv(&cell.records, create(&out.join(format!("trace_{stem}.csv")))?)?;
                    if !cell.snapshots.is_empty() {
                        write_snapshot_csv(&cell.snapshots, create(&out.join(format!("tracker_{stem}.csv")))?)?;
                    }
                }
                rows.push(cell.row);
            }
            Err(e) => {
                log::warn!("cell scene {} {} seed {} failed: {e}", c.scene, c.kind, c.seed);
                failures.push((format!("scene{} {} seed{} l{}", c.scene, c.kind, c.seed, c.window), e.to_string()));
            }
        }
    }

    let rates: BTreeMap<usize, f64> = benches.iter().map(|b| (b.scene, b.setup.config.budget_rate)).collect();
    let summary = summarize(&rows, |s| rates[&s]);
    let main_rows: Vec<ReportRow> =
        rows.iter().filter(|r| r.method != BaselineKind::FcaRl || r.window == cfg.window).cloned().collect();
    let report = MetricsReport { rows, summary, failures };
    write_report_csv(&main_rows, create(&out.join("report.csv"))?)?;
    write_summary_csv(&report.summary, create(&out.join("summary.csv"))?)?;
    if cfg.ablation {
        write_ablation_csv(&report, cfg.window, create(&out.join("ablation.csv"))?)?;
    }
    if !sweep_scenes.is_empty() {
        let mut windows = cfg.window_sweep.clone();
        windows.sort_unstable();
        windows.dedup();
        write_window_sweep_csv(&report, &sweep_scenes, &windows, create(&out.join("window_sweep.csv"))?)?;
    }
    if !report.failures.is_empty() {
        let mut wr = csv::Writer::from_writer(create(&out.join("failures.csv"))?);
        wr.write_record(["cell", "error"])?;
        for (c, e) in &report.failures {
            wr.write_record([c, e])?;
        }
        wr.flush()?;
    }
    Ok(report)
}
