use std::sync::OnceLock;

use ridegym::bench::{run_baseline, run_experiment, BaselineKind, ExperimentConfig, MetricsReport, SceneBench};
use ridegym::rla::{BackboneConfig, PpoConfig};
use ridegym::sim::ScenarioConfig;
use ridegym::Error;

fn statics_report() -> &'static MetricsReport {
    static R: OnceLock<MetricsReport> = OnceLock::new();
    R.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            methods: vec![BaselineKind::Opt, BaselineKind::PdmA, BaselineKind::PdmS],
            ..Default::default()
        };
        run_experiment(&cfg, dir.path()).unwrap()
    })
}

#[test]
fn single_cell_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { scenes: vec![2], methods: vec![BaselineKind::PdmA], seeds: 1, ..Default::default() };
    let rep = run_experiment(&cfg, dir.path()).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,scene,seed,CRE,direction,FROI,RLR");
    assert_eq!(lines.count(), 1);
    let trace = std::fs::read_to_string(dir.path().join("trace_2_pdm-a_0.csv")).unwrap();
    assert!(trace.starts_with("slot,irr_mean,lambda,cost_rate,completions\n"));
}

#[test]
fn repeated_cells_are_identical() {
    let cfg = ScenarioConfig::scene(4).unwrap();
    let bench = SceneBench::prepare(4, &cfg, &BackboneConfig::default(), PpoConfig::default()).unwrap();
    for kind in [BaselineKind::Opt, BaselineKind::PdmS] {
        let a = run_baseline(&bench, kind, 3, 24).unwrap();
        let b = run_baseline(&bench, kind, 3, 24).unwrap();
        assert_eq!(a.row, b.row);
        assert_eq!(a.records, b.records);
    }
}

#[test]
fn missing_policy_is_a_configuration_error() {
    let cfg = ScenarioConfig::scene(4).unwrap();
    let bench = SceneBench::prepare(4, &cfg, &BackboneConfig::default(), PpoConfig::default()).unwrap();
    assert!(matches!(run_baseline(&bench, BaselineKind::FcaRl, 0, 24), Err(Error::Config(_))));
}

#[test]
fn near_stationary_scene_keeps_static_lambda_valid() {
    let s = statics_report().summary_for(BaselineKind::PdmS, 4, 0).unwrap();
    assert!(s.cre_mean <= 0.02, "scene 4 PDM-S CRE {}", s.cre_mean);
}

#[test]
fn optimum_leads_both_model_baselines_on_every_scene() {
    let rep = statics_report();
    for scene in 1..=4 {
        let rlr = |k| rep.summary_for(k, scene, 0).unwrap().rlr_mean;
        let opt = rlr(BaselineKind::Opt);
        assert!(opt > rlr(BaselineKind::PdmA), "scene {scene}: OPT {opt} vs PDM-A {}", rlr(BaselineKind::PdmA));
        assert!(opt > rlr(BaselineKind::PdmS), "scene {scene}: OPT {opt} vs PDM-S {}", rlr(BaselineKind::PdmS));
    }
}

#[test]
fn five_seeds_fill_the_spread_columns() {
    let rep = statics_report();
    for s in &rep.summary {
        assert_eq!(s.seeds, 5);
        assert!(s.cre_std > 0.0 && s.rlr_std > 0.0, "{s:?}");
    }
    assert!(rep.failures.is_empty());
}
