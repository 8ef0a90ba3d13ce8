use std::fs;

use progdiff::par;
use progdiff::pipeline::{tdc_train, Dataset, Experiment, ExperimentConfig};
use progdiff::pruning::ProxyKind;

fn tiny(proxy: ProxyKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::with_dataset(Dataset::SwissRoll);
    c.dataset.size = 256;
    c.schedule.timesteps = 16;
    c.model.hidden_widths = vec![10, 8];
    c.model.time_embed_dim = 4;
    c.allocation.groups = 3;
    c.pruning.proxy = proxy;
    c.pruning.rounds = 2;
    c.pruning.candidates = 2;
    c.pruning.eval_batch = 24;
    c.pruning.calibration_batch = 12;
    c.training.stage1_steps = 30;
    c.training.stage2_steps = 6;
    c.training.batch_size = 40;
    c.training.holdout = 40;
    c.sampling.steps = 4;
    c.sampling.samples = 40;
    c
}

#[test]
fn report_does_not_depend_on_thread_count() {
    for proxy in [ProxyKind::Magnitude, ProxyKind::Taylor, ProxyKind::Random] {
        let run = |threads: usize| {
            let dir = tempfile::tempdir().unwrap();
            let exp = Experiment::create(dir.path(), tiny(proxy)).unwrap();
            par::with_threads(threads, || tdc_train(&exp)).unwrap();
            (
                fs::read(dir.path().join("report.json")).unwrap(),
                fs::read(dir.path().join("samples.csv")).unwrap(),
            )
        };
        assert_eq!(run(1), run(4), "{}", proxy.name());
    }
}

#[test]
fn missing_llm_endpoint_falls_back_to_magnitude() {
    for var in ["PD_LLM_URL", "PD_LLM_MODEL", "PD_LLM_KEY"] {
        if std::env::var_os(var).is_some() {
            return;
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::create(dir.path(), tiny(ProxyKind::Llm)).unwrap();
    let (report, _) = tdc_train(&exp).unwrap();
    let pruned: Vec<_> = report.groups.iter().filter_map(|g| g.prune.as_ref()).collect();
    assert!(!pruned.is_empty());
    for p in pruned {
        assert!(p.rounds.iter().all(|r| r.fallback.as_deref().is_some_and(|m| m.contains("PD_LLM"))));
    }
}
