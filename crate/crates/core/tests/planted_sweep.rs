//! Planted-task sweeps through the public API.

use fusedec::eval::{targeted_accuracy, MetricHandle, TargetedOptions};
use fusedec::fusion::{decode_corpus, CorpusOptions, PromptPlan};
use fusedec::par::ExecMode;
use fusedec::prompting::Template;
use fusedec::toy::{build_planted_task, PlantedOptions};
use fusedec::tuning::{parse_grid, sweep, SweepOptions};
use fusedec::DecodeConfig;

fn plan() -> PromptPlan {
    PromptPlan::new(Template::None, "English", "English")
}

#[test]
fn endpoint_dominance_without_pronouns() {
    let task = build_planted_task(2, 60, PlantedOptions { with_pronouns: false }).unwrap();
    let grid = parse_grid("0,1").unwrap();
    let (r, _) = sweep(&task.valid, &task.scorers(), &DecodeConfig::two_way(1.0), &plan(), &task.vocab, &grid, &MetricHandle::TokenAccuracy, &SweepOptions::default()).unwrap();
    assert_eq!(r.best_lambda, 1.0);
    assert_eq!(r.score_at(1.0), Some(100.0));
}

#[test]
fn sequential_and_parallel_agree() {
    let task = build_planted_task(5, 120, PlantedOptions::default()).unwrap();
    let cfg = DecodeConfig::two_way(0.4);
    let run = |exec| decode_corpus(&task.test, &task.scorers(), &cfg, &plan(), &task.vocab, CorpusOptions { fail_fast: false, exec }).unwrap();
    assert_eq!(run(ExecMode::Sequential), run(ExecMode::Parallel));
    assert_eq!(run(ExecMode::Sequential), run(ExecMode::Threads(3)));
}

#[test]
fn sweeps_are_repeatable() {
    let task = build_planted_task(3, 60, PlantedOptions::default()).unwrap();
    let grid = parse_grid("0:1:0.25").unwrap();
    let go = || sweep(&task.valid, &task.scorers(), &DecodeConfig::two_way(1.0), &plan(), &task.vocab, &grid, &MetricHandle::Chrf, &SweepOptions::default()).unwrap().0;
    assert_eq!(go(), go());
}

#[test]
fn interior_lambda_fixes_pronouns() {
    let task = build_planted_task(1, 80, PlantedOptions::default()).unwrap();
    let gender = |lambda: f64| {
        let results = decode_corpus(&task.test, &task.scorers(), &DecodeConfig::two_way(lambda), &plan(), &task.vocab, CorpusOptions::default()).unwrap();
        let hyps: Vec<&str> = results.iter().map(|r| r.hypothesis().unwrap()).collect();
        targeted_accuracy(&task.test, &hyps, TargetedOptions::default()).unwrap().get("gender").unwrap().percent
    };
    assert!(gender(1.0) < 100.0);
    assert_eq!(gender(0.5), 100.0);
}

#[test]
fn cache_refuses_other_configuration() {
    let task = build_planted_task(1, 50, PlantedOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let options = SweepOptions { run_dir: Some(dir.path().join("r")), ..Default::default() };
    let grid = [0.5];
    sweep(&task.valid, &task.scorers(), &DecodeConfig::two_way(1.0), &plan(), &task.vocab, &grid, &MetricHandle::Chrf, &options).unwrap();
    let other = PromptPlan::new(Template::Baseline, "English", "English");
    let err = sweep(&task.valid, &task.scorers(), &DecodeConfig::two_way(1.0), &other, &task.vocab, &grid, &MetricHandle::Chrf, &options).unwrap_err();
    assert!(err.to_string().contains("different sweep configuration"), "{err}");
}
