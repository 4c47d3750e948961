//! The engine driving toy scorers across the wire protocol behaves exactly as in process.

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use fusedec::fusion::{decode_corpus, CorpusOptions, PromptPlan, ScorerSlot, SegmentResult};
use fusedec::prompting::Template;
use fusedec::scorer::conformance::run_conformance;
use fusedec::scorer::server::serve_listener;
use fusedec::scorer::RemoteScorer;
use fusedec::toy::{build_planted_task, PlantedOptions, PlantedTask};
use fusedec::{ConditioningSpec, DecodeConfig, Scorer};

fn serve(scorer: Arc<dyn Scorer>) -> Arc<dyn Scorer> {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || serve_listener(scorer, listener));
    Arc::new(RemoteScorer::connect_tcp(&addr, Duration::from_secs(10)).unwrap())
}

fn texts(results: &[SegmentResult]) -> Vec<String> {
    results.iter().map(|r| r.hypothesis().expect("segment decoded").to_string()).collect()
}

fn remote_pair(task: &PlantedTask) -> Vec<ScorerSlot> {
    vec![ScorerSlot::source(serve(Arc::new(task.mt()))), ScorerSlot::prompt(serve(Arc::new(task.lm())))]
}

#[test]
fn remote_decoding_matches_in_process() {
    let task = build_planted_task(4, 50, PlantedOptions::default()).unwrap();
    let local = task.scorers();
    let remote = remote_pair(&task);
    let plan = PromptPlan::new(Template::Baseline, "English", "English");
    for lambda in [0.0, 0.3, 0.7, 1.0] {
        for cfg in [DecodeConfig::two_way(lambda), DecodeConfig::two_way(lambda).strict()] {
            let a = decode_corpus(&task.test, &local, &cfg, &plan, &task.vocab, CorpusOptions::default()).unwrap();
            let b = decode_corpus(&task.test, &remote, &cfg, &plan, &task.vocab, CorpusOptions::default()).unwrap();
            assert_eq!(texts(&a), texts(&b), "λ = {lambda}");
        }
    }
}

#[test]
fn remote_toys_pass_conformance() {
    let task = build_planted_task(1, 50, PlantedOptions::default()).unwrap();
    let probe = task.vocab.tokenize("king he sleeps").unwrap();
    let mt = serve(Arc::new(task.mt()));
    let src = ConditioningSpec::source(task.vocab.tokenize("king PRON sleeps").unwrap());
    let report = run_conformance(mt.as_ref(), &task.vocab, &src, &probe);
    assert!(report.all_passed(), "{:?}", report.lines());
    let lm = serve(Arc::new(task.lm()));
    let report = run_conformance(lm.as_ref(), &task.vocab, &ConditioningSpec::prompt("queen she"), &probe);
    assert!(report.all_passed(), "{:?}", report.lines());
}
