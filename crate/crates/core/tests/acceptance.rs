//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use fusedec::eval::{targeted_accuracy, Corpus, MetricHandle, Segment, TargetedOptions};
use fusedec::fusion::{argmax, decode_corpus, fuse_logprobs, logsumexp, CorpusOptions, PromptPlan, ScorerSlot};
use fusedec::par::ExecMode;
use fusedec::prompting::{Pair, PromptSpec, Template};
use fusedec::scorer::{BackendSession, ScorerInfo};
use fusedec::toy::{build_planted_task, oracle_greedy, planted_vocab, ExactModel, PlantedOptions, Prob, Recorder};
use fusedec::tuning::{parse_grid, sweep, SweepOptions};
use fusedec::{greedy_decode, ConditioningSpec, DecodeConfig, Scorer, ScorerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn unprompted() -> PromptPlan {
    PromptPlan::new(Template::None, "English", "English")
}

fn hyps(results: &[fusedec::fusion::SegmentResult]) -> Result<Vec<String>, String> {
    results
        .iter()
        .map(|r| r.hypothesis().map(String::from).ok_or_else(|| format!("segment {} failed", r.segment_id)))
        .collect()
}

fn reduction() -> Check {
    let mut compared = 0;
    for seed in 1..=5 {
        let task = build_planted_task(seed, 200, PlantedOptions::default()).map_err(|e| e.to_string())?;
        let [mt, lm] = <[ScorerSlot; 2]>::try_from(task.scorers()).map_err(|_| "two scorers")?;
        let plan = unprompted();
        let run = |slots: &[ScorerSlot], cfg: &DecodeConfig| {
            decode_corpus(&task.test, slots, cfg, &plan, &task.vocab, CorpusOptions::default()).map_err(|e| e.to_string())
        };
        let mt_only = run(std::slice::from_ref(&mt), &DecodeConfig::new(vec![1.0]))?;
        let lm_only = run(std::slice::from_ref(&lm), &DecodeConfig::new(vec![1.0]))?;
        let pair = [mt.clone(), lm.clone()];
        for strict in [false, true] {
            for (lambda, single) in [(1.0, &mt_only), (0.0, &lm_only)] {
                let cfg = DecodeConfig::two_way(lambda);
                let cfg = if strict { cfg.strict() } else { cfg };
                let fused = run(&pair, &cfg)?;
                for (a, b) in fused.iter().zip(single.iter()) {
                    let (fusedec::fusion::Outcome::Ok(a), fusedec::fusion::Outcome::Ok(b)) = (&a.outcome, &b.outcome) else {
                        return Err(format!("seed {seed}: segment {} failed", a.segment_id));
                    };
                    let same_scores = a.steps.iter().zip(&b.steps).all(|(x, y)| x.fused_logprob.to_bits() == y.fused_logprob.to_bits());
                    ensure(a.text.as_bytes() == b.text.as_bytes() && a.token_ids == b.token_ids && same_scores, || {
                        format!("seed {seed} λ={lambda} strict={strict}: {:?} vs {:?}", a.text, b.text)
                    })?;
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("{compared} segment decodes byte-identical to single-model decoding"))
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let tasks: Vec<_> = (1..=5)
        .map(|s| build_planted_task(s, 50, PlantedOptions { with_pronouns: s != 5 }))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let max_len = 6;
    let mut cases = 0;
    for case in 0..200 {
        let task = &tasks[case % tasks.len()];
        let vocab = &task.vocab;
        let (mt, lm) = (task.mt(), task.lm());
        let segment = &task.valid.segments()[rng.gen_range(0..task.valid.len())];
        let n: i64 = rng.gen_range(0..=1000);
        let prompt = if case % 2 == 0 {
            String::new()
        } else {
            PromptSpec::baseline("English", "English", segment.src.clone()).render().map_err(|e| e.to_string())?
        };
        let src = ConditioningSpec::source(vocab.tokenize(&segment.src).map_err(|e| e.to_string())?);
        let prm = ConditioningSpec::prompt(prompt);
        let lambda = n as f64 / 1000.0;
        let cfg = DecodeConfig::two_way(lambda).with_max_len(max_len);
        let engine = greedy_decode(&[&mt, &lm], &[src.clone(), prm.clone()], &cfg, vocab).map_err(|e| e.to_string())?;
        let models: Vec<(&dyn ExactModel, ConditioningSpec)> = vec![(&mt, src), (&lm, prm)];
        let oracle = oracle_greedy(&models, &[Prob::new(n, 1000), Prob::new(1000 - n, 1000)], vocab.eos_id(), max_len)
            .map_err(|e| e.to_string())?;
        ensure(engine.token_ids == oracle, || {
            format!("case {case} (seed {}, λ={lambda}, {:?}): engine {:?} oracle {:?}", task.seed, segment.src, engine.token_ids, oracle)
        })?;
        cases += 1;
    }
    ensure(planted_vocab().len() <= 12, || "vocabulary larger than 12".into())?;
    Ok(format!("{cases} seeded cases agree token-for-token"))
}

fn random_logprobs(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..size)
        .map(|_| if rng.gen_bool(0.05) { f64::NEG_INFINITY } else { rng.gen_range(-30.0..10.0) })
        .collect();
    let finite = logits.iter().any(|x| x.is_finite());
    let logits = if finite { logits } else { vec![0.0; size] };
    let z = logsumexp(&logits);
    logits.into_iter().map(|x| x - z).collect()
}

fn fusion_math() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs = 10_000;
    for i in 0..pairs {
        let size = rng.gen_range(2..80);
        let a = random_logprobs(&mut rng, size);
        let b = random_logprobs(&mut rng, size);
        let lambda: f64 = match i % 10 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.0..=1.0),
        };
        let w = [lambda, 1.0 - lambda];
        let fused = fuse_logprobs(&[&a, &b], &w).map_err(|e| e.to_string())?;
        let lse = logsumexp(&fused);
        ensure(lse.abs() <= 1e-4, || format!("pair {i}: fused mass e^{lse}"))?;
        for v in 0..size {
            let linear = lambda * a[v].exp() + (1.0 - lambda) * b[v].exp();
            let got = fused[v].exp();
            let rel = if linear == 0.0 { got } else { (got - linear).abs() / linear };
            ensure(rel <= 1e-9, || format!("pair {i} entry {v}: exp(log-domain) {got} vs linear {linear}"))?;
        }
        let fixed = fuse_logprobs(&[&a, &a], &w).map_err(|e| e.to_string())?;
        for v in 0..size {
            let ok = (fixed[v] == a[v]) || (fixed[v] - a[v]).abs() <= 1e-12 * a[v].abs().max(1.0);
            ensure(ok, || format!("pair {i}: mixing a distribution with itself moved entry {v}"))?;
        }
        // Tie determinism: duplicate the maximum at a later id.
        let mut tied = a.clone();
        let top = argmax(&tied).ok_or("empty argmax")? as usize;
        let later = rng.gen_range(0..size);
        tied[later] = tied[top];
        let expected = top.min(later);
        for _ in 0..3 {
            ensure(argmax(&tied) == Some(expected as u32), || format!("pair {i}: tie not broken to lowest id"))?;
        }
    }
    Ok(format!("{pairs} randomized pairs: normalization, fixed point, log/linear agreement, ties"))
}

fn weaker_model_helps() -> Check {
    let grid = parse_grid("0:1:0.1").map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for seed in 1..=5 {
        let task = build_planted_task(seed, 200, PlantedOptions::default()).map_err(|e| e.to_string())?;
        let (r, _) = sweep(
            &task.valid,
            &task.scorers(),
            &DecodeConfig::two_way(1.0),
            &unprompted(),
            &task.vocab,
            &grid,
            &MetricHandle::TokenAccuracy,
            &SweepOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let best = r.best().score;
        let endpoints = r.score_at(0.0).unwrap_or(0.0).max(r.score_at(1.0).unwrap_or(0.0));
        ensure(r.best_lambda > 0.0 && r.best_lambda < 1.0, || format!("seed {seed}: best λ = {}", r.best_lambda))?;
        ensure(best - endpoints >= 2.0, || format!("seed {seed}: best {best:.2} vs endpoints {endpoints:.2}"))?;
        summary.push(format!("seed {seed}: λ*={} {best:.1} vs {endpoints:.1}", r.best_lambda));
    }
    Ok(summary.join("; "))
}

fn prompt_fixtures() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts");
    let de_en = |template, src: &str| PromptSpec {
        template,
        src_language: "German".into(),
        tgt_language: "English".into(),
        src: src.into(),
        ..Default::default()
    };
    let cases = [
        ("baseline.txt", de_en(Template::Baseline, "Hallo.")),
        ("domain.txt", PromptSpec { style: Some("TED talk".into()), ..de_en(Template::Domain, "Danke, dass Sie gekommen sind.") }),
        (
            "few_shot.txt",
            PromptSpec {
                shots: vec![Pair::new("Guten Morgen.", "Good morning."), Pair::new("Wie geht es dir?", "How are you?")],
                ..de_en(Template::FewShot, "Das Wetter ist schön.")
            },
        ),
        (
            "context.txt",
            PromptSpec {
                template: Template::Context,
                src_language: "English".into(),
                tgt_language: "German".into(),
                context: vec![
                    Pair::new("The doctor arrived late.", "Die Ärztin kam spät."),
                    Pair::new("She apologised.", "Sie entschuldigte sich."),
                ],
                src: "Then she laughed.".into(),
                ..Default::default()
            },
        ),
        ("none.txt", de_en(Template::None, "Hallo.")),
    ];
    for (file, spec) in &cases {
        let golden = fs::read(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        let rendered = spec.render().map_err(|e| e.to_string())?;
        ensure(rendered.as_bytes() == golden.as_slice(), || format!("{file}: rendered {rendered:?}"))?;
    }
    Ok(format!("{} templates match golden files byte-for-byte", cases.len()))
}

/// Source text of the last `{src}` line and the context pairs of a rendered context prompt.
fn parse_context_prompt(prompt: &str) -> (String, Vec<(String, String)>) {
    let lines: Vec<&str> = prompt.lines().collect();
    let body = &lines[1..lines.len() - 2];
    let pairs = body
        .chunks(2)
        .map(|c| (c[0].trim_start_matches("English: ").to_string(), c[1].trim_start_matches("Target: ").to_string()))
        .collect();
    (lines[lines.len() - 2].trim_start_matches("English: ").to_string(), pairs)
}

fn context_threading() -> Check {
    let task = build_planted_task(2, 50, PlantedOptions::default()).map_err(|e| e.to_string())?;
    let nouns = ["man", "king", "woman", "queen"];
    let verbs = ["runs", "sleeps", "eats"];
    let mut segments = Vec::new();
    let docs = [("d1", 5), ("d2", 3), ("d3", 4)];
    let mut k = 0;
    for (doc, len) in docs {
        for _ in 0..len {
            let src = format!("{} PRON {}", nouns[k % 4], verbs[(k / 4) % 3]);
            segments.push(Segment { doc_id: Some(doc.into()), ..Segment::new(format!("s{k}"), src) });
            k += 1;
        }
    }
    // Interleave documents so grouping is exercised.
    segments.sort_by_key(|s| s.id.trim_start_matches('s').parse::<usize>().unwrap_or(0) % 3);
    let corpus = Corpus::new(segments).map_err(|e| e.to_string())?;
    let window = 2;
    let plan = PromptPlan { context_size: window, ..PromptPlan::new(Template::Context, "English", "Target") };
    let recorder = Recorder::new(Arc::new(task.lm()));
    let slots = [ScorerSlot::source(Arc::new(task.mt())), ScorerSlot::prompt(Arc::new(recorder.clone()))];
    let results = decode_corpus(&corpus, &slots, &DecodeConfig::two_way(0.5), &plan, &task.vocab, CorpusOptions::default())
        .map_err(|e| e.to_string())?;
    let outputs = hyps(&results)?;

    let prompts: HashMap<String, String> = recorder
        .traces()
        .into_iter()
        .filter_map(|t| match t.conditioning {
            ConditioningSpec::PromptConditioned { prompt } => Some(prompt),
            ConditioningSpec::SourceConditioned { .. } => None,
        })
        .map(|p| (parse_context_prompt(&p).0, p))
        .collect();
    ensure(prompts.len() == corpus.len(), || format!("{} prompts for {} segments", prompts.len(), corpus.len()))?;

    for doc in corpus.documents() {
        let mut earlier: Vec<(String, String)> = Vec::new();
        for &i in &doc.indices {
            let seg = &corpus.segments()[i];
            let prompt = prompts.get(&seg.src).ok_or_else(|| format!("no prompt for {}", seg.id))?;
            let (_, pairs) = parse_context_prompt(prompt);
            let expected: Vec<(String, String)> = earlier[earlier.len().saturating_sub(window)..].to_vec();
            ensure(pairs == expected, || format!("{}: context {pairs:?}, expected {expected:?}", seg.id))?;
            earlier.push((seg.src.clone(), outputs[i].clone()));
        }
    }
    Ok(format!("{} prompts across {} documents carry exactly their own prior outputs", corpus.len(), docs.len()))
}

fn targeted_checker() -> Check {
    // (phenomenon, acceptable forms, hypothesis, correct case-sensitive, correct case-folded)
    let fixture: [(&str, &[&str], &str, bool, bool); 12] = [
        ("gender", &["sie", "Sie"], "Dann hat sie gelacht", true, true),
        ("gender", &["er"], "Der Hund bellt", false, false),
        ("gender", &["ihr"], "Ihr Buch liegt hier", false, true),
        ("gender", &["seine", "seiner", "seinen"], "mit seinen Freunden", true, true),
        ("formality", &["Sie"], "Können sie mir helfen?", false, true),
        ("formality", &["du"], "Kannst du kommen?", true, true),
        ("formality", &["Ihnen"], "Ich danke ihnen.", false, true),
        ("formality", &["Sie", "Ihnen"], "Sieben Tage", false, false),
        ("auxiliary", &["wird"], "er würde gehen", false, false),
        ("auxiliary", &["hat", "hatte"], "Sie hatte es vergessen.", true, true),
        ("auxiliary", &["ist"], "Das istgut", false, false),
        ("inflection", &["kleinen Hund"], "Ich sehe den kleinen Hund.", true, true),
    ];
    let segments = fixture
        .iter()
        .enumerate()
        .map(|(i, (p, forms, _, _, _))| Segment {
            phenomenon: Some(p.to_string()),
            target_words: forms.iter().map(|f| f.to_string()).collect(),
            ..Segment::new(i.to_string(), "src")
        })
        .collect();
    let corpus = Corpus::new(segments).map_err(|e| e.to_string())?;
    let hyps: Vec<&str> = fixture.iter().map(|f| f.2).collect();
    // Hand-computed percentages.
    let expected_cs = [("auxiliary", 1, 3), ("formality", 1, 4), ("gender", 2, 4), ("inflection", 1, 1)];
    let expected_cf = [("auxiliary", 1, 3), ("formality", 3, 4), ("gender", 3, 4), ("inflection", 1, 1)];
    for (case_fold, expected) in [(false, expected_cs), (true, expected_cf)] {
        let table = targeted_accuracy(&corpus, &hyps, TargetedOptions { case_fold }).map_err(|e| e.to_string())?;
        ensure(table.rows.len() == expected.len(), || format!("rows {:?}", table.rows))?;
        for (row, (name, correct, total)) in table.rows.iter().zip(expected) {
            let pct = 100.0 * correct as f64 / total as f64;
            ensure(row.phenomenon == name && row.correct == correct && row.total == total && row.percent == pct, || {
                format!("case_fold={case_fold}: got {row:?}, expected {name} {correct}/{total}")
            })?;
        }
    }
    let per_segment = fixture.iter().all(|(p, forms, h, cs, cf)| {
        let one = Corpus::new(vec![Segment {
            phenomenon: Some(p.to_string()),
            target_words: forms.iter().map(|f| f.to_string()).collect(),
            ..Segment::new("x", "src")
        }])
        .expect("valid");
        let at = |fold| targeted_accuracy(&one, &[*h], TargetedOptions { case_fold: fold }).expect("lengths match").rows[0].correct == 1;
        at(false) == *cs && at(true) == *cf
    });
    ensure(per_segment, || "a per-segment verdict differs from the hand enumeration".into())?;
    Ok("12-segment fixture matches hand-computed accuracies, with and without case folding".into())
}

/// Delegates to a scorer but refuses new sessions once `budget` is spent.
struct Crashing {
    inner: Arc<dyn Scorer>,
    budget: usize,
    opened: AtomicUsize,
}

impl Scorer for Crashing {
    fn info(&self) -> ScorerInfo {
        self.inner.info()
    }

    fn open(&self, c: &ConditioningSpec) -> Result<Box<dyn BackendSession>, ScorerError> {
        if self.opened.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(ScorerError::ScorerUnavailable("simulated crash".into()));
        }
        self.inner.open(c)
    }
}

fn sweep_resumability() -> Check {
    let task = build_planted_task(1, 60, PlantedOptions::default()).map_err(|e| e.to_string())?;
    let grid = parse_grid("0:1:0.1").map_err(|e| e.to_string())?;
    let n = task.valid.len();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_dir = dir.path().join("runs/resume");
    let base = DecodeConfig::two_way(1.0);
    let plan = unprompted();
    let options = |cache: bool| SweepOptions {
        run_dir: cache.then(|| run_dir.clone()),
        corpus: CorpusOptions { fail_fast: true, exec: ExecMode::Sequential },
    };
    let metric = MetricHandle::TokenAccuracy;

    // λ = 0 opens no translation sessions, so the crash budget counts the language model.
    let crash_lm = Arc::new(Crashing { inner: Arc::new(task.lm()), budget: 3 * n + n / 2, opened: AtomicUsize::new(0) });
    let crashing = [ScorerSlot::source(Arc::new(task.mt())), ScorerSlot::prompt(crash_lm)];
    let first = sweep(&task.valid, &crashing, &base, &plan, &task.vocab, &grid, &metric, &options(true));
    ensure(first.is_err(), || "interrupted sweep unexpectedly finished".into())?;
    let cached = grid.iter().filter(|l| run_dir.join(format!("lambda-{l}/hyp.txt")).exists()).count();
    ensure(cached == 3, || format!("{cached} points cached after the crash"))?;

    let mt_rec = Recorder::new(Arc::new(task.mt()));
    let lm_rec = Recorder::new(Arc::new(task.lm()));
    let slots = [ScorerSlot::source(Arc::new(mt_rec.clone())), ScorerSlot::prompt(Arc::new(lm_rec.clone()))];
    let (resumed, stats) = sweep(&task.valid, &slots, &base, &plan, &task.vocab, &grid, &metric, &options(true)).map_err(|e| e.to_string())?;
    // A decoding pass opens one session per segment on whichever side has weight.
    let passes_lm = lm_rec.traces().len() / n;
    let passes_mt = mt_rec.traces().len() / n;
    let expected_lm = grid[3..].iter().filter(|&&l| l < 1.0).count();
    let expected_mt = grid[3..].iter().filter(|&&l| l > 0.0).count();
    ensure(stats.decoded == 8 && stats.reused == 3, || format!("{stats:?}"))?;
    ensure(passes_lm == expected_lm && passes_mt == expected_mt, || format!("sessions: lm {passes_lm} passes, mt {passes_mt} passes"))?;

    let (fresh, _) = sweep(&task.valid, &task.scorers(), &base, &plan, &task.vocab, &grid, &metric, &options(false)).map_err(|e| e.to_string())?;
    ensure(resumed == fresh, || "resumed sweep differs from an uninterrupted one".into())?;
    let (again, stats) = sweep(&task.valid, &task.scorers(), &base, &plan, &task.vocab, &grid, &metric, &options(true)).map_err(|e| e.to_string())?;
    ensure(stats.decoded == 0 && again == fresh, || format!("rerun of a finished sweep: {stats:?}"))?;
    Ok("crash after 3 of 11 points; restart decoded exactly 8 and matched an uninterrupted sweep".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("reduction", reduction),
        ("oracle-equivalence", oracle_equivalence),
        ("fusion-math", fusion_math),
        ("weaker-model-helps", weaker_model_helps),
        ("prompt-byte-exactness", prompt_fixtures),
        ("context-threading", context_threading),
        ("targeted-accuracy", targeted_checker),
        ("sweep-resumability", sweep_resumability),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
