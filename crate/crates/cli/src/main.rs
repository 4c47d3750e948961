//! `fusedec` command-line interface.
//!
//! Scorer addresses (`--mt`, `--llm`, `--scorer`):
//!
//! * `tcp://host:port` connects to a running wire-protocol server;
//! * `toy-lexicon:<config.json>` / `toy-ngram:<config.json>` load a toy scorer in process;
//! * anything else is a backend command line, split on whitespace and spawned
//!   without a shell, speaking the protocol over its stdin/stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fusedec::eval::metric::{references, score};
use fusedec::eval::report::{emit_report, Report, SystemRow};
use fusedec::eval::{targeted_accuracy, Corpus, MetricHandle, TargetedOptions};
use fusedec::fusion::{decode_corpus, CorpusOptions, Outcome, PromptPlan, ScorerSlot};
use fusedec::par::ExecMode;
use fusedec::prompting::{load_shots, LanguageNames, Template};
use fusedec::scorer::conformance::run_conformance;
use fusedec::scorer::server::{serve_stdio, serve_tcp};
use fusedec::scorer::{timeout_from_env, RemoteScorer};
use fusedec::toy::config::{load_toy_scorer, ToyKind};
use fusedec::toy::{build_planted_task, PlantedOptions};
use fusedec::tuning::{emit_sweep_csv, emit_sweep_summary, parse_grid, sweep, SweepOptions};
use fusedec::{ConditioningSpec, DecodeConfig, Scorer, Vocabulary};

#[derive(Parser)]
#[command(name = "fusedec", version, about = "Token-level ensembling of a translation model and a prompted language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a corpus with the fused ensemble.
    Decode(DecodeCmd),
    /// Grid-search λ on a validation corpus.
    Sweep(SweepCmd),
    /// Score hypotheses against a corpus.
    Eval(EvalCmd),
    /// Write a planted toy task.
    Toytask(ToytaskCmd),
    /// Serve a toy scorer over the wire protocol.
    ServeToy(ServeToyCmd),
    /// Run the scorer conformance checks against any scorer address.
    Conform(ConformCmd),
}

#[derive(Args)]
struct EngineArgs {
    /// Source-conditioned translation scorer.
    #[arg(long)]
    mt: String,
    /// Prompt-conditioned language-model scorer.
    #[arg(long)]
    llm: String,
    /// Shared target vocabulary.
    #[arg(long)]
    vocab: PathBuf,
    /// baseline, domain, few_shot, context or none.
    #[arg(long, default_value = "baseline")]
    prompt: Template,
    /// Source language code or display name.
    #[arg(long, default_value = "de")]
    src_lang: String,
    /// Target language code or display name.
    #[arg(long, default_value = "en")]
    tgt_lang: String,
    /// Style for the domain template.
    #[arg(long)]
    style: Option<String>,
    /// JSONL example pairs for the few_shot template.
    #[arg(long)]
    shots: Option<PathBuf>,
    /// Number of example pairs taken from --shots.
    #[arg(long, default_value_t = 5)]
    n_shots: usize,
    /// Previous sentences kept in context prompts.
    #[arg(long, default_value_t = fusedec::context::DEFAULT_WINDOW)]
    context_size: usize,
    /// Token cap per segment; default max(256, 2·|src| + 10).
    #[arg(long)]
    max_len: Option<usize>,
    /// Query zero-weight scorers too.
    #[arg(long)]
    strict: bool,
    /// Stop at the first failed segment.
    #[arg(long)]
    fail_fast: bool,
    /// Worker threads; 1 decodes sequentially, 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct DecodeCmd {
    #[command(flatten)]
    engine: EngineArgs,
    /// Weight on the translation scorer.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Plain-text source, one segment per line.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    src: Option<PathBuf>,
    /// Plain-text references aligned with --src.
    #[arg(long, requires = "src")]
    r#ref: Option<PathBuf>,
    /// JSONL corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricArgs {
    /// chrf, exact_match or token_accuracy.
    #[arg(long, default_value = "chrf")]
    metric: String,
    /// External metric command; receives the hypothesis and reference file paths.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    metric_cmd: Option<Vec<String>>,
}

impl MetricArgs {
    fn handle(&self) -> Result<MetricHandle> {
        Ok(match &self.metric_cmd {
            Some(argv) => MetricHandle::ExternalCommand { argv: argv.clone() },
            None => self.metric.parse()?,
        })
    }
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    metric: MetricArgs,
    /// Validation corpus (JSONL with references).
    #[arg(long)]
    valid: PathBuf,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long, default_value = "0:1:0.1")]
    grid: String,
    /// Cache directory name under --runs-dir.
    #[arg(long, default_value = "default")]
    run_id: String,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Disable the per-λ hypothesis cache.
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Also report targeted-word accuracy per phenomenon.
    #[arg(long)]
    ctxpro: bool,
    /// Case-insensitive targeted-word matching.
    #[arg(long)]
    case_fold: bool,
    /// System name in the report.
    #[arg(long, default_value = "system")]
    system: String,
    /// λ recorded in the report.
    #[arg(long)]
    lambda: Option<f64>,
    /// Report path stem; writes <stem>.md and <stem>.json.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ToytaskCmd {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Degenerate variant without the pronoun class.
    #[arg(long)]
    no_pronouns: bool,
}

#[derive(Args)]
struct ServeToyCmd {
    /// lexicon or ngram.
    #[arg(long)]
    model: ToyKind,
    #[arg(long)]
    config: PathBuf,
    /// host:port to listen on.
    #[arg(long, conflicts_with = "stdio", required_unless_present = "stdio")]
    listen: Option<String>,
    #[arg(long)]
    stdio: bool,
}

#[derive(Args)]
struct ConformCmd {
    #[arg(long)]
    scorer: String,
    #[arg(long)]
    vocab: PathBuf,
    /// Source text for a source-conditioned scorer.
    #[arg(long, conflicts_with = "prompt", required_unless_present = "prompt")]
    source: Option<String>,
    /// Prompt text for a prompt-conditioned scorer.
    #[arg(long)]
    prompt: Option<String>,
    /// Whitespace-separated tokens to append while probing.
    #[arg(long)]
    probe: String,
}

fn open_scorer(addr: &str) -> Result<Arc<dyn Scorer>> {
    let timeout = timeout_from_env();
    if let Some(hostport) = addr.strip_prefix("tcp://") {
        return Ok(Arc::new(RemoteScorer::connect_tcp(hostport, timeout).with_context(|| format!("connecting to {addr}"))?));
    }
    for (prefix, kind) in [("toy-lexicon:", ToyKind::Lexicon), ("toy-ngram:", ToyKind::NGram)] {
        if let Some(path) = addr.strip_prefix(prefix) {
            let (_, scorer) = load_toy_scorer(kind, path).with_context(|| format!("loading {addr}"))?;
            return Ok(scorer);
        }
    }
    let argv: Vec<String> = addr.split_whitespace().map(String::from).collect();
    if argv.is_empty() {
        bail!("empty scorer address");
    }
    Ok(Arc::new(RemoteScorer::spawn(&argv, timeout).with_context(|| format!("starting backend {addr:?}"))?))
}

fn exec_mode(threads: usize) -> ExecMode {
    match threads {
        0 => ExecMode::Parallel,
        1 => ExecMode::Sequential,
        n => ExecMode::Threads(n),
    }
}

struct Engine {
    vocab: Vocabulary,
    scorers: Vec<ScorerSlot>,
    base: DecodeConfig,
    plan: PromptPlan,
    options: CorpusOptions,
}

impl EngineArgs {
    fn build(&self) -> Result<Engine> {
        let vocab = Vocabulary::load(&self.vocab).with_context(|| format!("reading {}", self.vocab.display()))?;
        let scorers = vec![ScorerSlot::source(open_scorer(&self.mt)?), ScorerSlot::prompt(open_scorer(&self.llm)?)];
        let names = LanguageNames::default();
        let mut plan = PromptPlan::new(self.prompt, names.name(&self.src_lang), names.name(&self.tgt_lang));
        plan.style = self.style.clone();
        plan.context_size = self.context_size;
        if let Some(path) = &self.shots {
            plan.shots = load_shots(path, self.n_shots).with_context(|| format!("reading {}", path.display()))?;
        }
        let mut base = DecodeConfig::two_way(1.0);
        base.max_len = self.max_len;
        base.skip_zero_weight = !self.strict;
        Ok(Engine { vocab, scorers, base, plan, options: CorpusOptions { fail_fast: self.fail_fast, exec: exec_mode(self.threads) } })
    }
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn lines(items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    items.into_iter().map(|l| format!("{}\n", l.as_ref())).collect()
}

fn decode(cmd: DecodeCmd) -> Result<()> {
    let corpus = match (&cmd.corpus, &cmd.src) {
        (Some(path), _) => Corpus::load_jsonl(path)?,
        (None, Some(src)) => Corpus::load_plain(src, cmd.r#ref.as_deref())?,
        (None, None) => bail!("one of --corpus or --src is required"),
    };
    let engine = cmd.engine.build()?;
    let cfg = DecodeConfig { weights: vec![cmd.lambda, 1.0 - cmd.lambda], ..engine.base.clone() };
    cfg.validate()?;
    let results = decode_corpus(&corpus, &engine.scorers, &cfg, &engine.plan, &engine.vocab, engine.options)?;

    fs::create_dir_all(&cmd.out).with_context(|| format!("creating {}", cmd.out.display()))?;
    let hyps: Vec<&str> = results.iter().map(|r| r.hypothesis().unwrap_or("")).collect();
    write_file(&cmd.out.join("hyp.txt"), lines(&hyps))?;
    write_file(&cmd.out.join("results.jsonl"), lines(results.iter().map(|r| serde_json::to_string(r).expect("results serialise"))))?;
    let failed = results.iter().filter(|r| matches!(r.outcome, Outcome::Failed { .. })).count();
    if failed > 0 {
        log::warn!("{failed} of {} segments failed; see results.jsonl", results.len());
    }
    if let Ok(refs) = references(&corpus) {
        let chrf = score(&MetricHandle::Chrf, &hyps, &refs)?;
        let row = SystemRow {
            system: "ensemble".into(),
            lambda: Some(cmd.lambda),
            metric_name: "chrf".into(),
            score: chrf,
            n_segments: corpus.len(),
            failed,
        };
        emit_report(&Report { systems: vec![row], ..Default::default() }, cmd.out.join("report"))?;
        println!("chrf\t{chrf:.6}");
    }
    println!("decoded {} segments ({failed} failed) into {}", results.len(), cmd.out.display());
    Ok(())
}

fn run_sweep(cmd: SweepCmd) -> Result<()> {
    let valid = Corpus::load_jsonl(&cmd.valid)?;
    let engine = cmd.engine.build()?;
    let grid = parse_grid(&cmd.grid)?;
    let metric = cmd.metric.handle()?;
    let options = SweepOptions {
        run_dir: (!cmd.no_cache).then(|| cmd.runs_dir.join(&cmd.run_id)),
        corpus: engine.options,
    };
    let (result, stats) = sweep(&valid, &engine.scorers, &engine.base, &engine.plan, &engine.vocab, &grid, &metric, &options)?;
    fs::create_dir_all(&cmd.out).with_context(|| format!("creating {}", cmd.out.display()))?;
    let csv = cmd.out.join("sweep.csv");
    emit_sweep_csv(&result, &csv)?;
    emit_sweep_summary(&result, cmd.out.join("sweep.json"))?;
    let best = result.best();
    let report = Report {
        systems: vec![SystemRow {
            system: "ensemble".into(),
            lambda: Some(best.lambda),
            metric_name: result.metric_name.clone(),
            score: best.score,
            n_segments: best.n_segments,
            failed: 0,
        }],
        sweep: Some(result.summary()),
        sweep_csv: Some(csv.display().to_string()),
        accuracy: None,
    };
    emit_report(&report, cmd.out.join("report"))?;
    for p in &result.points {
        println!("{}\t{:.6}", p.lambda, p.score);
    }
    println!("best_lambda\t{}", result.best_lambda);
    println!("decoded {} grid points, reused {}", stats.decoded, stats.reused);
    Ok(())
}

fn eval(cmd: EvalCmd) -> Result<()> {
    let corpus = Corpus::load_jsonl(&cmd.corpus)?;
    let text = fs::read_to_string(&cmd.hyp).with_context(|| format!("reading {}", cmd.hyp.display()))?;
    let hyps: Vec<&str> = text.lines().collect();
    let metric = cmd.metric.handle()?;
    let refs: Vec<String> = match metric {
        MetricHandle::ExternalCommand { .. } => corpus.segments().iter().map(|s| s.reference.clone().unwrap_or_default()).collect(),
        _ => references(&corpus)?,
    };
    let value = score(&metric, &hyps, &refs)?;
    println!("{}\t{value:.6}", metric.name());
    let accuracy = if cmd.ctxpro {
        let table = targeted_accuracy(&corpus, &hyps, TargetedOptions { case_fold: cmd.case_fold })?;
        for row in &table.rows {
            println!("{}\t{}/{}\t{:.1}", row.phenomenon, row.correct, row.total, row.percent);
        }
        Some(table)
    } else {
        None
    };
    if let Some(stem) = &cmd.report {
        let row = SystemRow {
            system: cmd.system.clone(),
            lambda: cmd.lambda,
            metric_name: metric.name(),
            score: value,
            n_segments: corpus.len(),
            failed: 0,
        };
        let (md, _) = emit_report(&Report { systems: vec![row], accuracy, ..Default::default() }, stem)?;
        println!("report\t{}", md.display());
    }
    Ok(())
}

fn toytask(cmd: ToytaskCmd) -> Result<()> {
    let task = build_planted_task(cmd.seed, cmd.size, PlantedOptions { with_pronouns: !cmd.no_pronouns })?;
    task.write(&cmd.out)?;
    println!("wrote planted task (seed {}, {} segments per split) to {}", cmd.seed, cmd.size, cmd.out.display());
    Ok(())
}

fn serve_toy(cmd: ServeToyCmd) -> Result<()> {
    let (_, scorer) = load_toy_scorer(cmd.model, &cmd.config)?;
    match &cmd.listen {
        Some(addr) => {
            log::info!("serving {} on {addr}", scorer.info().name);
            serve_tcp(scorer, addr.as_str())?;
        }
        None => serve_stdio(scorer.as_ref())?,
    }
    Ok(())
}

fn conform(cmd: ConformCmd) -> Result<()> {
    let vocab = Vocabulary::load(&cmd.vocab)?;
    let scorer = open_scorer(&cmd.scorer)?;
    let cond = match (&cmd.source, &cmd.prompt) {
        (Some(src), _) => ConditioningSpec::source(vocab.tokenize(src)?),
        (None, Some(prompt)) => ConditioningSpec::prompt(prompt.clone()),
        (None, None) => bail!("one of --source or --prompt is required"),
    };
    let probe = vocab.tokenize(&cmd.probe)?;
    let report = run_conformance(scorer.as_ref(), &vocab, &cond, &probe);
    for line in report.lines() {
        println!("{line}");
    }
    if !report.all_passed() {
        bail!("conformance checks failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Decode(c) => decode(c),
        Command::Sweep(c) => run_sweep(c),
        Command::Eval(c) => eval(c),
        Command::Toytask(c) => toytask(c),
        Command::ServeToy(c) => serve_toy(c),
        Command::Conform(c) => conform(c),
    }
}
