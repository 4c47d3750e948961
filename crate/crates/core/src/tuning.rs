//! Grid search for the mixing weight λ.
//!
//! Each grid point decodes the validation corpus with weights `[λ, 1 − λ]` and
//! scores it. With a run directory, each finished point's hypotheses are
//! written atomically to `<run-dir>/lambda-<λ>/hyp.txt`; a rerun reuses every
//! complete file and decodes only the missing points. `<run-dir>/config.json`
//! fingerprints the settings so a cache from a different setup is refused
//! rather than silently reused.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::metric::{self, references, MetricError, MetricHandle};
use crate::eval::Corpus;
use crate::fusion::{decode_corpus, CorpusError, CorpusOptions, DecodeConfig, DecodeError, PromptPlan, ScorerSlot};
use crate::vocab::Vocabulary;

pub const FINGERPRINT_FILE: &str = "config.json";
pub const HYP_FILE: &str = "hyp.txt";

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("sweep needs exactly two scorers, got {0}")]
    ScorerCount(usize),
    #[error(transparent)]
    Config(#[from] DecodeError),
    #[error("λ = {lambda}: {source}")]
    Corpus {
        lambda: f64,
        #[source]
        source: CorpusError,
    },
    #[error("λ = {lambda}: {source}")]
    Metric {
        lambda: f64,
        #[source]
        source: MetricError,
    },
    #[error(transparent)]
    References(MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} was written by a different sweep configuration; use a new run id")]
    CacheMismatch { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TuningError + '_ {
    move |source| TuningError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub score: f64,
    pub n_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ascending λ, exactly the configured grid.
    pub points: Vec<SweepPoint>,
    pub best_lambda: f64,
    pub metric_name: String,
}

/// Flat summary written beside the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub metric_name: String,
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub best_lambda: f64,
}

impl SweepResult {
    /// Picks the best point; equal scores go to the smallest λ.
    pub fn from_points(points: Vec<SweepPoint>, metric_name: impl Into<String>) -> Result<Self, TuningError> {
        let first = points.first().ok_or_else(|| TuningError::InvalidGrid("no points".into()))?;
        let best = points.iter().fold(*first, |best, p| if p.score > best.score { *p } else { best });
        Ok(SweepResult { best_lambda: best.lambda, points, metric_name: metric_name.into() })
    }

    pub fn best(&self) -> &SweepPoint {
        self.points.iter().find(|p| p.lambda == self.best_lambda).expect("best λ is a grid point")
    }

    pub fn score_at(&self, lambda: f64) -> Option<f64> {
        self.points.iter().find(|p| p.lambda == lambda).map(|p| p.score)
    }

    pub fn summary(&self) -> SweepSummary {
        SweepSummary {
            metric_name: self.metric_name.clone(),
            grid: self.points.iter().map(|p| p.lambda).collect(),
            scores: self.points.iter().map(|p| p.score).collect(),
            best_lambda: self.best_lambda,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,score,n_segments\n");
        for p in &self.points {
            out.push_str(&format!("{},{:.6},{}\n", p.lambda, p.score, p.n_segments));
        }
        out
    }
}

pub fn emit_sweep_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<(), TuningError> {
    let path = path.as_ref();
    fs::write(path, result.to_csv()).map_err(io_err(path))
}

pub fn emit_sweep_summary(result: &SweepResult, path: impl AsRef<Path>) -> Result<(), TuningError> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(&result.summary()).expect("summary serialises");
    fs::write(path, json + "\n").map_err(io_err(path))
}

/// Rounds away float noise from grid arithmetic, e.g. `0.30000000000000004 → 0.3`.
fn clean(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// `"lo:hi:step"` (inclusive) or a comma-separated list. The result is sorted and deduplicated.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, TuningError> {
    let bad = |why: &str| TuningError::InvalidGrid(format!("{spec:?}: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let mut grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else { return Err(bad("expected lo:hi:step")) };
        let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
        if step <= 0.0 || hi < lo {
            return Err(bad("need step > 0 and lo ≤ hi"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| clean(lo + i as f64 * step)).collect::<Vec<_>>()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    validate_grid(&mut grid)?;
    Ok(grid)
}

fn validate_grid(grid: &mut Vec<f64>) -> Result<(), TuningError> {
    if grid.is_empty() {
        return Err(TuningError::InvalidGrid("empty grid".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(TuningError::InvalidGrid(format!("λ = {l} outside [0, 1]")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(())
}

/// Directory name of a grid point.
pub fn lambda_dir_name(lambda: f64) -> String {
    format!("lambda-{lambda}")
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// `runs/<run-id>`; `None` disables caching.
    pub run_dir: Option<PathBuf>,
    pub corpus: CorpusOptions,
}

/// How many grid points were decoded versus read back from the cache.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub decoded: usize,
    pub reused: usize,
}

#[derive(Serialize)]
struct Fingerprint<'a> {
    vocab_hash: String,
    scorers: Vec<String>,
    template: String,
    src_language: &'a str,
    tgt_language: &'a str,
    style: &'a Option<String>,
    shots: usize,
    context_size: usize,
    max_len: Option<usize>,
    skip_zero_weight: bool,
    corpus_ids: Vec<&'a str>,
}

fn fingerprint(corpus: &Corpus, scorers: &[ScorerSlot], base: &DecodeConfig, plan: &PromptPlan, vocab: &Vocabulary) -> String {
    let fp = Fingerprint {
        vocab_hash: vocab.hash().to_hex(),
        scorers: scorers.iter().map(|s| format!("{:?}:{}", s.role, s.scorer.info().name)).collect(),
        template: plan.template.to_string(),
        src_language: &plan.src_language,
        tgt_language: &plan.tgt_language,
        style: &plan.style,
        shots: plan.shots.len(),
        context_size: plan.context_size,
        max_len: base.max_len,
        skip_zero_weight: base.skip_zero_weight,
        corpus_ids: corpus.segments().iter().map(|s| s.id.as_str()).collect(),
    };
    serde_json::to_string_pretty(&fp).expect("fingerprint serialises") + "\n"
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), TuningError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents.as_bytes()).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| TuningError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn read_cached(path: &Path, n_segments: usize) -> Result<Option<Vec<String>>, TuningError> {
    match fs::read_to_string(path) {
        Ok(text) => {
            let lines: Vec<String> = text.lines().map(String::from).collect();
            Ok((lines.len() == n_segments).then_some(lines))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(TuningError::Io { path: path.to_path_buf(), source }),
    }
}

/// Decodes and scores the validation corpus at every grid point.
///
/// Failed segments score as empty hypotheses. Grid points run one after
/// another; segments within a point follow `options.corpus`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    valid: &Corpus,
    scorers: &[ScorerSlot],
    base: &DecodeConfig,
    plan: &PromptPlan,
    vocab: &Vocabulary,
    grid: &[f64],
    metric: &MetricHandle,
    options: &SweepOptions,
) -> Result<(SweepResult, SweepStats), TuningError> {
    if scorers.len() != 2 {
        return Err(TuningError::ScorerCount(scorers.len()));
    }
    let mut grid = grid.to_vec();
    validate_grid(&mut grid)?;
    let refs = match metric {
        MetricHandle::ExternalCommand { .. } => {
            valid.segments().iter().map(|s| s.reference.clone().unwrap_or_default()).collect()
        }
        _ => references(valid).map_err(TuningError::References)?,
    };

    if let Some(run_dir) = &options.run_dir {
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let fp_path = run_dir.join(FINGERPRINT_FILE);
        let fp = fingerprint(valid, scorers, base, plan, vocab);
        match fs::read_to_string(&fp_path) {
            Ok(existing) if existing != fp => return Err(TuningError::CacheMismatch { path: fp_path }),
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&fp_path, &fp)?,
            Err(source) => return Err(TuningError::Io { path: fp_path, source }),
        }
    }

    let mut stats = SweepStats::default();
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let cache = options.run_dir.as_ref().map(|d| d.join(lambda_dir_name(lambda)).join(HYP_FILE));
        let cached = match &cache {
            Some(path) => read_cached(path, valid.len())?,
            None => None,
        };
        let hyps = match cached {
            Some(hyps) => {
                log::info!("λ = {lambda}: reusing {}", cache.as_ref().expect("cached implies path").display());
                stats.reused += 1;
                hyps
            }
            None => {
                log::info!("λ = {lambda}: decoding {} segments", valid.len());
                let cfg = DecodeConfig { weights: vec![lambda, 1.0 - lambda], ..base.clone() };
                cfg.validate()?;
                let results = decode_corpus(valid, scorers, &cfg, plan, vocab, options.corpus)
                    .map_err(|source| TuningError::Corpus { lambda, source })?;
                stats.decoded += 1;
                let hyps: Vec<String> = results.iter().map(|r| r.hypothesis().unwrap_or("").to_string()).collect();
                if let Some(path) = &cache {
                    let dir = path.parent().expect("cache file has a parent");
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                    write_atomic(path, &hyps.iter().map(|h| format!("{h}\n")).collect::<String>())?;
                }
                hyps
            }
        };
        let score = metric::score(metric, &hyps, &refs).map_err(|source| TuningError::Metric { lambda, source })?;
        points.push(SweepPoint { lambda, score, n_segments: valid.len() });
    }
    Ok((SweepResult::from_points(points, metric.name())?, stats))
}
