use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hum_core::corpus::{
    build_sequences, chronological_split, export_jsonl, generate_synthetic, ingest_jsonl, Corpus, Phase, SplitCorpus,
};
use hum_core::encoder::{load_checkpoint, save_checkpoint, EncoderParams};
use hum_core::eval::{
    holdout_domain_eval, noise_experiment, rank_sequences, report_from_outcomes, Averaging, BucketReport, EvalContext,
    EvalReport, Metrics,
};
use hum_core::textio::Vocabulary;
use hum_core::trainloop::{train, Ablation, TrainSummary};
use serde::{Deserialize, Serialize};

pub use crate::artifacts::CONFIG_FILE;
use crate::artifacts::{read_json, sha256_bytes, sha256_file, write_atomic, write_json, Manifest};
use crate::config::{DataSource, RunConfig};
use crate::error::UsageError;
use crate::table;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const STEPS_CSV: &str = "history_steps.csv";
pub const UPDATES_CSV: &str = "history_updates.csv";
pub const VALIDATIONS_CSV: &str = "history_validations.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const BUCKETS_CSV: &str = "buckets.csv";
pub const NOISE_JSON: &str = "noise.json";
pub const NOISE_CSV: &str = "noise.csv";
pub const HOLDOUT_JSON: &str = "holdout.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const SWEEP_JSON: &str = "sweep.json";
pub const CURVE_CSV: &str = "curve.csv";
pub const EVAL_DIR: &str = "eval";

const METRIC_COLUMNS: [&str; 4] = ["R@5", "R@10", "N@5", "N@10"];

/// Corpus, split and vocabulary rebuilt from a config.
pub struct Prepared {
    pub split: SplitCorpus,
    pub vocab: Vocabulary,
    /// Hash of the interaction data the run read or generated.
    pub data_hash: String,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, String)> {
    let (corpus, hash) = match &cfg.data.source {
        DataSource::Synthetic => {
            let corpus = generate_synthetic(&cfg.gen)?;
            let hash = sha256_bytes(export_jsonl(&corpus).as_bytes());
            (corpus, hash)
        }
        DataSource::Jsonl { path } => {
            let hash = sha256_file(path)?;
            (ingest_jsonl(path)?.corpus, hash)
        }
    };
    let corpus = match cfg.data.k_core {
        Some(k) => corpus.k_core(k),
        None => corpus,
    };
    Ok((corpus, hash))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (corpus, data_hash) = load_corpus(cfg)?;
    let boundary = |q: f64| corpus.timestamp_quantile(q).ok_or(hum_core::Error::EmptyCorpus);
    let split = chronological_split(&corpus, boundary(cfg.data.valid_quantile)?, boundary(cfg.data.test_quantile)?)?;
    let vocab = Vocabulary::build(&split.corpus, cfg.data.min_token_count)?;
    Ok(Prepared { split, vocab, data_hash })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes the synthetic corpus as JSONL.
pub fn cmd_gen(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(UsageError("gen needs a synthetic data source".into()).into());
    }
    let dir = &cfg.out;
    create_dir(dir)?;
    let corpus = generate_synthetic(&cfg.gen)?;
    let path = dir.join(CORPUS_FILE);
    write_atomic(&path, export_jsonl(&corpus).as_bytes())?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let mut manifest = Manifest::new("gen");
    manifest.input("config", sha256_bytes(cfg.to_json().as_bytes()));
    manifest.finish(dir, &[CORPUS_FILE, CONFIG_FILE])?;
    log::info!(
        "wrote {} interactions over {} domains to {}",
        corpus.interactions.len(),
        corpus.n_domains(),
        path.display()
    );
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub dir: PathBuf,
    pub summary: TrainSummary,
}

/// Trains a model and writes its checkpoint, vocabulary and history.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainRun> {
    let dir = cfg.out.clone();
    create_dir(&dir)?;
    let prepared = prepare(cfg)?;
    let mut resolved = cfg.clone();
    if resolved.encoder.vocab_size == 0 {
        resolved.encoder.vocab_size = prepared.vocab.len();
    }
    resolved.save(&dir.join(CONFIG_FILE))?;

    let outcome = train(&prepared.split, &prepared.vocab, &resolved.encoder, &resolved.train).context("training failed")?;
    let history = &outcome.history;
    let summary = history.summary();
    save_checkpoint(
        &outcome.params,
        &prepared.vocab.hash(),
        summary.steps,
        resolved.eval.checkpoint_dtype,
        &dir.join(CHECKPOINT_FILE),
    )?;
    write_atomic(&dir.join(VOCAB_FILE), prepared.vocab.to_json().as_bytes())?;
    write_atomic(&dir.join(STEPS_CSV), history.steps_csv().as_bytes())?;
    write_atomic(&dir.join(UPDATES_CSV), history.updates_csv().as_bytes())?;
    write_atomic(&dir.join(VALIDATIONS_CSV), history.validations_csv().as_bytes())?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;

    let mut manifest = Manifest::new("train");
    manifest.input("data", prepared.data_hash);
    manifest.input("config", sha256_bytes(resolved.to_json().as_bytes()));
    manifest.finish(
        &dir,
        &[CONFIG_FILE, CHECKPOINT_FILE, VOCAB_FILE, STEPS_CSV, UPDATES_CSV, VALIDATIONS_CSV, SUMMARY_FILE],
    )?;
    log::info!(
        "trained {} steps, best validation {:?} at epoch {:?}",
        summary.steps,
        summary.best_score,
        summary.best_epoch
    );
    Ok(TrainRun { dir, summary })
}

/// Default checkpoint location for a config.
pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.out.join(CHECKPOINT_FILE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurvePoint {
    pub fraction: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub domain: u16,
    pub report: EvalReport,
}

/// Everything `cmd_eval` computed.
#[derive(Clone, Debug)]
pub struct EvalRun {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub buckets: BucketReport,
    pub noise: Vec<NoiseCurvePoint>,
    pub holdout: Vec<HoldoutReport>,
}

fn metric_csv_header() -> &'static str {
    "recall@5,recall@10,ndcg@5,ndcg@10"
}

fn metric_csv(m: &Metrics) -> String {
    m.values().map(|v| v.to_string()).join(",")
}

/// Evaluates a checkpoint on the test split. Outputs go to `<out>/eval`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalRun> {
    let dir = cfg.out.join(EVAL_DIR);
    create_dir(&dir)?;
    let prepared = prepare(cfg)?;
    let ckpt = load_checkpoint(checkpoint, Some(&prepared.vocab.hash()))
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let params: EncoderParams = ckpt.params;
    let split = &prepared.split;
    let ctx = EvalContext {
        corpus: &split.corpus,
        vocab: &prepared.vocab,
        inputs: cfg.train.ablation.input_options(params.config.max_len),
    };
    let test = cfg.train.sequences(split, Phase::Test)?;
    let outcomes = rank_sequences(&params, &ctx, &test)?;
    let report = report_from_outcomes(&split.corpus, &outcomes);
    let buckets = BucketReport::from_outcomes(&outcomes);
    cfg.save(&dir.join(CONFIG_FILE))?;
    write_json(&dir.join(REPORT_JSON), &report)?;
    write_atomic(&dir.join(REPORT_CSV), report.to_csv().as_bytes())?;
    write_atomic(&dir.join(BUCKETS_CSV), buckets.to_csv().as_bytes())?;
    let mut outputs = vec![CONFIG_FILE, REPORT_JSON, REPORT_CSV, BUCKETS_CSV];

    let mut holdout = Vec::new();
    if !cfg.train.holdout_domains.is_empty() {
        let all_test = build_sequences(split, Phase::Test, cfg.train.max_history)?.sequences;
        for &d in &cfg.train.holdout_domains {
            holdout.push(HoldoutReport {
                domain: d.0,
                report: holdout_domain_eval(&params, &ctx, &all_test, &cfg.train, d)?,
            });
        }
        write_json(&dir.join(HOLDOUT_JSON), &holdout)?;
        outputs.push(HOLDOUT_JSON);
    }

    let mut noise = Vec::new();
    if !cfg.eval.noise_fractions.is_empty() {
        noise = noise_experiment(
            &params,
            &ctx,
            split,
            &cfg.train,
            &cfg.eval.noise_fractions,
            cfg.eval.noise_items_per_user,
            cfg.eval.noise_seed,
        )?
        .into_iter()
        .map(|p| NoiseCurvePoint {
            fraction: p.fraction,
            report: p.report,
        })
        .collect();
        let mut csv = format!("fraction,{}\n", metric_csv_header());
        for p in &noise {
            let _ = writeln!(csv, "{},{}", p.fraction, metric_csv(p.report.average(cfg.eval.averaging)));
        }
        write_json(&dir.join(NOISE_JSON), &noise)?;
        write_atomic(&dir.join(NOISE_CSV), csv.as_bytes())?;
        outputs.extend([NOISE_JSON, NOISE_CSV]);
    }

    let mut manifest = Manifest::new("eval");
    manifest.input("data", prepared.data_hash);
    manifest.input("checkpoint", sha256_file(checkpoint)?);
    manifest.input("config", sha256_bytes(cfg.to_json().as_bytes()));
    manifest.finish(&dir, &outputs)?;
    Ok(EvalRun {
        dir,
        report,
        buckets,
        noise,
        holdout,
    })
}

/// The ablation matrix: display name, directory name and switches.
pub fn ablation_variants() -> Vec<(&'static str, &'static str, Ablation)> {
    let base = Ablation::default();
    vec![
        ("HUM", "full", base),
        ("HUM w/o prompt", "no_prompt", Ablation { no_prompt: true, ..base }),
        ("HUM w/o user token", "no_user_token", Ablation { no_user_token: true, ..base }),
        (
            "HUM w/o user token & prompt",
            "no_user_token_prompt",
            Ablation {
                no_prompt: true,
                no_user_token: true,
                ..base
            },
        ),
        ("HUM w/o mask", "no_mask", Ablation { no_mask: true, ..base }),
        ("HUM w/o DI", "no_di", Ablation { no_di: true, ..base }),
        ("HUM bidirectional", "bidirectional", Ablation { bidirectional: true, ..base }),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub dir: String,
    pub summary: TrainSummary,
    pub report: EvalReport,
}

fn metric_row(label: String, m: &Metrics) -> Vec<String> {
    std::iter::once(label).chain(m.values().map(table::metric)).collect()
}

fn variant_table(results: &[VariantResult], averaging: Averaging) -> String {
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| metric_row(r.variant.clone(), r.report.average(averaging)))
        .collect();
    let mut header = vec!["Variant"];
    header.extend(METRIC_COLUMNS);
    table::render(&header, &rows)
}

/// Trains and evaluates every ablation variant from the same base config.
/// Each variant gets its own directory under `<out>`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<VariantResult>> {
    let dir = cfg.out.clone();
    create_dir(&dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let mut results = Vec::new();
    for (name, slug, ablation) in ablation_variants() {
        let mut vcfg = cfg.clone();
        vcfg.train.ablation = ablation;
        vcfg.out = dir.join(slug);
        log::info!("ablation variant {name}");
        let run = cmd_train(&vcfg).with_context(|| format!("variant {name}"))?;
        let eval = cmd_eval(&vcfg, &run.dir.join(CHECKPOINT_FILE)).with_context(|| format!("variant {name}"))?;
        results.push(VariantResult {
            variant: name.to_string(),
            dir: slug.to_string(),
            summary: run.summary,
            report: eval.report,
        });
    }
    let mut csv = format!("variant,{}\n", metric_csv_header());
    for r in &results {
        let _ = writeln!(csv, "{},{}", r.variant, metric_csv(r.report.average(cfg.eval.averaging)));
    }
    write_json(&dir.join(ABLATION_JSON), &results)?;
    write_atomic(&dir.join(ABLATION_CSV), csv.as_bytes())?;
    write_atomic(&dir.join(ABLATION_TXT), variant_table(&results, cfg.eval.averaging).as_bytes())?;
    let mut manifest = Manifest::new("ablate");
    manifest.input("config", sha256_bytes(cfg.to_json().as_bytes()));
    manifest.finish(&dir, &[CONFIG_FILE, ABLATION_JSON, ABLATION_CSV, ABLATION_TXT])?;
    Ok(results)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    NDomains,
    /// Mask ratio.
    R,
    /// Noise fraction at evaluation time.
    Noise,
    /// Domain-weight step size.
    Alpha,
}

impl SweepKey {
    fn name(self) -> &'static str {
        match self {
            SweepKey::NDomains => "n_domains",
            SweepKey::R => "r",
            SweepKey::Noise => "noise",
            SweepKey::Alpha => "alpha",
        }
    }
}

/// One swept key and its values, written as `{"<key>": [v1, v2, ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| -> anyhow::Error { UsageError(m).into() };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| bad(format!("sweep spec is not JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| bad("sweep spec must be a JSON object".into()))?;
        if obj.len() != 1 {
            return Err(bad(format!("sweep spec needs exactly one key, found {}", obj.len())));
        }
        let (name, raw) = obj.iter().next().expect("one entry");
        let key = match name.as_str() {
            "n_domains" => SweepKey::NDomains,
            "r" => SweepKey::R,
            "noise" => SweepKey::Noise,
            "alpha" => SweepKey::Alpha,
            other => return Err(bad(format!("unknown sweep key {other:?}; expected n_domains, r, noise or alpha"))),
        };
        let values: Vec<f64> = raw
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_f64()).collect())
            .ok_or_else(|| bad(format!("values of {name} must be a list of numbers")))?;
        if values.is_empty() {
            return Err(bad(format!("{name} has no values")));
        }
        let ok = |v: f64| match key {
            SweepKey::NDomains => v >= 1.0 && v.fract() == 0.0,
            SweepKey::R | SweepKey::Noise => (0.0..=1.0).contains(&v),
            SweepKey::Alpha => v.is_finite() && v >= 0.0,
        };
        if let Some(v) = values.iter().find(|&&v| !ok(v)) {
            return Err(bad(format!("invalid {name} value {v}")));
        }
        Ok(SweepSpec { key, values })
    }

    /// Accepts inline JSON or a path to a JSON file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg.trim_start().starts_with('{') {
            return Self::parse(arg);
        }
        let text = fs::read_to_string(arg).map_err(|e| UsageError(format!("cannot read sweep spec {arg}: {e}")))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub key: SweepKey,
    pub value: f64,
    pub report: EvalReport,
}

fn point_config(cfg: &RunConfig, key: SweepKey, value: f64, dir: PathBuf) -> Result<RunConfig> {
    let mut p = cfg.clone();
    p.out = dir;
    match key {
        SweepKey::NDomains => {
            let n = value as usize;
            if p.gen.domain_weights.as_ref().is_some_and(|w| w.len() != n) {
                return Err(UsageError("domain_weights length conflicts with the n_domains sweep".into()).into());
            }
            p.gen.n_domains = n;
        }
        SweepKey::R => p.train.mask_ratio = value,
        SweepKey::Alpha => p.train.balance.alpha = value,
        SweepKey::Noise => unreachable!("noise points share one model"),
    }
    p.validate()?;
    Ok(p)
}

/// Runs one training and evaluation per sweep value, except for noise,
/// where one model is evaluated at every fraction.
pub fn cmd_sweep(cfg: &RunConfig, spec: &SweepSpec) -> Result<Vec<CurvePoint>> {
    let dir = cfg.out.clone();
    create_dir(&dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let mut points = Vec::new();
    if spec.key == SweepKey::Noise {
        let mut m = cfg.clone();
        m.out = dir.join("model");
        m.eval.noise_fractions = spec.values.clone();
        let run = cmd_train(&m)?;
        let eval = cmd_eval(&m, &run.dir.join(CHECKPOINT_FILE))?;
        points.extend(eval.noise.into_iter().map(|p| CurvePoint {
            key: spec.key,
            value: p.fraction,
            report: p.report,
        }));
    } else {
        for (i, &value) in spec.values.iter().enumerate() {
            let p = point_config(cfg, spec.key, value, dir.join(format!("point_{i:02}")))?;
            log::info!("sweep {} = {value}", spec.key.name());
            let run = cmd_train(&p)?;
            let eval = cmd_eval(&p, &run.dir.join(CHECKPOINT_FILE))?;
            points.push(CurvePoint {
                key: spec.key,
                value,
                report: eval.report,
            });
        }
    }
    let mut csv = format!("{},{},worst_ndcg@10\n", spec.key.name(), metric_csv_header());
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{}",
            p.value,
            metric_csv(p.report.average(cfg.eval.averaging)),
            p.report.worst_ndcg_at_10()
        );
    }
    write_json(&dir.join(SWEEP_JSON), &points)?;
    write_atomic(&dir.join(CURVE_CSV), csv.as_bytes())?;
    let mut manifest = Manifest::new("sweep");
    manifest.input("config", sha256_bytes(cfg.to_json().as_bytes()));
    manifest.input("spec", sha256_bytes(serde_json::to_string(spec)?.as_bytes()));
    manifest.finish(&dir, &[CONFIG_FILE, SWEEP_JSON, CURVE_CSV])?;
    Ok(points)
}

pub fn report_table(report: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .domains
        .iter()
        .map(|d| {
            let mut row = metric_row(d.name.clone(), &d.metrics);
            row.insert(1, d.n_sequences.to_string());
            row
        })
        .collect();
    for (label, m) in [("macro", &report.macro_avg), ("micro", &report.micro_avg)] {
        let mut row = metric_row(label.to_string(), m);
        row.insert(1, report.n_sequences.to_string());
        rows.push(row);
    }
    let mut header = vec!["Domain", "n"];
    header.extend(METRIC_COLUMNS);
    table::render(&header, &rows)
}

fn curve_table(points: &[CurvePoint], averaging: Averaging) -> String {
    let key = points.first().map_or("value", |p| p.key.name());
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut row = metric_row(p.value.to_string(), p.report.average(averaging));
            row.push(table::metric(p.report.worst_ndcg_at_10()));
            row
        })
        .collect();
    let mut header = vec![key];
    header.extend(METRIC_COLUMNS);
    header.push("worst N@10");
    table::render(&header, &rows)
}

/// Renders the reports found in a run directory as text tables.
pub fn cmd_report(dir: &Path, averaging: Averaging) -> Result<String> {
    let mut out = String::new();
    let mut found = false;
    if dir.join(ABLATION_JSON).exists() {
        let results: Vec<VariantResult> = read_json(&dir.join(ABLATION_JSON))?;
        out.push_str(&variant_table(&results, averaging));
        found = true;
    }
    if dir.join(SWEEP_JSON).exists() {
        let points: Vec<CurvePoint> = read_json(&dir.join(SWEEP_JSON))?;
        out.push_str(&curve_table(&points, averaging));
        found = true;
    }
    for candidate in [dir.to_path_buf(), dir.join(EVAL_DIR)] {
        if candidate.join(REPORT_JSON).exists() {
            let report: EvalReport = read_json(&candidate.join(REPORT_JSON))?;
            out.push_str(&report_table(&report));
            found = true;
            break;
        }
    }
    if !found {
        bail!(UsageError(format!("no reports found in {}", dir.display())));
    }
    Ok(out)
}
