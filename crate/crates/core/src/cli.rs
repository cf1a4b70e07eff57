//! Command-line pipeline: synth, extract-psych, build-targets, train, embed,
//! eval, analyze and report.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::analysis::{dim_psych_heatmap, modality_overlap, ngram_correlation, NgramTable};
use crate::config::{require, RunConfig};
use crate::data::{
    load_manifest, read_outcomes, read_store, split_dataset, write_store, DatasetSplit, EmbeddingStore,
    PersonRecord, SegmentRecord,
};
use crate::encoder::SyntheticStudent;
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_models, person_embeddings, ridge_cv, EvalReport};
use crate::losses::LossKind;
use crate::psych::{extract_psych, fit_scaler, standardize_matrix, Lexicon, ScalerParams, N_DIMS};
use crate::synth::{self, generate};
use crate::targets::{TargetBuilder, TargetKind, TargetMode};
use crate::trainer::{train, validate, TrainConfig, TrainHistory, TrainPair};

pub const PSYCH_FILE: &str = "psych.bin";
pub const TARGETS_FILE: &str = "targets.bin";
pub const SCALER_FILE: &str = "scaler.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "xmal", version, about = "Align a student audio encoder with text-teacher embeddings")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Score every manifest segment on the ten lexicon dimensions.
    ExtractPsych(ExtractArgs),
    /// Build alignment targets and the person-level split.
    BuildTargets(TargetArgs),
    /// Train the student and write a checkpoint.
    Train(TrainArgs),
    /// Encode every manifest segment with a checkpoint or a fresh init.
    Embed(EmbedArgs),
    /// Person-level ridge evaluation of one or more embedding stores.
    Eval(EvalArgs),
    /// Overlap, heatmap and n-gram analyses.
    Analyze(AnalyzeArgs),
    /// Synthetic end-to-end run comparing CS and NCE training.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub persons: Option<usize>,
    #[arg(long)]
    pub segments_per_person: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Semantic,
    Replacement,
    Projection,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub psych: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Cs,
    Nce,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Cs => LossKind::Cs,
            LossArg::Nce => LossKind::Nce,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Target store; `split.json` beside it is reused when present.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, conflicts_with = "untrained")]
    pub checkpoint: Option<PathBuf>,
    /// Encode with freshly initialized parameters (the untrained baseline).
    #[arg(long)]
    pub untrained: bool,
    /// Student width for `--untrained`; defaults to `model.d_model`.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Output file name inside `--out`.
    #[arg(long, default_value = EMBEDDINGS_FILE)]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `NAME=PATH`, repeatable.
    #[arg(long = "store", required = true, value_parser = parse_named)]
    pub stores: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub psych: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Correlate n-grams with observed rather than predicted outcomes.
    #[arg(long)]
    pub true_outcomes: bool,
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config(format!("config file {} does not exist", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a, out),
        Command::ExtractPsych(a) => cmd_extract_psych(&cfg, a, out),
        Command::BuildTargets(a) => cmd_build_targets(cfg, a, out),
        Command::Train(a) => cmd_train(cfg, a, out),
        Command::Embed(a) => cmd_embed(&cfg, a, out),
        Command::Eval(a) => cmd_eval(cfg, a, out),
        Command::Analyze(a) => cmd_analyze(&cfg, a, out),
        Command::Report(a) => cmd_report(cfg, a, out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &(json + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Flag value if given, else the configured path; either way it must exist.
fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    require(&flag.or_else(|| configured.clone()), key)
}

pub fn segment_person(records: &[SegmentRecord]) -> HashMap<String, String> {
    records
        .iter()
        .map(|r| (r.segment_id.clone(), r.person_id.clone()))
        .collect()
}

pub fn person_ids(records: &[SegmentRecord]) -> Vec<String> {
    let set: BTreeSet<&str> = records.iter().map(|r| r.person_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

fn segment_ids(records: &[SegmentRecord]) -> Vec<String> {
    records.iter().map(|r| r.segment_id.clone()).collect()
}

/// Person-level split of the manifest's persons.
pub fn person_split(records: &[SegmentRecord], cfg: &RunConfig) -> Result<DatasetSplit> {
    let [a, b, c] = cfg.data.split;
    split_dataset(&person_ids(records), (a, b, c), cfg.train.seed)
}

fn rows_for(records: &[SegmentRecord], persons: &[String]) -> Vec<usize> {
    let keep: BTreeSet<&str> = persons.iter().map(String::as_str).collect();
    (0..records.len())
        .filter(|&i| keep.contains(records[i].person_id.as_str()))
        .collect()
}

pub fn psych_store(records: &[SegmentRecord], lexicon: &Lexicon) -> Result<EmbeddingStore> {
    let m = Array2::from_shape_fn((records.len(), N_DIMS), |(i, j)| {
        extract_psych(&records[i].text, lexicon).0[j]
    });
    EmbeddingStore::from_f64(segment_ids(records), &m)
}

/// Target store over the manifest's segments. The psych scaler is fitted on
/// the training persons' rows only.
pub fn build_targets(
    records: &[SegmentRecord],
    teacher: &EmbeddingStore,
    psych: Option<&EmbeddingStore>,
    mode: TargetMode,
    split: &DatasetSplit,
) -> Result<(EmbeddingStore, Option<ScalerParams>)> {
    let ids = segment_ids(records);
    let t = teacher.select(&ids)?;
    let builder = TargetBuilder::new(mode, t.ncols())?;
    let (scaled, scaler) = if mode.uses_psych() {
        let psych = psych.ok_or_else(|| Error::Config(format!("{:?} targets need a psych store", mode.kind)))?;
        let p = psych.select(&ids)?;
        let train_rows = rows_for(records, &split.train);
        let scaler = fit_scaler(
            t.select(ndarray::Axis(0), &train_rows).view(),
            p.select(ndarray::Axis(0), &train_rows).view(),
        )?;
        (Some(standardize_matrix(p.view(), &scaler)?), Some(scaler))
    } else {
        (None, None)
    };
    let dim = mode.target_dim(t.ncols());
    let mut out = Array2::zeros((ids.len(), dim));
    for i in 0..ids.len() {
        let teacher_row = t.row(i).to_vec();
        let psych_row = scaled.as_ref().map(|m| m.row(i).to_vec());
        let target = builder.build(&teacher_row, psych_row.as_deref())?;
        out.row_mut(i).assign(&ndarray::Array1::from(target.values));
    }
    Ok((EmbeddingStore::from_f64(ids, &out)?, scaler))
}

pub fn make_pairs(records: &[SegmentRecord], targets: &EmbeddingStore, persons: &[String]) -> Result<Vec<TrainPair>> {
    let index = targets.index();
    rows_for(records, persons)
        .into_iter()
        .map(|i| {
            let r = &records[i];
            let &row = index
                .get(r.segment_id.as_str())
                .ok_or_else(|| Error::Shape(format!("segment {:?} has no target", r.segment_id)))?;
            Ok(TrainPair {
                features: r.acoustic_features.clone(),
                target: targets.row(row).mapv(f64::from),
            })
        })
        .collect()
}

/// Student width implied by a target dimension under `mode`.
pub fn d_model_for(mode: TargetMode, target_dim: usize) -> Result<usize> {
    match mode.kind {
        TargetKind::Projection if target_dim > N_DIMS => Ok(target_dim - N_DIMS),
        TargetKind::Projection => Err(Error::Shape(format!("projection targets of width {target_dim}"))),
        _ => Ok(target_dim),
    }
}

pub fn init_model(cfg: &RunConfig, feature_dim: usize, d_model: usize) -> SyntheticStudent {
    let mut m = SyntheticStudent::synthetic(feature_dim, d_model, cfg.targets, cfg.model.tanh_scope);
    m.init_parameters(cfg.train.seed);
    m
}

pub fn embed_records(model: &SyntheticStudent, records: &[SegmentRecord]) -> Result<EmbeddingStore> {
    let m = model.encode_batch(records.iter().map(|r| r.acoustic_features.view()))?;
    EmbeddingStore::from_f64(segment_ids(records), &m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub loss: LossKind,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub initial_val_cosine: f64,
    pub best_val_cosine: f64,
    pub test_cosine: Option<f64>,
}

/// Train on the split's training persons, select on validation persons and
/// report the held-out test cosine.
pub fn train_on_split(
    train_cfg: &TrainConfig,
    records: &[SegmentRecord],
    targets: &EmbeddingStore,
    split: &DatasetSplit,
    model: SyntheticStudent,
) -> Result<(SyntheticStudent, TrainHistory, TrainSummary)> {
    let tr = make_pairs(records, targets, &split.train)?;
    let va = make_pairs(records, targets, &split.val)?;
    let te = make_pairs(records, targets, &split.test)?;
    info!("training on {} pairs, validating on {}", tr.len(), va.len());
    let (best, history) = train(train_cfg, &tr, &va, model)?;
    let best_val_cosine = match history.best_epoch {
        Some(e) => history.val_cosine[e - 1],
        None => history.initial_val_cosine,
    };
    let test_cosine = if te.is_empty() { None } else { Some(validate(&best, &te)?) };
    let summary = TrainSummary {
        loss: train_cfg.loss,
        epochs: train_cfg.epochs,
        best_epoch: history.best_epoch,
        initial_val_cosine: history.initial_val_cosine,
        best_val_cosine,
        test_cosine,
    };
    Ok((best, history, summary))
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs, out: &Path) -> Result<()> {
    if let Some(p) = a.persons {
        cfg.synth.persons = p;
    }
    if let Some(s) = a.segments_per_person {
        cfg.synth.segments_per_person = s;
    }
    cfg.validate()?;
    create_dir(out)?;
    generate(&cfg.synth)?.write(out)?;
    info!("wrote synthetic corpus to {}", out.display());
    Ok(())
}

fn cmd_extract_psych(cfg: &RunConfig, a: ExtractArgs, out: &Path) -> Result<()> {
    cfg.validate()?;
    let manifest = pick(a.manifest, &cfg.data.manifest, "data.manifest")?;
    let lexicon = Lexicon::load(&pick(a.lexicon, &cfg.data.lexicon, "data.lexicon")?)?;
    let records = load_manifest(&manifest)?;
    create_dir(out)?;
    write_store(&psych_store(&records, &lexicon)?, &out.join(PSYCH_FILE))
}

fn cmd_build_targets(mut cfg: RunConfig, a: TargetArgs, out: &Path) -> Result<()> {
    if let Some(m) = a.mode {
        cfg.targets.kind = match m {
            ModeArg::Semantic => TargetKind::Semantic,
            ModeArg::Replacement => TargetKind::Replacement,
            ModeArg::Projection => TargetKind::Projection,
        };
    }
    cfg.validate()?;
    let records = load_manifest(&pick(a.manifest, &cfg.data.manifest, "data.manifest")?)?;
    let teacher = read_store(&pick(a.teacher, &cfg.data.teacher, "data.teacher")?)?;
    let psych = if cfg.targets.uses_psych() {
        Some(read_store(&pick(a.psych, &cfg.data.psych, "data.psych")?)?)
    } else {
        None
    };
    let split = person_split(&records, &cfg)?;
    let (targets, scaler) = build_targets(&records, &teacher, psych.as_ref(), cfg.targets, &split)?;
    create_dir(out)?;
    write_store(&targets, &out.join(TARGETS_FILE))?;
    write_json(&out.join(SPLIT_FILE), &split)?;
    if let Some(s) = scaler {
        write_json(&out.join(SCALER_FILE), &s)?;
    }
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs, out: &Path) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(l) = a.loss {
        cfg.train.loss = l.into();
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    let records = load_manifest(&pick(a.manifest, &cfg.data.manifest, "data.manifest")?)?;
    let targets_path = pick(a.targets, &cfg.data.targets, "data.targets")?;
    let targets = read_store(&targets_path)?;
    let split_path = targets_path.with_file_name(SPLIT_FILE);
    let split = if split_path.exists() {
        read_json(&split_path)?
    } else {
        person_split(&records, &cfg)?
    };
    let d_model = d_model_for(cfg.targets, targets.dim())?;
    if let Some(d) = cfg.model.d_model {
        if d != d_model {
            return Err(Error::Config(format!(
                "model.d_model = {d} but targets imply {d_model}"
            )));
        }
    }
    let model = init_model(&cfg, records[0].acoustic_features.ncols(), d_model);
    let (best, history, summary) = train_on_split(&cfg.train, &records, &targets, &split, model)?;
    create_dir(out)?;
    best.save(&out.join(CHECKPOINT_DIR))?;
    history.write_jsonl(&out.join(HISTORY_FILE))?;
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    info!(
        "best epoch {:?}, val cosine {:.4}, test cosine {:?}",
        summary.best_epoch, summary.best_val_cosine, summary.test_cosine
    );
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, a: EmbedArgs, out: &Path) -> Result<()> {
    cfg.validate()?;
    let records = load_manifest(&pick(a.manifest, &cfg.data.manifest, "data.manifest")?)?;
    let model = if a.untrained {
        let d = a.d_model.or(cfg.model.d_model).ok_or_else(|| {
            Error::Config("--untrained needs --d-model or model.d_model".into())
        })?;
        init_model(cfg, records[0].acoustic_features.ncols(), d)
    } else {
        SyntheticStudent::load(&pick(a.checkpoint, &cfg.data.checkpoint, "data.checkpoint")?)?
    };
    create_dir(out)?;
    write_store(&embed_records(&model, &records)?, &out.join(&a.name))
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs, out: &Path) -> Result<()> {
    if a.baseline.is_some() {
        cfg.eval.baseline = a.baseline;
    }
    cfg.validate()?;
    let records = load_manifest(&pick(a.manifest, &cfg.data.manifest, "data.manifest")?)?;
    let outcomes = read_outcomes(&pick(a.outcomes, &cfg.data.outcomes, "data.outcomes")?)?;
    let mut models = Vec::with_capacity(a.stores.len());
    for (name, path) in a.stores {
        let path = require(&Some(path), &format!("store {name}"))?;
        models.push((name, read_store(&path)?));
    }
    let report = evaluate_models(&models, &segment_person(&records), &outcomes, &cfg.eval)?;
    write_report(&report, out)?;
    print!("{}", report.render_table());
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_text(&out.join(REPORT_JSONL), &report.to_jsonl())?;
    write_text(&out.join(REPORT_TXT), &report.render_table())
}

fn person_texts(records: &[SegmentRecord], persons: &[String]) -> Vec<Vec<String>> {
    let mut by: HashMap<&str, Vec<String>> = HashMap::new();
    for r in records {
        by.entry(r.person_id.as_str()).or_default().push(r.text.clone());
    }
    persons.iter().map(|p| by.remove(p.as_str()).unwrap_or_default()).collect()
}

fn coords_text(m: &Array2<f64>) -> String {
    m.rows().into_iter().map(|r| format!("{} {}\n", r[0], r[1])).collect()
}

#[derive(Debug, Serialize)]
struct OverlapSummary {
    overlap: f64,
    explained_variance_ratio: [f64; 2],
    student_points: usize,
    teacher_points: usize,
}

fn cmd_analyze(cfg: &RunConfig, a: AnalyzeArgs, out: &Path) -> Result<()> {
    cfg.validate()?;
    let records = load_manifest(&pick(a.manifest, &cfg.data.manifest, "data.manifest")?)?;
    let ids = segment_ids(&records);
    let student = read_store(&require(&Some(a.student), "student store")?)?.select(&ids)?;
    let teacher = read_store(&pick(a.teacher, &cfg.data.teacher, "data.teacher")?)?.select(&ids)?;
    let adir = out.join("analysis");
    create_dir(&adir)?;

    // a projection-mode student carries extra psych coordinates after the
    // semantic block; only the block shared with the teacher is compared
    let d = teacher.ncols();
    if student.ncols() < d {
        return Err(Error::Shape(format!("student dim {} < teacher dim {d}", student.ncols())));
    }
    let report = modality_overlap(student.slice(s![.., ..d]), teacher.view(), cfg.analysis.normalize)?;
    write_text(&adir.join("overlap_grid.txt"), &report.grid.to_lines())?;
    write_text(&adir.join("overlap_student.txt"), &coords_text(&report.coords_a))?;
    write_text(&adir.join("overlap_teacher.txt"), &coords_text(&report.coords_b))?;
    write_json(
        &adir.join("overlap.json"),
        &OverlapSummary {
            overlap: report.overlap(),
            explained_variance_ratio: report.pca.explained_variance_ratio,
            student_points: report.coords_a.nrows(),
            teacher_points: report.coords_b.nrows(),
        },
    )?;
    if a.png || cfg.analysis.render_png {
        report.grid.render_png(&adir.join("overlap.png"), 4)?;
    }

    if let Some(p) = a.psych.or_else(|| cfg.data.psych.clone()) {
        let psych = read_store(&require(&Some(p), "psych store")?)?.select(&ids)?;
        write_text(&adir.join("heatmap.csv"), &dim_psych_heatmap(teacher.view(), psych.view())?.to_csv())?;
    }

    if let Some(op) = a.outcomes.or_else(|| cfg.data.outcomes.clone()) {
        let outcomes = read_outcomes(&require(&Some(op), "outcomes")?)?;
        let store = EmbeddingStore::from_f64(ids.clone(), &student)?;
        let pe = person_embeddings(&store, &segment_person(&records))?;
        let true_scores = a.true_outcomes || cfg.analysis.true_outcomes;
        for name in outcome_names(&outcomes) {
            let (persons, x, y) = person_matrix(&pe, &outcomes, &name);
            let scores = if true_scores {
                y
            } else {
                ridge_cv(&persons, &x, &y, &cfg.eval.cv)?.predictions
            };
            let texts = person_texts(&records, &persons);
            let table = ngram_correlation(&texts, &scores, &cfg.analysis.ngram)?;
            let top = cfg.analysis.top;
            write_text(&adir.join(format!("ngrams_{name}_positive.tsv")), &NgramTable::to_tsv(&table.positive, top))?;
            write_text(&adir.join(format!("ngrams_{name}_negative.tsv")), &NgramTable::to_tsv(&table.negative, top))?;
        }
    }
    Ok(())
}

fn outcome_names(outcomes: &[PersonRecord]) -> Vec<String> {
    let set: BTreeSet<&String> = outcomes.iter().flat_map(|p| p.outcome_scores.keys()).collect();
    set.into_iter().cloned().collect()
}

/// Persons that have both an embedding and outcome `name`.
fn person_matrix(
    pe: &[crate::evaluator::PersonEmbedding],
    outcomes: &[PersonRecord],
    name: &str,
) -> (Vec<String>, Array2<f64>, Vec<f64>) {
    let scores: HashMap<&str, f64> = outcomes
        .iter()
        .filter_map(|p| p.outcome_scores.get(name).map(|v| (p.person_id.as_str(), *v)))
        .collect();
    let kept: Vec<_> = pe.iter().filter(|p| scores.contains_key(p.person_id.as_str())).collect();
    let dim = kept.first().map_or(0, |p| p.vector.len());
    let x = Array2::from_shape_fn((kept.len(), dim), |(i, j)| kept[i].vector[j]);
    let y = kept.iter().map(|p| scores[p.person_id.as_str()]).collect();
    (kept.iter().map(|p| p.person_id.clone()).collect(), x, y)
}

/// Synthesize a corpus, train one student per loss from the same init, and
/// evaluate both against the untrained student.
fn cmd_report(mut cfg: RunConfig, a: ReportArgs, out: &Path) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let data_dir = out.join("data");
    create_dir(&data_dir)?;
    generate(&cfg.synth)?.write(&data_dir)?;
    let records = load_manifest(&data_dir.join(synth::MANIFEST_FILE))?;
    let teacher = read_store(&data_dir.join(synth::TEACHER_FILE))?;
    let outcomes = read_outcomes(&data_dir.join(synth::OUTCOMES_FILE))?;
    let lexicon = Lexicon::load(&data_dir.join(synth::LEXICON_FILE))?;
    let psych = psych_store(&records, &lexicon)?;
    let split = person_split(&records, &cfg)?;
    let (targets, _) = build_targets(&records, &teacher, Some(&psych), cfg.targets, &split)?;
    let d_model = d_model_for(cfg.targets, targets.dim())?;
    let init = init_model(&cfg, records[0].acoustic_features.ncols(), d_model);

    let emb_dir = out.join("embeddings");
    create_dir(&emb_dir)?;
    let mut models = vec![("untrained".to_string(), embed_records(&init, &records)?)];
    let mut summaries = Vec::new();
    for loss in [LossKind::Cs, LossKind::Nce] {
        let name = loss.to_string().to_lowercase();
        let train_cfg = TrainConfig { loss, ..cfg.train.clone() };
        info!("training {name}");
        let (best, history, summary) = train_on_split(&train_cfg, &records, &targets, &split, init.clone())?;
        history.write_jsonl(&out.join(format!("history_{name}.jsonl")))?;
        models.push((name, embed_records(&best, &records)?));
        summaries.push(summary);
    }
    for (name, store) in &models {
        write_store(store, &emb_dir.join(format!("{name}.bin")))?;
    }
    let eval_cfg = crate::evaluator::EvalConfig {
        baseline: Some("untrained".into()),
        ..cfg.eval.clone()
    };
    let report = evaluate_models(&models, &segment_person(&records), &outcomes, &eval_cfg)?;
    write_text(&out.join(REPORT_JSONL), &report.to_jsonl())?;
    let mut text = render_loss_table(&summaries, &report);
    text.push('\n');
    text.push_str(&report.render_table());
    write_text(&out.join(REPORT_TXT), &text)?;
    write_json(&out.join("train_summaries.json"), &summaries)?;
    print!("{text}");
    Ok(())
}

/// One row per loss: validation/test cosine and downstream r per outcome.
pub fn render_loss_table(summaries: &[TrainSummary], report: &EvalReport) -> String {
    let mut out = String::from("loss | best_epoch | val_cos | test_cos");
    for o in &report.outcomes {
        out.push_str(&format!(" | r({o})"));
    }
    out.push('\n');
    for s in summaries {
        let name = s.loss.to_string().to_lowercase();
        let best = s.best_epoch.map_or("-".to_string(), |e| e.to_string());
        let test = s.test_cosine.map_or("-".to_string(), |c| format!("{c:.4}"));
        out.push_str(&format!("{} | {best} | {:.4} | {test}", s.loss, s.best_val_cosine));
        for o in &report.outcomes {
            let r = report.row(&name, o).map_or(f64::NAN, |row| row.r);
            out.push_str(&format!(" | {r:.3}"));
        }
        out.push('\n');
    }
    out
}
