use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use irk_core::corpus::{self, canonical_json, load_corpus, Corpus, CorpusError};
use irk_core::eval::{
    self, read_records, run_experiment, write_result, ExperimentResult, ExperimentSpec, FusionName,
    S2rExperimentConfig, SolutionExperimentConfig, UilocExperimentConfig,
};
use irk_core::execmodel::build_model;
use irk_core::ranking::Ranking;
use irk_core::s2r::{assess_steps, extract_issue_steps, parse_injected_steps, render_report, MatchConfig, ReportFormat};
use irk_core::solution::{
    self, majority_vote, ClassifierKind, ClassifierModel, EnsembleMember, ExternalPredictions, LabeledDataset,
    Prediction,
};
use irk_core::uiloc::{localize_components, localize_screens, ob_embedding_key, ob_query_text, DenseQuery, EmbeddingStore};

#[derive(Parser)]
#[command(
    name = "irk",
    version,
    about = "Issue-report toolkit: S2R quality assessment, buggy UI localization and solution comment identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus directory and print every violation
    Validate {
        corpus: PathBuf,
    },
    /// Assess the steps to reproduce of one issue against its app's execution model
    Assess(AssessArgs),
    /// Rank the screens or components of an issue's app against its observed behavior
    Localize(LocalizeArgs),
    /// Train, apply and inspect solution-comment classifiers
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Run an experiment spec and write records plus aggregates
    Evaluate {
        spec: PathBuf,
        /// Results root; files go to <out>/<experiment name>/
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print an experiment's aggregates after checking them against its records
    Report {
        /// Directory holding records.jsonl and aggregate.json
        dir: PathBuf,
    },
}

#[derive(Args)]
struct AssessArgs {
    corpus: PathBuf,
    issue: String,
    /// JSON array or JSON Lines of pre-extracted steps, used instead of rule-based extraction
    #[arg(long)]
    steps_file: Option<PathBuf>,
    /// Use annotated S2R sentence indices when the issue has them
    #[arg(long)]
    use_gold: bool,
    #[arg(long)]
    tau_high: Option<f64>,
    #[arg(long)]
    tau_match: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Format printed to standard output (md or json)
    #[arg(long, default_value = "md")]
    format: String,
    /// Directory for <issue>.report.md and <issue>.report.json
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GranularityArg {
    Screen,
    Component,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Minmax,
    Rrf,
}

#[derive(Args)]
struct LocalizeArgs {
    corpus: PathBuf,
    issue: String,
    #[arg(long, value_enum, default_value = "screen")]
    granularity: GranularityArg,
    /// Number of entries to emit
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Fuse cosine scores from precomputed embeddings with BM25
    #[arg(long)]
    dense: bool,
    /// Directory of .emb files (default: <corpus>/embeddings)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Lexical and dense weights, e.g. 0.7,0.3
    #[arg(long, value_delimiter = ',', num_args = 2)]
    fusion_weights: Option<Vec<f64>>,
    #[arg(long)]
    rrf_k: Option<f64>,
    /// Weight of a component's own score against its screen's
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Directory for the ranking JSON
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Corpus whose labeled comments form the data
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    corpus: Option<PathBuf>,
    /// Pre-featurized dataset JSON
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory of .emb files for embedding classifiers (default: <corpus>/embeddings)
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    LinearTfidf,
    LinearEmbedding,
    NearestCentroid,
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Write a linearly separable synthetic dataset
    Synth {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        margin: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        project: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier and write it as JSON
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Disable inverse-frequency example weighting
        #[arg(long)]
        no_class_weighting: bool,
        #[arg(long)]
        model_out: PathBuf,
        /// JSON config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict with one model or a majority-vote ensemble
    Predict {
        #[command(flatten)]
        data: DataArgs,
        /// Model JSON; repeat for an ensemble
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// External predictions TSV (issue, comment, label, probability); repeatable
        #[arg(long = "external")]
        externals: Vec<PathBuf>,
        /// Directory for predictions.tsv and metrics.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    assess: S2rExperimentConfig,
    localize: UilocExperimentConfig,
    classify: SolutionExperimentConfig,
}

/// Exit 1 for domain failures, 2 for usage and IO problems.
enum Failure {
    Domain(String),
    Input(String),
}

impl Failure {
    fn domain(e: impl Display) -> Self {
        Failure::Domain(e.to_string())
    }

    fn input(e: impl Display) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Invalid(r) => Failure::Domain(format!("INVALID_CORPUS\n{r}")),
            other => Failure::input(other),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::Assess(args) => cmd_assess(args),
        Command::Localize(args) => cmd_localize(args),
        Command::Classify(cmd) => cmd_classify(cmd),
        Command::Evaluate { spec, out } => cmd_evaluate(&spec, &out),
        Command::Report { dir } => cmd_report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(m)) => {
            eprintln!("irk: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("irk: {m}");
            ExitCode::from(2)
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("IO_FAILURE: {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Input(format!("IO_FAILURE: {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Input(format!("IO_FAILURE: {}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = read_file(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        Failure::Input(format!("MALFORMED_CONFIG: {}: field `{}`: {}", path.display(), e.path(), e.inner()))
    })
}

fn issue_and_corpus(root: &Path, issue_id: &str) -> Result<(Corpus, usize), Failure> {
    let corpus = load_corpus(root)?;
    let idx = corpus
        .issues
        .iter()
        .position(|i| i.id == issue_id)
        .ok_or_else(|| Failure::Domain(format!("UNKNOWN_ISSUE: {issue_id}")))?;
    Ok((corpus, idx))
}

fn cmd_validate(root: &Path) -> Outcome {
    let corpus = corpus::read_corpus(root)?;
    let report = corpus::validate_corpus(&corpus);
    if report.is_empty() {
        println!(
            "ok: {} apps, {} issues, {} screens",
            corpus.apps.len(),
            corpus.issues.len(),
            corpus.apps.values().map(|a| a.screens.len()).sum::<usize>()
        );
        Ok(())
    } else {
        println!("{report}");
        Err(Failure::Domain(format!("{} violation(s)", report.violations.len())))
    }
}

fn cmd_assess(args: AssessArgs) -> Outcome {
    let file = load_config(args.config.as_deref())?.assess;
    let matching = MatchConfig {
        tau_high: args.tau_high.unwrap_or(file.tau_high),
        tau_match: args.tau_match.unwrap_or(file.tau_match),
        delta: args.delta.unwrap_or(file.delta),
    };
    if !(0.0..=1.0).contains(&matching.tau_high)
        || !(0.0..=1.0).contains(&matching.tau_match)
        || matching.tau_match > matching.tau_high
        || !(matching.delta >= 0.0)
    {
        return Err(Failure::Input(
            "INVALID_CONFIG: need 0 <= tau-match <= tau-high <= 1 and delta >= 0".into(),
        ));
    }
    let format: ReportFormat = args.format.parse().map_err(Failure::input)?;
    let (corpus, idx) = issue_and_corpus(&args.corpus, &args.issue)?;
    let issue = &corpus.issues[idx];
    let app = corpus.app(&issue.app_id).expect("validated corpus");
    let model = build_model(&app.traces, &app.screens).map_err(Failure::domain)?;
    let steps = match &args.steps_file {
        Some(path) => parse_injected_steps(&read_file(path)?).map_err(Failure::input)?,
        None => extract_issue_steps(issue, args.use_gold || file.use_gold),
    };
    let report = assess_steps(&issue.id, &steps, &model, &matching).map_err(Failure::domain)?;
    if let Some(out) = &args.out {
        write_file(
            &out.join(format!("{}.report.md", issue.id)),
            &render_report(&report, &model, ReportFormat::Markdown),
        )?;
        write_file(
            &out.join(format!("{}.report.json", issue.id)),
            &render_report(&report, &model, ReportFormat::Json),
        )?;
    }
    print!("{}", render_report(&report, &model, format));
    Ok(())
}

fn ranking_table(ranking: &Ranking) -> String {
    let id_width = ranking.doc_ids().map(str::len).max().unwrap_or(0).max(2);
    let rank_width = ranking.len().to_string().len().max(4);
    let mut out = format!("{:<rank_width$}  {:<id_width$}  score\n", "rank", "id");
    for (i, e) in ranking.entries.iter().enumerate() {
        out.push_str(&format!("{:<rank_width$}  {:<id_width$}  {:.6}\n", i + 1, e.doc_id, e.score));
    }
    out
}

fn cmd_localize(args: LocalizeArgs) -> Outcome {
    if args.top == 0 {
        return Err(Failure::Input("INVALID_CONFIG: --top must be at least 1".into()));
    }
    let mut cfg = load_config(args.config.as_deref())?.localize;
    if let Some(f) = args.fusion {
        cfg.fusion = match f {
            FusionArg::Minmax => FusionName::Minmax,
            FusionArg::Rrf => FusionName::Rrf,
        };
    }
    if let Some(w) = &args.fusion_weights {
        cfg.fusion_weights = [w[0], w[1]];
    }
    cfg.rrf_k = args.rrf_k.unwrap_or(cfg.rrf_k);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.k1 = args.k1.unwrap_or(cfg.k1);
    cfg.b = args.b.unwrap_or(cfg.b);
    cfg.dense |= args.dense;
    let lc = cfg.localize_config().map_err(Failure::input)?;

    let (corpus, idx) = issue_and_corpus(&args.corpus, &args.issue)?;
    let issue = &corpus.issues[idx];
    let app = corpus.app(&issue.app_id).expect("validated corpus");

    let mut store = None;
    if cfg.dense {
        let dir = args.embeddings.clone().unwrap_or_else(|| args.corpus.join("embeddings"));
        match EmbeddingStore::load_dir(&dir).map_err(Failure::input)? {
            Some(s) => store = Some(s),
            None => eprintln!(
                "warning: no embeddings under {}; using lexical scores only",
                dir.display()
            ),
        }
    }
    let key = ob_embedding_key(&issue.id);
    let dense = match &store {
        Some(s) => match s.get(&key) {
            Some(v) => Some(DenseQuery { query_vector: v, store: s }),
            None => {
                eprintln!("warning: no query vector {key:?}; using lexical scores only");
                None
            }
        },
        None => None,
    };

    let text = ob_query_text(issue);
    let mut ranking = match args.granularity {
        GranularityArg::Screen => localize_screens(&issue.id, &text, &app.screens, &lc, dense),
        GranularityArg::Component => localize_components(&issue.id, &text, &app.screens, &lc, dense),
    }
    .map_err(Failure::domain)?;
    ranking.truncate(args.top);

    if let Some(out) = &args.out {
        let name = match args.granularity {
            GranularityArg::Screen => "screen",
            GranularityArg::Component => "component",
        };
        write_file(&out.join(format!("{}.{name}.json", issue.id)), &canonical_json(&ranking))?;
    }
    print!("{}", ranking_table(&ranking));
    Ok(())
}

fn kind_of(arg: KindArg) -> ClassifierKind {
    match arg {
        KindArg::LinearTfidf => ClassifierKind::LinearTfidf,
        KindArg::LinearEmbedding => ClassifierKind::LinearEmbedding,
        KindArg::NearestCentroid => ClassifierKind::NearestCentroidEmbedding,
    }
}

fn read_dataset(path: &Path) -> Result<LabeledDataset, Failure> {
    let text = read_file(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let ds: LabeledDataset = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        Failure::Input(format!("MALFORMED_FILE: {}: field `{}`: {}", path.display(), e.path(), e.inner()))
    })?;
    LabeledDataset::new(ds.project_id, ds.vocabulary, ds.items).map_err(Failure::domain)
}

fn read_store(data: &DataArgs, root: &Path) -> Result<EmbeddingStore, Failure> {
    let dir = data.embeddings.clone().unwrap_or_else(|| root.join("embeddings"));
    EmbeddingStore::load_dir(&dir)
        .map_err(Failure::input)?
        .ok_or_else(|| Failure::Input(format!("IO_FAILURE: no .emb files under {}", dir.display())))
}

fn project_name(root: &Path) -> String {
    root.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

/// Dataset as seen by `model`: corpus data is featurized with the model's
/// vocabulary (and embeddings when the model needs them).
fn dataset_for_model(
    data: &DataArgs,
    corpus: Option<&Corpus>,
    model: Option<&ClassifierModel>,
    kind: ClassifierKind,
) -> Result<LabeledDataset, Failure> {
    match (corpus, &data.dataset) {
        (Some(corpus), _) => {
            let root = data.corpus.as_ref().expect("corpus given");
            let store = if kind.uses_embedding() { Some(read_store(data, root)?) } else { None };
            let vocab = model.and_then(|m| m.vocabulary.as_ref());
            solution::dataset_from_corpus(corpus, &project_name(root), None, vocab, store.as_ref())
                .map_err(Failure::domain)
        }
        (None, Some(path)) => read_dataset(path),
        (None, None) => unreachable!("clap requires a data source"),
    }
}

fn cmd_classify(cmd: ClassifyCommand) -> Outcome {
    match cmd {
        ClassifyCommand::Synth { n, dim, margin, seed, project, out } => {
            if n == 0 || dim == 0 || !(margin >= 0.0) {
                return Err(Failure::Input("INVALID_CONFIG: need n >= 1, dim >= 1, margin >= 0".into()));
            }
            let ds = solution::synthetic_dataset(&project, n, dim, margin, 7, seed);
            write_file(&out, &canonical_json(&ds))?;
            let pos = ds.items.iter().filter(|i| i.label == 1).count();
            println!("wrote {} items ({pos} positive) to {}", ds.len(), out.display());
            Ok(())
        }
        ClassifyCommand::Train {
            data,
            kind,
            lambda,
            learning_rate,
            epochs,
            threshold,
            seed,
            no_class_weighting,
            model_out,
            config,
        } => {
            let mut cfg = load_config(config.as_deref())?.classify;
            cfg.kind = kind.map(kind_of).unwrap_or(cfg.kind);
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.threshold = threshold.unwrap_or(cfg.threshold);
            cfg.class_weighting &= !no_class_weighting;
            let train_cfg = cfg.train_config(seed);
            train_cfg.validate().map_err(Failure::input)?;
            let corpus = match &data.corpus {
                Some(root) => Some(load_corpus(root)?),
                None => None,
            };
            let ds = dataset_for_model(&data, corpus.as_ref(), None, cfg.kind)?;
            let model = solution::train(&ds, &train_cfg).map_err(Failure::domain)?;
            write_file(&model_out, &model.to_json())?;
            let m = solution::evaluate_model(&model, &ds).map_err(Failure::domain)?;
            println!(
                "trained {} on {} items; training P={:.4} R={:.4} F1={:.4}; wrote {}",
                serde_json::to_value(model.kind).expect("kind serializes").as_str().unwrap_or_default(),
                ds.len(),
                m.precision,
                m.recall,
                m.f1,
                model_out.display()
            );
            Ok(())
        }
        ClassifyCommand::Predict { data, models, externals, out } => cmd_predict(data, models, externals, out),
    }
}

fn cmd_predict(data: DataArgs, model_paths: Vec<PathBuf>, externals: Vec<PathBuf>, out: Option<PathBuf>) -> Outcome {
    if model_paths.is_empty() && externals.is_empty() {
        return Err(Failure::Input("INVALID_CONFIG: give at least one --model or --external".into()));
    }
    let corpus = match &data.corpus {
        Some(root) => Some(load_corpus(root)?),
        None => None,
    };
    let mut models = Vec::new();
    for path in &model_paths {
        let m = ClassifierModel::from_json(&read_file(path)?)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        models.push(m);
    }
    let mut members: Vec<(EnsembleMember, LabeledDataset)> = Vec::new();
    for m in models {
        let ds = dataset_for_model(&data, corpus.as_ref(), Some(&m), m.kind)?;
        members.push((EnsembleMember::Model(m), ds));
    }
    // External members only need item ids; any view of the data works.
    let id_view = match members.first() {
        Some((_, ds)) => ds.clone(),
        None => dataset_for_model(&data, corpus.as_ref(), None, ClassifierKind::LinearTfidf)?,
    };
    for path in &externals {
        let name = path.display().to_string();
        let ext = ExternalPredictions::parse_tsv(&name, &read_file(path)?)
            .map_err(|e| Failure::Input(format!("{name}: {e}")))?;
        members.push((EnsembleMember::External(ext), id_view.clone()));
    }

    let mut tsv = String::from("issue_id\tcomment_id\tlabel\tprobability\n");
    let mut pairs = Vec::with_capacity(id_view.len());
    for (i, item) in id_view.items.iter().enumerate() {
        let preds: Vec<Prediction> = members
            .iter()
            .map(|(m, ds)| m.predict_item(&ds.items[i]))
            .collect::<Result<_, _>>()
            .map_err(Failure::domain)?;
        let p = majority_vote(&preds).map_err(Failure::domain)?;
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", item.issue_id, item.comment_id, p.label, p.probability));
        pairs.push((p.label, item.label));
    }
    let metrics = eval::BinaryMetrics::from_pairs(pairs);
    match out {
        Some(dir) => {
            write_file(&dir.join("predictions.tsv"), &tsv)?;
            write_file(&dir.join("metrics.json"), &canonical_json(&metrics))?;
            println!(
                "{} items, {} member(s): P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={} tn={})",
                id_view.len(),
                members.len(),
                metrics.precision,
                metrics.recall,
                metrics.f1,
                metrics.tp,
                metrics.fp,
                metrics.fn_,
                metrics.tn
            );
        }
        None => print!("{tsv}"),
    }
    Ok(())
}

fn metrics_table(result: &ExperimentResult) -> String {
    let width = result.metrics.keys().map(String::len).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in &result.metrics {
        out.push_str(&format!("{k:<width$}  {v:.6}\n"));
    }
    out
}

fn cmd_evaluate(spec_path: &Path, out: &Path) -> Outcome {
    let spec = ExperimentSpec::from_file(spec_path).map_err(|e| {
        if e.is_input_error() {
            Failure::input(e)
        } else {
            Failure::domain(e)
        }
    })?;
    let result = run_experiment(&spec).map_err(|e| {
        if e.is_input_error() {
            Failure::input(e)
        } else {
            Failure::domain(e)
        }
    })?;
    let dir = write_result(&result, out).map_err(Failure::input)?;
    println!("{} ({}) -> {}", result.name, result.pipeline.name(), dir.display());
    print!("{}", metrics_table(&result));
    Ok(())
}

fn cmd_report(dir: &Path) -> Outcome {
    let agg_path = dir.join("aggregate.json");
    let stored: ExperimentResult = serde_json::from_str(&read_file(&agg_path)?)
        .map_err(|e| Failure::Input(format!("MALFORMED_FILE: {}: {e}", agg_path.display())))?;
    let records = read_records(&read_file(&dir.join("records.jsonl"))?).map_err(Failure::input)?;
    let recomputed = eval::aggregate(stored.pipeline, &stored.k_values, &records).map_err(Failure::input)?;
    println!("{} ({}), {} records", stored.name, stored.pipeline.name(), records.len());
    println!("data {}", stored.environment.data_hash);
    println!("config {}", stored.environment.config_hash);
    print!("{}", metrics_table(&stored));
    if recomputed != stored.metrics {
        return Err(Failure::Domain(
            "STALE_AGGREGATE: aggregate.json does not match records.jsonl".into(),
        ));
    }
    Ok(())
}
