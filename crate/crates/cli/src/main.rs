//! `esum`: pretrain graph embeddings, cross-validate the summarizer,
//! evaluate out of fold, and inspect summaries and attention.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use esum_core::config::RunConfig;
use esum_core::eval::{build_report, export_attention, BaselineTable, SystemRun};
use esum_core::extractor::PermMode;
use esum_core::ingest::load_dataset;
use esum_core::model::Variant;
use esum_core::numeric::checkpoint::write_atomic;
use esum_core::numeric::CheckpointError;
use esum_core::pipeline::{
    cross_validate, file_sha256, load_cross_validation, load_embeddings, out_of_fold, pretrain, save_cross_validation,
    save_embeddings, LoadedFolds, PipelineError, Provenance, EMBEDDINGS_FILE,
};
use esum_core::synthetic::{write_corpus, SyntheticSpec};
use esum_core::trainer::Corpus;
use esum_core::transe::{GraphEmbeddings, TranseError};

const DATA_ENV: &str = "ESUM_DATA_ROOT";
const CONFIG_FILE: &str = "run_config.toml";

#[derive(Parser)]
#[command(name = "esum", version, about = "Neural entity summarization on ESBM-layout corpora")]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Corpus root in the ESBM layout (default: config `data_root`, then $ESUM_DATA_ROOT).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct FoldArgs {
    #[command(flatten)]
    data: DataArg,
    /// Directory written by `esum train`.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Graph embeddings (default: embeddings.ckpt inside --checkpoints).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain TransE embeddings of the corpus graph.
    Pretrain {
        #[command(flatten)]
        data: DataArg,
        /// Output directory for embeddings.ckpt [config: output_dir].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Embedding dimension [default: 100].
        #[arg(long)]
        dim: Option<usize>,
        /// SGD epochs [default: 500].
        #[arg(long)]
        epochs: Option<usize>,
        /// Margin of the ranking loss [default: 1].
        #[arg(long)]
        margin: Option<f64>,
        /// SGD step size [default: 0.01].
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Five-fold cross-validated training of one model variant.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Checkpoint written by `esum pretrain`.
        #[arg(long)]
        embeddings: PathBuf,
        /// Output directory for fold checkpoints and logs [config: output_dir].
        #[arg(long)]
        out: Option<PathBuf>,
        /// full, a1, a2, a3, a4 or a5 [default: full].
        #[arg(long)]
        variant: Option<Variant>,
        /// Attention layers [default: 6; a5 always uses 1].
        #[arg(long)]
        layers: Option<usize>,
        /// Training epochs per fold [default: 200].
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Adam step size [default: 0.001].
        #[arg(long)]
        lr: Option<f64>,
        /// Word embedding size [default: 100].
        #[arg(long)]
        word_dim: Option<usize>,
        /// Extractor hidden size per direction [default: 100].
        #[arg(long)]
        hidden: Option<usize>,
        /// User-phase hidden size per direction [default: 100].
        #[arg(long)]
        user_hidden: Option<usize>,
        /// Epochs without validation improvement before stopping [default: 200].
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Out-of-fold evaluation of one or more trained runs.
    Eval {
        #[command(flatten)]
        data: DataArg,
        /// Directories written by `esum train`; repeat or comma-separate to
        /// compare variants. The first is the primary system.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        /// Embeddings (default: embeddings.ckpt inside the first --checkpoints).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Summary sizes to evaluate [default: 5,10].
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Comma list of `baselines`, `published` and at most one reference
        /// system name (e.g. `esa`), or `none`.
        #[arg(long, value_delimiter = ',')]
        compare: Option<Vec<String>>,
        /// Per-entity scores of the reference system (a JSON system run, a
        /// list of them, or a report); enables measured significance tests.
        #[arg(long)]
        reference_scores: Option<PathBuf>,
        /// Where report.json and report.txt go (default: first --checkpoints).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-k triples of one entity.
    Summarize {
        #[command(flatten)]
        folds: FoldArgs,
        /// Entity id or subject IRI.
        #[arg(long)]
        entity: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Export per-layer scores and attention of one entity as JSON.
    Attention {
        #[command(flatten)]
        folds: FoldArgs,
        /// Entity id or subject IRI.
        #[arg(long)]
        entity: String,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated corpus in the ESBM layout, for smoke tests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        dbpedia: usize,
        #[arg(long, default_value_t = 10)]
        linkedmdb: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Checkpoint(CheckpointError::StaleVocabulary { .. })
            | PipelineError::Transe(TranseError::Checkpoint(CheckpointError::StaleVocabulary { .. })) => {
                CliError::Runtime(format!(
                    "refusing stale artifact: {e}. It was built from a different corpus vocabulary; rerun `esum pretrain` on this corpus"
                ))
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Pretrain {
            data,
            out,
            dim,
            epochs,
            margin,
            lr,
            seed,
        } => {
            set(&mut config.pretrain.dim, dim);
            set(&mut config.pretrain.epochs, epochs);
            set(&mut config.pretrain.margin, margin);
            set(&mut config.pretrain.learning_rate, lr);
            if seed.is_some() {
                config.seed = seed;
            }
            apply_out(&mut config, out);
            cmd_pretrain(&mut config, &data)
        }
        Command::Train {
            data,
            embeddings,
            out,
            variant,
            layers,
            epochs,
            seed,
            lr,
            word_dim,
            hidden,
            user_hidden,
            patience,
        } => {
            set(&mut config.train.variant, variant);
            set(&mut config.train.layers, layers);
            set(&mut config.train.epochs, epochs);
            set(&mut config.train.optimizer.learning_rate, lr);
            set(&mut config.train.word_dim, word_dim);
            set(&mut config.train.hidden, hidden);
            set(&mut config.train.user_hidden, user_hidden);
            set(&mut config.train.patience, patience);
            if seed.is_some() {
                config.seed = seed;
            }
            apply_out(&mut config, out);
            cmd_train(&mut config, &data, &embeddings)
        }
        Command::Eval {
            data,
            checkpoints,
            embeddings,
            k,
            compare,
            reference_scores,
            out,
        } => {
            set(&mut config.ks, k);
            if let Some(tokens) = compare {
                apply_compare(&mut config, &tokens)?;
            }
            cmd_eval(&mut config, &data, &checkpoints, embeddings, reference_scores, out)
        }
        Command::Summarize { folds, entity, k } => {
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            cmd_summarize(&mut config, &folds, &entity, k)
        }
        Command::Attention { folds, entity, out } => cmd_attention(&mut config, &folds, &entity, out),
        Command::Synth {
            out,
            dbpedia,
            linkedmdb,
            seed,
        } => {
            let spec = SyntheticSpec {
                dbpedia,
                linkedmdb,
                seed,
                ..SyntheticSpec::default()
            };
            if dbpedia + linkedmdb < 5 {
                return Err(CliError::Usage("a corpus needs at least 5 entities for cross-validation".into()));
            }
            let d = write_corpus(&spec, &out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
            println!("wrote {} entities to {}", d.len(), out.display());
            Ok(())
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_out(config: &mut RunConfig, out: Option<PathBuf>) {
    if let Some(o) = out {
        config.output_dir = o;
    }
}

fn apply_compare(config: &mut RunConfig, tokens: &[String]) -> Result<()> {
    config.eval.include_baselines = false;
    config.eval.include_published = false;
    config.eval.reference = None;
    for t in tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        match t.to_ascii_lowercase().as_str() {
            "baselines" => config.eval.include_baselines = true,
            "published" => config.eval.include_published = true,
            "none" => {}
            _ if config.eval.reference.is_some() => {
                return Err(CliError::Usage(format!(
                    "--compare names more than one reference system ({} and {t})",
                    config.eval.reference.as_deref().unwrap_or_default()
                )))
            }
            _ => {
                let known = BaselineTable::embedded();
                let name = known
                    .rows
                    .iter()
                    .find(|r| r.system.eq_ignore_ascii_case(t))
                    .map_or_else(|| t.to_string(), |r| r.system.clone());
                config.eval.reference = Some(name);
            }
        }
    }
    Ok(())
}

/// Resolves the data root (flag, then config, then environment) and loads
/// the corpus. The resolved root is written back into the config.
fn load_corpus(config: &mut RunConfig, data: &DataArg) -> Result<Corpus> {
    let root = data
        .data
        .clone()
        .or_else(|| config.data_root.clone())
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "no corpus given: pass --data <root>, set data_root in --config, or set {DATA_ENV}"
            ))
        })?;
    let dataset = load_dataset(&root).map_err(runtime)?;
    log::info!("loaded {} entities from {}", dataset.len(), root.display());
    config.data_root = Some(root);
    Ok(Corpus::new(dataset))
}

fn cmd_pretrain(config: &mut RunConfig, data: &DataArg) -> Result<()> {
    let corpus = load_corpus(config, data)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let run = pretrain::<f64>(&corpus, &config.pretrain_config())?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(runtime)?;
    let path = dir.join(EMBEDDINGS_FILE);
    save_embeddings(&path, &run.embeddings, &Provenance::new(config, &corpus))?;
    println!(
        "wrote {} ({} entities, {} relations, dim {}, final loss {:.6})",
        path.display(),
        run.embeddings.entity.nrows(),
        run.embeddings.relation.nrows(),
        run.embeddings.dim(),
        run.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("sha256 {}", file_sha256(&path)?);
    Ok(())
}

fn cmd_train(config: &mut RunConfig, data: &DataArg, embeddings: &Path) -> Result<()> {
    let corpus = load_corpus(config, data)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let graph = load_embeddings::<f64>(embeddings, &corpus)?;
    config.pretrain = graph.config.clone();
    let train = config.train_config();
    if train.variant == Variant::A5 && train.layers != 1 {
        println!("note: variant a5 uses a single attention layer (layers = {} ignored)", train.layers);
    }
    let cv = cross_validate(&corpus, &graph, &train)?;
    let dir = config.output_dir.clone();
    let prov = Provenance::new(config, &corpus);
    save_cross_validation(&dir, &cv, &prov)?;
    save_embeddings(&dir.join(EMBEDDINGS_FILE), &graph, &prov)?;
    write_atomic(&dir.join(CONFIG_FILE), config.to_toml().as_bytes()).map_err(runtime)?;
    for (round, fold) in cv.folds.iter().enumerate() {
        let best = fold.best_epoch.and_then(|e| fold.log.get(e - 1));
        match best {
            Some(r) => println!(
                "fold {round}: best epoch {} of {}, validation F@5 {:.4} F@10 {:.4} MAP {:.4}",
                r.epoch,
                fold.log.len(),
                r.val_f5,
                r.val_f10,
                r.val_map
            ),
            None => println!("fold {round}: no epochs run"),
        }
    }
    println!("wrote 5 fold checkpoints and logs to {}", dir.display());
    Ok(())
}

fn embeddings_path(explicit: Option<PathBuf>, checkpoints: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| checkpoints.join(EMBEDDINGS_FILE))
}

fn read_reference_runs(path: &Path) -> Result<Vec<SystemRun>> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if let Ok(run) = serde_json::from_str::<SystemRun>(&text) {
        return Ok(vec![run]);
    }
    if let Ok(runs) = serde_json::from_str::<Vec<SystemRun>>(&text) {
        return Ok(runs);
    }
    esum_core::eval::MetricsReport::from_json(&text)
        .map(|r| r.runs)
        .map_err(|e| runtime(format!("{}: not a system run, run list or report: {e}", path.display())))
}

fn cmd_eval(
    config: &mut RunConfig,
    data: &DataArg,
    checkpoints: &[PathBuf],
    embeddings: Option<PathBuf>,
    reference_scores: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus = load_corpus(config, data)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let graph = load_embeddings::<f64>(&embeddings_path(embeddings, &checkpoints[0]), &corpus)?;
    let mut runs = Vec::with_capacity(checkpoints.len());
    let mut trained = Vec::with_capacity(checkpoints.len());
    for dir in checkpoints {
        let folds = load_cross_validation(dir, &corpus, &graph)?;
        let run_config = &folds.metadata[0].provenance.run_config;
        let train = run_config.train_config();
        let name = train.variant.name().to_string();
        if runs.iter().any(|r: &SystemRun| r.system == name) {
            return Err(CliError::Usage(format!(
                "two --checkpoints directories hold variant {name}"
            )));
        }
        runs.push(out_of_fold(
            &corpus,
            &folds.plan,
            &folds.model_refs(),
            &config.ks,
            train.seed,
            &name,
        )?);
        trained.push(run_config.clone());
    }
    if let Some(path) = reference_scores {
        let reference = config
            .eval
            .reference
            .clone()
            .ok_or_else(|| CliError::Usage("--reference-scores needs a reference system in --compare".into()))?;
        let found = read_reference_runs(&path)?
            .into_iter()
            .find(|r| r.system.eq_ignore_ascii_case(&reference))
            .ok_or_else(|| runtime(format!("{} holds no scores for {reference}", path.display())))?;
        runs.push(found);
    }
    let provenance = serde_json::json!({
        "eval_config": config,
        "corpus_hash": corpus.dataset.corpus_hash(),
        "vocab_hash": corpus.vocab.hash(),
        "trained": trained,
    });
    let report = build_report(runs, &BaselineTable::embedded(), &config.report_options(), provenance)
        .map_err(runtime)?;
    let dir = out.unwrap_or_else(|| checkpoints[0].clone());
    fs::create_dir_all(&dir).map_err(runtime)?;
    let text = report.render_text();
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes()).map_err(runtime)?;
    write_atomic(&dir.join("report.txt"), text.as_bytes()).map_err(runtime)?;
    print!("{text}");
    println!("wrote {} and {}", dir.join("report.json").display(), dir.join("report.txt").display());
    Ok(())
}

/// Up to five entity ids or subjects close to `key`, best first.
fn close_matches(corpus: &Corpus, key: &str) -> Vec<String> {
    let mut scored: Vec<(f64, String)> = corpus
        .dataset
        .entities
        .iter()
        .map(|e| {
            let local = e.subject.rsplit(['/', '#']).next().unwrap_or(&e.subject);
            let score = strsim::jaro_winkler(key, &e.entity_id)
                .max(strsim::jaro_winkler(key, &e.subject))
                .max(strsim::jaro_winkler(key, local));
            (score, format!("{} <{}>", e.entity_id, e.subject))
        })
        .filter(|(s, _)| *s >= 0.7)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(5).map(|(_, s)| s).collect()
}

struct Loaded {
    corpus: Corpus,
    folds: LoadedFolds<f64>,
    index: usize,
    seed: u64,
}

fn load_for_entity(config: &mut RunConfig, args: &FoldArgs, key: &str) -> Result<Loaded> {
    let corpus = load_corpus(config, &args.data)?;
    let index = corpus.dataset.find(key).ok_or_else(|| {
        let close = close_matches(&corpus, key);
        if close.is_empty() {
            runtime(format!("unknown entity {key:?}"))
        } else {
            runtime(format!("unknown entity {key:?}; close matches:\n  {}", close.join("\n  ")))
        }
    })?;
    let graph: GraphEmbeddings<f64> =
        load_embeddings(&embeddings_path(args.embeddings.clone(), &args.checkpoints), &corpus)?;
    let folds = load_cross_validation(&args.checkpoints, &corpus, &graph)?;
    let seed = folds.metadata[0].provenance.run_config.train_config().seed;
    Ok(Loaded {
        corpus,
        folds,
        index,
        seed,
    })
}

fn cmd_summarize(config: &mut RunConfig, args: &FoldArgs, key: &str, k: usize) -> Result<()> {
    let l = load_for_entity(config, args, key)?;
    let desc = &l.corpus.dataset.entities[l.index];
    let enc = &l.corpus.encoded[l.index];
    let round = l.folds.plan.test_round(&desc.entity_id).expect("plan covers the corpus");
    let model = &l.folds.models[round];
    let a = model
        .attention(
            enc,
            &mut PermMode::Eval {
                seed: l.seed,
                entity_id: &desc.entity_id,
            },
        )
        .map_err(runtime)?;
    let summary = esum_core::eval::Summary::new(&desc.entity_id, &a, k);
    println!(
        "entity {} <{}> ({}, {} triples), scored by the fold-{round} model",
        desc.entity_id,
        desc.subject,
        desc.source.label(),
        desc.len()
    );
    if k > desc.len() {
        println!("note: k = {k} exceeds the {} triples of this entity; showing all", desc.len());
    }
    for (rank, (&i, s)) in summary.indices.iter().zip(&summary.scores).enumerate() {
        println!("{:>3}. {s:.6}  {}", rank + 1, desc.triples[i].to_ntriples());
    }
    println!("total attention {:.6}", summary.scores.iter().sum::<f64>());
    Ok(())
}

fn cmd_attention(config: &mut RunConfig, args: &FoldArgs, key: &str, out: Option<PathBuf>) -> Result<()> {
    let l = load_for_entity(config, args, key)?;
    let desc = &l.corpus.dataset.entities[l.index];
    let model = l.folds.model_for(&desc.entity_id).expect("plan covers the corpus");
    let trace = model
        .trace(
            &l.corpus.encoded[l.index],
            &mut PermMode::Eval {
                seed: l.seed,
                entity_id: &desc.entity_id,
            },
        )
        .map_err(runtime)?;
    let export = export_attention(desc, &trace).map_err(runtime)?;
    let json = serde_json::to_string_pretty(&export).expect("export serializes") + "\n";
    match out {
        Some(path) => {
            write_atomic(&path, json.as_bytes()).map_err(runtime)?;
            println!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}
