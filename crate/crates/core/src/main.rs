use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbcl::aggvar::{AggVarConfig, CovarianceMode, MemoryStore};
use cbcl::classifier::{train, TrainConfig};
use cbcl::error::{CbclError, Result};
use cbcl::feature_store::{read_feature_file, split_class_incremental, write_feature_file, IncrementBatch};
use cbcl::harness::{load_model, run_with_state, save_model, tune_threshold, Protocol, ProtocolConfig, Selection};
use cbcl::rehearsal::RehearsalConfig;
use cbcl::rng::sub_seed;
use cbcl::synthetic::{generate_blobs, BlobSpec};

// Output piped into e.g. `head` must not turn a closed pipe into a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "cbcl",
    version,
    about = "Centroid-based continual learning over feature files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a continual-learning protocol and write a JSON report.
    Run(RunArgs),
    /// Pick the clustering threshold by cross-validation on the first increment.
    Tune(TuneArgs),
    /// Build, load or inspect model files.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Inspect or generate feature files.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Args)]
struct LearnerArgs {
    #[arg(long, default_value_t = 40)]
    exemplars_per_class: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value = "diagonal")]
    cov: CovarianceMode,
    /// L2-normalize features before the classifier.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    features: PathBuf,
    /// class_incremental | fsil | online_stream | active_learning
    #[arg(long)]
    protocol: Protocol,
    /// Clustering distance threshold D (`inf` allowed).
    #[arg(long)]
    threshold: f64,
    #[arg(long, default_value_t = 10)]
    classes_per_increment: usize,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    label_budget: Option<usize>,
    /// Unlabeled pool offered per increment (active_learning, default 200).
    #[arg(long)]
    pool_size: Option<usize>,
    /// curiosity | random (active_learning)
    #[arg(long, default_value = "curiosity")]
    selection: Selection,
    /// Defaults to the clustering threshold.
    #[arg(long)]
    unknown_threshold: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[command(flatten)]
    learner: LearnerArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also save the memory and classifier as they stand after the last increment.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    features: PathBuf,
    /// Comma-separated thresholds, e.g. `0,5,10,inf`.
    #[arg(long, value_delimiter = ',', required = true)]
    candidates: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    classes_per_increment: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[command(flatten)]
    learner: LearnerArgs,
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Learn every sample of a feature file as one increment and save the model.
    Save {
        path: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        threshold: f64,
        #[command(flatten)]
        learner: LearnerArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load a model, optionally scoring it on a feature file.
    Load {
        path: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Summarize a model file.
    Inspect { path: PathBuf },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Summarize a feature file.
    Inspect { path: PathBuf },
    /// Write the ten-class synthetic blob dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl LearnerArgs {
    fn apply(&self, config: &mut ProtocolConfig) {
        config.aggvar.covariance_mode = self.cov;
        config.rehearsal = RehearsalConfig {
            exemplars_per_class: self.exemplars_per_class,
            jitter_epsilon: self.epsilon,
            seed: 0,
        };
        config.train = TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            seed: 0,
            normalize: self.normalize,
        };
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let dataset = read_feature_file(&args.features)?;
    let mut config = ProtocolConfig::new(args.protocol, args.threshold, args.seed);
    args.learner.apply(&mut config);
    config.classes_per_increment = args.classes_per_increment;
    config.train_fraction = args.train_fraction;
    config.shots_per_class = args.shots;
    config.chunk_size = args.chunk_size;
    config.label_budget = args.label_budget;
    config.pool_size = args.pool_size;
    config.selection = args.selection;
    if let Some(u) = args.unknown_threshold {
        config.novelty.unknown_threshold = u;
    }
    let outcome = run_with_state(&config, &dataset)?;
    let report = &outcome.report;
    let mut json = report.to_canonical_json()?;
    json.push('\n');
    fs::write(&args.out, json)?;
    out!(
        "{} increments, average incremental accuracy {:.4}, final accuracy {:.4}",
        report.increments.len(),
        report.average_incremental_accuracy,
        report.final_accuracy
    );
    eprintln!("wall time {:.2}s", report.wall_time_secs);

    if let Some(path) = args.save_model {
        save_model(&outcome.store, outcome.classifier.as_ref(), &path)?;
        out!("saved final model to {}", path.display());
    }
    Ok(())
}

fn save_whole(batch: &IncrementBatch, config: &ProtocolConfig, path: PathBuf) -> Result<()> {
    let mut store = MemoryStore::new(batch.dim(), config.aggvar)?;
    store.learn_increment(batch)?;
    let data: Vec<_> = batch.samples().iter().map(|s| (s.features.clone(), s.label)).collect();
    let clf = train(
        &data,
        &TrainConfig {
            seed: sub_seed(config.master_seed, "train", 0),
            ..config.train
        },
    )?;
    save_model(&store, Some(&clf), &path)?;
    out!(
        "saved {} clusters over {} classes to {}",
        store.cluster_count(),
        store.classes().len(),
        path.display()
    );
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let dataset = read_feature_file(&args.features)?;
    let classes = dataset.indices_by_class().len();
    let mut config = ProtocolConfig::new(Protocol::ClassIncremental, 0.0, args.seed);
    args.learner.apply(&mut config);
    let split = split_class_incremental(
        &dataset,
        args.classes_per_increment.min(classes),
        args.train_fraction,
        sub_seed(args.seed, "split", 0),
    )?;
    let outcome = tune_threshold(&split.increments[0], &args.candidates, args.folds, &config, args.seed)?;
    for (d, acc) in &outcome.scores {
        out!("D = {d:<12} cv accuracy {acc:.4}");
    }
    out!("best D = {}", outcome.best);
    Ok(())
}

fn cmd_model(cmd: ModelCommand) -> Result<()> {
    match cmd {
        ModelCommand::Save {
            path,
            features,
            threshold,
            learner,
            seed,
        } => {
            let dataset = read_feature_file(&features)?;
            let mut config = ProtocolConfig::new(Protocol::ClassIncremental, threshold, seed);
            learner.apply(&mut config);
            config.aggvar = AggVarConfig::new(threshold, learner.cov)?;
            let batch = IncrementBatch::new(0, dataset.samples().to_vec())?;
            save_whole(&batch, &config, path)
        }
        ModelCommand::Load { path, features } => {
            let (store, clf) = load_model(&path)?;
            out!(
                "loaded {} clusters over {} classes",
                store.cluster_count(),
                store.classes().len()
            );
            if let Some(features) = features {
                let clf = clf.ok_or_else(|| CbclError::EmptyModel("model file has no classifier".into()))?;
                let dataset = read_feature_file(features)?;
                let mut correct = 0;
                for s in dataset.samples() {
                    correct += (clf.predict(&s.features)? == s.label) as usize;
                }
                out!(
                    "accuracy {:.4} on {} samples",
                    correct as f64 / dataset.len() as f64,
                    dataset.len()
                );
            }
            Ok(())
        }
        ModelCommand::Inspect { path } => {
            let (store, clf) = load_model(&path)?;
            out!("dimension        {}", store.dim());
            out!("covariance       {:?}", store.config().covariance_mode);
            out!("threshold        {}", store.config().distance_threshold);
            out!("clusters         {}", store.cluster_count());
            out!("memory bytes     {}", store.memory_footprint());
            for m in store.models() {
                out!(
                    "  class {:>5}: {} clusters, {} samples",
                    m.class_id(),
                    m.clusters().len(),
                    m.total_count()
                );
            }
            match clf {
                Some(c) => out!(
                    "classifier       {} classes, normalize={}",
                    c.class_ids().len(),
                    c.normalize()
                ),
                None => out!("classifier       none"),
            }
            Ok(())
        }
    }
}

fn cmd_dataset(cmd: DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Inspect { path } => {
            let ds = read_feature_file(&path)?;
            out!("samples   {}", ds.len());
            out!("dimension {}", ds.dim());
            out!("classes   {}", ds.class_count());
            let counts: BTreeMap<u32, usize> = ds.indices_by_class().into_iter().map(|(c, v)| (c, v.len())).collect();
            for (c, n) in counts {
                out!("  {:>5} {:<24} {}", c, ds.class_names()[c as usize], n);
            }
            Ok(())
        }
        DatasetCommand::Synth { out, seed } => {
            let blobs = generate_blobs(&BlobSpec::ten_class(seed))?;
            write_feature_file(&blobs.dataset, &out)?;
            out!("wrote {} samples to {}", blobs.dataset.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Model(m) => cmd_model(m),
        Command::Dataset(d) => cmd_dataset(d),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
