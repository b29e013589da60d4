use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{Protocol, ProtocolConfig, Selection, DEFAULT_POOL_SIZE};
use super::report::{ClassScore, DatasetSummary, IncrementReport, RunReport};
use crate::aggvar::MemoryStore;
use crate::classifier::{train, LinearClassifier, TrainConfig};
use crate::curiosity::{detect_unknown, score, select_informative, Detection};
use crate::error::{CbclError, Result};
use crate::feature_store::{
    make_stream, split_class_incremental, split_fsil, ClassId, Dataset, FeatureVector, IncrementBatch, LabelOracle,
    LabeledSample, Split,
};
use crate::rehearsal::{generate_rehearsal_set, RehearsalConfig};
use crate::rng::{derived_rng, sub_seed};

/// Memory, classifier, and the per-increment learn/rehearse/retrain step.
pub(crate) struct Learner<'a> {
    config: &'a ProtocolConfig,
    pub(crate) store: MemoryStore,
    pub(crate) classifier: Option<LinearClassifier>,
}

pub(crate) struct StepStats {
    pub(crate) new_classes: BTreeSet<ClassId>,
    pub(crate) clusters_created: usize,
    pub(crate) rehearsal_exemplars: usize,
}

impl<'a> Learner<'a> {
    pub(crate) fn new(config: &'a ProtocolConfig, dim: usize) -> Result<Self> {
        Ok(Learner {
            config,
            store: MemoryStore::new(dim, config.aggvar)?,
            classifier: None,
        })
    }

    /// Clusters the batch, regenerates exemplars for every class the memory
    /// knew before this batch, and retrains the classifier from scratch on
    /// those exemplars plus the batch's real features.
    pub(crate) fn step(&mut self, t: usize, batch: &IncrementBatch) -> Result<StepStats> {
        let known_before = self.store.classes();
        let summary = self.store.learn_increment(batch)?;
        let new_classes: BTreeSet<ClassId> = batch.classes().difference(&known_before).copied().collect();

        let rehearsal = RehearsalConfig {
            seed: sub_seed(self.config.master_seed, "rehearsal", t as u64),
            ..self.config.rehearsal
        };
        let exemplars = generate_rehearsal_set(&self.store, &new_classes, &rehearsal)?;
        let rehearsal_exemplars = exemplars.len();
        let mut training: Vec<(FeatureVector, ClassId)> =
            exemplars.into_iter().map(|e| (e.features, e.label)).collect();
        training.extend(batch.samples().iter().map(|s| (s.features.clone(), s.label)));

        let train_cfg = TrainConfig {
            seed: sub_seed(self.config.master_seed, "train", t as u64),
            ..self.config.train
        };
        self.classifier = Some(train(&training, &train_cfg)?);
        Ok(StepStats {
            new_classes,
            clusters_created: summary.clusters_created,
            rehearsal_exemplars,
        })
    }
}

/// Scores the classifier on the test samples of `seen` classes only.
pub(crate) fn evaluate(
    classifier: &LinearClassifier,
    test: &[LabeledSample],
    seen: &BTreeSet<ClassId>,
) -> Result<(f64, BTreeMap<ClassId, ClassScore>)> {
    let mut per_class: BTreeMap<ClassId, ClassScore> = BTreeMap::new();
    let (mut correct, mut total) = (0usize, 0usize);
    for s in test.iter().filter(|s| seen.contains(&s.label)) {
        let hit = classifier.predict(&s.features)? == s.label;
        let e = per_class.entry(s.label).or_default();
        e.total += 1;
        total += 1;
        if hit {
            e.correct += 1;
            correct += 1;
        }
    }
    if total == 0 {
        return Err(CbclError::Data("no test samples for the classes seen so far".into()));
    }
    Ok((correct as f64 / total as f64, per_class))
}

struct Increment {
    batch: Option<IncrementBatch>,
    seen: BTreeSet<ClassId>,
    labels_spent: usize,
    unknown: Option<(Option<f64>, Option<f64>)>,
}

fn report_for(
    t: usize,
    learner: &mut Learner<'_>,
    inc: Increment,
    test: &[LabeledSample],
    label_budget: Option<usize>,
) -> Result<IncrementReport> {
    let (stats, samples_learned) = match &inc.batch {
        Some(b) => (Some(learner.step(t, b)?), b.len()),
        None => (None, 0),
    };
    let classifier = learner
        .classifier
        .as_ref()
        .ok_or_else(|| CbclError::EmptyModel("no labeled data has been learned yet".into()))?;
    let (accuracy_on_seen, per_class_counts) = evaluate(classifier, test, &inc.seen)?;
    let (unknown_precision, unknown_recall) = inc.unknown.unwrap_or((None, None));
    Ok(IncrementReport {
        increment: t,
        new_classes: stats
            .as_ref()
            .map(|s| s.new_classes.iter().copied().collect())
            .unwrap_or_default(),
        seen_classes: inc.seen.iter().copied().collect(),
        accuracy_on_seen,
        per_class_accuracy: per_class_counts.iter().map(|(c, s)| (*c, s.accuracy())).collect(),
        per_class_counts,
        clusters_total: learner.store.cluster_count(),
        clusters_created: stats.as_ref().map_or(0, |s| s.clusters_created),
        samples_learned,
        rehearsal_exemplars: stats.as_ref().map_or(0, |s| s.rehearsal_exemplars),
        labels_spent: inc.labels_spent,
        label_budget,
        memory_bytes: learner.store.memory_footprint(),
        unknown_precision,
        unknown_recall,
    })
}

/// Final memory and classifier of a run, alongside its report.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub store: MemoryStore,
    pub classifier: Option<LinearClassifier>,
}

type Trace = (Vec<IncrementReport>, usize, MemoryStore, Option<LinearClassifier>);

/// Runs one protocol end to end. The result depends only on the dataset
/// contents and the configuration.
pub fn run(config: &ProtocolConfig, dataset: &Dataset) -> Result<RunReport> {
    run_with_state(config, dataset).map(|o| o.report)
}

pub fn run_with_state(config: &ProtocolConfig, dataset: &Dataset) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let (increments, oracle_queries, store, classifier) = match config.protocol {
        Protocol::ClassIncremental | Protocol::Fsil => run_supervised(config, dataset)?,
        Protocol::ActiveLearning => run_active(config, dataset)?,
        Protocol::OnlineStream => run_stream(config, dataset)?,
    };
    let total_labels_spent: usize = increments.iter().map(|r| r.labels_spent).sum();
    if matches!(config.protocol, Protocol::ActiveLearning | Protocol::OnlineStream) {
        // Every label the learner used came through the oracle, once.
        assert_eq!(total_labels_spent, oracle_queries, "oracle audit mismatch");
    }
    let average_incremental_accuracy =
        increments.iter().map(|r| r.accuracy_on_seen).sum::<f64>() / increments.len() as f64;
    let final_accuracy = increments.last().map_or(0.0, |r| r.accuracy_on_seen);
    let report = RunReport {
        config: config.clone(),
        dataset: DatasetSummary {
            samples: dataset.len(),
            dim: dataset.dim(),
            classes: dataset.class_count(),
        },
        increments,
        average_incremental_accuracy,
        final_accuracy,
        total_labels_spent,
        oracle_queries,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        report,
        store,
        classifier,
    })
}

fn split_seed(config: &ProtocolConfig) -> u64 {
    sub_seed(config.master_seed, "split", 0)
}

fn supervised_split(config: &ProtocolConfig, dataset: &Dataset) -> Result<Split> {
    match config.protocol {
        Protocol::Fsil => split_fsil(
            dataset,
            config.classes_per_increment,
            config.shots_per_class.unwrap_or(1),
            config.train_fraction,
            split_seed(config),
        ),
        _ => split_class_incremental(
            dataset,
            config.classes_per_increment,
            config.train_fraction,
            split_seed(config),
        ),
    }
}

fn run_supervised(config: &ProtocolConfig, dataset: &Dataset) -> Result<Trace> {
    let split = supervised_split(config, dataset)?;
    let mut learner = Learner::new(config, dataset.dim())?;
    let mut seen = BTreeSet::new();
    let mut reports = Vec::with_capacity(split.increments.len());
    for (t, batch) in split.increments.iter().enumerate() {
        seen.extend(split.increment_classes[t].iter().copied());
        let inc = Increment {
            batch: Some(batch.clone()),
            seen: seen.clone(),
            labels_spent: batch.len(),
            unknown: None,
        };
        reports.push(report_for(t, &mut learner, inc, &split.test, None).map_err(|e| e.at_increment(t))?);
    }
    Ok((reports, 0, learner.store, learner.classifier))
}

fn run_active(config: &ProtocolConfig, dataset: &Dataset) -> Result<Trace> {
    let split = split_class_incremental(
        dataset,
        config.classes_per_increment,
        config.train_fraction,
        split_seed(config),
    )?;
    let budget = config.label_budget.expect("validated");
    let pool_size = config.pool_size.unwrap_or(DEFAULT_POOL_SIZE);
    let mut oracle = LabelOracle::new(dataset.samples().iter().map(|s| s.label).collect());
    let mut learner = Learner::new(config, dataset.dim())?;
    let mut available: BTreeSet<usize> = BTreeSet::new();
    let mut seen = BTreeSet::new();
    let mut reports = Vec::with_capacity(split.increments.len());

    for t in 0..split.increments.len() {
        seen.extend(split.increment_classes[t].iter().copied());
        available.extend(split.increment_indices[t].iter().copied());

        // The environment offers unlabeled samples of every class met so far.
        let mut pool: Vec<usize> = available.iter().copied().collect();
        pool.shuffle(&mut derived_rng(config.master_seed, "pool", t as u64));
        pool.truncate(pool_size);
        let features: Vec<FeatureVector> = pool.iter().map(|&i| dataset.samples()[i].features.clone()).collect();

        let chosen: Vec<usize> = match config.selection {
            Selection::Curiosity => {
                select_informative(&learner.store, &features, budget)
                    .map_err(|e| e.at_increment(t))?
                    .chosen_indices
            }
            Selection::Random => {
                let mut positions: Vec<usize> = (0..pool.len()).collect();
                positions.shuffle(&mut derived_rng(config.master_seed, "random-selection", t as u64));
                positions.truncate(budget);
                positions
            }
        };

        let mut samples = Vec::with_capacity(chosen.len());
        for &pos in &chosen {
            let idx = pool[pos];
            let label = oracle.query(idx)?;
            available.remove(&idx);
            samples.push(LabeledSample::new(features[pos].clone(), label));
        }
        let batch = IncrementBatch::new(t, samples).map_err(|e| e.at_increment(t))?;
        let inc = Increment {
            labels_spent: batch.len(),
            batch: Some(batch),
            seen: seen.clone(),
            unknown: None,
        };
        reports.push(report_for(t, &mut learner, inc, &split.test, Some(budget)).map_err(|e| e.at_increment(t))?);
    }
    Ok((reports, oracle.queries(), learner.store, learner.classifier))
}

fn run_stream(config: &ProtocolConfig, dataset: &Dataset) -> Result<Trace> {
    let n_classes = dataset.indices_by_class().len();
    let split = split_class_incremental(dataset, n_classes, config.train_fraction, split_seed(config))?;
    let train_set = dataset.subset(&split.increment_indices[0])?;
    let chunk_size = config.chunk_size.expect("validated");
    let budget = config.label_budget.expect("validated");
    let (chunks, mut oracle) = make_stream(&train_set, chunk_size, sub_seed(config.master_seed, "stream", 0))?;
    let mut learner = Learner::new(config, dataset.dim())?;
    let mut appeared = BTreeSet::new();
    let mut reports = Vec::with_capacity(chunks.len());

    for chunk in &chunks {
        let t = chunk.index;
        let known_before = learner.store.classes();
        let mut flagged: Vec<(usize, f64)> = Vec::new();
        let (mut tp, mut truly_unknown) = (0usize, 0usize);
        for (pos, (idx, x)) in chunk.items.iter().enumerate() {
            // Ground truth below feeds the detection metrics only; the learner
            // sees labels exclusively through the oracle.
            let label = train_set.samples()[*idx].label;
            appeared.insert(label);
            let is_new = !known_before.contains(&label);
            truly_unknown += is_new as usize;
            let detection = detect_unknown(&learner.store, x, &config.novelty).map_err(|e| e.at_increment(t))?;
            if detection == Detection::Unknown {
                tp += is_new as usize;
                let s = score(&learner.store, x).map_err(|e| e.at_increment(t))?;
                flagged.push((pos, s.value()));
            }
        }
        let precision = (!flagged.is_empty()).then(|| tp as f64 / flagged.len() as f64);
        let recall = (truly_unknown > 0).then(|| tp as f64 / truly_unknown as f64);

        flagged.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        flagged.truncate(budget);
        let mut samples = Vec::with_capacity(flagged.len());
        for &(pos, _) in &flagged {
            let (idx, x) = &chunk.items[pos];
            samples.push(LabeledSample::new(x.clone(), oracle.query(*idx)?));
        }
        let batch = if samples.is_empty() {
            None
        } else {
            Some(IncrementBatch::new(t, samples)?)
        };
        let inc = Increment {
            labels_spent: batch.as_ref().map_or(0, IncrementBatch::len),
            batch,
            seen: appeared.clone(),
            unknown: Some((precision, recall)),
        };
        reports.push(report_for(t, &mut learner, inc, &split.test, Some(budget)).map_err(|e| e.at_increment(t))?);
    }
    Ok((reports, oracle.queries(), learner.store, learner.classifier))
}
