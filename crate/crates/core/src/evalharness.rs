//! k-fold cross-validation with rotating train/validation/test roles, and
//! cross-corpus transfer evaluation of the fold models.
//!
//! For fold `i` of a `k`-fold plan the test part is fold `i`, the validation
//! part is fold `(i + 1) mod k` and the remaining `k - 2` folds train. With
//! `k = 10` that is an 8-1-1 split.
//!
//! Folds run on a dedicated rayon pool. Every fold derives its seeds from the
//! run seed and its own index, and results are assembled in fold order, so
//! the worker count never changes the output.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autonet::argmax;
use crate::corpus::Corpus;
use crate::emomodel::{
    build_model, frame_vocabulary, train, Embeddings, ModelConfig, TrainConfig, TrainedModel,
    TrainingLog,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of every utterance, in corpus order.
    pub assignments: Vec<usize>,
    pub stratified: bool,
}

/// Seeded shuffle, then round-robin assignment. Stratified plans order the
/// shuffled indices by label first so that each label is spread evenly.
pub fn make_fold_plan(corpus: &Corpus, k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k = {k}; need at least 2 folds")));
    }
    if corpus.len() < k {
        return Err(Error::CorpusTooSmall {
            size: corpus.len(),
            k,
        });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "fold-plan")));
    if stratified {
        // stable sort keeps the shuffled order within each label
        let utterances = corpus.utterances();
        order.sort_by(|&a, &b| utterances[a].label.cmp(&utterances[b].label));
    }
    let mut assignments = vec![0; corpus.len()];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl FoldPlan {
    pub fn validation_fold(&self, fold: usize) -> usize {
        (fold + 1) % self.k
    }

    pub fn role(&self, fold: usize, utterance: usize) -> Role {
        let a = self.assignments[utterance];
        if a == fold {
            Role::Test
        } else if a == self.validation_fold(fold) {
            Role::Validation
        } else {
            Role::Train
        }
    }

    fn indices(&self, fold: usize, role: Role) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&u| self.role(fold, u) == role)
            .collect()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(fold, Role::Test)
    }

    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(fold, Role::Validation)
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(fold, Role::Train)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if self.assignments.len() != corpus.len() || self.assignments.iter().any(|&a| a >= self.k) {
            return Err(Error::Config(format!(
                "fold plan covers {} utterances, corpus {:?} has {}",
                self.assignments.len(),
                corpus.name(),
                corpus.len()
            )));
        }
        if self.k < 3 {
            return Err(Error::Config(
                "training needs k >= 3 so train, validation and test folds are disjoint".into(),
            ));
        }
        Ok(())
    }
}

/// Arithmetic mean and sample (n - 1) standard deviation. A single value has
/// standard deviation 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scores of one corpus under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Percent of argmax-correct predictions.
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indexed by the model's labels.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub target: usize,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn target_prob(&self) -> f64 {
        self.probs[self.target]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted() == self.target
    }
}

/// Accuracy and confusion matrix of `model` on `corpus`.
pub fn accuracy(model: &TrainedModel, corpus: &Corpus, emb: &Embeddings) -> Result<Evaluation> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "cannot score empty corpus {:?}",
            corpus.name()
        )));
    }
    let n = model.labels().len();
    let mut confusion = vec![vec![0; n]; n];
    let mut predictions = Vec::with_capacity(corpus.len());
    for u in corpus.utterances() {
        let target = model
            .labels()
            .iter()
            .position(|l| *l == u.label)
            .ok_or_else(|| Error::LabelMismatch(format!("label {:?} unknown to model", u.label)))?;
        let probs = crate::emomodel::predict(model, u, emb)?;
        let p = Prediction {
            id: u.id.clone(),
            target,
            probs,
        };
        confusion[target][p.predicted()] += 1;
        predictions.push(p);
    }
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        accuracy: 100.0 * correct as f64 / corpus.len() as f64,
        confusion,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub test: Evaluation,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub corpus: String,
    pub labels: Vec<String>,
    pub k: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub folds: Vec<FoldOutcome>,
}

impl CvResult {
    pub fn from_folds(corpus: &str, labels: Vec<String>, folds: Vec<FoldOutcome>) -> Self {
        let fold_accuracies: Vec<f64> = folds.iter().map(|f| f.test.accuracy).collect();
        let (mean, std) = mean_std(&fold_accuracies);
        Self {
            corpus: corpus.to_owned(),
            labels,
            k: folds.len(),
            fold_accuracies,
            mean,
            std,
            folds,
        }
    }

    /// Out-of-fold predictions: every utterance scored by the model that did
    /// not see it.
    pub fn out_of_fold(&self) -> impl Iterator<Item = &Prediction> {
        self.folds.iter().flat_map(|f| f.test.predictions.iter())
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_document("crossval", self)
    }

    /// One row per fold plus `mean` and `std` summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,kind,fold,accuracy\n");
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            out.push_str(&format!("{RESULTS_SCHEMA_VERSION},fold,{i},{a}\n"));
        }
        out.push_str(&format!("{RESULTS_SCHEMA_VERSION},mean,,{}\n", self.mean));
        out.push_str(&format!("{RESULTS_SCHEMA_VERSION},std,,{}\n", self.std));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRun {
    pub fold: usize,
    pub target: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub source: String,
    pub target: String,
    pub labels: Vec<String>,
    /// Accuracy of each source fold-model on the whole target corpus.
    pub run_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<TransferRun>,
}

impl TransferResult {
    pub fn to_json(&self) -> Result<String> {
        to_json_document("transfer", self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,kind,source,target,run,accuracy\n");
        let (s, t) = (&self.source, &self.target);
        for (i, a) in self.run_accuracies.iter().enumerate() {
            out.push_str(&format!("{RESULTS_SCHEMA_VERSION},run,{s},{t},{i},{a}\n"));
        }
        out.push_str(&format!("{RESULTS_SCHEMA_VERSION},mean,{s},{t},,{}\n", self.mean));
        out.push_str(&format!("{RESULTS_SCHEMA_VERSION},std,{s},{t},,{}\n", self.std));
        out
    }
}

#[derive(Serialize)]
struct Document<'a, T> {
    schema_version: u32,
    kind: &'a str,
    result: &'a T,
}

fn to_json_document<T: Serialize>(kind: &str, result: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Document {
        schema_version: RESULTS_SCHEMA_VERSION,
        kind,
        result,
    })?;
    s.push('\n');
    Ok(s)
}

/// Everything needed to train the fold models.
#[derive(Debug, Clone, Copy)]
pub struct Experiment<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub embeddings: Embeddings<'a>,
    /// Parallel fold jobs; 0 means one per available core.
    pub workers: usize,
}

fn check_same_labels(source: &Corpus, target: &Corpus) -> Result<()> {
    if source.labels() == target.labels() {
        return Ok(());
    }
    let s: BTreeSet<&String> = source.labels().iter().collect();
    let t: BTreeSet<&String> = target.labels().iter().collect();
    let only_source: Vec<&str> = s.difference(&t).map(|l| l.as_str()).collect();
    let only_target: Vec<&str> = t.difference(&s).map(|l| l.as_str()).collect();
    Err(Error::LabelMismatch(format!(
        "{:?} vs {:?}: only in source {only_source:?}, only in target {only_target:?}",
        source.name(),
        target.name()
    )))
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn train_fold(
    source: &Corpus,
    plan: &FoldPlan,
    fold: usize,
    exp: &Experiment,
) -> Result<(TrainedModel, FoldOutcome)> {
    let name = source.name();
    let train_set = source.select(format!("{name}/fold{fold}/train"), &plan.train_indices(fold));
    let val_set = source.select(format!("{name}/fold{fold}/val"), &plan.validation_indices(fold));
    let test_set = source.select(format!("{name}/fold{fold}/test"), &plan.test_indices(fold));

    let init_seed = derive_seed(exp.train.seed, &format!("fold-{fold}-init"));
    let model = build_model(exp.model, source.labels(), &frame_vocabulary(&train_set), init_seed)?;
    let tc = TrainConfig {
        seed: derive_seed(exp.train.seed, &format!("fold-{fold}-train")),
        ..exp.train.clone()
    };
    let (model, log) = train(model, &train_set, &val_set, &exp.embeddings, &tc)?;
    let test = accuracy(&model, &test_set, &exp.embeddings)?;
    log::info!(
        "{name} fold {fold}: test accuracy {:.3} (best epoch {})",
        test.accuracy,
        log.best_epoch
    );
    let outcome = FoldOutcome {
        fold,
        train_size: train_set.len(),
        validation_size: val_set.len(),
        test,
        log,
    };
    Ok((model, outcome))
}

fn check_experiment(corpus: &Corpus, plan: &FoldPlan, exp: &Experiment) -> Result<()> {
    plan.check_corpus(corpus)?;
    if exp.model.classes != corpus.labels().len() {
        return Err(Error::LabelMismatch(format!(
            "corpus {:?} has {} labels, model config expects {}",
            corpus.name(),
            corpus.labels().len(),
            exp.model.classes
        )));
    }
    Ok(())
}

/// Trains one model per fold and scores it on its test fold.
pub fn run_cv(corpus: &Corpus, plan: &FoldPlan, exp: &Experiment) -> Result<CvResult> {
    Ok(run_cv_with_targets(corpus, &[], plan, exp)?.0)
}

/// Cross-validates on `source` and scores every fold model on each whole
/// target corpus. The targets are only read after training.
pub fn run_cv_with_targets(
    source: &Corpus,
    targets: &[&Corpus],
    plan: &FoldPlan,
    exp: &Experiment,
) -> Result<(CvResult, Vec<TransferResult>)> {
    check_experiment(source, plan, exp)?;
    for t in targets {
        check_same_labels(source, t)?;
    }
    let per_fold: Vec<Result<(FoldOutcome, Vec<Evaluation>)>> = with_pool(exp.workers, || {
        (0..plan.k)
            .into_par_iter()
            .map(|fold| {
                let wrap = |e: Error| Error::Fold {
                    fold,
                    source: Box::new(e),
                };
                let (model, outcome) = train_fold(source, plan, fold, exp).map_err(wrap)?;
                let evals = targets
                    .iter()
                    .map(|t| accuracy(&model, t, &exp.embeddings))
                    .collect::<Result<Vec<_>>>()
                    .map_err(wrap)?;
                Ok((outcome, evals))
            })
            .collect()
    })?;

    let mut folds = Vec::with_capacity(plan.k);
    let mut runs: Vec<Vec<TransferRun>> = vec![Vec::new(); targets.len()];
    for (fold, result) in per_fold.into_iter().enumerate() {
        let (outcome, evals) = result?;
        folds.push(outcome);
        for (ti, eval) in evals.into_iter().enumerate() {
            runs[ti].push(TransferRun { fold, target: eval });
        }
    }
    let cv = CvResult::from_folds(source.name(), source.labels().to_vec(), folds);
    let transfers = targets
        .iter()
        .zip(runs)
        .map(|(t, runs)| {
            let run_accuracies: Vec<f64> = runs.iter().map(|r| r.target.accuracy).collect();
            let (mean, std) = mean_std(&run_accuracies);
            TransferResult {
                source: source.name().to_owned(),
                target: t.name().to_owned(),
                labels: source.labels().to_vec(),
                run_accuracies,
                mean,
                std,
                runs,
            }
        })
        .collect();
    Ok((cv, transfers))
}

/// Trains the `k` source fold-models and evaluates each on the entire target.
/// The source cross-validation result comes along for free.
pub fn run_transfer(
    source: &Corpus,
    target: &Corpus,
    plan: &FoldPlan,
    exp: &Experiment,
) -> Result<(CvResult, TransferResult)> {
    let (cv, mut transfers) = run_cv_with_targets(source, &[target], plan, exp)?;
    Ok((cv, transfers.pop().expect("one target")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use crate::embedding::{EmbeddingTable, OovPolicy};

    fn corpus(n: usize, labels: &[&str]) -> Corpus {
        Corpus::new(
            "c",
            (0..n)
                .map(|i| {
                    Utterance::new(format!("u{i}"), format!("w{} w{}", i % 7, i % 3), labels[i % labels.len()])
                        .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_utterances_ten_folds() {
        let c = corpus(10, &["a", "b"]);
        let plan = make_fold_plan(&c, 10, 3, false).unwrap();
        for fold in 0..10 {
            assert_eq!(plan.train_indices(fold).len(), 8);
            assert_eq!(plan.validation_indices(fold).len(), 1);
            assert_eq!(plan.test_indices(fold).len(), 1);
        }
    }

    #[test]
    fn fold_sizes_for_5616() {
        let c = corpus(5616, &["a", "b", "c", "d"]);
        let plan = make_fold_plan(&c, 10, 1, false).unwrap();
        let sizes = plan.fold_sizes();
        assert!(sizes.iter().all(|s| *s == 561 || *s == 562));
        assert_eq!(sizes.iter().sum::<usize>(), 5616);
    }

    #[test]
    fn plans_are_seeded() {
        let c = corpus(50, &["a", "b"]);
        assert_eq!(
            make_fold_plan(&c, 10, 9, false).unwrap(),
            make_fold_plan(&c, 10, 9, false).unwrap()
        );
        assert_ne!(
            make_fold_plan(&c, 10, 9, false).unwrap(),
            make_fold_plan(&c, 10, 10, false).unwrap()
        );
    }

    #[test]
    fn too_small_corpus() {
        let c = corpus(5, &["a"]);
        assert!(matches!(
            make_fold_plan(&c, 10, 0, false),
            Err(Error::CorpusTooSmall { size: 5, k: 10 })
        ));
    }

    #[test]
    fn stratified_plans_balance_labels() {
        let c = corpus(103, &["a", "b", "b", "c"]);
        let plan = make_fold_plan(&c, 10, 4, true).unwrap();
        for label in c.labels() {
            let per_fold: Vec<usize> = (0..10)
                .map(|f| {
                    plan.test_indices(f)
                        .iter()
                        .filter(|&&i| c.utterances()[i].label == *label)
                        .count()
                })
                .collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1, "{label}: {per_fold:?}");
        }
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[60.0, 70.0]);
        assert_eq!(m, 65.0);
        assert!((s - 7.0710678118654755).abs() < 1e-12);
        assert_eq!(mean_std(&[42.0; 5]), (42.0, 0.0));
    }

    fn constant_model(labels: &[String], favourite: usize) -> TrainedModel {
        let cfg = ModelConfig {
            filters: 2,
            hidden: 2,
            max_len: 3,
            word_dim: 2,
            classes: labels.len(),
            ..ModelConfig::default()
        };
        let mut m = build_model(&cfg, labels, &[], 0).unwrap();
        m.zero_head();
        let mut file = m.to_checkpoint();
        let bias = file
            .checkpoint
            .tensors
            .iter_mut()
            .find(|t| t.name == "output.bias")
            .unwrap();
        bias.values[favourite] = 5.0;
        TrainedModel::from_checkpoint(&file).unwrap()
    }

    #[test]
    fn constant_predictor_on_omg_counts() {
        let labels = ["anger", "happy", "neutral", "sad"];
        let counts = [665, 1558, 1794, 639];
        let mut utterances = Vec::new();
        for (label, n) in labels.iter().zip(counts) {
            for i in 0..n {
                utterances.push(Utterance::new(format!("{label}{i}"), "x y z", *label).unwrap());
            }
        }
        let c = Corpus::new("omg", utterances).unwrap();
        let m = constant_model(c.labels(), 2);
        let word = EmbeddingTable::empty(2, OovPolicy::Zeros).unwrap();
        let eval = accuracy(&m, &c, &Embeddings::words(&word)).unwrap();
        assert!((eval.accuracy - 100.0 * 1794.0 / 4656.0).abs() < 1e-9);
        assert!((eval.accuracy - 38.53).abs() < 0.01);
        assert_eq!(eval.confusion[0][2], 665);
        for row in &eval.confusion {
            assert_eq!(row.iter().sum::<usize>(), row[2]);
        }
        let empty = c.select("none", &[]);
        assert!(matches!(
            accuracy(&m, &empty, &Embeddings::words(&word)),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn transfer_rejects_label_mismatch() {
        let source = corpus(30, &["angry", "happy", "neutral", "sad"]);
        let target = corpus(30, &["angry", "happy", "neutral", "sad", "fear"]);
        let plan = make_fold_plan(&source, 10, 0, false).unwrap();
        let word = EmbeddingTable::empty(2, OovPolicy::Zeros).unwrap();
        let cfg = ModelConfig {
            word_dim: 2,
            max_len: 3,
            ..ModelConfig::default()
        };
        let tc = TrainConfig::default();
        let exp = Experiment {
            model: &cfg,
            train: &tc,
            embeddings: Embeddings::words(&word),
            workers: 1,
        };
        match run_transfer(&source, &target, &plan, &exp) {
            Err(Error::LabelMismatch(msg)) => assert!(msg.contains("fear")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
