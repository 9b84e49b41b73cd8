//! Balanced-class cross-validation experiments.
//!
//! Experiment `i` uses the `i` most frequent classes, undersamples every
//! class to the size `m` of the smallest one, deals the examples into
//! stratified folds, picks k by pooled cross-validated accuracy and reports
//! the pooled confusion matrix at that k.
//!
//! k is selected on the same folds that produce the reported accuracy, so
//! reported numbers are optimistic in the same way as a plain CV sweep.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::CropClass;
use crate::indices::{FeatureDataset, FeatureVector};
use crate::knn::{vote, KnnError, KnnModel, NeighborResult};
use crate::rng::{Purpose, SplitMix64};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_K_CANDIDATES: [usize; 10] = [1, 3, 5, 7, 9, 11, 13, 15, 17, 19];

pub const SELECTION_NOTE: &str =
    "k was selected on the same folds used for reporting; accuracies carry optimistic selection bias";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("class {0} has no examples")]
    MissingClass(CropClass),
    #[error("class {class} has {count} examples, need at least {needed}")]
    ClassTooSmall {
        class: CropClass,
        count: usize,
        needed: usize,
    },
    #[error("k = {k} exceeds the smallest training split ({train})")]
    KTooLarge { k: usize, train: usize },
    #[error(transparent)]
    Knn(#[from] KnnError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub included_classes: Vec<CropClass>,
    pub folds: usize,
    pub k_candidates: Vec<usize>,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(included_classes: Vec<CropClass>, seed: u64) -> Self {
        Self {
            included_classes,
            folds: DEFAULT_FOLDS,
            k_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            seed,
        }
    }

    /// Checks the spec on its own, independent of any dataset.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.folds < 2 {
            return bad(format!("folds = {} must be at least 2", self.folds));
        }
        if self.k_candidates.is_empty() {
            return bad("no k candidates".into());
        }
        if let Some(k) = self.k_candidates.iter().find(|k| **k == 0 || *k % 2 == 0) {
            return bad(format!("k = {k} must be odd and positive"));
        }
        if self.included_classes.len() < 2 {
            return bad("need at least two classes".into());
        }
        let unique: BTreeSet<_> = self.included_classes.iter().collect();
        if unique.len() != self.included_classes.len() {
            return bad("duplicate class in spec".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub fold_of: BTreeMap<i32, usize>,
}

impl FoldAssignment {
    /// `[fold][class] -> count` over the given dataset.
    pub fn class_counts(&self, ds: &FeatureDataset) -> Vec<BTreeMap<CropClass, usize>> {
        let mut out = vec![BTreeMap::new(); self.folds];
        for f in ds.features() {
            if let Some(&fold) = self.fold_of.get(&f.field_id) {
                *out[fold].entry(f.label).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Rows are true classes, columns predicted classes, both in `classes` order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<CropClass>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<CropClass>) -> Self {
        let n = classes.len();
        Self {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    fn position(&self, c: CropClass) -> usize {
        self.classes
            .iter()
            .position(|x| *x == c)
            .expect("class belongs to the matrix")
    }

    pub fn record(&mut self, truth: CropClass, predicted: CropClass) {
        let (r, c) = (self.position(truth), self.position(predicted));
        self.counts[r][c] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Row-normalized diagonal (recall).
    pub fn per_class_accuracy(&self) -> BTreeMap<CropClass, f64> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let row = self.row_sum(i);
                let acc = if row == 0 {
                    0.0
                } else {
                    self.counts[i][i] as f64 / row as f64
                };
                (*c, acc)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub field_id: i32,
    pub true_class: CropClass,
    pub fold: usize,
    pub result: NeighborResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub confusion: ConfusionMatrix,
    pub overall_accuracy: f64,
    pub per_class_accuracy: BTreeMap<CropClass, f64>,
    pub per_fold_accuracy: Vec<f64>,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub correct: u64,
    pub overall_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub note: String,
    pub spec: ExperimentSpec,
    pub m: usize,
    pub selected_k: usize,
    pub overall_accuracy: f64,
    pub per_class_accuracy: BTreeMap<CropClass, f64>,
    pub confusion: ConfusionMatrix,
    pub per_fold_accuracy: Vec<f64>,
    pub k_table: Vec<KScore>,
    pub class_counts: BTreeMap<CropClass, usize>,
    pub folds: FoldAssignment,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

fn class_stream_id(c: CropClass) -> u64 {
    u64::from(c.id())
}

/// Restricts `ds` to `classes` and draws exactly `m` examples per class,
/// where `m` is the smallest class count. Each class's field ids, in
/// ascending order, are shuffled by a stream derived from `(seed, class)`
/// and the first `m` are kept.
pub fn undersample(
    ds: &FeatureDataset,
    classes: &[CropClass],
    seed: u64,
    min_size: usize,
) -> Result<FeatureDataset, ExperimentError> {
    if classes.is_empty() {
        return Err(ExperimentError::InvalidSpec("no classes".into()));
    }
    for &c in classes {
        if ds.count(c) == 0 {
            return Err(ExperimentError::MissingClass(c));
        }
    }
    let (m, smallest) = classes
        .iter()
        .map(|&c| (ds.count(c), c))
        .min()
        .expect("nonempty");
    if m < min_size {
        return Err(ExperimentError::ClassTooSmall {
            class: smallest,
            count: m,
            needed: min_size,
        });
    }
    let mut keep = BTreeSet::new();
    for &c in classes {
        let mut ids: Vec<i32> = ds
            .features()
            .iter()
            .filter(|f| f.label == c)
            .map(|f| f.field_id)
            .collect();
        let mut rng = SplitMix64::derive(seed, Purpose::Undersample, class_stream_id(c), 0);
        rng.shuffle(&mut ids);
        keep.extend(ids.into_iter().take(m));
    }
    Ok(ds.filter(|f| keep.contains(&f.field_id)))
}

/// Deals each class's shuffled examples round-robin into `folds` folds.
/// Dealing continues from the fold where the previous class stopped, so fold
/// sizes also stay within one of each other.
pub fn stratified_folds(
    ds: &FeatureDataset,
    folds: usize,
    seed: u64,
) -> Result<FoldAssignment, ExperimentError> {
    if folds < 2 {
        return Err(ExperimentError::InvalidSpec(format!(
            "folds = {folds} must be at least 2"
        )));
    }
    for (&class, &count) in ds.class_counts() {
        if count < folds {
            return Err(ExperimentError::ClassTooSmall {
                class,
                count,
                needed: folds,
            });
        }
    }
    let mut fold_of = BTreeMap::new();
    let mut next = 0usize;
    for &class in ds.class_counts().keys() {
        let mut ids: Vec<i32> = ds
            .features()
            .iter()
            .filter(|f| f.label == class)
            .map(|f| f.field_id)
            .collect();
        let mut rng =
            SplitMix64::derive(seed, Purpose::Folds, class_stream_id(class), folds as u64);
        rng.shuffle(&mut ids);
        for id in ids {
            fold_of.insert(id, next);
            next = (next + 1) % folds;
        }
    }
    Ok(FoldAssignment { folds, fold_of })
}

/// One pooled cross-validation result per entry of `ks`.
///
/// Each query's neighbors are ranked once up to the largest k; the vote for
/// a smaller k uses the prefix of that ranking, which is exactly the k-nearest
/// list a model built with that k would return.
pub fn cross_validate_many(
    ds: &FeatureDataset,
    folds: &FoldAssignment,
    ks: &[usize],
) -> Result<Vec<CvResult>, ExperimentError> {
    let k_max = *ks
        .iter()
        .max()
        .ok_or_else(|| ExperimentError::InvalidSpec("no k values".into()))?;
    if ks.contains(&0) {
        return Err(ExperimentError::InvalidSpec("k must be positive".into()));
    }
    let fold_of = |f: &FeatureVector| -> Result<usize, ExperimentError> {
        folds.fold_of.get(&f.field_id).copied().ok_or_else(|| {
            ExperimentError::InvalidSpec(format!("field {} has no fold", f.field_id))
        })
    };
    let mut by_fold: Vec<(Vec<FeatureVector>, Vec<FeatureVector>)> =
        vec![(Vec::new(), Vec::new()); folds.folds];
    for f in ds.features() {
        let home = fold_of(f)?;
        if home >= folds.folds {
            return Err(ExperimentError::InvalidSpec(format!(
                "field {} assigned to fold {home} of {}",
                f.field_id, folds.folds
            )));
        }
        for (i, (train, test)) in by_fold.iter_mut().enumerate() {
            if i == home {
                test.push(f.clone());
            } else {
                train.push(f.clone());
            }
        }
    }
    let smallest_train = by_fold.iter().map(|(t, _)| t.len()).min().unwrap_or(0);
    if k_max > smallest_train {
        return Err(ExperimentError::KTooLarge {
            k: k_max,
            train: smallest_train,
        });
    }

    // [fold][query] -> results per k
    let per_fold: Vec<Vec<(i32, CropClass, Vec<NeighborResult>)>> = by_fold
        .par_iter()
        .map(|(train, test)| {
            let model = KnnModel::from_vectors(train, k_max)?;
            test.par_iter()
                .map(|q| {
                    let ranked = model.nearest(&q.values, k_max)?;
                    let results = ks.iter().map(|&k| vote(&ranked[..k])).collect();
                    Ok((q.field_id, q.label, results))
                })
                .collect::<Result<Vec<_>, KnnError>>()
        })
        .collect::<Result<_, KnnError>>()?;

    let classes: Vec<CropClass> = ds.class_counts().keys().copied().collect();
    let results = ks
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let mut confusion = ConfusionMatrix::new(classes.clone());
            let mut per_fold_accuracy = Vec::with_capacity(folds.folds);
            let mut predictions = Vec::with_capacity(ds.len());
            for (fold, queries) in per_fold.iter().enumerate() {
                let mut correct = 0usize;
                for (field_id, truth, res) in queries {
                    let r = &res[ki];
                    confusion.record(*truth, r.predicted);
                    correct += usize::from(r.predicted == *truth);
                    predictions.push(Prediction {
                        field_id: *field_id,
                        true_class: *truth,
                        fold,
                        result: r.clone(),
                    });
                }
                per_fold_accuracy.push(if queries.is_empty() {
                    0.0
                } else {
                    correct as f64 / queries.len() as f64
                });
            }
            predictions.sort_by_key(|p| p.field_id);
            CvResult {
                k,
                overall_accuracy: confusion.overall_accuracy(),
                per_class_accuracy: confusion.per_class_accuracy(),
                confusion,
                per_fold_accuracy,
                predictions,
            }
        })
        .collect();
    Ok(results)
}

/// Trains on the out-of-fold examples and predicts the in-fold ones, for
/// every fold, pooling all predictions into one confusion matrix.
pub fn cross_validate(
    ds: &FeatureDataset,
    folds: &FoldAssignment,
    k: usize,
) -> Result<CvResult, ExperimentError> {
    Ok(cross_validate_many(ds, folds, &[k])?.remove(0))
}

fn pick_best(results: &[CvResult]) -> (usize, Vec<KScore>) {
    let table: Vec<KScore> = results
        .iter()
        .map(|r| KScore {
            k: r.k,
            correct: r.confusion.trace(),
            overall_accuracy: r.overall_accuracy,
        })
        .collect();
    let best = table
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.correct.cmp(&b.correct).then(b.k.cmp(&a.k)))
        .map(|(i, _)| i)
        .expect("nonempty candidates");
    (best, table)
}

/// Candidate with the highest pooled accuracy; ties go to the smaller k.
pub fn select_k(
    ds: &FeatureDataset,
    folds: &FoldAssignment,
    k_candidates: &[usize],
) -> Result<(usize, Vec<KScore>), ExperimentError> {
    let results = cross_validate_many(ds, folds, k_candidates)?;
    let (best, table) = pick_best(&results);
    Ok((results[best].k, table))
}

/// Undersample → folds → k selection → pooled report, for one spec.
pub fn run_experiment(
    ds: &FeatureDataset,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let balanced = undersample(ds, &spec.included_classes, spec.seed, spec.folds)?;
    let m = balanced.count(spec.included_classes[0]);
    let folds = stratified_folds(&balanced, spec.folds, spec.seed)?;
    let mut results = cross_validate_many(&balanced, &folds, &spec.k_candidates)?;
    let (best, k_table) = pick_best(&results);
    let chosen = results.swap_remove(best);
    Ok(ExperimentReport {
        note: SELECTION_NOTE.to_string(),
        spec: spec.clone(),
        m,
        selected_k: chosen.k,
        overall_accuracy: chosen.overall_accuracy,
        per_class_accuracy: chosen.per_class_accuracy,
        confusion: chosen.confusion,
        per_fold_accuracy: chosen.per_fold_accuracy,
        k_table,
        class_counts: balanced.class_counts().clone(),
        folds,
        predictions: chosen.predictions,
    })
}

/// Suite configuration: classes in inclusion order plus the shared settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub classes: Vec<CropClass>,
    pub folds: usize,
    pub k_candidates: Vec<usize>,
    pub seed: u64,
}

impl SuiteSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            classes: CropClass::ALL.to_vec(),
            folds: DEFAULT_FOLDS,
            k_candidates: DEFAULT_K_CANDIDATES.to_vec(),
            seed,
        }
    }

    /// Experiment specs for 2, 3, ... classes.
    pub fn experiments(&self) -> Vec<ExperimentSpec> {
        (2..=self.classes.len())
            .map(|i| ExperimentSpec {
                included_classes: self.classes[..i].to_vec(),
                folds: self.folds,
                k_candidates: self.k_candidates.clone(),
                seed: self.seed,
            })
            .collect()
    }
}

/// Runs every experiment of the suite with the same seed, in order.
pub fn run_suite(
    ds: &FeatureDataset,
    suite: &SuiteSpec,
) -> Result<Vec<ExperimentReport>, ExperimentError> {
    let specs = suite.experiments();
    if specs.is_empty() {
        return Err(ExperimentError::InvalidSpec(
            "suite needs at least two classes".into(),
        ));
    }
    for s in &specs {
        s.validate()?;
    }
    specs.par_iter().map(|s| run_experiment(ds, s)).collect()
}
