//! Location classification from position fixes: baseline classifiers,
//! stratified cross-validation, confusion matrices and ROC curves.

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFix {
    pub position: [f64; 3],
    pub label: String,
    /// Oversampling window the fix came from.
    pub group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    NearestCentroid,
    Knn { k: usize },
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier::Knn { k: 5 }
    }
}

/// Componentwise median of one oversampling window.
///
/// `fixes` is the whole window; it must hold at least `n` fixes.
pub fn aggregate_oversampled(fixes: &[[f64; 3]], n: usize) -> Result<[f64; 3]> {
    if n == 0 || fixes.len() < n {
        return Err(Error::InsufficientData {
            needed: n.max(1),
            got: fixes.len(),
        });
    }
    let mut out = [0.0; 3];
    let mut col = Vec::with_capacity(fixes.len());
    for (k, o) in out.iter_mut().enumerate() {
        col.clear();
        col.extend(fixes.iter().map(|f| f[k]));
        col.sort_by(f64::total_cmp);
        let m = col.len();
        *o = if m % 2 == 1 { col[m / 2] } else { 0.5 * (col[m / 2 - 1] + col[m / 2]) };
    }
    Ok(out)
}

/// Fraction on the diagonal.
pub fn accuracy(confusion: &[Vec<u64>]) -> Result<f64> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::invalid("confusion matrix holds no samples"));
    }
    let hits: u64 = confusion.iter().enumerate().filter_map(|(i, r)| r.get(i)).sum();
    Ok(hits as f64 / total as f64)
}

/// Fold index per sample, stratified by class.
///
/// Within each class the samples are shuffled and dealt round-robin, so
/// every class is split as evenly as its count allows.
pub fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, l) in labels.iter().enumerate() {
        by_class[*l].push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for idx in members.iter() {
            assignment[*idx] = next % folds;
            next += 1;
        }
    }
    assignment
}

struct Model<'a> {
    classifier: Classifier,
    train: Vec<(&'a [f64; 3], usize)>,
    centroids: Vec<Option<[f64; 3]>>,
    n_classes: usize,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl<'a> Model<'a> {
    fn fit(classifier: Classifier, train: Vec<(&'a [f64; 3], usize)>, n_classes: usize) -> Self {
        let mut sums = vec![([0.0; 3], 0usize); n_classes];
        for (p, l) in &train {
            for k in 0..3 {
                sums[*l].0[k] += p[k];
            }
            sums[*l].1 += 1;
        }
        let centroids = sums
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| [s[0] / n as f64, s[1] / n as f64, s[2] / n as f64]))
            .collect();
        Self {
            classifier,
            train,
            centroids,
            n_classes,
        }
    }

    /// Predicted class and one score per class (higher means more likely).
    fn predict(&self, x: &[f64; 3]) -> (usize, Vec<f64>) {
        match self.classifier {
            Classifier::NearestCentroid => {
                let scores: Vec<f64> = self
                    .centroids
                    .iter()
                    .map(|c| c.map_or(f64::NEG_INFINITY, |c| -dist2(x, &c).sqrt()))
                    .collect();
                let best = argmax(&scores, |_| 0.0);
                (best, scores)
            }
            Classifier::Knn { k } => {
                let k = k.min(self.train.len()).max(1);
                let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
                for (p, l) in &self.train {
                    let d = dist2(x, p);
                    if nearest.len() < k || d < nearest[nearest.len() - 1].0 {
                        let at = nearest.partition_point(|n| n.0 <= d);
                        nearest.insert(at, (d, *l));
                        nearest.truncate(k);
                    }
                }
                let mut votes = vec![0.0; self.n_classes];
                let mut spread = vec![0.0; self.n_classes];
                for (d, l) in &nearest {
                    votes[*l] += 1.0;
                    spread[*l] += d.sqrt();
                }
                // Ties go to the class whose voters are closer.
                let best = argmax(&votes, |c| -spread[c]);
                let scores = votes.iter().map(|v| v / nearest.len() as f64).collect();
                (best, scores)
            }
        }
    }
}

fn argmax(scores: &[f64], tie: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    for c in 1..scores.len() {
        if scores[c] > scores[best] || (scores[c] == scores[best] && tie(c) > tie(best)) {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurves {
    /// One-vs-rest (false-positive rate, true-positive rate) points per label.
    pub per_class: BTreeMap<String, Vec<[f64; 2]>>,
    /// Class-averaged true-positive rate on a uniform false-positive grid.
    pub mean: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classifier: Classifier,
    pub folds: usize,
    pub seed: u64,
    pub samples: usize,
    pub accuracy: f64,
    pub labels: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub roc: RocCurves,
}

/// Stratified k-fold cross-validation. Folds run in parallel; the report
/// does not depend on scheduling.
pub fn cross_validate(dataset: &[LabeledFix], classifier: Classifier, folds: usize, seed: u64) -> Result<ClassificationReport> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if let Classifier::Knn { k: 0 } = classifier {
        return Err(Error::invalid("k must be at least 1"));
    }
    let labels: Vec<String> = dataset
        .iter()
        .map(|f| f.label.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.is_empty() {
        return Err(Error::InsufficientData { needed: folds, got: 0 });
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let y: Vec<usize> = dataset.iter().map(|f| index[f.label.as_str()]).collect();
    let nc = labels.len();
    let mut counts = vec![0usize; nc];
    for l in &y {
        counts[*l] += 1;
    }
    if let Some((c, n)) = counts.iter().enumerate().find(|(_, n)| **n < folds) {
        return Err(Error::TooFewSamples {
            class: labels[c].clone(),
            count: *n,
            folds,
        });
    }
    let fold_of = stratified_folds(&y, nc, folds, seed);

    let run_fold = |f: usize| -> Vec<(usize, usize, Vec<f64>)> {
        let train = dataset
            .iter()
            .zip(&y)
            .zip(&fold_of)
            .filter(|(_, g)| **g != f)
            .map(|((d, l), _)| (&d.position, *l))
            .collect();
        let model = Model::fit(classifier, train, nc);
        dataset
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] == f)
            .map(|(i, d)| {
                let (pred, scores) = model.predict(&d.position);
                (i, pred, scores)
            })
            .collect()
    };
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(folds);
    let mut results: Vec<(usize, usize, Vec<f64>)> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_fold = &run_fold;
                s.spawn(move || (w..folds).step_by(workers).flat_map(run_fold).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("fold worker panicked"))
            .collect()
    });
    results.sort_by_key(|r| r.0);

    let mut confusion = vec![vec![0u64; nc]; nc];
    for (i, pred, _) in &results {
        confusion[y[*i]][*pred] += 1;
    }
    let roc = roc_curves(&results, &y, &labels);
    Ok(ClassificationReport {
        classifier,
        folds,
        seed,
        samples: dataset.len(),
        accuracy: accuracy(&confusion)?,
        labels,
        confusion,
        roc,
    })
}

/// One-vs-rest ROC for one class from (score, is_positive) pairs.
pub fn roc_points(scored: &mut [(f64, bool)]) -> Vec<[f64; 2]> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut pts = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let fpr = if neg > 0.0 { fp / neg } else { 0.0 };
        let tpr = if pos > 0.0 { tp / pos } else { 0.0 };
        pts.push([fpr, tpr]);
    }
    pts
}

const ROC_GRID: usize = 100;

fn roc_curves(results: &[(usize, usize, Vec<f64>)], y: &[usize], labels: &[String]) -> RocCurves {
    let mut per_class = BTreeMap::new();
    let mut mean = vec![0.0; ROC_GRID + 1];
    for (c, label) in labels.iter().enumerate() {
        let mut scored: Vec<(f64, bool)> = results.iter().map(|(i, _, s)| (s[c], y[*i] == c)).collect();
        let pts = roc_points(&mut scored);
        for (g, m) in mean.iter_mut().enumerate() {
            let fpr = g as f64 / ROC_GRID as f64;
            // Highest TPR reachable without exceeding this FPR.
            *m += pts.iter().filter(|p| p[0] <= fpr + 1e-12).map(|p| p[1]).fold(0.0, f64::max);
        }
        per_class.insert(label.clone(), pts);
    }
    let n = labels.len() as f64;
    RocCurves {
        per_class,
        mean: mean
            .into_iter()
            .enumerate()
            .map(|(g, m)| [g as f64 / ROC_GRID as f64, m / n])
            .collect(),
    }
}

/// Reads an `x,y,z,label,group` CSV.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledFix>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let h = rdr.headers()?.clone();
    if h.iter().collect::<Vec<_>>() != ["x", "y", "z", "label", "group"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header `x,y,z,label,group`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::Parse {
                line,
                message: format!("column {}: {e}", i + 1),
            })
        };
        if rec.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        out.push(LabeledFix {
            position: [num(0)?, num(1)?, num(2)?],
            label: rec[3].to_string(),
            group: rec[4].to_string(),
        });
    }
    Ok(out)
}

pub fn write_dataset(data: &[LabeledFix], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z", "label", "group"])?;
    for f in data {
        w.write_record([
            f.position[0].to_string(),
            f.position[1].to_string(),
            f.position[2].to_string(),
            f.label.clone(),
            f.group.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 3]], per: usize, sigma: f64, seed: u64) -> Vec<LabeledFix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sigma).unwrap();
        let mut out = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                out.push(LabeledFix {
                    position: [
                        center[0] + n.sample(&mut rng),
                        center[1] + n.sample(&mut rng),
                        center[2] + n.sample(&mut rng),
                    ],
                    label: format!("c{c:02}"),
                    group: format!("g{c}-{i}"),
                });
            }
        }
        out
    }

    #[test]
    fn accuracy_identities() {
        assert_eq!(accuracy(&[vec![5, 0], vec![0, 7]]).unwrap(), 1.0);
        assert_eq!(accuracy(&[vec![0, 4], vec![4, 0]]).unwrap(), 0.0);
        assert!(accuracy(&[vec![0, 0], vec![0, 0]]).is_err());
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn median_aggregation() {
        let p = [1.0, 2.0, 3.0];
        assert_eq!(aggregate_oversampled(&[p], 1).unwrap(), p);
        let m = aggregate_oversampled(&[[0.0, 0.0, 0.0], [0.1, 0.1, 0.1], [50.0, 40.0, 90.0]], 3).unwrap();
        assert_eq!(m, [0.1, 0.1, 0.1]);
        assert!(aggregate_oversampled(&[p, p], 3).is_err());
        assert!(aggregate_oversampled(&[p], 0).is_err());
    }

    #[test]
    fn separable_classes() {
        let d = blobs(&[[0.0, 0.0, 1.0], [10.0, 0.0, 1.0]], 50, 0.1, 1);
        for c in [Classifier::NearestCentroid, Classifier::Knn { k: 5 }] {
            let r = cross_validate(&d, c, 10, 7).unwrap();
            assert_eq!(r.accuracy, 1.0);
            assert_eq!(r.confusion, vec![vec![50, 0], vec![0, 50]]);
        }
    }

    #[test]
    fn too_few_samples_named() {
        let mut d = blobs(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]], 20, 0.1, 1);
        d.truncate(29);
        match cross_validate(&d, Classifier::default(), 10, 1) {
            Err(Error::TooFewSamples { class, count, folds }) => {
                assert_eq!((class.as_str(), count, folds), ("c01", 9, 10));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let d = blobs(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 40, 0.6, 2);
        let a = cross_validate(&d, Classifier::default(), 10, 3).unwrap();
        let b = cross_validate(&d, Classifier::default(), 10, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_matches_confusion_trace() {
        let d = blobs(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 40, 0.6, 2);
        let r = cross_validate(&d, Classifier::default(), 10, 3).unwrap();
        let tr: u64 = (0..3).map(|i| r.confusion[i][i]).sum();
        let all: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(all as usize, d.len());
        assert_eq!(r.accuracy, tr as f64 / all as f64);
        assert!(r.accuracy > 0.5 && r.accuracy < 1.0);
    }

    #[test]
    fn roc_shape() {
        let d = blobs(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 60, 0.5, 4);
        let r = cross_validate(&d, Classifier::default(), 10, 3).unwrap();
        for pts in r.roc.per_class.values() {
            assert_eq!(pts[0], [0.0, 0.0]);
            assert_eq!(*pts.last().unwrap(), [1.0, 1.0]);
            for w in pts.windows(2) {
                assert!(w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
            }
        }
        assert_eq!(r.roc.mean.len(), ROC_GRID + 1);
        assert!((r.roc.mean.last().unwrap()[1] - 1.0).abs() < 1e-12);
        for w in r.roc.mean.windows(2) {
            assert!(w[1][1] >= w[0][1]);
        }
    }

    #[test]
    fn roc_perfect_scores() {
        let mut s = vec![(0.9, true), (0.8, true), (0.1, false), (0.0, false)];
        assert_eq!(roc_points(&mut s), vec![[0.0, 0.0], [0.0, 0.5], [0.0, 1.0], [0.5, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn dataset_round_trip() {
        let d = blobs(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 5, 0.5, 4);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset(&d, f.path()).unwrap();
        assert_eq!(load_dataset(f.path()).unwrap(), d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn folds_are_balanced(counts in proptest::collection::vec(10usize..40, 1..6), folds in 2usize..11, seed: u64) {
            let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, n)| std::iter::repeat_n(c, *n)).collect();
            let f = stratified_folds(&labels, counts.len(), folds, seed);
            for c in 0..counts.len() {
                let mut per = vec![0usize; folds];
                for (l, g) in labels.iter().zip(&f) {
                    if *l == c { per[*g] += 1; }
                }
                let (mn, mx) = (per.iter().min().unwrap(), per.iter().max().unwrap());
                prop_assert!(mx - mn <= 1);
            }
        }

        #[test]
        fn median_is_permutation_invariant(mut fixes in proptest::collection::vec(prop::array::uniform3(-50.0..50.0f64), 1..16), seed: u64) {
            let n = fixes.len();
            let a = aggregate_oversampled(&fixes, n).unwrap();
            fixes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(a, aggregate_oversampled(&fixes, n).unwrap());
        }

        #[test]
        fn accuracy_bounded_and_relabel_invariant(cells in proptest::collection::vec(0u64..20, 9), perm_seed: u64) {
            let m: Vec<Vec<u64>> = cells.chunks(3).map(|r| r.to_vec()).collect();
            prop_assume!(cells.iter().sum::<u64>() > 0);
            let a = accuracy(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let mut p: Vec<usize> = (0..3).collect();
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let mut q = vec![vec![0u64; 3]; 3];
            for i in 0..3 { for j in 0..3 { q[p[i]][p[j]] = m[i][j]; } }
            prop_assert_eq!(accuracy(&q).unwrap(), a);
        }

        #[test]
        fn cv_relabel_invariant(seed in 0u64..1000) {
            let d = blobs(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 20, 0.5, seed);
            let a = cross_validate(&d, Classifier::default(), 5, seed).unwrap().accuracy;
            // Renaming labels while keeping their sort order leaves folds unchanged.
            let renamed: Vec<LabeledFix> = d.iter().map(|f| LabeledFix { label: format!("zz{}", f.label), ..f.clone() }).collect();
            prop_assert_eq!(cross_validate(&renamed, Classifier::default(), 5, seed).unwrap().accuracy, a);
        }
    }
}
