//! Linear one-vs-rest max-margin classification with stratified k-fold
//! evaluation by unweighted average recall (UAR).
//!
//! Each binary classifier is trained with the Pegasos subgradient method:
//! regularization `lambda = 1 / (n * C)`, step `1 / (lambda * t)`, a fixed
//! number of epochs and seeded per-epoch shuffles, so results are fully
//! reproducible. The bias is learned as the weight of a constant feature.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, Result};

pub const DEFAULT_C_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const EPOCHS: usize = 200;
const INNER_FOLDS: usize = 3;

/// Labelled feature matrix. `y[i]` indexes into `classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, classes: Vec<String>, x: Vec<Vec<f64>>, y: Vec<usize>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(AnalysisError::Shape {
                expected: x.len(),
                got: y.len(),
            });
        }
        let d = feature_names.len();
        for row in &x {
            if row.len() != d {
                return Err(AnalysisError::Shape {
                    expected: d,
                    got: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(AnalysisError::NonFinite(j));
            }
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes.len()) {
            return Err(AnalysisError::Shape {
                expected: classes.len(),
                got: bad + 1,
            });
        }
        Ok(Dataset {
            feature_names,
            classes,
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| self.x[i].clone()).collect(), idx.iter().map(|&i| self.y[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSettings {
    pub k: usize,
    pub c_grid: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmSettings {
    fn default() -> Self {
        SvmSettings {
            k: 4,
            c_grid: DEFAULT_C_GRID.to_vec(),
            epochs: EPOCHS,
            seed: 0,
        }
    }
}

/// Per-feature z-scoring with parameters from the training rows only.
/// Constant features keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let n = x.len().max(1) as f64;
        let d = x.first().map_or(0, |r| r.len());
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Trained one-vs-rest model on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    standardizer: Standardizer,
    /// One weight vector per class; the last entry is the bias.
    weights: Vec<Vec<f64>>,
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, c: f64, epochs: usize, seed: u64) -> Self {
        let standardizer = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut v = standardizer.transform(r);
                v.push(1.0);
                v
            })
            .collect();
        let weights = (0..n_classes)
            .map(|class| {
                let targets: Vec<f64> = y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
                pegasos(&z, &targets, c, epochs, seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            })
            .collect();
        LinearSvm { standardizer, weights }
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        let mut v = self.standardizer.transform(row);
        v.push(1.0);
        self.weights.iter().map(|w| dot(w, &v)).collect()
    }

    /// Class with the highest score; ties go to the lower index.
    pub fn predict(&self, row: &[f64]) -> usize {
        let s = self.scores(row);
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pegasos(z: &[Vec<f64>], y: &[f64], c: f64, epochs: usize, seed: u64) -> Vec<f64> {
    let d = z.first().map_or(0, |r| r.len());
    let mut w = vec![0.0; d];
    let n = z.len();
    if n == 0 {
        return w;
    }
    let lambda = 1.0 / (n as f64 * c);
    let radius = 1.0 / lambda.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let margin = y[i] * dot(&w, &z[i]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (v, x) in w.iter_mut().zip(&z[i]) {
                    *v += eta * y[i] * x;
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    w
}

/// Mean of per-class recalls over the classes present in `truth`.
pub fn uar(truth: &[usize], pred: &[usize]) -> f64 {
    let recalls = per_class_recall(truth, pred);
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

/// Recall per class index; `None` for classes absent from `truth`.
pub fn per_class_recall(truth: &[usize], pred: &[usize]) -> Vec<Option<f64>> {
    let n_classes = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        totals[t] += 1;
        if t == p {
            hits[t] += 1;
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

/// Fold index for every sample: each class is shuffled with `seed` and dealt
/// round-robin, so every class appears equally often (up to one) per fold.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(AnalysisError::TooFew {
                needed: k,
                got: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Out-of-fold predictions from stratified k-fold cross-validation, training
/// each fold with `c`.
fn cross_val_predict(x: &[Vec<f64>], y: &[usize], n_classes: usize, k: usize, c: f64, epochs: usize, seed: u64) -> Result<Vec<usize>> {
    let folds = stratified_folds(y, k, seed)?;
    let mut pred = vec![0; y.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let model = LinearSvm::fit(&tx, &ty, n_classes, c, epochs, seed.wrapping_add(f as u64));
        for i in (0..y.len()).filter(|&i| folds[i] == f) {
            pred[i] = model.predict(&x[i]);
        }
    }
    Ok(pred)
}

/// C from the grid with the best inner 3-fold UAR; ties keep the smaller C.
pub fn select_c(x: &[Vec<f64>], y: &[usize], n_classes: usize, settings: &SvmSettings) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, settings.c_grid[0]);
    for &c in &settings.c_grid {
        let pred = cross_val_predict(x, y, n_classes, INNER_FOLDS, c, settings.epochs, settings.seed)?;
        let score = uar(y, &pred);
        if score > best.0 {
            best = (score, c);
        }
    }
    Ok(best.1)
}

/// Outcome of nested k-fold evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub uar: f64,
    pub recalls: Vec<Option<f64>>,
    /// C selected in each outer fold.
    pub chosen_c: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Stratified k-fold UAR with C chosen inside each training partition.
pub fn kfold_uar(data: &Dataset, settings: &SvmSettings) -> Result<CvReport> {
    let n_classes = data.classes.len();
    let folds = stratified_folds(&data.y, settings.k, settings.seed)?;
    let mut pred = vec![0; data.len()];
    let mut chosen_c = Vec::with_capacity(settings.k);
    for f in 0..settings.k {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let (tx, ty) = data.subset(&train);
        let c = select_c(&tx, &ty, n_classes, settings)?;
        chosen_c.push(c);
        let model = LinearSvm::fit(&tx, &ty, n_classes, c, settings.epochs, settings.seed.wrapping_add(f as u64));
        for i in (0..data.len()).filter(|&i| folds[i] == f) {
            pred[i] = model.predict(&data.x[i]);
        }
    }
    Ok(CvReport {
        uar: uar(&data.y, &pred),
        recalls: per_class_recall(&data.y, &pred),
        chosen_c,
        predictions: pred,
    })
}

/// Fit on all of `train` and score UAR on `test`.
pub fn cross_predict_uar(train: &Dataset, test: &Dataset, settings: &SvmSettings) -> Result<f64> {
    if train.feature_names != test.feature_names {
        return Err(AnalysisError::Schema {
            trained: train.feature_names.clone(),
            given: test.feature_names.clone(),
        });
    }
    if train.classes != test.classes {
        return Err(AnalysisError::Schema {
            trained: train.classes.clone(),
            given: test.classes.clone(),
        });
    }
    let n_classes = train.classes.len();
    let c = select_c(&train.x, &train.y, n_classes, settings)?;
    let model = LinearSvm::fit(&train.x, &train.y, n_classes, c, settings.epochs, settings.seed);
    let pred: Vec<usize> = test.x.iter().map(|r| model.predict(r)).collect();
    Ok(uar(&test.y, &pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recall_definition() {
        // class 0: 2/2, class 1: 1/2, class 2: 0/2
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [0, 0, 1, 0, 0, 1];
        assert_eq!(per_class_recall(&truth, &pred), vec![Some(1.0), Some(0.5), Some(0.0)]);
        assert_eq!(uar(&truth, &pred), 0.5);
    }

    #[test]
    fn folds_are_balanced() {
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let f = stratified_folds(&y, 4, 9).unwrap();
        for fold in 0..4 {
            for class in 0..3 {
                let n = (0..60).filter(|&i| f[i] == fold && y[i] == class).count();
                assert_eq!(n, 5);
            }
        }
        assert!(matches!(stratified_folds(&[0, 0, 0, 1, 1, 1, 1, 1], 4, 0), Err(AnalysisError::TooFew { .. })));
    }

    proptest! {
        #[test]
        fn uar_invariant_under_relabeling(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60),
            perm_idx in 0usize..6,
        ) {
            let perms = [[0,1,2],[0,2,1],[1,0,2],[1,2,0],[2,0,1],[2,1,0]];
            let p = perms[perm_idx];
            let truth: Vec<usize> = pairs.iter().map(|x| x.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|x| x.1).collect();
            let t2: Vec<usize> = truth.iter().map(|&c| p[c]).collect();
            let p2: Vec<usize> = pred.iter().map(|&c| p[c]).collect();
            prop_assert!((uar(&truth, &pred) - uar(&t2, &p2)).abs() < 1e-12);
        }

        #[test]
        fn uar_equals_accuracy_when_balanced(
            per_class in 1usize..15,
            pred_seed in proptest::collection::vec(0usize..3, 45),
        ) {
            let truth: Vec<usize> = (0..3 * per_class).map(|i| i % 3).collect();
            let pred: Vec<usize> = pred_seed.iter().take(truth.len()).copied()
                .chain(std::iter::repeat(0)).take(truth.len()).collect();
            let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
            prop_assert!((uar(&truth, &pred) - acc).abs() < 1e-12);
        }
    }
}
