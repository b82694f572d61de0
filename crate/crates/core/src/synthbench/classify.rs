//! Ridge one-vs-rest classification with stratified k-fold cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparabilityReport {
    /// Fraction of all epochs classified correctly on held-out folds.
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub n_features: usize,
    pub class_counts: Vec<usize>,
    /// Features that were constant or not finite; they are zeroed rather
    /// than failing the evaluation.
    pub degenerate_features: Vec<String>,
}

/// One linear scorer per class on standardised features, with an
/// unpenalised intercept.
#[derive(Clone, Debug)]
pub struct RidgeOneVsRest {
    mean: Vec<f64>,
    sd: Vec<f64>,
    /// `(p + 1) x classes`, intercept in row 0.
    weights: DMatrix<f64>,
}

impl RidgeOneVsRest {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], n_classes: usize, lambda: f64) -> Result<Self> {
        let n = features.len();
        if n == 0 || labels.len() != n {
            return Err(Error::invalid("ridge fit needs one label per feature row"));
        }
        let p = features[0].len();
        let mean: Vec<f64> = (0..p).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
        let sd: Vec<f64> = (0..p)
            .map(|j| (features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        let mut model = RidgeOneVsRest {
            mean,
            sd,
            weights: DMatrix::zeros(p + 1, n_classes),
        };
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { model.standardise(&features[i], j - 1) });
        let y = DMatrix::from_fn(n, n_classes, |i, k| if labels[i] == k { 1.0 } else { -1.0 });
        let mut a = x.transpose() * &x;
        for j in 1..=p {
            a[(j, j)] += lambda;
        }
        let b = x.transpose() * y;
        model.weights = match a.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::NonFinite("ridge normal equations are singular".into()))?,
        };
        Ok(model)
    }

    fn standardise(&self, f: &[f64], j: usize) -> f64 {
        if self.sd[j] > 0.0 && f[j].is_finite() {
            (f[j] - self.mean[j]) / self.sd[j]
        } else {
            0.0
        }
    }

    /// Class with the highest score; ties go to the lowest index.
    pub fn predict(&self, f: &[f64]) -> usize {
        let x = DVector::from_fn(f.len() + 1, |j, _| if j == 0 { 1.0 } else { self.standardise(f, j - 1) });
        let scores = self.weights.transpose() * x;
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        best
    }
}

/// Stratified assignment: the `i`-th epoch of each class goes to fold
/// `i mod folds`.
fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize) -> Vec<usize> {
    let mut seen = vec![0usize; n_classes];
    labels
        .iter()
        .map(|&l| {
            let f = seen[l] % folds;
            seen[l] += 1;
            f
        })
        .collect()
}

/// Cross-validated accuracy of a ridge one-vs-rest classifier (five
/// stratified folds, unit penalty). Non-finite and constant features are
/// zeroed and listed in the report.
pub fn evaluate_features(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    feature_names: &[String],
) -> Result<SeparabilityReport> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::invalid("need one label per feature row"));
    }
    let p = features[0].len();
    if features.iter().any(|f| f.len() != p) || feature_names.len() != p {
        return Err(Error::shape("feature rows and names must agree in length"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {l} outside {n_classes} classes")));
    }
    let mut class_counts = vec![0usize; n_classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    if class_counts.iter().any(|&c| c < DEFAULT_FOLDS) {
        return Err(Error::invalid(format!(
            "every class needs at least {DEFAULT_FOLDS} epochs for cross-validation, got {class_counts:?}"
        )));
    }
    let degenerate: Vec<usize> = (0..p)
        .filter(|&j| {
            let first = features[0][j];
            features.iter().any(|f| !f[j].is_finite()) || features.iter().all(|f| f[j] == first)
        })
        .collect();
    let clean: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut f = f.clone();
            for &j in &degenerate {
                f[j] = 0.0;
            }
            f
        })
        .collect();
    let fold_of = stratified_folds(labels, n_classes, DEFAULT_FOLDS);
    let mut correct_total = 0usize;
    let mut fold_accuracies = Vec::with_capacity(DEFAULT_FOLDS);
    for fold in 0..DEFAULT_FOLDS {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold_of[i] != fold);
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| clean[i].clone()).collect();
        let ys: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = RidgeOneVsRest::fit(&xs, &ys, n_classes, DEFAULT_RIDGE_LAMBDA)?;
        let correct = test.iter().filter(|&&i| model.predict(&clean[i]) == labels[i]).count();
        correct_total += correct;
        fold_accuracies.push(correct as f64 / test.len() as f64);
    }
    Ok(SeparabilityReport {
        accuracy: correct_total as f64 / labels.len() as f64,
        fold_accuracies,
        n_features: p,
        class_counts,
        degenerate_features: degenerate.iter().map(|&j| feature_names[j].clone()).collect(),
    })
}
