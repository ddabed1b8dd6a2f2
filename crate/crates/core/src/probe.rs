//! Linear probes over pooled attention features: grouped k-fold CV,
//! standardization and L2-regularized, class-balanced logistic regression.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub c: f64,
    pub folds: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub balanced: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            folds: 5,
            tolerance: 1e-6,
            max_iterations: 5000,
            balanced: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.folds < 2 {
            return Err(ProbeError::InvalidConfig("folds must be at least 2".into()));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(ProbeError::InvalidConfig("C must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("target has a single class")]
    DegenerateLabels,
    #[error("feature ({row}, {col}) is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("optimizer did not converge in {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },
    #[error("{groups} groups cannot fill {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// GroupKFold-style assignment: groups (in seed-shuffled order, then by
/// decreasing size) go to the currently smallest fold. Returns the fold of
/// every row.
pub fn group_folds(groups: &[String], folds: usize, seed: u64) -> Result<Vec<usize>, ProbeError> {
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for g in groups {
        let e = sizes.entry(g.as_str()).or_insert_with(|| {
            order.push(g.as_str());
            0
        });
        *e += 1;
    }
    if order.len() < folds {
        return Err(ProbeError::TooFewGroups {
            groups: order.len(),
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by_key(|g| std::cmp::Reverse(sizes[g]));
    let mut load = vec![0usize; folds];
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    for g in order {
        let f = (0..folds).min_by_key(|&f| (load[f], f)).expect("folds > 0");
        load[f] += sizes[g];
        fold_of.insert(g, f);
    }
    Ok(groups.iter().map(|g| fold_of[g.as_str()]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Population statistics; constant columns get scale 1.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let scale = var.mapv(|v| if v > 1e-24 { v.sqrt() } else { 1.0 });
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Inverse-frequency weights `n / (k · n_c)`; unit weights when disabled.
pub fn class_weights(y: &[usize], n_classes: usize, balanced: bool) -> Vec<f64> {
    if !balanced {
        return vec![1.0; y.len()];
    }
    let mut counts = vec![0usize; n_classes];
    for &c in y {
        counts[c] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = y.len() as f64;
    y.iter().map(|&c| n / (present * counts[c] as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coef: Array1<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn decision(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.coef) + self.intercept
    }
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective and gradient at `params = [coef..., intercept]`:
/// `f = (1/n) Σ w_i ℓ_i + ‖coef‖² / (2 C n)`, intercept unpenalized.
pub fn logistic_objective(
    x: ArrayView2<'_, f64>,
    y: &[bool],
    w: &[f64],
    c: f64,
    params: ArrayView1<'_, f64>,
) -> (f64, Array1<f64>) {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let coef = params.slice(ndarray::s![..d]);
    let b = params[d];
    let z = x.dot(&coef) + b;
    let mut loss = 0.0;
    let mut resid = Array1::<f64>::zeros(x.nrows());
    for i in 0..x.nrows() {
        let s = if y[i] { 1.0 } else { -1.0 };
        loss += w[i] * log1p_exp(-s * z[i]);
        resid[i] = w[i] * (sigmoid(z[i]) - if y[i] { 1.0 } else { 0.0 });
    }
    let reg = 1.0 / (c * n);
    let f = loss / n + 0.5 * reg * coef.dot(&coef);
    let mut grad = Array1::<f64>::zeros(d + 1);
    let gc = x.t().dot(&resid) / n + &coef * reg;
    grad.slice_mut(ndarray::s![..d]).assign(&gc);
    grad[d] = resid.sum() / n;
    (f, grad)
}

/// Gradient descent with Armijo backtracking; each trial step starts from
/// the Barzilai-Borwein estimate. Stops when ‖∇f‖₂ ≤ `tol`.
pub fn train_logistic(
    x: ArrayView2<'_, f64>,
    y: &[bool],
    w: &[f64],
    c: f64,
    tol: f64,
    max_iterations: usize,
) -> Result<LogisticModel, ProbeError> {
    train_logistic_traced(x, y, w, c, tol, max_iterations, |_| {})
}

/// As [`train_logistic`], reporting the objective after every accepted step.
pub fn train_logistic_traced(
    x: ArrayView2<'_, f64>,
    y: &[bool],
    w: &[f64],
    c: f64,
    tol: f64,
    max_iterations: usize,
    mut on_step: impl FnMut(f64),
) -> Result<LogisticModel, ProbeError> {
    if x.nrows() != y.len() || y.len() != w.len() {
        return Err(ProbeError::ShapeMismatch("X, y and weights disagree".into()));
    }
    let d = x.ncols();
    let mut p = Array1::<f64>::zeros(d + 1);
    let (mut f, mut g) = logistic_objective(x, y, w, c, p.view());
    let mut step = 1.0;
    let mut prev: Option<(Array1<f64>, Array1<f64>)> = None;
    for it in 0..max_iterations {
        let gnorm2 = g.dot(&g);
        if gnorm2.sqrt() <= tol {
            return Ok(LogisticModel {
                coef: p.slice(ndarray::s![..d]).to_owned(),
                intercept: p[d],
                iterations: it,
            });
        }
        if let Some((pp, pg)) = &prev {
            let s = &p - pp;
            let yk = &g - pg;
            let sy = s.dot(&yk);
            if sy > 0.0 {
                step = (s.dot(&s) / sy).clamp(1e-10, 1e10);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &p - &(&g * step);
            let (fc, gc) = logistic_objective(x, y, w, c, cand.view());
            if fc <= f - 1e-4 * step * gnorm2 {
                prev = Some((std::mem::replace(&mut p, cand), std::mem::replace(&mut g, gc)));
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no representable descent left
            break;
        }
        on_step(f);
    }
    let gn = g.dot(&g).sqrt();
    if gn <= tol {
        return Ok(LogisticModel {
            coef: p.slice(ndarray::s![..d]).to_owned(),
            intercept: p[d],
            iterations: max_iterations,
        });
    }
    Err(ProbeError::NoConvergence {
        iterations: max_iterations,
        gradient_norm: gn,
    })
}

/// One binary model, or one-vs-rest models for more than two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub n_classes: usize,
    /// (class, model); a class absent from training gets no model.
    pub models: Vec<(usize, LogisticModel)>,
    pub fallback: usize,
}

impl Classifier {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<Self, ProbeError> {
        let w = class_weights(y, n_classes, cfg.balanced);
        let mut present: Vec<usize> = y.to_vec();
        present.sort_unstable();
        present.dedup();
        let fallback = present.first().copied().unwrap_or(0);
        if present.len() < 2 {
            return Ok(Self {
                n_classes,
                models: Vec::new(),
                fallback,
            });
        }
        let targets: Vec<usize> = if n_classes == 2 { vec![1] } else { present };
        let mut models = Vec::new();
        for k in targets {
            let yk: Vec<bool> = y.iter().map(|&c| c == k).collect();
            models.push((k, train_logistic(x, &yk, &w, cfg.c, cfg.tolerance, cfg.max_iterations)?));
        }
        Ok(Self {
            n_classes,
            models,
            fallback,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        if self.models.is_empty() {
            return vec![self.fallback; x.nrows()];
        }
        if self.n_classes == 2 {
            let z = self.models[0].1.decision(x);
            return z.iter().map(|&v| usize::from(v > 0.0)).collect();
        }
        let scores: Vec<Array1<f64>> = self.models.iter().map(|(_, m)| m.decision(x)).collect();
        (0..x.nrows())
            .map(|i| {
                let mut best = 0;
                for j in 1..scores.len() {
                    if scores[j][i] > scores[best][i] {
                        best = j;
                    }
                }
                self.models[best].0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub target: String,
    pub classes: Vec<String>,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub fold_assignment: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    /// class name → `L × H` coefficients on standardized features, from a
    /// refit on all rows.
    pub weights: BTreeMap<String, Array2<f64>>,
}

impl ProbeResult {
    /// Σ over classes of |weight| per (layer, head).
    pub fn importance(&self) -> Array2<f64> {
        let mut acc = Array2::zeros((self.layers, self.heads));
        for w in self.weights.values() {
            acc += &w.mapv(f64::abs);
        }
        acc
    }

    /// `(layer, head)` coordinates of the `k` largest importances.
    pub fn top_coordinates(&self, k: usize) -> Vec<(usize, usize)> {
        let imp = self.importance();
        let mut coords: Vec<((usize, usize), f64)> = imp.indexed_iter().map(|(i, &v)| (i, v)).collect();
        coords.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        coords.into_iter().take(k).map(|(i, _)| i).collect()
    }
}

/// `layer,head,weight` rows in layer-major order.
pub fn weights_csv(w: &Array2<f64>) -> String {
    let mut out = String::from("layer,head,weight\n");
    for ((l, h), v) in w.indexed_iter() {
        out.push_str(&format!("{l},{h},{v}\n"));
    }
    out
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

pub fn fit_probe(features: &FeatureMatrix, target: &str, cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult, ProbeError> {
    cfg.validate()?;
    let classes = features
        .label_tables
        .get(target)
        .ok_or_else(|| ProbeError::UnknownTarget(target.to_string()))?
        .clone();
    let y: Vec<usize> = features.labels[target].iter().map(|&l| l as usize).collect();
    let x = features.to_array();
    if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ProbeError::NonFiniteFeature { row, col });
    }
    let mut present = y.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ProbeError::DegenerateLabels);
    }
    let folds = group_folds(&features.groups, cfg.folds, seed)?;

    let fold_accuracies: Vec<f64> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != k).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == k).collect();
            let xtr = rows(&x, &train);
            let std = Standardizer::fit(xtr.view());
            let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let model = Classifier::fit(std.transform(xtr.view()).view(), &ytr, classes.len(), cfg)?;
            let pred = model.predict(std.transform(rows(&x, &test).view()).view());
            let hits = test.iter().zip(&pred).filter(|(&i, &p)| y[i] == p).count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<_, ProbeError>>()?;
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;

    let std = Standardizer::fit(x.view());
    let full = Classifier::fit(std.transform(x.view()).view(), &y, classes.len(), cfg)?;
    let shape = (features.layers, features.heads);
    let weights = full
        .models
        .iter()
        .map(|(k, m)| {
            let map = m.coef.clone().into_shape_with_order(shape).expect("L·H coefficients");
            (classes[*k].clone(), map)
        })
        .collect();

    Ok(ProbeResult {
        target: target.to_string(),
        classes,
        fold_accuracies,
        mean_accuracy,
        fold_assignment: folds,
        layers: features.layers,
        heads: features.heads,
        weights,
    })
}
