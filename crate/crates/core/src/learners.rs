//! Committee learners and the balancing resampler.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rayon::prelude::*;

use crate::corpus::DocIdx;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::rng::{self, Rng};
use crate::tree::{RegressionTree, TreeData, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    MultinomialNaiveBayes,
    LogisticRegression,
    RandomForest,
    GradientBoostedTrees,
    RandomRanker,
}

impl LearnerKind {
    pub const COMMITTEE: [LearnerKind; 5] = [
        LearnerKind::MultinomialNaiveBayes,
        LearnerKind::LogisticRegression,
        LearnerKind::RandomForest,
        LearnerKind::GradientBoostedTrees,
        LearnerKind::RandomRanker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::MultinomialNaiveBayes => "nb",
            LearnerKind::LogisticRegression => "logistic",
            LearnerKind::RandomForest => "rf",
            LearnerKind::GradientBoostedTrees => "gbt",
            LearnerKind::RandomRanker => "random",
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerKind::COMMITTEE
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown learner `{s}`")))
    }
}

/// Positive and negative training examples, borrowed from the feature matrix.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet<'a> {
    pub positives: Vec<&'a FeatureVector>,
    pub negatives: Vec<&'a FeatureVector>,
}

impl TrainingSet<'_> {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Balanced bootstrap of the same total size: each draw picks a class with
/// probability 1/2, then an example uniformly within it. Redraws until both
/// classes occur.
pub fn balance_dynamic_resample<'a>(training: &TrainingSet<'a>, rng: &mut Rng) -> Result<TrainingSet<'a>> {
    if training.positives.is_empty() || training.negatives.is_empty() {
        return Err(Error::Contract("balancing needs both classes".into()));
    }
    let size = training.len();
    loop {
        let mut out = TrainingSet::default();
        for _ in 0..size {
            if rng.gen_bool(0.5) {
                out.positives.push(training.positives[rng.gen_range(0..training.positives.len())]);
            } else {
                out.negatives.push(training.negatives[rng.gen_range(0..training.negatives.len())]);
            }
        }
        if !out.positives.is_empty() && !out.negatives.is_empty() {
            return Ok(out);
        }
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

fn dimension(training: &TrainingSet<'_>) -> usize {
    training
        .positives
        .iter()
        .chain(&training.negatives)
        .filter_map(|x| x.max_index())
        .max()
        .map_or(0, |m| m as usize + 1)
}

fn labeled_rows<'a>(training: &TrainingSet<'a>) -> (Vec<&'a FeatureVector>, Vec<f64>) {
    let rows: Vec<&FeatureVector> = training.positives.iter().chain(&training.negatives).copied().collect();
    let y = (0..rows.len()).map(|i| f64::from(u8::from(i < training.positives.len()))).collect();
    (rows, y)
}

// ---------------------------------------------------------------------------
// Logistic regression

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
}

pub const LOGISTIC_L2: f64 = 1.0;
pub const LOGISTIC_TOL: f64 = 1e-6;

/// Objective `sum_i logloss_i + l2/2 * |w|^2` (bias unpenalized) and its
/// gradient. Parameters are laid out as `[w_0 .. w_{d-1}, bias]`.
pub fn logistic_objective(params: &[f64], rows: &[&FeatureVector], y: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for (x, &yi) in rows.iter().zip(y) {
        let z = x.dot(w) + b;
        // log(1 + e^z) - y z, computed stably
        loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() } - yi * z;
        let r = sigmoid(z) - yi;
        for &(j, v) in x.entries() {
            if (j as usize) < d {
                grad[j as usize] += r * v;
            }
        }
        grad[d] += r;
    }
    for j in 0..d {
        loss += 0.5 * l2 * w[j] * w[j];
        grad[j] += l2 * w[j];
    }
    (loss, grad)
}

/// Limited-memory BFGS with Armijo backtracking; stops when the mean-scaled
/// gradient max-norm drops below `tol`.
fn minimize_lbfgs<F>(mut x: Vec<f64>, f: F, tol: f64, scale: f64, max_iter: usize) -> (Vec<f64>, bool)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 10;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    for _ in 0..max_iter {
        if inf_norm(&g) / scale <= tol {
            return (x, true);
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alpha = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alpha[k] = rho * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alpha[k] * yi;
            }
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / inf_norm(&g).max(1.0),
        };
        for qi in &mut q {
            *qi *= gamma;
        }
        for k in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let beta = rho * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += (alpha[k] - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = f(&trial);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            return (x, inf_norm(&g) / scale <= tol);
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-12 {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let ok = inf_norm(&g) / scale <= tol;
    (x, ok)
}

impl LogisticRegression {
    pub fn fit(training: &TrainingSet<'_>) -> LogisticRegression {
        let d = dimension(training);
        let (rows, y) = labeled_rows(training);
        let scale = rows.len().max(1) as f64;
        let (params, converged) = minimize_lbfgs(
            vec![0.0; d + 1],
            |p| logistic_objective(p, &rows, &y, LOGISTIC_L2),
            LOGISTIC_TOL,
            scale,
            500,
        );
        LogisticRegression { bias: params[d], weights: params[..d].to_vec(), converged }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        sigmoid(x.dot(&self.weights) + self.bias)
    }
}

// ---------------------------------------------------------------------------
// Multinomial naive Bayes

#[derive(Debug, Clone)]
pub struct MultinomialNaiveBayes {
    log_ratio: Vec<f64>,
    prior_log_odds: f64,
}

pub const NB_ALPHA: f64 = 1.0;

impl MultinomialNaiveBayes {
    pub fn fit(training: &TrainingSet<'_>) -> MultinomialNaiveBayes {
        let d = dimension(training).max(1);
        let totals = |xs: &[&FeatureVector]| {
            let mut c = vec![0.0; d];
            for x in xs {
                for &(j, v) in x.entries() {
                    c[j as usize] += v;
                }
            }
            c
        };
        let pos = totals(&training.positives);
        let neg = totals(&training.negatives);
        let (sp, sn) = (pos.iter().sum::<f64>(), neg.iter().sum::<f64>());
        let denom_p = sp + NB_ALPHA * d as f64;
        let denom_n = sn + NB_ALPHA * d as f64;
        let log_ratio = pos
            .iter()
            .zip(&neg)
            .map(|(p, n)| ((p + NB_ALPHA) / denom_p).ln() - ((n + NB_ALPHA) / denom_n).ln())
            .collect();
        let prior_log_odds = (training.positives.len() as f64).ln() - (training.negatives.len() as f64).ln();
        MultinomialNaiveBayes { log_ratio, prior_log_odds }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.prior_log_odds + x.dot(&self.log_ratio))
    }
}

// ---------------------------------------------------------------------------
// Random forest

pub const FOREST_TREES: usize = 100;

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(training: &TrainingSet<'_>, n_trees: usize, rng: &mut Rng) -> RandomForest {
        let (rows, y) = labeled_rows(training);
        let n = rows.len();
        let max_features = ((dimension(training) as f64).sqrt().floor() as usize).max(1);
        let seeds: Vec<u64> = (0..n_trees).map(|_| rng.gen()).collect();
        let trees = seeds
            .par_iter()
            .map(|&seed| {
                let mut tree_rng = Rng::seed_from_u64(seed);
                let mut weights = vec![0.0; n];
                for _ in 0..n {
                    weights[tree_rng.gen_range(0..n)] += 1.0;
                }
                let data = TreeData { rows: &rows, targets: &y, weights: &weights };
                let params = TreeParams { max_depth: None, max_features: Some(max_features), min_samples_split: 2.0 };
                RegressionTree::fit(&data, params, &mut tree_rng).0
            })
            .collect();
        RandomForest { trees }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees (logistic loss)

pub const BOOST_ROUNDS: usize = 100;
pub const BOOST_DEPTH: usize = 3;
pub const BOOST_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct GradientBoostedTrees {
    init: f64,
    trees: Vec<RegressionTree>,
}

impl GradientBoostedTrees {
    pub fn fit(training: &TrainingSet<'_>, rng: &mut Rng) -> GradientBoostedTrees {
        let (rows, y) = labeled_rows(training);
        let n = rows.len();
        let p0 = (training.positives.len() as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
        let init = (p0 / (1.0 - p0)).ln();
        let mut margin = vec![init; n];
        let weights = vec![1.0; n];
        let mut trees = Vec::with_capacity(BOOST_ROUNDS);
        for _ in 0..BOOST_ROUNDS {
            let prob: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
            let residual: Vec<f64> = y.iter().zip(&prob).map(|(t, p)| t - p).collect();
            let data = TreeData { rows: &rows, targets: &residual, weights: &weights };
            let params = TreeParams { max_depth: Some(BOOST_DEPTH), max_features: None, min_samples_split: 2.0 };
            let (mut tree, leaf_of) = RegressionTree::fit(&data, params, rng);
            // Newton step per leaf
            for leaf in tree.leaf_nodes() {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..n {
                    if leaf_of[i] == leaf {
                        num += residual[i];
                        den += prob[i] * (1.0 - prob[i]);
                    }
                }
                tree.set_leaf_value(leaf, BOOST_LEARNING_RATE * num / den.max(1e-12));
            }
            for i in 0..n {
                margin[i] += tree.predict(rows[i]);
            }
            trees.push(tree);
        }
        GradientBoostedTrees { init, trees }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.init + self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }
}

// ---------------------------------------------------------------------------

/// A fitted member model. Random rankers score by hashing the document index
/// with a seed drawn at fit time, so every retrain reshuffles.
#[derive(Debug, Clone)]
pub enum Model {
    NaiveBayes(MultinomialNaiveBayes),
    Logistic(LogisticRegression),
    Forest(RandomForest),
    Boosted(GradientBoostedTrees),
    Random { seed: u64 },
}

pub fn train_learner(kind: LearnerKind, training: &TrainingSet<'_>, rng: &mut Rng) -> Result<Model> {
    if kind != LearnerKind::RandomRanker && (training.positives.is_empty() || training.negatives.is_empty()) {
        return Err(Error::Contract(format!("{kind} needs at least one example of each class")));
    }
    Ok(match kind {
        LearnerKind::MultinomialNaiveBayes => Model::NaiveBayes(MultinomialNaiveBayes::fit(training)),
        LearnerKind::LogisticRegression => Model::Logistic(LogisticRegression::fit(training)),
        LearnerKind::RandomForest => Model::Forest(RandomForest::fit(training, FOREST_TREES, rng)),
        LearnerKind::GradientBoostedTrees => Model::Boosted(GradientBoostedTrees::fit(training, rng)),
        LearnerKind::RandomRanker => Model::Random { seed: rng.gen() },
    })
}

impl Model {
    pub fn score(&self, doc: DocIdx, x: &FeatureVector) -> f64 {
        let s = match self {
            Model::NaiveBayes(m) => m.score(x),
            Model::Logistic(m) => m.score(x),
            Model::Forest(m) => m.score(x),
            Model::Boosted(m) => m.score(x),
            Model::Random { seed } => rng::hashed_unit(*seed, doc as u64),
        };
        if s.is_finite() {
            s.clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceScore {
    pub doc: DocIdx,
    pub score: f64,
}

pub fn score_unlabeled(model: &Model, docs: &[(DocIdx, &FeatureVector)]) -> Vec<RelevanceScore> {
    docs.iter().map(|&(doc, x)| RelevanceScore { doc, score: model.score(doc, x) }).collect()
}

/// Descending score; ties go to the smaller `tie_key` (the document id rank).
pub fn rank<K: Fn(DocIdx) -> usize>(mut scores: Vec<RelevanceScore>, tie_key: K) -> Vec<RelevanceScore> {
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| tie_key(a.doc).cmp(&tie_key(b.doc))));
    scores
}
