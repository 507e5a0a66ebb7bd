//! From-scratch tabular classifiers: CART, random forest, gradient-boosted
//! trees, and greedy validation-weighted ensembling.
//!
//! Training is bit-deterministic under a fixed seed regardless of worker
//! count: every tree derives its own RNG stream from (seed, index) and
//! results are collected in index order.

mod engine;
mod gbm;
mod serialize;

pub use engine::{gini_impurity, ClassTree, ColumnSet, RegTree};
pub use gbm::{log_loss, softmax_rows, train_gbm, train_gbm_with_columns, GbmModel};
pub use serialize::{model_to_bytes, read_model, write_model};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng::{derive_seed, stream_rng};

use engine::{build_class_tree, GrowthLimits, Mult, MAX_K};

/// How many features a node considers when searching for its split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureCandidates {
    All,
    /// `round(sqrt(d))`, the random-forest default.
    Sqrt,
    Count(usize),
}

impl FeatureCandidates {
    fn resolve(self, n_cols: usize) -> Option<usize> {
        let k = match self {
            FeatureCandidates::All => return None,
            FeatureCandidates::Sqrt => (n_cols as f64).sqrt().round() as usize,
            FeatureCandidates::Count(k) => k,
        };
        let k = k.clamp(1, n_cols);
        if k == n_cols {
            None
        } else {
            Some(k)
        }
    }
}

/// Structural parameters of a single CART tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub feature_candidates: FeatureCandidates,
    /// Weight rows by inverse class frequency during training.
    pub class_weighting: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_samples_leaf: 5,
            feature_candidates: FeatureCandidates::All,
            class_weighting: false,
        }
    }
}

impl TreeParams {
    fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Parameter("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Parameter("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }

    fn limits(&self, n_cols: usize) -> GrowthLimits {
        GrowthLimits {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf as f64,
            features_per_node: self.feature_candidates.resolve(n_cols),
        }
    }
}

/// Random-forest parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            tree: TreeParams {
                feature_candidates: FeatureCandidates::Sqrt,
                ..TreeParams::default()
            },
            bootstrap: true,
        }
    }
}

/// Gradient-boosting parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    /// Row fraction sampled (without replacement) per boosting round.
    pub subsample: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_rounds: 100,
            learning_rate: 0.1,
            tree: TreeParams {
                max_depth: 6,
                ..TreeParams::default()
            },
            subsample: 1.0,
        }
    }
}

/// Kind tag of a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Tree,
    Forest,
    Gbm,
    Ensemble,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Gbm => "gbm",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

/// Weighted probability-averaging ensemble over trained models.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<Model>,
    /// Selection weights, positive and summing to 1.
    pub weights: Vec<f64>,
}

/// Trained predictor payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelPayload {
    Tree(ClassTree),
    Forest(Vec<ClassTree>),
    Gbm(GbmModel),
    Ensemble(EnsembleModel),
}

/// A trained model: payload plus the class list and feature-schema hash of
/// the table it was trained on. `predict` rejects tables whose schema hash
/// differs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub classes: Vec<u8>,
    pub schema_hash: u64,
    pub seed: u64,
    pub payload: ModelPayload,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self.payload {
            ModelPayload::Tree(_) => ModelKind::Tree,
            ModelPayload::Forest(_) => ModelKind::Forest,
            ModelPayload::Gbm(_) => ModelKind::Gbm,
            ModelPayload::Ensemble(_) => ModelKind::Ensemble,
        }
    }
}

/// Labels and class-probability rows returned by `predict`.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub classes: Vec<u8>,
    pub labels: Vec<u8>,
    /// Row-major, `classes.len()` wide; each row sums to 1.
    probabilities: Vec<f64>,
}

impl Predictions {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn probabilities(&self, row: usize) -> &[f64] {
        let k = self.classes.len();
        &self.probabilities[row * k..(row + 1) * k]
    }
}

pub(crate) fn check_table(train: &FeatureTable) -> Result<()> {
    if train.n_rows() == 0 {
        return Err(Error::Data("training table is empty".into()));
    }
    Ok(())
}

/// Sorted class list and per-row class indices of a table.
pub(crate) fn class_layout(table: &FeatureTable) -> Result<(Vec<u8>, Vec<u8>)> {
    let classes = table.classes();
    if classes.len() > MAX_K {
        return Err(Error::Domain(format!(
            "{} classes exceed the supported maximum of {MAX_K}",
            classes.len()
        )));
    }
    let mut index = [0u8; 256];
    for (i, &c) in classes.iter().enumerate() {
        index[c as usize] = i as u8;
    }
    let of_row = table.labels().iter().map(|&l| index[l as usize]).collect();
    Ok((classes, of_row))
}

/// Inverse-frequency class weights: `n / (k * n_c)`, so classes contribute
/// equal total weight.
pub fn inverse_frequency_weights(class_of_row: &[u8], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &c in class_of_row {
        counts[c as usize] += 1;
    }
    let n = class_of_row.len() as f64;
    let k = n_classes as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (k * c as f64) })
        .collect()
}

fn resolved_class_weights(params: &TreeParams, class_of_row: &[u8], n_classes: usize) -> Vec<f64> {
    if params.class_weighting {
        inverse_frequency_weights(class_of_row, n_classes)
    } else {
        vec![1.0; n_classes]
    }
}

/// Trains a single CART classification tree (greedy binary splits minimizing
/// weighted Gini impurity; impurity ties break to the lowest feature index,
/// then the lowest threshold).
pub fn train_tree(train: &FeatureTable, params: &TreeParams, seed: u64) -> Result<Model> {
    params.validate()?;
    check_table(train)?;
    let cols = ColumnSet::from_table(train);
    train_tree_with_columns(train, &cols, params, seed)
}

/// `train_tree` against a prebuilt `ColumnSet` (reusable across retrains).
pub fn train_tree_with_columns(
    train: &FeatureTable,
    cols: &ColumnSet,
    params: &TreeParams,
    seed: u64,
) -> Result<Model> {
    params.validate()?;
    check_table(train)?;
    let (classes, class_of_row) = class_layout(train)?;
    let class_weights = resolved_class_weights(params, &class_of_row, classes.len());
    let mut rng = stream_rng(seed, 0);
    let fit = build_class_tree(
        cols,
        &class_of_row,
        Mult::Unit,
        &class_weights,
        classes.len(),
        &params.limits(cols.n_cols),
        &mut rng,
    )?;
    Ok(Model {
        classes,
        schema_hash: train.schema_hash(),
        seed,
        payload: ModelPayload::Tree(fit.tree),
    })
}

/// Trains a random forest: `n_trees` CART trees on bootstrap resamples with
/// per-node feature subsampling. Tree i derives its RNG from (seed, i), so
/// the model is identical no matter how many workers train it.
pub fn train_forest(train: &FeatureTable, params: &ForestParams, seed: u64) -> Result<Model> {
    params.tree.validate()?;
    if params.n_trees < 1 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    check_table(train)?;
    let cols = ColumnSet::from_table(train);
    train_forest_with_columns(train, &cols, params, seed)
}

/// `train_forest` against a prebuilt `ColumnSet`.
pub fn train_forest_with_columns(
    train: &FeatureTable,
    cols: &ColumnSet,
    params: &ForestParams,
    seed: u64,
) -> Result<Model> {
    params.tree.validate()?;
    if params.n_trees < 1 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    check_table(train)?;
    let (classes, class_of_row) = class_layout(train)?;
    let class_weights = resolved_class_weights(&params.tree, &class_of_row, classes.len());
    let limits = params.tree.limits(cols.n_cols);
    let n = train.n_rows();

    let trees: Vec<ClassTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(derive_seed(seed, i as u64), 1);
            let multiplicity = if params.bootstrap {
                let mut m = vec![0u32; n];
                for _ in 0..n {
                    m[rng.random_range(0..n)] += 1;
                }
                Some(m)
            } else {
                None
            };
            let mult = match &multiplicity {
                Some(m) => Mult::Per(m),
                None => Mult::Unit,
            };
            build_class_tree(
                cols,
                &class_of_row,
                mult,
                &class_weights,
                classes.len(),
                &limits,
                &mut rng,
            )
            .map(|fit| fit.tree)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Model {
        classes,
        schema_hash: train.schema_hash(),
        seed,
        payload: ModelPayload::Forest(trees),
    })
}

fn predict_probs_into(model: &Model, row: &[f64], out: &mut [f64]) {
    match &model.payload {
        ModelPayload::Tree(tree) => {
            out.copy_from_slice(tree.probs(tree.leaf_for(row)));
        }
        ModelPayload::Forest(trees) => {
            out.fill(0.0);
            for tree in trees {
                for (o, p) in out.iter_mut().zip(tree.probs(tree.leaf_for(row))) {
                    *o += p;
                }
            }
            let n = trees.len() as f64;
            for o in out.iter_mut() {
                *o /= n;
            }
        }
        ModelPayload::Gbm(gbm) => gbm.probs_into(row, out),
        ModelPayload::Ensemble(ens) => {
            out.fill(0.0);
            let k = out.len();
            let mut member_out = vec![0.0; k];
            for (member, &w) in ens.members.iter().zip(&ens.weights) {
                predict_probs_into(member, row, &mut member_out);
                for (o, p) in out.iter_mut().zip(&member_out) {
                    *o += w * p;
                }
            }
        }
    }
}

/// Predicts labels and class probabilities for every row of the table.
///
/// Probabilities lie on the simplex; the label is the argmax with ties going
/// to the lower class id.
pub fn predict(model: &Model, rows: &FeatureTable) -> Result<Predictions> {
    if rows.schema_hash() != model.schema_hash {
        return Err(Error::Schema {
            expected: model.schema_hash,
            actual: rows.schema_hash(),
        });
    }
    let k = model.classes.len();
    let n = rows.n_rows();
    let mut probabilities = vec![0.0; n * k];
    probabilities
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, out)| {
            predict_probs_into(model, rows.row(i), out);
        });
    let labels = probabilities
        .chunks(k)
        .map(|p| {
            let mut best = 0usize;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            model.classes[best]
        })
        .collect();
    Ok(Predictions {
        classes: model.classes.clone(),
        labels,
        probabilities,
    })
}

/// Validation objective for ensembling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Accuracy,
    BalancedAccuracy,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Accuracy => "accuracy",
            Objective::BalancedAccuracy => "balanced-accuracy",
        }
    }

    /// Scores argmax labels of `probs` (row-major, `classes` wide) against
    /// the truth.
    fn score(self, probs: &[f64], classes: &[u8], truth: &[u8]) -> f64 {
        let k = classes.len();
        match self {
            Objective::Accuracy => {
                let mut hit = 0usize;
                for (i, row) in probs.chunks(k).enumerate() {
                    let mut best = 0usize;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    if classes[best] == truth[i] {
                        hit += 1;
                    }
                }
                hit as f64 / truth.len() as f64
            }
            Objective::BalancedAccuracy => {
                let mut support = vec![0usize; k];
                let mut hits = vec![0usize; k];
                for (i, row) in probs.chunks(k).enumerate() {
                    let mut best = 0usize;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    let t = classes.iter().position(|&c| c == truth[i]);
                    if let Some(t) = t {
                        support[t] += 1;
                        if t == best {
                            hits[t] += 1;
                        }
                    }
                }
                let mut sum = 0.0;
                let mut used = 0usize;
                for (h, s) in hits.iter().zip(&support) {
                    if *s > 0 {
                        sum += *h as f64 / *s as f64;
                        used += 1;
                    }
                }
                if used == 0 {
                    0.0
                } else {
                    sum / used as f64
                }
            }
        }
    }
}

/// Greedy forward model selection with replacement (up to 25 steps) over
/// probability-averaged ensembles, maximizing the objective on the
/// validation table. The result scores at least as high as every candidate.
pub fn greedy_ensemble(
    candidates: &[Model],
    val: &FeatureTable,
    objective: Objective,
) -> Result<Model> {
    const MAX_STEPS: usize = 25;
    if candidates.is_empty() {
        return Err(Error::Parameter("ensemble needs at least one candidate".into()));
    }
    if val.n_rows() == 0 {
        return Err(Error::Data("validation table is empty".into()));
    }
    let schema = candidates[0].schema_hash;
    let classes = candidates[0].classes.clone();
    for c in candidates {
        if c.schema_hash != schema || c.classes != classes {
            return Err(Error::Parameter(
                "ensemble candidates disagree on schema or class list".into(),
            ));
        }
    }
    let k = classes.len();
    let n = val.n_rows();
    let truth = val.labels();

    let member_probs: Vec<Vec<f64>> = candidates
        .iter()
        .map(|m| predict(m, val).map(|p| p.probabilities))
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0usize; candidates.len()];
    let mut total = 0usize;
    let mut sum = vec![0.0; n * k];
    let mut current = f64::NEG_INFINITY;
    let mut mean = vec![0.0; n * k];
    for _ in 0..MAX_STEPS {
        let mut best: Option<(f64, usize)> = None;
        for (ci, probs) in member_probs.iter().enumerate() {
            let denom = (total + 1) as f64;
            for i in 0..n * k {
                mean[i] = (sum[i] + probs[i]) / denom;
            }
            let score = objective.score(&mean, &classes, truth);
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, ci));
            }
        }
        let (score, ci) = best.unwrap();
        if score <= current {
            break;
        }
        current = score;
        counts[ci] += 1;
        total += 1;
        for (s, p) in sum.iter_mut().zip(&member_probs[ci]) {
            *s += p;
        }
    }

    let mut members = Vec::new();
    let mut weights = Vec::new();
    for (ci, &c) in counts.iter().enumerate() {
        if c > 0 {
            members.push(candidates[ci].clone());
            weights.push(c as f64 / total as f64);
        }
    }
    Ok(Model {
        classes,
        schema_hash: schema,
        seed: 0,
        payload: ModelPayload::Ensemble(EnsembleModel { members, weights }),
    })
}
