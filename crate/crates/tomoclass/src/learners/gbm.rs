//! Multiclass softmax gradient boosting.
//!
//! Per round, one regression tree per class is fit to the negative gradient
//! of the multinomial log-loss, `r_ik = 1{y_i = k} - p_ik` with
//! `p = softmax(F)`. Leaf values take the standard Newton step
//! `(K-1)/K * sum(w r) / sum(w |r|(1 - |r|))` and scores move by the
//! learning rate. Scores start at zero, so round 1 sees `p_ik = 1/K`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng::{derive_seed, stream_rng};

use super::engine::{build_reg_tree, ColumnSet, Mult, RegTree, Weights};
use super::{check_table, class_layout, GbmParams, Model, ModelPayload};

use rand::seq::SliceRandom;

/// Trained boosted-tree payload: `n_rounds * K` regression trees in
/// round-major order plus the monitored training log-loss curve
/// (one entry before each round and one after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct GbmModel {
    pub n_classes: usize,
    pub learning_rate: f64,
    pub(crate) trees: Vec<RegTree>,
    pub loss_curve: Vec<f64>,
}

impl GbmModel {
    pub fn n_rounds(&self) -> usize {
        self.trees.len() / self.n_classes
    }

    /// Softmax probabilities of one feature row.
    pub(crate) fn probs_into(&self, row: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_classes);
        out.fill(0.0);
        for (t, tree) in self.trees.iter().enumerate() {
            out[t % self.n_classes] += self.learning_rate * tree.value_for(row);
        }
        softmax_in_place(out);
    }
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Row-wise softmax of a row-major score matrix.
pub fn softmax_rows(scores: &[f64], n_classes: usize) -> Vec<f64> {
    let mut out = scores.to_vec();
    for row in out.chunks_mut(n_classes) {
        softmax_in_place(row);
    }
    out
}

/// Weighted mean multinomial log-loss of row-major probabilities.
pub fn log_loss(probs: &[f64], class_of_row: &[u8], weights: &[f64], n_classes: usize) -> f64 {
    let mut loss = 0.0;
    let mut wsum = 0.0;
    for (i, row) in probs.chunks(n_classes).enumerate() {
        let p = row[class_of_row[i] as usize].max(1e-300);
        loss -= weights[i] * p.ln();
        wsum += weights[i];
    }
    loss / wsum
}

/// Trains a multiclass softmax GBM.
pub fn train_gbm(train: &FeatureTable, params: &GbmParams, seed: u64) -> Result<Model> {
    validate(params)?;
    check_table(train)?;
    let cols = ColumnSet::from_table(train);
    train_gbm_with_columns(train, &cols, params, seed)
}

fn validate(params: &GbmParams) -> Result<()> {
    if params.n_rounds < 1 {
        return Err(Error::Parameter("n_rounds must be at least 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::Parameter(format!(
            "learning_rate must be in (0,1], got {}",
            params.learning_rate
        )));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::Parameter(format!(
            "subsample must be in (0,1], got {}",
            params.subsample
        )));
    }
    Ok(())
}

/// `train_gbm` against a prebuilt `ColumnSet`.
pub fn train_gbm_with_columns(
    train: &FeatureTable,
    cols: &ColumnSet,
    params: &GbmParams,
    seed: u64,
) -> Result<Model> {
    validate(params)?;
    check_table(train)?;
    params.tree.validate()?;
    let (classes, class_of_row) = class_layout(train)?;
    let k = classes.len();
    if k < 2 {
        return Err(Error::Domain(
            "gradient boosting needs at least two classes".into(),
        ));
    }
    let n = train.n_rows();
    let limits = params.tree.limits(cols.n_cols);
    let per_row_weights: Option<Vec<f64>> = if params.tree.class_weighting {
        let cw = super::inverse_frequency_weights(&class_of_row, k);
        Some(class_of_row.iter().map(|&c| cw[c as usize]).collect())
    } else {
        None
    };
    let weights = match &per_row_weights {
        Some(w) => Weights::Per(w),
        None => Weights::Unit,
    };
    let row_weights: Vec<f64> = per_row_weights.clone().unwrap_or_else(|| vec![1.0; n]);
    // Newton leaf scale for K-class softmax boosting.
    let leaf_scale = (k as f64 - 1.0) / k as f64;

    let mut scores = vec![0.0; n * k];
    let mut trees: Vec<RegTree> = Vec::with_capacity(params.n_rounds * k);
    let mut loss_curve = Vec::with_capacity(params.n_rounds + 1);
    let mut all_rows: Vec<u32> = (0..n as u32).collect();

    for round in 0..params.n_rounds {
        let probs = softmax_rows(&scores, k);
        loss_curve.push(log_loss(&probs, &class_of_row, &row_weights, k));

        // Per-round row subsample shared by the K class trees.
        let multiplicity: Option<Vec<u32>> = if params.subsample < 1.0 {
            let take = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            let mut rng = stream_rng(derive_seed(seed, round as u64), 2);
            all_rows.shuffle(&mut rng);
            let mut m = vec![0u32; n];
            for &r in &all_rows[..take] {
                m[r as usize] = 1;
            }
            all_rows.sort_unstable();
            Some(m)
        } else {
            None
        };
        let included = match &multiplicity {
            Some(m) => Mult::Per(m),
            None => Mult::Unit,
        };

        let fits: Vec<_> = (0..k)
            .into_par_iter()
            .map(|class| {
                let mut targets = vec![0.0; n];
                for i in 0..n {
                    let p = probs[i * k + class];
                    let y = f64::from(class_of_row[i] == class as u8);
                    targets[i] = y - p;
                }
                let mut rng =
                    stream_rng(derive_seed(derive_seed(seed, round as u64), class as u64), 3);
                build_reg_tree(
                    cols,
                    &targets,
                    weights,
                    included,
                    leaf_scale,
                    &limits,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        for (class, fit) in fits.into_iter().enumerate() {
            for i in 0..n {
                let leaf = fit.leaf_by_row[i];
                let value = if leaf != u32::MAX {
                    fit.tree.leaf_values[leaf as usize]
                } else {
                    fit.tree.value_for(train.row(i))
                };
                scores[i * k + class] += params.learning_rate * value;
            }
            trees.push(fit.tree);
        }
    }
    let probs = softmax_rows(&scores, k);
    loss_curve.push(log_loss(&probs, &class_of_row, &row_weights, k));

    Ok(Model {
        classes,
        schema_hash: train.schema_hash(),
        seed,
        payload: ModelPayload::Gbm(GbmModel {
            n_classes: k,
            learning_rate: params.learning_rate,
            trees,
            loss_curve,
        }),
    })
}
