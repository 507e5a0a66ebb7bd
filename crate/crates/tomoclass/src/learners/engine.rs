//! Exact greedy CART engine shared by the tree, forest, and GBM learners.
//!
//! Trees are grown level by level over presorted feature columns that get
//! stably partitioned at every split, so each node scans only its own rows
//! and split candidates are the midpoints between consecutive distinct
//! values, exactly as in classic CART. All accumulation runs in a fixed
//! order, which makes training bit-deterministic for a given seed no matter
//! how many workers drive it from the outside.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureTable;

/// Hard cap on the number of classes (label domain is 1..=8).
pub(crate) const MAX_K: usize = 8;

const NO_NODE: u32 = u32::MAX;

/// Presorted feature columns of a training table. Building one is O(d n log n)
/// and can be shared across every tree retrained on the same table.
#[derive(Debug, Clone)]
pub struct ColumnSet {
    pub(crate) n_rows: usize,
    pub(crate) n_cols: usize,
    /// Column-major values, `values[f * n_rows + r]`.
    pub(crate) values: Vec<f64>,
    /// Per column, row ids sorted ascending by value (ties by row id).
    pub(crate) order: Vec<u32>,
}

impl ColumnSet {
    pub fn from_table(table: &FeatureTable) -> ColumnSet {
        let n_rows = table.n_rows();
        let n_cols = table.n_features;
        let mut values = vec![0f64; n_rows * n_cols];
        for r in 0..n_rows {
            let row = table.row(r);
            for (f, &v) in row.iter().enumerate() {
                values[f * n_rows + r] = v;
            }
        }
        let mut order = Vec::with_capacity(n_rows * n_cols);
        let mut idx: Vec<u32> = (0..n_rows as u32).collect();
        for f in 0..n_cols {
            let col = &values[f * n_rows..(f + 1) * n_rows];
            idx.sort_unstable_by(|&a, &b| {
                col[a as usize]
                    .partial_cmp(&col[b as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.extend_from_slice(&idx);
            idx.sort_unstable();
        }
        ColumnSet {
            n_rows,
            n_cols,
            values,
            order,
        }
    }

    pub(crate) fn value(&self, feature: usize, row: usize) -> f64 {
        self.values[feature * self.n_rows + row]
    }
}

/// One node of a trained tree. Rows with `value < threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        payload: u32,
    },
}

/// Classification tree; leaves hold class-probability vectors (flat, K wide).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) n_classes: usize,
    pub(crate) leaf_probs: Vec<f64>,
}

impl ClassTree {
    pub(crate) fn leaf_for(&self, row: &[f64]) -> usize {
        traverse(&self.nodes, row)
    }

    pub(crate) fn probs(&self, leaf: usize) -> &[f64] {
        &self.leaf_probs[leaf * self.n_classes..(leaf + 1) * self.n_classes]
    }
}

/// Regression tree; leaves hold a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) leaf_values: Vec<f64>,
}

impl RegTree {
    pub(crate) fn value_for(&self, row: &[f64]) -> f64 {
        self.leaf_values[traverse(&self.nodes, row)]
    }
}

fn traverse(nodes: &[TreeNode], row: &[f64]) -> usize {
    let mut at = 0usize;
    loop {
        match nodes[at] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                at = if row[feature as usize] < threshold {
                    left as usize
                } else {
                    right as usize
                };
            }
            TreeNode::Leaf { payload } => return payload as usize,
        }
    }
}

/// Structural limits shared by all tree learners.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowthLimits {
    pub max_depth: usize,
    pub min_samples_leaf: f64,
    /// Features drawn per node; `None` scans all.
    pub features_per_node: Option<usize>,
}

/// Working partition: per-column (value, row) arrays kept sorted within each
/// node segment. Node segments share positions across all columns.
struct Partition {
    n_cols: usize,
    n_active: usize,
    vals: Vec<f64>,
    rows: Vec<u32>,
    vals_buf: Vec<f64>,
    rows_buf: Vec<u32>,
}

impl Partition {
    fn init(cols: &ColumnSet, included: Mult<'_>) -> Partition {
        let n_active = (0..cols.n_rows).filter(|&r| included.included(r)).count();
        let n_cols = cols.n_cols;
        let mut vals = Vec::with_capacity(n_cols * n_active);
        let mut rows = Vec::with_capacity(n_cols * n_active);
        for f in 0..n_cols {
            let order = &cols.order[f * cols.n_rows..(f + 1) * cols.n_rows];
            for &r in order {
                if included.included(r as usize) {
                    vals.push(cols.value(f, r as usize));
                    rows.push(r);
                }
            }
        }
        let vals_buf = vals.clone();
        let rows_buf = rows.clone();
        Partition {
            n_cols,
            n_active,
            vals,
            rows,
            vals_buf,
            rows_buf,
        }
    }

    fn col(&self, f: usize, seg: (u32, u32)) -> (&[f64], &[u32]) {
        let base = f * self.n_active;
        (
            &self.vals[base + seg.0 as usize..base + seg.1 as usize],
            &self.rows[base + seg.0 as usize..base + seg.1 as usize],
        )
    }

    /// Stably partitions the segments of every splitting node by the
    /// `goes_left` bitmap; left rows land at the front of the segment.
    fn split_segments(&mut self, splits: &[(u32, u32)], goes_left: &[bool]) {
        for f in 0..self.n_cols {
            let base = f * self.n_active;
            for &(s, e) in splits {
                let (s, e) = (base + s as usize, base + e as usize);
                let mut lw = s;
                let mut rw = s;
                // Count left first so right writes start at the boundary.
                for i in s..e {
                    if goes_left[self.rows[i] as usize] {
                        rw += 1;
                    }
                }
                for i in s..e {
                    let row = self.rows[i];
                    let v = self.vals[i];
                    if goes_left[row as usize] {
                        self.vals_buf[lw] = v;
                        self.rows_buf[lw] = row;
                        lw += 1;
                    } else {
                        self.vals_buf[rw] = v;
                        self.rows_buf[rw] = row;
                        rw += 1;
                    }
                }
                self.vals[s..e].copy_from_slice(&self.vals_buf[s..e]);
                self.rows[s..e].copy_from_slice(&self.rows_buf[s..e]);
            }
        }
    }
}

fn sample_features(rng: &mut ChaCha8Rng, n_cols: usize, k: usize, scratch: &mut Vec<u32>) -> Vec<u32> {
    scratch.clear();
    scratch.extend(0..n_cols as u32);
    for i in 0..k {
        let j = rng.random_range(i..n_cols);
        scratch.swap(i, j);
    }
    let mut picked: Vec<u32> = scratch[..k].to_vec();
    picked.sort_unstable();
    picked
}

// ---------------------------------------------------------------------------
// Classification trees (weighted Gini impurity)
// ---------------------------------------------------------------------------

/// Per-row sample multiplicity source; `Unit` lets the optimizer drop the
/// lookup entirely.
#[derive(Clone, Copy)]
pub(crate) enum Mult<'a> {
    Unit,
    Per(&'a [u32]),
}

impl Mult<'_> {
    #[inline(always)]
    fn get(self, r: usize) -> f64 {
        match self {
            Mult::Unit => 1.0,
            Mult::Per(m) => f64::from(m[r]),
        }
    }

    fn included(self, r: usize) -> bool {
        match self {
            Mult::Unit => true,
            Mult::Per(m) => m[r] > 0,
        }
    }
}

/// Per-row weight source for the regression criterion.
#[derive(Clone, Copy)]
pub(crate) enum Weights<'a> {
    Unit,
    Per(&'a [f64]),
}

impl Weights<'_> {
    #[inline(always)]
    fn get(self, r: usize) -> f64 {
        match self {
            Weights::Unit => 1.0,
            Weights::Per(w) => w[r],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ClassAcc {
    counts: [f64; MAX_K],
}

impl ClassAcc {
    fn zero() -> Self {
        ClassAcc {
            counts: [0.0; MAX_K],
        }
    }

    fn total(&self, k: usize) -> f64 {
        self.counts[..k].iter().sum()
    }
}

struct ClassBest {
    score: f64,
    feature: u32,
    threshold: f64,
    left_entries: u32,
    left: ClassAcc,
}

struct ClassBuildNode {
    depth: usize,
    seg: (u32, u32),
    acc: ClassAcc,
    features: Option<Vec<u32>>,
    can_split: bool,
    best: Option<ClassBest>,
    node: TreeNode,
}

pub(crate) struct ClassTreeFit {
    pub tree: ClassTree,
}

/// Trains one classification tree.
///
/// `class_of_row[r]` is the 0-based class index of row r, `multiplicity[r]`
/// its sample count (0 excludes the row), `class_weights` scale the Gini
/// tallies and leaf probabilities.
pub(crate) fn build_class_tree(
    cols: &ColumnSet,
    class_of_row: &[u8],
    multiplicity: Mult<'_>,
    class_weights: &[f64],
    n_classes: usize,
    limits: &GrowthLimits,
    rng: &mut ChaCha8Rng,
) -> Result<ClassTreeFit> {
    debug_assert!(n_classes <= MAX_K);
    let mut part = Partition::init(cols, multiplicity);
    if part.n_active == 0 {
        return Err(Error::Data("training sample is empty".into()));
    }

    let mut root_acc = ClassAcc::zero();
    {
        let (_, rows) = part.col(0, (0, part.n_active as u32));
        for &r in rows {
            root_acc.counts[class_of_row[r as usize] as usize] += multiplicity.get(r as usize);
        }
    }

    let mut nodes: Vec<ClassBuildNode> = Vec::new();
    let mut scratch: Vec<u32> = Vec::new();
    let new_node = |depth: usize,
                        seg: (u32, u32),
                        acc: ClassAcc,
                        rng: &mut ChaCha8Rng,
                        scratch: &mut Vec<u32>| {
        let weight = acc.total(n_classes);
        let pure = acc.counts[..n_classes].iter().filter(|&&c| c > 0.0).count() <= 1;
        let can_split =
            depth < limits.max_depth && !pure && weight >= 2.0 * limits.min_samples_leaf;
        let features = match limits.features_per_node {
            Some(k) if k < cols.n_cols && can_split => {
                Some(sample_features(rng, cols.n_cols, k, scratch))
            }
            _ => None,
        };
        ClassBuildNode {
            depth,
            seg,
            acc,
            features,
            can_split,
            best: None,
            node: TreeNode::Leaf { payload: 0 },
        }
    };

    nodes.push(new_node(0, (0, part.n_active as u32), root_acc, rng, &mut scratch));
    let mut level: Vec<u32> = vec![0];
    let mut goes_left = vec![false; cols.n_rows];
    let mut leaf_probs: Vec<f64> = Vec::new();
    let mut n_leaves = 0u32;

    while !level.is_empty() {
        // Split search over presorted columns, features in ascending order so
        // score ties resolve to the lowest feature index, then threshold.
        for f in 0..part.n_cols {
            for &ni in &level {
                let node = &mut nodes[ni as usize];
                if !node.can_split {
                    continue;
                }
                if let Some(fs) = &node.features {
                    if fs.binary_search(&(f as u32)).is_err() {
                        continue;
                    }
                }
                let (vals, rows) = part.col(f, node.seg);
                let total = node.acc;
                let raw_total = total.total(n_classes);

                // Weighted per-class totals and running sums of squares,
                // maintained incrementally so a candidate costs one division.
                let mut wtotal = [0.0f64; MAX_K];
                let mut ww_total = 0.0;
                let mut sr2 = 0.0;
                for c in 0..n_classes {
                    let w = total.counts[c] * class_weights[c];
                    wtotal[c] = w;
                    ww_total += w;
                    sr2 += w * w;
                }
                let mut wleft = [0.0f64; MAX_K];
                let mut left = ClassAcc::zero();
                let mut raw_l = 0.0;
                let mut wl = 0.0;
                let mut sl2 = 0.0;
                let mut prev_v = f64::NAN;
                let mut best_score = node.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.score);
                for (pos, (&v, &r)) in vals.iter().zip(rows).enumerate() {
                    if v > prev_v && pos > 0 {
                        let raw_r = raw_total - raw_l;
                        if raw_l >= limits.min_samples_leaf && raw_r >= limits.min_samples_leaf {
                            let wr = ww_total - wl;
                            let score = (sl2 * wr + sr2 * wl) / (wl * wr);
                            if score > best_score {
                                let threshold = prev_v + (v - prev_v) * 0.5;
                                if threshold > prev_v {
                                    best_score = score;
                                    node.best = Some(ClassBest {
                                        score,
                                        feature: f as u32,
                                        threshold,
                                        left_entries: pos as u32,
                                        left,
                                    });
                                }
                            }
                        }
                    }
                    let r = r as usize;
                    let m = multiplicity.get(r);
                    let k = class_of_row[r] as usize;
                    let d = m * class_weights[k];
                    let wl_k = wleft[k];
                    let rk = wtotal[k] - wl_k;
                    sl2 += d * (2.0 * wl_k + d);
                    sr2 += d * (d - 2.0 * rk);
                    wleft[k] = wl_k + d;
                    wl += d;
                    raw_l += m;
                    left.counts[k] += m;
                    prev_v = v;
                }
            }
        }

        // Finalize splits and leaves, then partition for the next level.
        let mut next_level: Vec<u32> = Vec::new();
        let mut split_segs: Vec<(u32, u32)> = Vec::new();
        for &ni in &level {
            let has_best = nodes[ni as usize].best.is_some();
            if !has_best {
                let node = &mut nodes[ni as usize];
                node.node = TreeNode::Leaf { payload: n_leaves };
                n_leaves += 1;
                let w = node.acc.total(n_classes);
                for c in 0..n_classes {
                    leaf_probs.push(node.acc.counts[c] * class_weights[c]);
                }
                let norm: f64 = leaf_probs[leaf_probs.len() - n_classes..].iter().sum();
                debug_assert!(norm > 0.0 && w > 0.0);
                let start = leaf_probs.len() - n_classes;
                for p in &mut leaf_probs[start..] {
                    *p /= norm;
                }
                continue;
            }

            let (depth, seg, best) = {
                let node = &mut nodes[ni as usize];
                (node.depth, node.seg, node.best.take().unwrap())
            };
            // Mark the left rows off the split feature's sorted segment.
            {
                let (_, rows) = part.col(best.feature as usize, seg);
                for &r in &rows[..best.left_entries as usize] {
                    goes_left[r as usize] = true;
                }
            }
            let mid = seg.0 + best.left_entries;
            let left_seg = (seg.0, mid);
            let right_seg = (mid, seg.1);
            split_segs.push(seg);

            let mut right_acc = nodes[ni as usize].acc;
            for c in 0..n_classes {
                right_acc.counts[c] -= best.left.counts[c];
            }
            let li = nodes.len() as u32;
            nodes.push(new_node(depth + 1, left_seg, best.left, rng, &mut scratch));
            let ri = nodes.len() as u32;
            nodes.push(new_node(depth + 1, right_seg, right_acc, rng, &mut scratch));
            nodes[ni as usize].node = TreeNode::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: li,
                right: ri,
            };
            next_level.push(li);
            next_level.push(ri);
        }

        if !split_segs.is_empty() {
            part.split_segments(&split_segs, &goes_left);
            goes_left.fill(false);
        }
        level = next_level;
    }

    let tree_nodes: Vec<TreeNode> = nodes.iter().map(|n| n.node.clone()).collect();
    Ok(ClassTreeFit {
        tree: ClassTree {
            nodes: tree_nodes,
            n_classes,
            leaf_probs,
        },
    })
}

// ---------------------------------------------------------------------------
// Regression trees (weighted variance reduction, Newton leaf values)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default)]
struct RegAcc {
    /// Sum of row weights.
    w: f64,
    /// Weighted target sum.
    wy: f64,
    /// Weighted curvature sum for the Newton leaf step.
    wh: f64,
    /// Plain sample count for min_samples_leaf.
    cnt: f64,
}

struct RegBest {
    score: f64,
    feature: u32,
    threshold: f64,
    left_entries: u32,
    left: RegAcc,
}

struct RegBuildNode {
    depth: usize,
    seg: (u32, u32),
    acc: RegAcc,
    features: Option<Vec<u32>>,
    can_split: bool,
    best: Option<RegBest>,
    node: TreeNode,
}

pub(crate) struct RegTreeFit {
    pub tree: RegTree,
    pub leaf_by_row: Vec<u32>,
}

/// Trains one regression tree on gradient `targets` with per-row `weights`.
///
/// Splits minimize weighted SSE. The curvature used by the Newton leaf step
/// is `h = |y| (1 - |y|)` of the target, and the leaf value is
/// `leaf_scale * sum(w*y) / sum(w*h)` (0 when the denominator vanishes).
/// `included` selects the subsample; rows in it count with multiplicity 1.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_reg_tree(
    cols: &ColumnSet,
    targets: &[f64],
    weights: Weights<'_>,
    included: Mult<'_>,
    leaf_scale: f64,
    limits: &GrowthLimits,
    rng: &mut ChaCha8Rng,
) -> Result<RegTreeFit> {
    let mut part = Partition::init(cols, included);
    if part.n_active == 0 {
        return Err(Error::Data("training sample is empty".into()));
    }

    let mut root_acc = RegAcc::default();
    {
        let (_, rows) = part.col(0, (0, part.n_active as u32));
        for &r in rows {
            let r = r as usize;
            let w = weights.get(r);
            let y = targets[r];
            root_acc.w += w;
            root_acc.wy += w * y;
            root_acc.wh += w * (y.abs() * (1.0 - y.abs()));
            root_acc.cnt += 1.0;
        }
    }

    let mut nodes: Vec<RegBuildNode> = Vec::new();
    let mut scratch: Vec<u32> = Vec::new();
    let new_node = |depth: usize,
                        seg: (u32, u32),
                        acc: RegAcc,
                        rng: &mut ChaCha8Rng,
                        scratch: &mut Vec<u32>| {
        let can_split = depth < limits.max_depth && acc.cnt >= 2.0 * limits.min_samples_leaf;
        let features = match limits.features_per_node {
            Some(k) if k < cols.n_cols && can_split => {
                Some(sample_features(rng, cols.n_cols, k, scratch))
            }
            _ => None,
        };
        RegBuildNode {
            depth,
            seg,
            acc,
            features,
            can_split,
            best: None,
            node: TreeNode::Leaf { payload: 0 },
        }
    };

    nodes.push(new_node(0, (0, part.n_active as u32), root_acc, rng, &mut scratch));
    let mut level: Vec<u32> = vec![0];
    let mut goes_left = vec![false; cols.n_rows];
    let mut leaf_values: Vec<f64> = Vec::new();
    let mut n_leaves = 0u32;

    while !level.is_empty() {
        for f in 0..part.n_cols {
            for &ni in &level {
                let node = &mut nodes[ni as usize];
                if !node.can_split {
                    continue;
                }
                if let Some(fs) = &node.features {
                    if fs.binary_search(&(f as u32)).is_err() {
                        continue;
                    }
                }
                let (vals, rows) = part.col(f, node.seg);
                let total = node.acc;
                let mut left = RegAcc::default();
                let mut prev_v = f64::NAN;
                let mut best_score = node.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.score);
                for (pos, (&v, &r)) in vals.iter().zip(rows).enumerate() {
                    if v > prev_v && pos > 0 {
                        let right_cnt = total.cnt - left.cnt;
                        if left.cnt >= limits.min_samples_leaf
                            && right_cnt >= limits.min_samples_leaf
                        {
                            let wr = total.w - left.w;
                            let ry = total.wy - left.wy;
                            let score =
                                (left.wy * left.wy * wr + ry * ry * left.w) / (left.w * wr);
                            if score > best_score {
                                let threshold = prev_v + (v - prev_v) * 0.5;
                                if threshold > prev_v {
                                    best_score = score;
                                    node.best = Some(RegBest {
                                        score,
                                        feature: f as u32,
                                        threshold,
                                        left_entries: pos as u32,
                                        left,
                                    });
                                }
                            }
                        }
                    }
                    let r = r as usize;
                    let w = weights.get(r);
                    let y = targets[r];
                    left.w += w;
                    left.wy += w * y;
                    left.wh += w * (y.abs() * (1.0 - y.abs()));
                    left.cnt += 1.0;
                    prev_v = v;
                }
            }
        }

        let mut next_level: Vec<u32> = Vec::new();
        let mut split_segs: Vec<(u32, u32)> = Vec::new();
        for &ni in &level {
            let has_best = nodes[ni as usize].best.is_some();
            if !has_best {
                let node = &mut nodes[ni as usize];
                node.node = TreeNode::Leaf { payload: n_leaves };
                n_leaves += 1;
                let value = if node.acc.wh.abs() < 1e-12 {
                    0.0
                } else {
                    leaf_scale * node.acc.wy / node.acc.wh
                };
                leaf_values.push(value);
                continue;
            }

            let (depth, seg, best) = {
                let node = &mut nodes[ni as usize];
                (node.depth, node.seg, node.best.take().unwrap())
            };
            {
                let (_, rows) = part.col(best.feature as usize, seg);
                for &r in &rows[..best.left_entries as usize] {
                    goes_left[r as usize] = true;
                }
            }
            let mid = seg.0 + best.left_entries;
            let left_seg = (seg.0, mid);
            let right_seg = (mid, seg.1);
            split_segs.push(seg);

            let total = nodes[ni as usize].acc;
            let right_acc = RegAcc {
                w: total.w - best.left.w,
                wy: total.wy - best.left.wy,
                wh: total.wh - best.left.wh,
                cnt: total.cnt - best.left.cnt,
            };
            let li = nodes.len() as u32;
            nodes.push(new_node(depth + 1, left_seg, best.left, rng, &mut scratch));
            let ri = nodes.len() as u32;
            nodes.push(new_node(depth + 1, right_seg, right_acc, rng, &mut scratch));
            nodes[ni as usize].node = TreeNode::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: li,
                right: ri,
            };
            next_level.push(li);
            next_level.push(ri);
        }

        if !split_segs.is_empty() {
            part.split_segments(&split_segs, &goes_left);
            goes_left.fill(false);
        }
        level = next_level;
    }

    let tree_nodes: Vec<TreeNode> = nodes.iter().map(|n| n.node.clone()).collect();
    let mut leaf_by_row = vec![NO_NODE; cols.n_rows];
    for n in &nodes {
        if let TreeNode::Leaf { payload } = n.node {
            let (_, rows) = part.col(0, n.seg);
            for &r in rows {
                leaf_by_row[r as usize] = payload;
            }
        }
    }

    Ok(RegTreeFit {
        tree: RegTree {
            nodes: tree_nodes,
            leaf_values,
        },
        leaf_by_row,
    })
}

/// Gini impurity of a class-count vector: `1 - sum_k p_k^2`.
pub fn gini_impurity(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}
