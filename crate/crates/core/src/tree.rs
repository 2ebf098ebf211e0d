//! Weighted least-squares regression trees over sparse non-negative features.
//!
//! Absent entries are zeros, so every candidate split is "value <= threshold"
//! with zeros always falling left. With 0/1 targets the squared-error
//! criterion ranks splits exactly like Gini impurity, and leaf means are class
//! fractions; the forest relies on that equivalence.

use rand::Rng as _;

use crate::features::FeatureVector;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    /// Features examined per split. `None` examines every feature present in the node.
    pub max_features: Option<usize>,
    pub min_samples_split: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { value: f64 },
    Split { feature: u32, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

/// Training rows with per-row weights; rows with zero weight are ignored.
pub struct TreeData<'a> {
    pub rows: &'a [&'a FeatureVector],
    pub targets: &'a [f64],
    pub weights: &'a [f64],
}

struct Builder<'a, 'b> {
    data: &'b TreeData<'a>,
    params: TreeParams,
    nodes: Vec<Node>,
    leaf_of_row: Vec<usize>,
    // scratch: feature -> bucket slot
    slot: Vec<u32>,
    buckets: Vec<Vec<(f64, usize)>>,
}

const NO_SLOT: u32 = u32::MAX;

struct BestSplit {
    feature: u32,
    threshold: f64,
    gain: f64,
}

impl RegressionTree {
    /// Fits a tree and returns it with the leaf node index of every training row
    /// (`usize::MAX` for zero-weight rows).
    pub fn fit(data: &TreeData<'_>, params: TreeParams, rng: &mut Rng) -> (RegressionTree, Vec<usize>) {
        let dim = data
            .rows
            .iter()
            .filter_map(|r| r.max_index())
            .max()
            .map_or(0, |m| m as usize + 1);
        let mut b = Builder {
            data,
            params,
            nodes: Vec::new(),
            leaf_of_row: vec![usize::MAX; data.rows.len()],
            slot: vec![NO_SLOT; dim],
            buckets: Vec::new(),
        };
        let root: Vec<usize> = (0..data.rows.len()).filter(|&i| data.weights[i] > 0.0).collect();
        b.grow(root, 0, rng);
        (RegressionTree { nodes: b.nodes }, b.leaf_of_row)
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x.get(*feature) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn set_leaf_value(&mut self, node: usize, value: f64) {
        if let Node::Leaf { value: v } = &mut self.nodes[node] {
            *v = value;
        }
    }

    pub fn leaf_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, Node::Leaf { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl Builder<'_, '_> {
    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });

        let (mut w, mut wy, mut wyy) = (0.0, 0.0, 0.0);
        for &i in &samples {
            let (wi, yi) = (self.data.weights[i], self.data.targets[i]);
            w += wi;
            wy += wi * yi;
            wyy += wi * yi * yi;
        }
        let mean = if w > 0.0 { wy / w } else { 0.0 };
        let sse = (wyy - wy * wy / w.max(f64::MIN_POSITIVE)).max(0.0);

        let depth_ok = self.params.max_depth.map_or(true, |d| depth < d);
        let split = if depth_ok && w >= self.params.min_samples_split && sse > 1e-12 * w.max(1.0) {
            self.best_split(&samples, w, wy, rng)
        } else {
            None
        };

        match split {
            None => {
                self.nodes[id] = Node::Leaf { value: mean };
                for &i in &samples {
                    self.leaf_of_row[i] = id;
                }
            }
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) = samples
                    .into_iter()
                    .partition(|&i| self.data.rows[i].get(s.feature) <= s.threshold);
                let l = self.grow(left, depth + 1, rng);
                let r = self.grow(right, depth + 1, rng);
                self.nodes[id] = Node::Split { feature: s.feature, threshold: s.threshold, left: l, right: r };
            }
        }
        id
    }

    fn best_split(&mut self, samples: &[usize], w_total: f64, wy_total: f64, rng: &mut Rng) -> Option<BestSplit> {
        // Features present in this node, in ascending order.
        let mut present: Vec<u32> = Vec::new();
        for &i in samples {
            for &(f, _) in self.data.rows[i].entries() {
                if self.slot[f as usize] == NO_SLOT {
                    self.slot[f as usize] = 0;
                    present.push(f);
                }
            }
        }
        for &f in &present {
            self.slot[f as usize] = NO_SLOT;
        }
        present.sort_unstable();

        let candidates: Vec<u32> = match self.params.max_features {
            Some(k) if k < present.len() => {
                // partial Fisher-Yates
                for j in 0..k {
                    let pick = rng.gen_range(j..present.len());
                    present.swap(j, pick);
                }
                present.truncate(k);
                present.sort_unstable();
                present
            }
            _ => present,
        };
        if candidates.is_empty() {
            return None;
        }

        if self.buckets.len() < candidates.len() {
            self.buckets.resize_with(candidates.len(), Vec::new);
        }
        for (s, &f) in candidates.iter().enumerate() {
            self.slot[f as usize] = s as u32;
            self.buckets[s].clear();
        }
        for &i in samples {
            for &(f, v) in self.data.rows[i].entries() {
                let s = self.slot[f as usize];
                if s != NO_SLOT {
                    self.buckets[s as usize].push((v, i));
                }
            }
        }
        for &f in &candidates {
            self.slot[f as usize] = NO_SLOT;
        }

        let parent_score = wy_total * wy_total / w_total;
        let mut best: Option<BestSplit> = None;
        for (s, &feature) in candidates.iter().enumerate() {
            let bucket = &mut self.buckets[s];
            bucket.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Right side starts as all nonzero rows; sweep thresholds upward.
            let (mut w_right, mut wy_right) = (0.0, 0.0);
            for &(_, i) in bucket.iter() {
                w_right += self.data.weights[i];
                wy_right += self.data.weights[i] * self.data.targets[i];
            }
            let mut prev = 0.0;
            let mut j = 0;
            while j < bucket.len() {
                let value = bucket[j].0;
                if value > prev {
                    let w_left = w_total - w_right;
                    if w_left > 0.0 && w_right > 0.0 {
                        let wy_left = wy_total - wy_right;
                        let gain = wy_left * wy_left / w_left + wy_right * wy_right / w_right - parent_score;
                        if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                            best = Some(BestSplit { feature, threshold: 0.5 * (prev + value), gain });
                        }
                    }
                }
                while j < bucket.len() && bucket[j].0 == value {
                    let i = bucket[j].1;
                    w_right -= self.data.weights[i];
                    wy_right -= self.data.weights[i] * self.data.targets[i];
                    j += 1;
                }
                prev = value;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fv(pairs: &[(u32, f64)]) -> FeatureVector {
        FeatureVector::from_pairs(pairs.to_vec())
    }

    #[test]
    fn separates_on_single_feature() {
        let xs = [fv(&[(0, 1.0)]), fv(&[(0, 0.9)]), fv(&[(1, 1.0)]), fv(&[])];
        let rows: Vec<&FeatureVector> = xs.iter().collect();
        let y = [1.0, 1.0, 0.0, 0.0];
        let w = [1.0; 4];
        let data = TreeData { rows: &rows, targets: &y, weights: &w };
        let params = TreeParams { max_depth: None, max_features: None, min_samples_split: 2.0 };
        let (tree, leaves) = RegressionTree::fit(&data, params, &mut Rng::seed_from_u64(0));
        for (x, t) in xs.iter().zip(y) {
            assert_eq!(tree.predict(x), t);
        }
        assert!(leaves.iter().all(|&l| l != usize::MAX));
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn identical_rows_give_constant_leaf() {
        let xs = [fv(&[(0, 1.0)]), fv(&[(0, 1.0)])];
        let rows: Vec<&FeatureVector> = xs.iter().collect();
        let data = TreeData { rows: &rows, targets: &[1.0, 0.0], weights: &[1.0, 1.0] };
        let params = TreeParams { max_depth: None, max_features: None, min_samples_split: 2.0 };
        let (tree, _) = RegressionTree::fit(&data, params, &mut Rng::seed_from_u64(0));
        assert_eq!(tree.predict(&xs[0]), 0.5);
    }
}
