//! Random forest of Gini-impurity decision trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::require_both_classes;
use super::tfidf::SparseVector;
use super::ClassicalError;
use crate::corpus::Label;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node<T> {
    /// Bootstrap sample counts `[excluded, included]`.
    Leaf { counts: [usize; 2] },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    pub nodes: Vec<Node<T>>,
    /// Sorted features used by at least one split.
    pub features_used: Vec<usize>,
}

impl<T: Real> DecisionTree<T> {
    pub fn leaf_counts(&self, x: &SparseVector<T>) -> [usize; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x.get(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        let [e, i] = self.leaf_counts(x);
        if i > e {
            Label::Included
        } else {
            Label::Excluded
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features sampled per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
}

impl Default for ForestSettings {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest<T> {
    pub trees: Vec<DecisionTree<T>>,
    pub dim: usize,
    pub max_features: usize,
    pub seed: u64,
}

impl<T: Real> RandomForest<T> {
    /// Each tree sees its own bootstrap sample and draws from the ChaCha
    /// stream numbered by its index, so parallel training is reproducible.
    pub fn fit(
        x: &[SparseVector<T>],
        labels: &[Label],
        settings: ForestSettings,
        seed: u64,
    ) -> Result<Self, ClassicalError> {
        if x.len() != labels.len() {
            return Err(ClassicalError::LengthMismatch {
                vectors: x.len(),
                labels: labels.len(),
            });
        }
        require_both_classes(labels)?;
        let dim = x[0].dim;
        if let Some(bad) = x.iter().find(|v| v.dim != dim) {
            return Err(ClassicalError::DimensionMismatch {
                expected: dim,
                found: bad.dim,
            });
        }
        let dense: Vec<Vec<T>> = x.iter().map(SparseVector::to_dense).collect();
        let y: Vec<usize> = labels.iter().map(|l| (*l == Label::Included) as usize).collect();
        let max_features = settings
            .max_features
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1));
        let builder = Builder {
            x: &dense,
            y: &y,
            dim,
            max_features,
            min_leaf: settings.min_leaf.max(1),
        };
        let trees = (0..settings.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let n = dense.len();
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                builder.grow(sample, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            dim,
            max_features,
            seed,
        })
    }

    /// Votes `[excluded, included]` across trees.
    pub fn votes(&self, x: &SparseVector<T>) -> [usize; 2] {
        let included = self
            .trees
            .iter()
            .filter(|t| t.predict(x) == Label::Included)
            .count();
        [self.trees.len() - included, included]
    }

    pub fn predict(&self, x: &SparseVector<T>) -> Label {
        let [e, i] = self.votes(x);
        if i > e {
            Label::Included
        } else {
            Label::Excluded
        }
    }
}

struct Builder<'a, T> {
    x: &'a [Vec<T>],
    y: &'a [usize],
    dim: usize,
    max_features: usize,
    min_leaf: usize,
}

struct Candidate<T> {
    feature: usize,
    threshold: T,
    score: T,
}

fn gini_weighted<T: Real>(counts: [usize; 2]) -> T {
    // n * gini = n - (c0^2 + c1^2) / n
    let n = counts[0] + counts[1];
    if n == 0 {
        return T::zero();
    }
    let sq = (counts[0] * counts[0] + counts[1] * counts[1]) as f64;
    T::of(n as f64 - sq / n as f64)
}

impl<T: Real> Builder<'_, T> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let inc = idx.iter().filter(|&&i| self.y[i] == 1).count();
        [idx.len() - inc, inc]
    }

    fn grow(&self, sample: Vec<usize>, rng: &mut ChaCha8Rng) -> DecisionTree<T> {
        let mut nodes = Vec::new();
        let mut used = Vec::new();
        self.node(sample, rng, &mut nodes, &mut used);
        used.sort_unstable();
        used.dedup();
        DecisionTree {
            nodes,
            features_used: used,
        }
    }

    fn node(
        &self,
        idx: Vec<usize>,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<Node<T>>,
        used: &mut Vec<usize>,
    ) -> usize {
        let at = nodes.len();
        let counts = self.counts(&idx);
        nodes.push(Node::Leaf { counts });
        if counts[0] == 0 || counts[1] == 0 || idx.len() < 2 * self.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(&idx, rng) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        used.push(best.feature);
        let left = self.node(l, rng, nodes, used);
        let right = self.node(r, rng, nodes, used);
        nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    /// Draws features without replacement until `max_features` non-constant
    /// ones have been evaluated, continuing past the quota while no valid
    /// split has been found.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<Candidate<T>> {
        let mut features: Vec<usize> = (0..self.dim).collect();
        let mut best: Option<Candidate<T>> = None;
        let mut evaluated = 0;
        for drawn in 0..self.dim {
            if evaluated >= self.max_features && best.is_some() {
                break;
            }
            let j = rng.random_range(drawn..self.dim);
            features.swap(drawn, j);
            let f = features[drawn];
            let Some(cand) = self.split_on(idx, f) else {
                continue;
            };
            evaluated += 1;
            if best.as_ref().is_none_or(|b| cand.score < b.score) {
                best = Some(cand);
            }
        }
        best
    }

    /// Lowest weighted child impurity over midpoints of `feature`.
    fn split_on(&self, idx: &[usize], feature: usize) -> Option<Candidate<T>> {
        let first = self.x[idx[0]][feature];
        if idx.iter().all(|&i| self.x[i][feature] == first) {
            return None;
        }
        let mut vals: Vec<(T, usize)> = idx.iter().map(|&i| (self.x[i][feature], self.y[i])).collect();
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total = self.counts(idx);
        let mut left = [0usize; 2];
        let mut best: Option<Candidate<T>> = None;
        for k in 0..vals.len() - 1 {
            left[vals[k].1] += 1;
            if vals[k].0 == vals[k + 1].0 {
                continue;
            }
            let n_left = k + 1;
            if n_left < self.min_leaf || vals.len() - n_left < self.min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = gini_weighted::<T>(left) + gini_weighted::<T>(right);
            if best.as_ref().is_none_or(|b| score < b.score) {
                best = Some(Candidate {
                    feature,
                    threshold: (vals[k].0 + vals[k + 1].0) / T::of(2.0),
                    score,
                });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<SparseVector<f64>>, Vec<Label>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let inc = i % 2 == 0;
            let a = if inc { 0.9 } else { 0.1 } + (i as f64) * 0.001;
            x.push(SparseVector::from_dense(&[a, 1.0 - a, 0.0]));
            y.push(if inc { Label::Included } else { Label::Excluded });
        }
        (x, y)
    }

    #[test]
    fn fits_separable_data() {
        let (x, y) = toy();
        let rf = RandomForest::fit(&x, &y, ForestSettings::default(), 5).unwrap();
        assert_eq!(rf.trees.len(), 100);
        assert_eq!(rf.max_features, 2);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(rf.predict(xi), *yi);
        }
    }

    #[test]
    fn seeded_fit_is_byte_identical() {
        let (x, y) = toy();
        let s = ForestSettings {
            n_trees: 10,
            ..ForestSettings::default()
        };
        let a = serde_json::to_string(&RandomForest::fit(&x, &y, s, 1).unwrap()).unwrap();
        let b = serde_json::to_string(&RandomForest::fit(&x, &y, s, 1).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gini_of_pure_node_is_zero() {
        assert_eq!(gini_weighted::<f64>([4, 0]), 0.0);
        assert_eq!(gini_weighted::<f64>([2, 2]), 2.0);
    }
}
