//! Random forest of CART trees (Gini impurity).
//!
//! Bagging draws a Poisson(1) multiplicity for every training sample from a
//! generator keyed by the forest seed, the tree index and a hash of the
//! sample's content. Weights are small integers, so every split statistic is
//! computed exactly; duplicating or reordering the training set therefore
//! leaves the fitted trees unchanged.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::types::FEATURE_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            max_features: None,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.max_features == Some(0) {
            return Err(ClassifierError::InvalidConfig(
                "n_trees, max_depth and max_features must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { crossing: bool },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn vote(&self, x: &[f64]) -> bool {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { crossing } => return crossing,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature as usize] <= threshold { left } else { right } as usize,
            }
        }
    }

    fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub seed: u64,
    n_features: usize,
    trees: Vec<Tree>,
}

fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn sample_key(row: &[f64], label: bool) -> u64 {
    fnv1a(row.iter().flat_map(|v| v.to_bits().to_le_bytes()).chain([label as u8]))
}

fn mix(a: u64, b: u64, c: u64) -> u64 {
    fnv1a(a.to_le_bytes().into_iter().chain(b.to_le_bytes()).chain(c.to_le_bytes()))
}

struct Builder<'a> {
    x: &'a [f64],
    y: &'a [bool],
    w: &'a [f64],
    d: usize,
    m: usize,
    max_depth: usize,
    seed: u64,
    tree: u64,
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn class_weights(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(a, b), &i| {
            if self.y[i] {
                (a, b + self.w[i])
            } else {
                (a + self.w[i], b)
            }
        })
    }

    fn best_split(&self, idx: &[usize], node_id: u64) -> Option<Best> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, self.tree, node_id));
        let mut features = sample(&mut rng, self.d, self.m).into_vec();
        features.sort_unstable();
        let (n0, n1) = self.class_weights(idx);
        let mut best: Option<Best> = None;
        let mut col: Vec<(f64, f64, bool)> = Vec::with_capacity(idx.len());
        for f in features {
            col.clear();
            col.extend(idx.iter().map(|&i| (self.x[i * self.d + f], self.w[i], self.y[i])));
            col.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut l0, mut l1) = (0.0, 0.0);
            for k in 0..col.len() - 1 {
                if col[k].2 {
                    l1 += col[k].1;
                } else {
                    l0 += col[k].1;
                }
                let (v, next) = (col[k].0, col[k + 1].0);
                if v == next {
                    continue;
                }
                let (r0, r1) = (n0 - l0, n1 - l1);
                let (wl, wr) = (l0 + l1, r0 + r1);
                let score = (wl - (l0 * l0 + l1 * l1) / wl) + (wr - (r0 * r0 + r1 * r1) / wr);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mid = 0.5 * (v + next);
                    let threshold = if mid < next { mid } else { v };
                    best = Some(Best {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn build(&self, root: Vec<usize>) -> Tree {
        let mut nodes = vec![Node::Leaf { crossing: false }];
        let mut stack = vec![(0usize, root, 0usize)];
        while let Some((slot, idx, depth)) = stack.pop() {
            let (n0, n1) = self.class_weights(&idx);
            let leaf = Node::Leaf { crossing: n1 > n0 };
            if depth >= self.max_depth || n0 == 0.0 || n1 == 0.0 {
                nodes[slot] = leaf;
                continue;
            }
            let Some(best) = self.best_split(&idx, slot as u64) else {
                nodes[slot] = leaf;
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.x[i * self.d + best.feature] <= best.threshold);
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { crossing: false });
            nodes.push(Node::Leaf { crossing: false });
            nodes[slot] = Node::Split {
                feature: best.feature as u32,
                threshold: best.threshold,
                left: li as u32,
                right: ri as u32,
            };
            stack.push((ri, r, depth + 1));
            stack.push((li, l, depth + 1));
        }
        Tree { nodes }
    }
}

/// Fits a forest on row vectors `x` with labels `y` (true = crossing).
pub fn train_random_forest(
    x: &[Vec<f64>],
    y: &[bool],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<RandomForest, ClassifierError> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(ClassifierError::ShapeMismatch(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(ClassifierError::DimensionMismatch { expected: 1, got: 0 });
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(ClassifierError::DimensionMismatch {
            expected: d,
            got: r.len(),
        });
    }
    if y.iter().all(|&c| c) || y.iter().all(|&c| !c) {
        return Err(ClassifierError::SingleClassDataset);
    }
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let keys: Vec<u64> = x.iter().zip(y).map(|(r, &c)| sample_key(r, c)).collect();
    let m = cfg.max_features.unwrap_or(((d as f64).sqrt().round() as usize).max(1)).min(d);
    let poisson = Poisson::new(1.0).expect("valid rate");
    let trees = (0..cfg.n_trees as u64)
        .map(|t| {
            let mut w: Vec<f64> = keys
                .iter()
                .map(|&k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t, k));
                    poisson.sample(&mut rng)
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                w.iter_mut().for_each(|v| *v = 1.0);
            }
            let root: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
            Builder {
                x: &flat,
                y,
                w: &w,
                d,
                m,
                max_depth: cfg.max_depth,
                seed,
                tree: t,
            }
            .build(root)
        })
        .collect();
    Ok(RandomForest {
        config: cfg.clone(),
        seed,
        n_features: d,
        trees,
    })
}

impl RandomForest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Deepest tree.
    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    /// Window length implied by the input width (`d / 396`).
    pub fn window_len(&self) -> usize {
        (self.n_features / FEATURE_LEN).max(1)
    }

    /// Fraction of trees voting crossing.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != self.n_features {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let votes = self.trees.iter().filter(|t| t.vote(x)).count();
        Ok(votes as f64 / self.trees.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::skeletal_fixture;
    use rand::Rng;

    fn noisy_sign_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = x.iter().map(|r| r[0] > 0.0).collect();
        (x, y)
    }

    fn small() -> ForestConfig {
        ForestConfig {
            n_trees: 15,
            max_depth: 6,
            max_features: None,
        }
    }

    #[test]
    fn separable_skeletal_fixture() {
        let (x, y) = skeletal_fixture(600, 7);
        let rf = train_random_forest(&x[..500], &y[..500], &ForestConfig::default(), 3).unwrap();
        let acc = |xs: &[Vec<f64>], ys: &[bool]| {
            xs.iter()
                .zip(ys)
                .filter(|(r, &c)| (rf.predict_proba(r).unwrap() > 0.5) == c)
                .count() as f64
                / xs.len() as f64
        };
        assert_eq!(acc(&x[..500], &y[..500]), 1.0);
        assert!(acc(&x[500..], &y[500..]) >= 0.95);
    }

    #[test]
    fn probabilities_are_vote_fractions() {
        let (x, y) = noisy_sign_data(80, 5, 1);
        let rf = train_random_forest(&x, &y, &small(), 9).unwrap();
        for r in &x {
            let p = rf.predict_proba(r).unwrap();
            let k = p * 15.0;
            assert!((k - k.round()).abs() < 1e-12 && (0.0..=1.0).contains(&p));
        }
        assert!(rf.max_depth() <= 6);
    }

    #[test]
    fn duplication_and_permutation_invariant() {
        let (x, y) = noisy_sign_data(60, 4, 2);
        let base = train_random_forest(&x, &y, &small(), 5).unwrap();
        let mut x2 = x.clone();
        x2.extend(x.iter().cloned());
        let mut y2 = y.clone();
        y2.extend(y.iter().copied());
        let dup = train_random_forest(&x2, &y2, &small(), 5).unwrap();
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.reverse();
        order.rotate_left(17);
        let xp: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<bool> = order.iter().map(|&i| y[i]).collect();
        let perm = train_random_forest(&xp, &yp, &small(), 5).unwrap();
        let (probe, _) = noisy_sign_data(40, 4, 3);
        for r in &probe {
            let p = base.predict_proba(r).unwrap();
            assert_eq!(p, dup.predict_proba(r).unwrap());
            assert_eq!(p, perm.predict_proba(r).unwrap());
        }
        assert_eq!(base.n_trees(), perm.n_trees());
    }

    #[test]
    fn same_seed_same_model() {
        let (x, y) = noisy_sign_data(50, 3, 4);
        let a = train_random_forest(&x, &y, &small(), 11).unwrap();
        let b = train_random_forest(&x, &y, &small(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_random_forest(&x, &[true, true], &small(), 1),
            Err(ClassifierError::SingleClassDataset)
        ));
        assert!(matches!(
            train_random_forest(&[vec![1.0], vec![2.0, 3.0]], &[true, false], &small(), 1),
            Err(ClassifierError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            train_random_forest(&[], &[], &small(), 1),
            Err(ClassifierError::EmptyDataset)
        ));
        let rf = train_random_forest(&x, &[true, false], &small(), 1).unwrap();
        assert!(rf.predict_proba(&[1.0, 2.0]).is_err());
    }
}
