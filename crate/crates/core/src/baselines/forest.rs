//! Random forest regression over fingerprint bits.
//!
//! Each tree is fit on a bootstrap resample with greedy variance-reduction
//! splits on single bit tests, over a random bit subset per node. The
//! sampling contract is fixed so a reference implementation given the same
//! seed reproduces the forest exactly: per-tree RNG streams derive from
//! (seed, tree index); each stream first draws the n bootstrap indices via
//! `gen_range(0..n)`, then, per node in depth-first order (zero-bit child
//! first), the candidate bit subset via `rand::seq::index::sample`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::chem::Fingerprint;
use crate::seeding::derive_rng;

/// The per-tree random stream: part of the fitting contract, so reference
/// implementations can reproduce a forest from the same seed.
pub fn tree_rng(seed: u64, tree_index: usize) -> rand_chacha::ChaCha8Rng {
    derive_rng(seed, &[tree_index as u64])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// Fraction of bits considered per node (at least one bit).
    pub max_features_fraction: f64,
    pub min_samples_leaf: usize,
    /// Fit each tree on a bootstrap resample; off, every tree sees the
    /// training set as-is (useful for single-tree fixtures).
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 200,
            max_features_fraction: 1.0 / 3.0,
            min_samples_leaf: 2,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Mean of the training targets that reached this leaf.
    Leaf { value: f64 },
    /// Bit test: `bit == 0` descends to `zero`, `bit == 1` to `one`.
    Split { bit: usize, zero: usize, one: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &Fingerprint) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { bit, zero, one } => {
                    at = if x.bit(*bit) { *one } else { *zero };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub nbits: usize,
}

/// Fit `n_estimators` trees on bootstrap resamples.
pub fn rf_fit(
    train_x: &[&Fingerprint],
    train_y: &[f64],
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, BaselineError> {
    if train_x.is_empty() {
        return Err(BaselineError::EmptyTrainingSet);
    }
    if train_x.len() != train_y.len() {
        return Err(BaselineError::LengthMismatch {
            x: train_x.len(),
            y: train_y.len(),
        });
    }
    let nbits = train_x[0].nbits();
    let n = train_x.len();
    let m_features = ((config.max_features_fraction * nbits as f64).ceil() as usize)
        .clamp(1, nbits);

    let mut trees = Vec::with_capacity(config.n_estimators);
    for t in 0..config.n_estimators {
        let mut rng = derive_rng(seed, &[t as u64]);
        let sample: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut nodes = Vec::new();
        grow(
            &mut nodes,
            train_x,
            train_y,
            sample,
            m_features,
            config.min_samples_leaf,
            nbits,
            &mut rng,
        );
        trees.push(Tree { nodes });
    }
    Ok(ForestModel { trees, nbits })
}

/// Depth-first tree growth; returns the index of the created node.
#[allow(clippy::too_many_arguments)]
fn grow(
    nodes: &mut Vec<Node>,
    xs: &[&Fingerprint],
    ys: &[f64],
    indices: Vec<usize>,
    m_features: usize,
    min_samples_leaf: usize,
    nbits: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> usize {
    let count = indices.len() as f64;
    let sum: f64 = indices.iter().map(|&i| ys[i]).sum();
    let sumsq: f64 = indices.iter().map(|&i| ys[i] * ys[i]).sum();
    let mean = sum / count;
    let sse = sumsq - sum * sum / count;

    let make_leaf = |nodes: &mut Vec<Node>| {
        nodes.push(Node::Leaf { value: mean });
        nodes.len() - 1
    };

    if indices.len() < 2 * min_samples_leaf || sse <= 1e-12 {
        return make_leaf(nodes);
    }

    let candidates = rand::seq::index::sample(rng, nbits, m_features);
    let mut best: Option<(f64, usize)> = None; // (children SSE, bit)
    for bit in candidates {
        let (mut n1, mut s1, mut q1) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &indices {
            if xs[i].bit(bit) {
                n1 += 1.0;
                s1 += ys[i];
                q1 += ys[i] * ys[i];
            }
        }
        let n0 = count - n1;
        if (n0 as usize) < min_samples_leaf || (n1 as usize) < min_samples_leaf {
            continue;
        }
        let s0 = sum - s1;
        let q0 = sumsq - q1;
        let child_sse = (q0 - s0 * s0 / n0) + (q1 - s1 * s1 / n1);
        // strict improvement keeps the earliest candidate on ties
        if best.map_or(true, |(b, _)| child_sse < b) {
            best = Some((child_sse, bit));
        }
    }

    let (child_sse, bit) = match best {
        Some(found) => found,
        None => return make_leaf(nodes),
    };
    if child_sse >= sse {
        return make_leaf(nodes);
    }

    let (zeros, ones): (Vec<usize>, Vec<usize>) =
        indices.into_iter().partition(|&i| !xs[i].bit(bit));
    let here = nodes.len();
    nodes.push(Node::Split {
        bit,
        zero: usize::MAX,
        one: usize::MAX,
    });
    let zero = grow(nodes, xs, ys, zeros, m_features, min_samples_leaf, nbits, rng);
    let one = grow(nodes, xs, ys, ones, m_features, min_samples_leaf, nbits, rng);
    nodes[here] = Node::Split { bit, zero, one };
    here
}

/// Mean over trees of leaf predictions.
pub fn rf_predict(model: &ForestModel, query_x: &[&Fingerprint]) -> Vec<f64> {
    let inv = 1.0 / model.trees.len() as f64;
    query_x
        .iter()
        .map(|x| model.trees.iter().map(|t| t.predict(x)).sum::<f64>() * inv)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(nbits: usize, bits: &[usize]) -> Fingerprint {
        Fingerprint::from_bits(nbits, 0, bits)
    }

    #[test]
    fn constant_labels_give_single_leaf_trees() {
        let train = [fp(16, &[0]), fp(16, &[1]), fp(16, &[2]), fp(16, &[3])];
        let refs: Vec<&Fingerprint> = train.iter().collect();
        let labels = [2.5; 4];
        let config = ForestConfig {
            n_estimators: 5,
            ..ForestConfig::default()
        };
        let model = rf_fit(&refs, &labels, &config, 7).unwrap();
        for tree in &model.trees {
            assert_eq!(tree.nodes().len(), 1);
            assert!(matches!(tree.nodes()[0], Node::Leaf { value } if value == 2.5));
        }
        assert_eq!(rf_predict(&model, &refs), vec![2.5; 4]);
    }

    #[test]
    fn perfect_single_bit_split() {
        // bit 3 perfectly separates two label groups: one tree, all
        // features, no bootstrap -> root splits on bit 3, leaves hold the
        // group means
        let train = [
            fp(16, &[3, 5]),
            fp(16, &[3]),
            fp(16, &[1]),
            fp(16, &[2]),
        ];
        let refs: Vec<&Fingerprint> = train.iter().collect();
        let labels = [10.0, 12.0, -4.0, -6.0];
        let config = ForestConfig {
            n_estimators: 1,
            max_features_fraction: 1.0,
            min_samples_leaf: 2,
            bootstrap: false,
        };
        let model = rf_fit(&refs, &labels, &config, 3).unwrap();
        match model.trees[0].nodes()[0] {
            Node::Split { bit, .. } => assert_eq!(bit, 3),
            ref other => panic!("expected root split, got {other:?}"),
        }
        assert_eq!(rf_predict(&model, &refs), vec![11.0, 11.0, -5.0, -5.0]);
    }

    #[test]
    fn fixed_seed_reproduces_forest() {
        let mut rng = crate::seeding::derive_rng(1, &[0]);
        let train: Vec<Fingerprint> = (0..30)
            .map(|_| {
                let mut f = Fingerprint::zeros(32, 0);
                for b in 0..32 {
                    if rng.gen_bool(0.4) {
                        f.set(b);
                    }
                }
                f
            })
            .collect();
        let refs: Vec<&Fingerprint> = train.iter().collect();
        let labels: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let config = ForestConfig {
            n_estimators: 10,
            ..ForestConfig::default()
        };
        let a = rf_fit(&refs, &labels, &config, 99).unwrap();
        let b = rf_fit(&refs, &labels, &config, 99).unwrap();
        assert_eq!(a, b);
        let c = rf_fit(&refs, &labels, &config, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_tree_average() {
        // force two single-leaf trees with different bootstrap means by
        // averaging manually constructed trees
        let model = ForestModel {
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { value: 1.0 }],
                },
                Tree {
                    nodes: vec![Node::Leaf { value: 3.0 }],
                },
            ],
            nbits: 8,
        };
        let q = fp(8, &[0]);
        assert_eq!(rf_predict(&model, &[&q]), vec![2.0]);
    }

    #[test]
    fn empty_training_set_rejected() {
        let config = ForestConfig::default();
        assert!(matches!(
            rf_fit(&[], &[], &config, 0),
            Err(BaselineError::EmptyTrainingSet)
        ));
    }
}
