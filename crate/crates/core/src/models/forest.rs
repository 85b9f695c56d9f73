use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training, ModelError, ModelKind, ModelSpec, Parameters, RfParams, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    /// Positive fraction of the training samples reaching the leaf.
    Leaf { value: f64 },
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            Node::Leaf { value } => value.is_finite(),
            Node::Split { threshold, .. } => threshold.is_finite(),
        })
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [bool],
    params: &'a RfParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    features: Vec<usize>,
    buf: Vec<(f64, bool)>,
}

/// Weighted Gini impurity `n·gini` of a node with `pos` positives.
fn weighted_gini(n: usize, pos: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    2.0 * pos as f64 * (n - pos) as f64 / n as f64
}

impl Builder<'_> {
    fn grow(&mut self, samples: &mut [usize], depth: usize) -> usize {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: pos as f64 / n as f64,
        });
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || pos == 0 || pos == n || n < 2 * self.params.min_leaf {
            return id;
        }
        let parent = weighted_gini(n, pos);
        let mut best: Option<(f64, usize, f64)> = None;
        // partial Fisher-Yates draw of mtry distinct features
        for k in 0..self.mtry {
            let r = self.rng.random_range(k..self.p);
            self.features.swap(k, r);
            let f = self.features[k];
            self.buf.clear();
            self.buf.extend(samples.iter().map(|&i| (self.x[i * self.p + f], self.y[i])));
            self.buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for s in 0..n - 1 {
                if self.buf[s].1 {
                    left_pos += 1;
                }
                let left_n = s + 1;
                if left_n < self.params.min_leaf || n - left_n < self.params.min_leaf {
                    continue;
                }
                let (a, b) = (self.buf[s].0, self.buf[s + 1].0);
                if a >= b {
                    continue;
                }
                let impurity = weighted_gini(left_n, left_pos) + weighted_gini(n - left_n, pos - left_pos);
                if best.is_none_or(|(bi, _, _)| impurity < bi) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((impurity, f, threshold));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return id;
        };
        if !(impurity < parent - 1e-12 * parent.max(1.0)) {
            return id;
        }
        let (x, p) = (self.x, self.p);
        let mut split = 0;
        for k in 0..n {
            if x[samples[k] * p + feature] <= threshold {
                samples.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = samples.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn grow_tree(x: &[f64], p: usize, y: &[bool], params: &RfParams, mtry: usize, tree_seed: u64) -> Tree {
    let n = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    let mut samples: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        x,
        p,
        y,
        params,
        mtry,
        rng,
        nodes: Vec::new(),
        features: (0..p).collect(),
        buf: Vec::with_capacity(n),
    };
    b.grow(&mut samples, 0);
    Tree { nodes: b.nodes }
}

/// Random forest of Gini CART trees on bootstrap resamples. Tree `t` uses
/// the stream seeded with `seed + t`, so results do not depend on the
/// thread schedule.
pub fn train_rf(x: ArrayView2<f64>, y: &[bool], params: &RfParams) -> Result<TrainedModel, ModelError> {
    check_training(x, y)?;
    ModelSpec::Rf(params.clone()).validate()?;
    let p = x.ncols();
    let xs = x.as_standard_layout();
    let data = xs.as_slice().expect("standard layout");
    let mtry = params
        .features_per_split
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p.max(1));
    let trees: Vec<Tree> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| grow_tree(data, p, y, params, mtry, params.seed.wrapping_add(t)))
        .collect();
    Ok(TrainedModel {
        kind: ModelKind::Rf,
        spec: ModelSpec::Rf(params.clone()),
        n_features: p,
        parameters: Parameters::Forest { trees },
    })
}
