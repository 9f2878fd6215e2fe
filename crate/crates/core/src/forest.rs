//! Random-forest pair classifier deciding whether two segments show the same
//! object (or object part).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::{FeatureVector, EIGEN_LEN, ESF_BINS, ESF_HISTOGRAMS};
use crate::error::{Error, Result};
use crate::wire;

pub const PAIR_FEATURE_LEN: usize = 3 * EIGEN_LEN + ESF_HISTOGRAMS;
/// Features considered per split: ⌈√31⌉.
pub const FEATURES_PER_SPLIT: usize = 6;

const MODEL_MAGIC: &[u8; 5] = b"SEGRF";
const MODEL_VERSION: u8 = b'1';

/// Classifier input for a candidate pair: `|f_i − f_j|` over the eigen block,
/// both eigen blocks, and one histogram intersection per shape block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeature(pub [f64; PAIR_FEATURE_LEN]);

impl PairFeature {
    pub fn values(&self) -> &[f64; PAIR_FEATURE_LEN] {
        &self.0
    }
}

pub fn build_pair_feature(fi: &FeatureVector, fj: &FeatureVector) -> PairFeature {
    let mut v = [0.0; PAIR_FEATURE_LEN];
    for k in 0..EIGEN_LEN {
        v[k] = (fi.eigen[k] - fj.eigen[k]).abs();
        v[EIGEN_LEN + k] = fi.eigen[k];
        v[2 * EIGEN_LEN + k] = fj.eigen[k];
    }
    for b in 0..ESF_HISTOGRAMS {
        v[3 * EIGEN_LEN + b] = fi
            .esf_block(b)
            .iter()
            .zip(fj.esf_block(b))
            .map(|(a, c)| a.min(*c))
            .sum::<f64>()
            .min(1.0);
    }
    debug_assert_eq!(ESF_BINS * ESF_HISTOGRAMS, fi.esf.len());
    PairFeature(v)
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub samples: Vec<(PairFeature, bool)>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, feature: PairFeature, is_match: bool) {
        self.samples.push((feature, is_match));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|(_, l)| *l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn extend(&mut self, other: TrainingSet) {
        self.samples.extend(other.samples);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 25,
            max_depth: 20,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf {
        /// Fraction of matches among the training samples reaching this leaf.
        fraction: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// Binary decision tree, nodes stored in pre-order with the root at 0.
/// Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// A tree that is a single leaf voting `fraction`.
    pub fn leaf(fraction: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf {
                fraction: fraction.clamp(0.0, 1.0),
            }],
        }
    }

    pub fn predict(&self, x: &[f64; PAIR_FEATURE_LEN]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { fraction } => return fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        wire::write_u32(w, self.nodes.len() as u32)?;
        for node in &self.nodes {
            match *node {
                Node::Leaf { fraction } => {
                    w.write_all(&[0])?;
                    wire::write_f64(w, fraction)?;
                }
                Node::Split {
                    feature, threshold, ..
                } => {
                    w.write_all(&[1])?;
                    wire::write_u32(w, feature)?;
                    wire::write_f64(w, threshold)?;
                }
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read, feature_count: usize) -> Result<Self> {
        const WHAT: &str = "model";
        let count = wire::read_u32(r, WHAT)? as usize;
        if count == 0 {
            return Err(Error::format(WHAT, "empty tree"));
        }
        let mut nodes = Vec::with_capacity(count.min(1 << 20));
        // Pre-order reconstruction: a stack of split nodes still missing children.
        let mut pending: Vec<(usize, bool)> = Vec::new();
        for i in 0..count {
            if i > 0 {
                let Some(&(parent, has_left)) = pending.last() else {
                    return Err(Error::format(WHAT, "tree has extra nodes"));
                };
                let Node::Split { left, right, .. } = &mut nodes[parent] else {
                    unreachable!("pending holds splits only");
                };
                if has_left {
                    *right = i as u32;
                    pending.pop();
                } else {
                    *left = i as u32;
                    pending.last_mut().expect("non-empty").1 = true;
                }
            }
            match wire::read_u8(r, WHAT)? {
                0 => {
                    let fraction = wire::read_f64(r, WHAT)?;
                    if !(0.0..=1.0).contains(&fraction) {
                        return Err(Error::format(WHAT, "leaf fraction outside [0, 1]"));
                    }
                    nodes.push(Node::Leaf { fraction });
                }
                1 => {
                    let feature = wire::read_u32(r, WHAT)?;
                    if feature as usize >= feature_count {
                        return Err(Error::format(WHAT, "split feature index out of range"));
                    }
                    let threshold = wire::read_f64(r, WHAT)?;
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left: 0,
                        right: 0,
                    });
                    pending.push((i, false));
                }
                t => return Err(Error::format(WHAT, format!("unknown node tag {t}"))),
            }
        }
        if !pending.is_empty() {
            return Err(Error::format(WHAT, "tree is missing nodes"));
        }
        Ok(Self { nodes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    seed: u64,
    importances: [f64; PAIR_FEATURE_LEN],
}

impl ForestModel {
    pub fn from_trees(trees: Vec<DecisionTree>) -> Self {
        Self {
            trees,
            seed: 0,
            importances: [0.0; PAIR_FEATURE_LEN],
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean leaf vote over all trees, in `[0, 1]`.
    pub fn score(&self, pair: &PairFeature) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(&pair.0)).sum::<f64>() / self.trees.len() as f64
    }

    /// Total Gini decrease per feature, normalized to sum 1. All zeros when
    /// no tree ever split.
    pub fn feature_importances(&self) -> [f64; PAIR_FEATURE_LEN] {
        self.importances
    }

    /// Writes the `SEGRF1` model file: tag, u32 feature count, u64 seed,
    /// importances, u32 tree count, then each tree as u32 node count followed
    /// by pre-order nodes (`0` + f64 leaf fraction, or `1` + u32 feature +
    /// f64 threshold). All little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&[MODEL_VERSION])?;
        wire::write_u32(w, PAIR_FEATURE_LEN as u32)?;
        wire::write_u64(w, self.seed)?;
        for v in &self.importances {
            wire::write_f64(w, *v)?;
        }
        wire::write_u32(w, self.trees.len() as u32)?;
        for t in &self.trees {
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        const WHAT: &str = "model";
        let mut magic = [0u8; 6];
        wire::read_exact(r, &mut magic, WHAT)?;
        if &magic[..5] != MODEL_MAGIC {
            return Err(Error::format(WHAT, "missing SEGRF header"));
        }
        if magic[5] != MODEL_VERSION {
            return Err(Error::Version(String::from_utf8_lossy(&magic).into_owned()));
        }
        let feature_count = wire::read_u32(r, WHAT)? as usize;
        if feature_count != PAIR_FEATURE_LEN {
            return Err(Error::IncompatibleModel {
                expected: PAIR_FEATURE_LEN,
                found: feature_count,
            });
        }
        let seed = wire::read_u64(r, WHAT)?;
        let mut importances = [0.0; PAIR_FEATURE_LEN];
        for v in &mut importances {
            *v = wire::read_f64(r, WHAT)?;
        }
        let n_trees = wire::read_u32(r, WHAT)? as usize;
        let trees = (0..n_trees)
            .map(|_| DecisionTree::read_from(r, feature_count))
            .collect::<Result<Vec<_>>>()?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format(WHAT, "trailing bytes after last tree"));
        }
        Ok(Self {
            trees,
            seed,
            importances,
        })
    }
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    model.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    ForestModel::read_from(&mut BufReader::new(File::open(path)?))
}

pub fn score(model: &ForestModel, pair: &PairFeature) -> f64 {
    model.score(pair)
}

pub fn feature_importances(model: &ForestModel) -> [f64; PAIR_FEATURE_LEN] {
    model.feature_importances()
}

/// Trains a forest of bootstrapped Gini trees with ⌈√31⌉ random features
/// considered per split. `(set, params)` fully determines the model.
pub fn train(set: &TrainingSet, params: &ForestParams) -> Result<ForestModel> {
    let positives = set.positives();
    if positives == 0 || positives == set.len() {
        return Err(Error::SingleClass);
    }
    if params.n_trees == 0 {
        return Err(Error::param("n_trees must be at least 1"));
    }
    if params.min_leaf == 0 {
        return Err(Error::param("min_leaf must be at least 1"));
    }
    let features: Vec<&[f64; PAIR_FEATURE_LEN]> = set.samples.iter().map(|(f, _)| &f.0).collect();
    let labels: Vec<bool> = set.samples.iter().map(|(_, l)| *l).collect();
    let grown: Vec<(DecisionTree, [f64; PAIR_FEATURE_LEN])> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let n = features.len();
            let bootstrap: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
            let mut builder = TreeBuilder {
                features: &features,
                labels: &labels,
                params,
                rng,
                nodes: Vec::new(),
                importance: [0.0; PAIR_FEATURE_LEN],
            };
            builder.grow(bootstrap, 0);
            (
                DecisionTree {
                    nodes: builder.nodes,
                },
                builder.importance,
            )
        })
        .collect();

    let mut importances = [0.0; PAIR_FEATURE_LEN];
    for (_, imp) in &grown {
        for (acc, v) in importances.iter_mut().zip(imp) {
            *acc += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for v in &mut importances {
            *v /= total;
        }
    }
    Ok(ForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        seed: params.seed,
        importances,
    })
}

struct TreeBuilder<'a> {
    features: &'a [&'a [f64; PAIR_FEATURE_LEN]],
    labels: &'a [bool],
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: [f64; PAIR_FEATURE_LEN],
}

#[inline]
fn gini_weighted(pos: f64, n: f64) -> f64 {
    // n · gini = n · (1 − p² − (1 − p)²) = 2·pos·(n − pos)/n
    if n == 0.0 {
        0.0
    } else {
        2.0 * pos * (n - pos) / n
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: Vec<u32>, depth: usize) -> u32 {
        let idx = self.nodes.len();
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.labels[i as usize]).count();
        let fraction = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
        self.nodes.push(Node::Leaf { fraction });

        if depth >= self.params.max_depth
            || pos == 0
            || pos == n
            || n < 2 * self.params.min_leaf
        {
            return idx as u32;
        }
        let Some(split) = self.best_split(&samples, pos) else {
            return idx as u32;
        };
        self.importance[split.feature] += split.decrease;
        let (left, right): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&i| self.features[i as usize][split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        idx as u32
    }

    /// Best Gini split over a random feature subset. Ties go to the lowest
    /// feature index, then the lowest threshold.
    fn best_split(&mut self, samples: &[u32], pos: usize) -> Option<Split> {
        let n = samples.len() as f64;
        let parent = gini_weighted(pos as f64, n);
        let mut candidates = index::sample(&mut self.rng, PAIR_FEATURE_LEN, FEATURES_PER_SPLIT).into_vec();
        candidates.sort_unstable();
        let min_leaf = self.params.min_leaf;

        let mut best: Option<Split> = None;
        let mut column: Vec<(f64, bool)> = Vec::with_capacity(samples.len());
        for feature in candidates {
            column.clear();
            column.extend(
                samples
                    .iter()
                    .map(|&i| (self.features[i as usize][feature], self.labels[i as usize])),
            );
            column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for k in 0..column.len() - 1 {
                if column[k].1 {
                    left_pos += 1;
                }
                let (lo, hi) = (column[k].0, column[k + 1].0);
                if lo == hi {
                    continue;
                }
                let left_n = k + 1;
                let right_n = column.len() - left_n;
                if left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let children = gini_weighted(left_pos as f64, left_n as f64)
                    + gini_weighted((pos - left_pos) as f64, right_n as f64);
                let decrease = parent - children;
                if decrease > 1e-12 && best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }
}
