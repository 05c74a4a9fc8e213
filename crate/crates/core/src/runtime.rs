//! Training over the tree and hierarchical inference.
//!
//! Inference descends from the root, following the highest child logit at
//! each internal node, and reports the highest-scoring site of the leaf it
//! reaches. With a beam of width `b`, the `b` best branches survive each
//! level and the candidates of every surviving leaf are pooled.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SiteSet;
use crate::hierarchy::{SiteTree, TreeNode};
use crate::neural::{encode_into, AdamConfig, AdamState, Encoding, Mlp};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sampler::{make_dataset, LabeledSample, SamplePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_uniform: usize,
    pub n_boundary: usize,
    /// Boundary thickness as a fraction of each node's region diagonal.
    pub epsilon: f64,
    pub max_rejection_factor: usize,
    pub hidden: Vec<usize>,
    /// Fourier frequencies; 0 disables the encoding.
    pub frequencies: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 128,
            n_uniform: 12_000,
            n_boundary: 12_000,
            epsilon: 0.05,
            max_rejection_factor: SamplePlan::DEFAULT_REJECTION_FACTOR,
            hidden: vec![256],
            frequencies: 1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if self.n_uniform + self.n_boundary == 0 {
            return bad("at least one sample per node is required");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and nonnegative");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    pub fn encoding(&self) -> Encoding {
        if self.frequencies == 0 {
            Encoding::None
        } else {
            Encoding::Fourier {
                frequencies: self.frequencies,
            }
        }
    }

    pub fn plan_for(&self, node: &TreeNode) -> SamplePlan {
        SamplePlan {
            n_uniform: self.n_uniform,
            n_boundary: self.n_boundary,
            epsilon: self.epsilon * node.region.diagonal(),
            max_rejection_factor: self.max_rejection_factor,
        }
    }

    pub fn widths(&self, dim: usize, classes: usize) -> Vec<usize> {
        std::iter::once(dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect()
    }
}

pub fn node_seed(run_seed: u64, node_id: usize) -> u64 {
    derive_seed(run_seed, node_id as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTraining {
    pub node: usize,
    pub classes: usize,
    pub samples: usize,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Training samples of one node, or `None` when the node has a single class
/// and needs no model.
pub fn node_dataset(
    tree: &SiteTree,
    node_id: usize,
    ss: &SiteSet,
    cfg: &TrainConfig,
) -> Result<Option<Vec<LabeledSample>>> {
    cfg.validate()?;
    let node = tree.node(node_id);
    if node.class_count() < 2 {
        return Ok(None);
    }
    make_dataset(
        tree,
        node_id,
        ss,
        &cfg.plan_for(node),
        node_seed(cfg.seed, node_id),
    )
    .map(Some)
}

/// Mini-batch Adam on a prepared dataset.
pub fn fit_node(
    tree: &SiteTree,
    node_id: usize,
    dim: usize,
    cfg: &TrainConfig,
    data: &[LabeledSample],
) -> Result<(Mlp, NodeTraining)> {
    cfg.validate()?;
    let node = tree.node(node_id);
    let classes = node.class_count();
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "node {node_id} has no training samples"
        )));
    }
    let seed = node_seed(cfg.seed, node_id);
    let mut model = Mlp::init(
        &cfg.widths(dim, classes),
        cfg.encoding(),
        node.region.clone(),
        derive_seed(seed, stream::INIT),
    )?;
    let fdim = model.feature_dim();
    let mut features = Vec::with_capacity(data.len() * fdim);
    for s in data {
        encode_into(&s.x, &model.region, model.encoding, &mut features);
    }
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();

    let mut adam = AdamState::new(&model, cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch_feats = Vec::with_capacity(cfg.batch_size * fdim);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    let epoch_root = derive_seed(seed, stream::EPOCH);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(epoch_root, epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_feats.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_feats.extend_from_slice(&features[i * fdim..(i + 1) * fdim]);
                batch_labels.push(labels[i]);
            }
            let (loss, grads) = model.loss_and_grad_features(&batch_feats, &batch_labels)?;
            total += loss * chunk.len() as f64;
            adam.step(&mut model, &grads);
        }
        losses.push(total / data.len() as f64);
    }

    let logits = model.forward_features(&features, data.len());
    let correct = logits
        .chunks_exact(classes)
        .zip(&labels)
        .filter(|(row, &y)| crate::neural::argmax(row) == y)
        .count();
    Ok((
        model,
        NodeTraining {
            node: node_id,
            classes,
            samples: data.len(),
            losses,
            train_accuracy: correct as f64 / data.len() as f64,
        },
    ))
}

/// Trains the classifier of one node. Nodes with a single class get no
/// model: their only class always wins.
pub fn train_node(
    tree: &SiteTree,
    node_id: usize,
    ss: &SiteSet,
    cfg: &TrainConfig,
) -> Result<(Option<Mlp>, NodeTraining)> {
    match node_dataset(tree, node_id, ss, cfg)? {
        Some(data) => {
            let (model, report) = fit_node(tree, node_id, ss.dim(), cfg, &data)?;
            Ok((Some(model), report))
        }
        None => Ok((
            None,
            NodeTraining {
                node: node_id,
                classes: tree.node(node_id).class_count(),
                samples: 0,
                losses: Vec::new(),
                train_accuracy: 1.0,
            },
        )),
    }
}

/// Trains every node with at least two classes. Nodes train in parallel on
/// the current rayon pool; results do not depend on the thread count.
pub fn train_tree(
    tree: &mut SiteTree,
    ss: &SiteSet,
    cfg: &TrainConfig,
) -> Result<Vec<NodeTraining>> {
    cfg.validate()?;
    let shared: &SiteTree = tree;
    let results: Vec<Result<(Option<Mlp>, NodeTraining)>> = (0..shared.nodes.len())
        .into_par_iter()
        .map(|id| {
            train_node(shared, id, ss, cfg).map_err(|e| Error::Node {
                node: id,
                source: Box::new(e),
            })
        })
        .collect();
    let mut reports = Vec::with_capacity(results.len());
    for (id, r) in results.into_iter().enumerate() {
        let (model, report) = r?;
        tree.nodes[id].model = model;
        reports.push(report);
    }
    Ok(reports)
}

/// Logits of a node; single-class nodes emit a constant zero score and
/// internal nodes without a model score every child equally.
pub fn node_logits(node: &TreeNode, x: &[f64]) -> Vec<f64> {
    match &node.model {
        Some(model) => model.forward(x),
        None => vec![0.0; node.class_count()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub site: usize,
    /// Winning leaf logit.
    pub score: f64,
    /// Node ids from the root to the leaf holding `site`.
    pub path: Vec<usize>,
    pub runner_up: Option<(usize, f64)>,
    /// The query lay outside the root region and was clamped onto it.
    pub clamped: bool,
}

/// Candidate sites of a query with their leaf logits, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// `(site, score, leaf id)`, sorted by descending score then site index.
    pub candidates: Vec<(usize, f64, usize)>,
    pub clamped: bool,
}

fn sort_desc<T: Copy>(items: &mut [(T, f64, usize)], key: impl Fn(&T) -> usize) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(key(&a.0).cmp(&key(&b.0))));
}

/// Beam descent; `beam = 1` is greedy routing.
pub fn rank(tree: &SiteTree, x: &[f64], beam: usize) -> Ranking {
    let beam = beam.max(1);
    let root = tree.node(tree.root);
    let clamped = !root.region.contains(x);
    let x = if clamped {
        root.region.clamp(x)
    } else {
        x.to_vec()
    };

    let mut frontier = vec![tree.root];
    let mut pooled_leaves = Vec::new();
    while !frontier.is_empty() {
        let mut expanded: Vec<(usize, f64, usize)> = Vec::new();
        for id in frontier {
            let node = tree.node(id);
            if node.is_leaf() {
                pooled_leaves.push(id);
                continue;
            }
            let logits = node_logits(node, &x);
            for (c, &child) in node.children.iter().enumerate() {
                expanded.push((child, logits[c], 0));
            }
        }
        sort_desc(&mut expanded, |&id| id);
        expanded.truncate(beam);
        frontier = expanded.into_iter().map(|e| e.0).collect();
    }

    let mut candidates = Vec::new();
    for leaf_id in pooled_leaves {
        let leaf = tree.node(leaf_id);
        let logits = node_logits(leaf, &x);
        for (pos, &site) in leaf.site_subset.iter().enumerate() {
            candidates.push((site, logits[pos], leaf_id));
        }
    }
    sort_desc(&mut candidates, |&site| site);
    Ranking {
        candidates,
        clamped,
    }
}

fn path_to(tree: &SiteTree, leaf: usize) -> Vec<usize> {
    let mut path = vec![leaf];
    while let Some(p) = tree.node(*path.last().unwrap()).parent {
        path.push(p);
    }
    path.reverse();
    path
}

pub fn infer(tree: &SiteTree, x: &[f64], beam: usize) -> Prediction {
    let ranking = rank(tree, x, beam);
    let (site, score, leaf) = ranking.candidates[0];
    Prediction {
        site,
        score,
        path: path_to(tree, leaf),
        runner_up: ranking.candidates.get(1).map(|c| (c.0, c.1)),
        clamped: ranking.clamped,
    }
}

/// Winning leaf logit under greedy routing. A classification score, not a
/// calibrated distance.
pub fn neural_envelope(tree: &SiteTree, x: &[f64]) -> f64 {
    infer(tree, x, 1).score
}
