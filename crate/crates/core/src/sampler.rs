//! Training sets for tree nodes.
//!
//! A node's dataset mixes uniform samples of its region with samples
//! rejection-drawn from the ε-thickened boundary between its classes.
//! Internal nodes test boundary membership against their child centroids;
//! leaves use the exact site distances.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Metric, SiteSet};
use crate::hierarchy::{SiteTree, TreeNode};
use crate::oracle;
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub label: usize,
    /// Second-smallest minus smallest class distance at `x`.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_uniform: usize,
    pub n_boundary: usize,
    /// Absolute boundary thickness.
    pub epsilon: f64,
    pub max_rejection_factor: usize,
}

impl SamplePlan {
    pub const DEFAULT_REJECTION_FACTOR: usize = 1000;

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must be >= 0",
                self.epsilon
            )));
        }
        if self.max_rejection_factor == 0 {
            return Err(Error::InvalidArgument(
                "max_rejection_factor must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `n` i.i.d. uniform points of `region`.
pub fn sample_uniform(region: &Aabb, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            region
                .lo
                .iter()
                .zip(&region.hi)
                .map(|(l, h)| rng.gen_range(*l..=*h))
                .collect()
        })
        .collect()
}

/// Two smallest values of an iterator.
fn two_smallest(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    for d in values {
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    (d1, d2)
}

/// Surrogate fat-bisector test against centroids with Euclidean distance.
pub fn in_surrogate_fat_bisector(centroids: &[Vec<f64>], x: &[f64], eps: f64) -> bool {
    if centroids.len() < 2 {
        return false;
    }
    let (d1, d2) = two_smallest(centroids.iter().map(|c| Metric::L2.dist(x, c)));
    d2 - d1 <= eps
}

const PROBE_MULTIPLIER: usize = 4;

/// Rejection-samples `n` points of the node region lying in the fat
/// bisector of its classes.
///
/// With `use_surrogate` the test uses Euclidean distances to the node's child
/// centroids; otherwise the exact distances to the node's sites.
pub fn sample_fat_bisector(
    node: &TreeNode,
    ss: &SiteSet,
    n: usize,
    eps: f64,
    seed: u64,
    use_surrogate: bool,
    max_rejection_factor: usize,
) -> Result<Vec<Vec<f64>>> {
    if node.class_count() < 2 {
        return Err(Error::InvalidArgument(
            "boundary sampling needs at least two classes".into(),
        ));
    }
    if use_surrogate && node.centroids.len() < 2 {
        return Err(Error::InvalidArgument(
            "surrogate boundary sampling needs child centroids".into(),
        ));
    }
    let accept = |x: &[f64]| {
        if use_surrogate {
            in_surrogate_fat_bisector(&node.centroids, x, eps)
        } else {
            oracle::in_fat_bisector(ss, &node.site_subset, x, eps)
        }
    };
    let factor = max_rejection_factor.max(1);
    let probe = factor * PROBE_MULTIPLIER;
    let budget = probe.max(n.saturating_mul(factor).saturating_mul(PROBE_MULTIPLIER));
    let region = &node.region;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    let mut drawn = 0usize;
    while out.len() < n {
        let x: Vec<f64> = region
            .lo
            .iter()
            .zip(&region.hi)
            .map(|(l, h)| rng.gen_range(*l..=*h))
            .collect();
        drawn += 1;
        if accept(&x) {
            out.push(x);
        }
        let too_thin = (drawn == probe && out.len() * factor < drawn) || drawn >= budget;
        if too_thin && out.len() < n {
            return Err(Error::FatBisectorTooThin {
                epsilon: eps,
                accepted: out.len(),
                drawn,
            });
        }
    }
    Ok(out)
}

/// Labels points against a node's classes.
pub struct NodeLabeler<'a> {
    ss: &'a SiteSet,
    subset: &'a [usize],
    /// Class of each position of `subset`.
    class_of: Vec<usize>,
    classes: usize,
}

impl<'a> NodeLabeler<'a> {
    pub fn new(tree: &'a SiteTree, node: &'a TreeNode, ss: &'a SiteSet) -> Self {
        let subset = &node.site_subset;
        let class_of = if node.is_leaf() {
            (0..subset.len()).collect()
        } else {
            let mut child_of_site = std::collections::HashMap::new();
            for (c, &child) in node.children.iter().enumerate() {
                for &e in &tree.node(child).site_subset {
                    child_of_site.insert(e, c);
                }
            }
            subset.iter().map(|e| child_of_site[e]).collect()
        };
        Self {
            ss,
            subset,
            class_of,
            classes: node.class_count(),
        }
    }

    /// `(label, gap)` for a point.
    pub fn label(&self, x: &[f64]) -> (usize, f64) {
        let mut class_dist = vec![f64::INFINITY; self.classes];
        let mut best = (f64::INFINITY, usize::MAX, 0);
        for (pos, &e) in self.subset.iter().enumerate() {
            let d = self.ss.distance(e, x);
            let c = self.class_of[pos];
            if d < class_dist[c] {
                class_dist[c] = d;
            }
            if d < best.0 || (d == best.0 && e < best.1) {
                best = (d, e, pos);
            }
        }
        let (d1, d2) = two_smallest(class_dist.iter().copied());
        (self.class_of[best.2], d2 - d1)
    }
}

/// Uniform plus boundary samples of a node, labeled over the node's classes
/// and shuffled deterministically.
pub fn make_dataset(
    tree: &SiteTree,
    node_id: usize,
    ss: &SiteSet,
    plan: &SamplePlan,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    plan.validate()?;
    let node = tree.node(node_id);
    let mut points = sample_uniform(
        &node.region,
        plan.n_uniform,
        derive_seed(seed, stream::UNIFORM),
    );
    if node.class_count() >= 2 && plan.n_boundary > 0 {
        points.extend(sample_fat_bisector(
            node,
            ss,
            plan.n_boundary,
            plan.epsilon,
            derive_seed(seed, stream::BOUNDARY),
            !node.is_leaf(),
            plan.max_rejection_factor,
        )?);
    }
    let labeler = NodeLabeler::new(tree, node, ss);
    let mut samples: Vec<LabeledSample> = points
        .into_iter()
        .map(|x| {
            let (label, gap) = labeler.label(&x);
            LabeledSample { x, label, gap }
        })
        .collect();
    samples.shuffle(&mut rng_from_seed(derive_seed(seed, stream::SHUFFLE)));
    Ok(samples)
}

const DATASET_MAGIC: &[u8; 4] = b"EFDS";

/// Binary dataset: 16-byte header (magic, u32 dim, u64 count) then records
/// of `dim` f64 coordinates, a u32 label and an f64 gap, little-endian.
pub fn write_dataset<W: Write>(samples: &[LabeledSample], dim: usize, mut out: W) -> Result<()> {
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        if s.x.len() != dim {
            return Err(Error::Format(format!(
                "sample has dimension {}, expected {dim}",
                s.x.len()
            )));
        }
        for c in &s.x {
            out.write_all(&c.to_le_bytes())?;
        }
        let label =
            u32::try_from(s.label).map_err(|_| Error::Format("label exceeds u32".into()))?;
        out.write_all(&label.to_le_bytes())?;
        out.write_all(&s.gap.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<(usize, Vec<LabeledSample>)> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut f8 = [0u8; 8];
    let mut f4 = [0u8; 4];
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = Vec::with_capacity(dim);
        for _ in 0..dim {
            input.read_exact(&mut f8)?;
            x.push(f64::from_le_bytes(f8));
        }
        input.read_exact(&mut f4)?;
        let label = u32::from_le_bytes(f4) as usize;
        input.read_exact(&mut f8)?;
        samples.push(LabeledSample {
            x,
            label,
            gap: f64::from_le_bytes(f8),
        });
    }
    Ok((dim, samples))
}
