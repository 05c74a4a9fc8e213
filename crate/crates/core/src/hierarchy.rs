//! k-means clustering of sites and the routing tree built from it.
//!
//! Each internal node splits its site subset into `k` clusters of
//! representative points; the clusters become its children. Splitting stops
//! once a subset fits in `leaf_capacity`.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, SiteSet};
use crate::neural::Mlp;
use crate::rng::{derive_seed, rng_from_seed, stream};

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// k-means++ seeding.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            // Rounding may land on an already chosen point with zero weight.
            if chosen[pick] {
                (0..n)
                    .rev()
                    .find(|&i| !chosen[i] && d2[i] > 0.0)
                    .unwrap_or(pick)
            } else {
                pick
            }
        } else {
            // All remaining points coincide with centroids.
            let unchosen: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            unchosen[rng.gen_range(0..unchosen.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Moves the farthest point of the largest cluster into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            if assignment[i] == largest {
                let d = sq_dist(p, &centroids[largest]);
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        assignment[far.0] = empty;
        centroids[empty] = points[far.0].clone();
    }
}

fn update_means(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let d = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

/// Lloyd's algorithm from a k-means++ start. Deterministic per seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let mut rng = rng_from_seed(derive_seed(seed, stream::KMEANS));
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(&centroids, p).0;
        }
        repair_empty(points, &mut centroids, &mut assignment);
        let previous = centroids.clone();
        update_means(points, &assignment, &mut centroids);
        history.push(inertia(points, &centroids, &assignment));
        let shift = previous
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < KMEANS_TOL {
            break;
        }
    }
    let inertia = *history.last().unwrap();
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia,
        history,
    })
}

/// Reassigns points so that no cluster exceeds `cap`, nearest-pair first.
/// Used only when plain k-means would break the tree's depth budget.
fn enforce_capacity(points: &[Vec<f64>], result: &mut KMeansResult, cap: usize) {
    let k = result.centroids.len();
    if result.cluster_sizes().iter().all(|&s| s <= cap) {
        return;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(points.len() * k);
    for (i, p) in points.iter().enumerate() {
        for (c, centroid) in result.centroids.iter().enumerate() {
            pairs.push((sq_dist(p, centroid), i, c));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned = vec![usize::MAX; points.len()];
    let mut sizes = vec![0usize; k];
    for (_, i, c) in pairs {
        if assigned[i] == usize::MAX && sizes[c] < cap {
            assigned[i] = c;
            sizes[c] += 1;
        }
    }
    result.assignment = assigned;
    repair_empty(points, &mut result.centroids, &mut result.assignment);
    update_means(points, &result.assignment, &mut result.centroids);
    result.inertia = inertia(points, &result.centroids, &result.assignment);
}

/// Tree construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub k: usize,
    pub leaf_capacity: usize,
    /// Region margin as a fraction of the parent region diagonal.
    pub dilation: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            k: 16,
            leaf_capacity: 64,
            dilation: 0.1,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument("k must be at least 2".into()));
        }
        if self.leaf_capacity == 0 {
            return Err(Error::InvalidArgument(
                "leaf_capacity must be at least 1".into(),
            ));
        }
        if !(self.dilation >= 0.0 && self.dilation.is_finite()) {
            return Err(Error::InvalidArgument(
                "dilation must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `⌈log_k(n / leaf_capacity)⌉ + 1`, counting levels (a lone leaf has depth 1).
    pub fn max_depth(&self, n: usize) -> usize {
        let mut levels = 1;
        let mut reach = self.leaf_capacity;
        while reach < n {
            reach = reach.saturating_mul(self.k);
            levels += 1;
        }
        levels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub site_subset: Vec<usize>,
    pub region: Aabb,
    /// Child centroids `c_i`, internal nodes only.
    pub centroids: Vec<Vec<f64>>,
    pub model_ref: Option<String>,
    #[serde(skip)]
    pub model: Option<Mlp>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Children for internal nodes, sites for leaves.
    pub fn class_count(&self) -> usize {
        if self.is_leaf() {
            self.site_subset.len()
        } else {
            self.children.len()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTree {
    pub params: TreeParams,
    pub root: usize,
    /// Indexed by node id, in breadth-first order.
    pub nodes: Vec<TreeNode>,
}

impl SiteTree {
    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Number of levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for node in &self.nodes {
            depth[node.id] = node.parent.map_or(1, |p| depth[p] + 1);
            max = max.max(depth[node.id]);
        }
        max
    }

    /// For each site, the leaf that owns it.
    pub fn leaf_of_site(&self, n_sites: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; n_sites];
        for leaf in self.leaves() {
            for &e in &leaf.site_subset {
                owner[e] = leaf.id;
            }
        }
        owner
    }

    /// Serialized structure; models are referenced, not embedded.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tree: SiteTree = serde_json::from_str(s)?;
        if tree.nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(Error::Format("node ids must match their positions".into()));
        }
        Ok(tree)
    }
}

fn sites_bbox(ss: &SiteSet, subset: &[usize]) -> Aabb {
    let mut it = subset.iter().map(|&e| ss.sites()[e].bounding_box());
    let first = it.next().expect("nonempty subset");
    it.fold(first, |acc, b| acc.union(&b))
}

/// Builds the routing tree by recursive k-means splits, breadth first.
pub fn build_tree(ss: &SiteSet, params: TreeParams, seed: u64) -> Result<SiteTree> {
    params.validate()?;
    let max_depth = params.max_depth(ss.len());
    let reps: Vec<Vec<f64>> = ss
        .sites()
        .iter()
        .map(|s| s.representative_point())
        .collect();
    let domain = ss.domain();

    struct Pending {
        parent: Option<usize>,
        subset: Vec<usize>,
        parent_region: Aabb,
        level: usize,
    }

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut queue = VecDeque::from([Pending {
        parent: None,
        subset: (0..ss.len()).collect(),
        parent_region: domain.clone(),
        level: 1,
    }]);
    while let Some(p) = queue.pop_front() {
        let id = nodes.len();
        let margin = params.dilation * p.parent_region.diagonal();
        let region = sites_bbox(ss, &p.subset).dilate(margin).clip(domain);
        if let Some(parent) = p.parent {
            nodes[parent].children.push(id);
        }
        let mut node = TreeNode {
            id,
            parent: p.parent,
            children: Vec::new(),
            site_subset: p.subset,
            region,
            centroids: Vec::new(),
            model_ref: None,
            model: None,
        };
        let m = node.site_subset.len();
        if m > params.leaf_capacity {
            let points: Vec<Vec<f64>> = node.site_subset.iter().map(|&e| reps[e].clone()).collect();
            let k = params.k.min(m);
            let mut result = kmeans(&points, k, derive_seed(seed, id as u64))?;
            // Children must fit in what remains of the depth budget.
            let below = max_depth.saturating_sub(p.level + 1);
            let cap = (0..below)
                .fold(params.leaf_capacity, |c, _| c.saturating_mul(params.k))
                .max(m.div_ceil(k));
            enforce_capacity(&points, &mut result, cap);
            let mut groups = vec![Vec::new(); k];
            for (pos, &e) in node.site_subset.iter().enumerate() {
                groups[result.assignment[pos]].push(e);
            }
            node.centroids = result.centroids;
            for subset in groups {
                queue.push_back(Pending {
                    parent: Some(id),
                    subset,
                    parent_region: node.region.clone(),
                    level: p.level + 1,
                });
            }
        }
        nodes.push(node);
    }
    Ok(SiteTree {
        params,
        root: 0,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_site_set, Family, GenSpec, Metric};
    use proptest::prelude::*;

    fn set(n: usize, family: Family, seed: u64) -> SiteSet {
        random_site_set(
            &GenSpec {
                dim: 2,
                n,
                family,
                size_range: [0.01, 0.05],
                domain: Aabb::unit(2),
                metric: Metric::L2,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn kmeans_two_clusters_is_optimal() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        // Brute force over every 2-partition.
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 4) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let group: Vec<&Vec<f64>> = (0..4)
                    .filter(|i| (mask >> i & 1 == 1) == side)
                    .map(|i| &pts[i])
                    .collect();
                let mean: Vec<f64> = (0..2)
                    .map(|d| group.iter().map(|p| p[d]).sum::<f64>() / group.len() as f64)
                    .collect();
                cost += group.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
            }
            best = best.min(cost);
        }
        assert_eq!(best, 1.0);
        let r = kmeans(&pts, 2, 3).unwrap();
        assert!((r.inertia - best).abs() < 1e-12);
        let mut c = r.centroids.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
    }

    #[test]
    fn kmeans_singletons_and_errors() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, 6, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.cluster_sizes(), vec![1; 6]);
        assert!(matches!(
            kmeans(&pts, 7, 1),
            Err(Error::TooManyClusters { k: 7, n: 6 })
        ));
    }

    #[test]
    fn kmeans_duplicates_keep_clusters_nonempty() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let r = kmeans(&pts, 3, 0).unwrap();
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn kmeans_deterministic_and_monotone() {
        let ss = set(500, Family::Points, 4);
        let pts: Vec<Vec<f64>> = ss
            .sites()
            .iter()
            .map(|s| s.representative_point())
            .collect();
        let a = kmeans(&pts, 16, 99).unwrap();
        let b = kmeans(&pts, 16, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(a.cluster_sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn small_set_is_single_leaf() {
        let ss = set(10, Family::Points, 1);
        let t = build_tree(&ss, TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert!(t.node(0).is_leaf());
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn root_region_is_clipped_dilation() {
        let ss = set(300, Family::Segments, 2);
        let t = build_tree(&ss, TreeParams::default(), 0).unwrap();
        let all: Vec<usize> = (0..300).collect();
        let expect = sites_bbox(&ss, &all)
            .dilate(0.1 * ss.domain().diagonal())
            .clip(ss.domain());
        assert_eq!(t.node(0).region, expect);
    }

    fn check_invariants(t: &SiteTree, ss: &SiteSet) {
        let mut seen = vec![0u32; ss.len()];
        for leaf in t.leaves() {
            assert!(leaf.site_subset.len() <= t.params.leaf_capacity);
            for &e in &leaf.site_subset {
                seen[e] += 1;
            }
        }
        assert!(
            seen.iter().all(|&c| c == 1),
            "leaves must partition the sites"
        );
        for node in &t.nodes {
            if !node.is_leaf() {
                assert_eq!(node.centroids.len(), node.children.len());
                let mut union: Vec<usize> = node
                    .children
                    .iter()
                    .flat_map(|&c| t.node(c).site_subset.iter().copied())
                    .collect();
                union.sort_unstable();
                let mut own = node.site_subset.clone();
                own.sort_unstable();
                assert_eq!(union, own);
                assert!(node
                    .children
                    .iter()
                    .all(|&c| !t.node(c).site_subset.is_empty()));
            }
            let clipped = sites_bbox(ss, &node.site_subset).clip(ss.domain());
            assert!(node.region.contains_box(&clipped));
        }
        assert!(t.depth() <= t.params.max_depth(ss.len()));
    }

    #[test]
    fn thousand_sites_depth_and_partition() {
        let ss = set(1000, Family::Points, 5);
        let t = build_tree(&ss, TreeParams::default(), 11).unwrap();
        assert!(t.depth() <= 3);
        check_invariants(&t, &ss);
    }

    #[test]
    fn build_is_deterministic_and_serializes() {
        let ss = set(400, Family::Mixed, 6);
        let a = build_tree(&ss, TreeParams::default(), 3).unwrap();
        let b = build_tree(&ss, TreeParams::default(), 3).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(SiteTree::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn max_depth_formula() {
        let p = TreeParams::default();
        assert_eq!(p.max_depth(10), 1);
        assert_eq!(p.max_depth(64), 1);
        assert_eq!(p.max_depth(65), 2);
        assert_eq!(p.max_depth(1000), 2);
        assert_eq!(p.max_depth(1024), 2);
        assert_eq!(p.max_depth(1025), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn tree_invariants_on_random_inputs(
            n in 1usize..600,
            k in 2usize..9,
            cap in 1usize..40,
            seed in 0u64..1000,
        ) {
            let ss = set(n, Family::Points, seed);
            let params = TreeParams { k, leaf_capacity: cap, dilation: 0.1 };
            let t = build_tree(&ss, params, seed).unwrap();
            check_invariants(&t, &ss);
        }
    }
}
