//! Accuracy and ordering metrics against the exact oracle.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SiteSet;
use crate::hierarchy::SiteTree;
use crate::oracle;
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::runtime;
use crate::sampler::sample_uniform;

/// Anything that ranks sites for a query point.
pub trait Predictor: Sync {
    /// `(site, score)` pairs, best first. Higher scores are better.
    fn ranking(&self, x: &[f64]) -> Vec<(usize, f64)>;

    /// Scalar field drawn by envelope rasters.
    fn envelope_value(&self, x: &[f64]) -> f64;

    fn top(&self, x: &[f64]) -> usize {
        self.ranking(x)[0].0
    }
}

/// The trained tree with a fixed beam width.
pub struct TreePredictor<'a> {
    pub tree: &'a SiteTree,
    pub beam: usize,
}

impl Predictor for TreePredictor<'_> {
    fn ranking(&self, x: &[f64]) -> Vec<(usize, f64)> {
        runtime::rank(self.tree, x, self.beam)
            .candidates
            .into_iter()
            .map(|(site, score, _)| (site, score))
            .collect()
    }

    fn envelope_value(&self, x: &[f64]) -> f64 {
        runtime::rank(self.tree, x, self.beam).candidates[0].1
    }

    fn top(&self, x: &[f64]) -> usize {
        runtime::rank(self.tree, x, self.beam).candidates[0].0
    }
}

/// Exact ranking by ascending distance; the score is the negated distance.
pub struct OraclePredictor<'a> {
    pub ss: &'a SiteSet,
}

impl Predictor for OraclePredictor<'_> {
    fn ranking(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let nb = oracle::order_k(self.ss, x, self.ss.len()).expect("k = n is valid");
        nb.indices
            .into_iter()
            .zip(nb.distances.into_iter().map(|d| -d))
            .collect()
    }

    fn envelope_value(&self, x: &[f64]) -> f64 {
        oracle::envelope(self.ss, x).0
    }

    fn top(&self, x: &[f64]) -> usize {
        oracle::envelope(self.ss, x).1
    }
}

/// Kendall rank correlation between descending `scores` and ascending
/// `distances`. Pairs tied in either list count in neither the numerator nor
/// the denominator. Returns 0 when every pair is tied.
pub fn kendall_tau(scores: &[f64], distances: &[f64]) -> Result<f64> {
    if scores.len() != distances.len() {
        return Err(Error::InvalidArgument(
            "score and distance lists differ in length".into(),
        ));
    }
    if scores.len() < 2 {
        return Err(Error::InvalidArgument(
            "kendall tau needs at least two items".into(),
        ));
    }
    let (concordant, discordant) = tau_counts(scores, distances);
    let untied = concordant + discordant;
    Ok(if untied == 0 {
        0.0
    } else {
        (concordant as f64 - discordant as f64) / untied as f64
    })
}

fn tau_counts(scores: &[f64], distances: &[f64]) -> (u64, u64) {
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            // Higher score should pair with smaller distance.
            let s = (scores[i] - scores[j]) * (distances[j] - distances[i]);
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    (concordant, discordant)
}

/// Per-query comparison of a predictor with the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcome {
    pub top1: bool,
    pub top2: bool,
    /// `None` when fewer than two candidates were ranked.
    pub order2: Option<bool>,
    pub tau: Option<f64>,
    /// Oracle `d₂ − d₁` (infinite with a single site).
    pub gap: f64,
}

pub fn evaluate_query<P: Predictor + ?Sized>(pred: &P, ss: &SiteSet, x: &[f64]) -> QueryOutcome {
    let dists: Vec<f64> = (0..ss.len()).map(|e| ss.distance(e, x)).collect();
    let (mut first, mut second) = ((f64::INFINITY, usize::MAX), (f64::INFINITY, usize::MAX));
    for (e, &d) in dists.iter().enumerate() {
        if d < first.0 {
            second = first;
            first = (d, e);
        } else if d < second.0 {
            second = (d, e);
        }
    }
    let ranking = pred.ranking(x);
    let top1 = ranking[0].0 == first.1;
    let top2 = top1 || ranking.get(1).is_some_and(|c| c.0 == first.1);
    let order2 = if ranking.len() >= 2 && ss.len() >= 2 {
        Some(ranking[1].0 == second.1)
    } else {
        None
    };
    let tau = if ranking.len() >= 2 {
        let scores: Vec<f64> = ranking.iter().map(|c| c.1).collect();
        let d: Vec<f64> = ranking.iter().map(|c| dists[c.0]).collect();
        Some(kendall_tau(&scores, &d).expect("lengths checked"))
    } else {
        None
    };
    QueryOutcome {
        top1,
        top2,
        order2,
        tau,
        gap: second.0 - first.0,
    }
}

/// Outcomes for every query, in query order.
pub fn evaluate_queries<P: Predictor + ?Sized>(
    pred: &P,
    ss: &SiteSet,
    queries: &[Vec<f64>],
) -> Vec<QueryOutcome> {
    queries
        .par_iter()
        .map(|x| evaluate_query(pred, ss, x))
        .collect()
}

fn require_queries(queries: &[Vec<f64>]) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("empty query set".into()));
    }
    Ok(())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of queries whose oracle label is among the top `k ∈ {1, 2}`.
pub fn top_k_accuracy<P: Predictor + ?Sized>(
    pred: &P,
    ss: &SiteSet,
    queries: &[Vec<f64>],
    k: usize,
) -> Result<f64> {
    require_queries(queries)?;
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "top-k supports k = 1 or 2, got {k}"
        )));
    }
    let outcomes = evaluate_queries(pred, ss, queries);
    let hits = outcomes
        .iter()
        .filter(|o| if k == 1 { o.top1 } else { o.top2 })
        .count();
    Ok(fraction(hits, outcomes.len()))
}

/// Fraction of queries (with at least two candidates) whose second-ranked
/// site is the true second-nearest site.
pub fn order2_accuracy<P: Predictor + ?Sized>(
    pred: &P,
    ss: &SiteSet,
    queries: &[Vec<f64>],
) -> Result<f64> {
    require_queries(queries)?;
    let outcomes = evaluate_queries(pred, ss, queries);
    let eligible: Vec<bool> = outcomes.iter().filter_map(|o| o.order2).collect();
    Ok(fraction(
        eligible.iter().filter(|&&b| b).count(),
        eligible.len(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub errors: usize,
    /// Top-1 error rate; absent for empty bins.
    pub rate: Option<f64>,
}

/// Top-1 error rate bucketed by oracle gap over `[0, P95 of gaps]`.
/// Gaps above the 95th percentile fall into the last bin.
pub fn boundary_profile(outcomes: &[QueryOutcome], bins: usize) -> Result<Vec<ProfileBin>> {
    if bins < 2 {
        return Err(Error::InvalidArgument(
            "boundary profile needs at least 2 bins".into(),
        ));
    }
    let mut gaps: Vec<f64> = outcomes
        .iter()
        .map(|o| o.gap)
        .filter(|g| g.is_finite())
        .collect();
    if gaps.is_empty() {
        return Err(Error::InvalidArgument("no finite gaps to profile".into()));
    }
    gaps.sort_by(f64::total_cmp);
    let p95 = gaps[((gaps.len() - 1) as f64 * 0.95).round() as usize];
    let width = if p95 > 0.0 { p95 / bins as f64 } else { 1.0 };
    let mut counts = vec![(0usize, 0usize); bins];
    for o in outcomes.iter().filter(|o| o.gap.is_finite()) {
        let b = ((o.gap / width) as usize).min(bins - 1);
        counts[b].0 += 1;
        if !o.top1 {
            counts[b].1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, errors))| ProfileBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            n,
            errors,
            rate: (n > 0).then(|| errors as f64 / n as f64),
        })
        .collect())
}

pub fn profile_csv(bins: &[ProfileBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,n,errors\n");
    for b in bins {
        out.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.n, b.errors));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Uniform queries over the domain.
    pub queries: usize,
    /// Queries drawn near bisectors (oracle gap below `boundary_gap`).
    pub boundary_queries: usize,
    /// Boundary query threshold as a fraction of the domain diagonal.
    pub boundary_gap: f64,
    pub bins: usize,
    pub beam: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            queries: 100_000,
            boundary_queries: 20_000,
            boundary_gap: 0.02,
            bins: 10,
            beam: 1,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 {
            return Err(Error::InvalidArgument(
                "eval queries must be at least 1".into(),
            ));
        }
        if self.bins < 2 {
            return Err(Error::InvalidArgument(
                "eval bins must be at least 2".into(),
            ));
        }
        if self.beam == 0 {
            return Err(Error::InvalidArgument("beam must be at least 1".into()));
        }
        if !(self.boundary_gap > 0.0) {
            return Err(Error::InvalidArgument(
                "boundary_gap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform domain points whose oracle gap is at most `max_gap`.
pub fn boundary_queries(ss: &SiteSet, n: usize, max_gap: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if ss.len() < 2 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(seed);
    let domain = ss.domain();
    let budget = n.saturating_mul(1000).max(10_000);
    let mut out = Vec::with_capacity(n);
    let mut drawn = 0usize;
    while out.len() < n {
        if drawn >= budget {
            return Err(Error::InvalidArgument(format!(
                "boundary query gap {max_gap} too small: {} of {drawn} draws accepted",
                out.len()
            )));
        }
        drawn += 1;
        let x: Vec<f64> = domain
            .lo
            .iter()
            .zip(&domain.hi)
            .map(|(l, h)| rng.gen_range(*l..=*h))
            .collect();
        let (_, d1, d2) = oracle::two_nearest(ss, &x);
        if d2 - d1 <= max_gap {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub beam: usize,
    pub top1: f64,
    pub top2: f64,
    /// Mean per-query tau over queries with at least two candidates.
    pub kendall_tau: f64,
    pub order2: f64,
    pub boundary_queries: usize,
    /// Absolute gap threshold of the boundary query set.
    pub boundary_gap: f64,
    pub boundary_top1: f64,
    pub boundary_top2: f64,
    pub boundary_profile: Vec<ProfileBin>,
    /// Resolved run configuration.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: usize,
    top1: usize,
    top2: usize,
    order2_n: usize,
    order2: usize,
    tau_n: usize,
    tau_sum: f64,
}

impl Tally {
    fn of(outcomes: &[QueryOutcome]) -> Self {
        let mut t = Tally::default();
        for o in outcomes {
            t.n += 1;
            t.top1 += o.top1 as usize;
            t.top2 += o.top2 as usize;
            if let Some(b) = o.order2 {
                t.order2_n += 1;
                t.order2 += b as usize;
            }
            if let Some(tau) = o.tau {
                t.tau_n += 1;
                t.tau_sum += tau;
            }
        }
        t
    }
}

/// Full evaluation of a predictor on uniform and boundary query sets.
pub fn evaluate<P: Predictor + ?Sized>(
    pred: &P,
    ss: &SiteSet,
    cfg: &EvalConfig,
    config_echo: serde_json::Value,
) -> Result<EvalReport> {
    cfg.validate()?;
    let queries = sample_uniform(
        ss.domain(),
        cfg.queries,
        derive_seed(cfg.seed, stream::QUERIES),
    );
    let outcomes = evaluate_queries(pred, ss, &queries);
    let t = Tally::of(&outcomes);

    let gap = cfg.boundary_gap * ss.domain().diagonal();
    let bq = boundary_queries(
        ss,
        cfg.boundary_queries,
        gap,
        derive_seed(cfg.seed, stream::QUERIES + 1),
    )?;
    let b = Tally::of(&evaluate_queries(pred, ss, &bq));
    let profile = if ss.len() >= 2 {
        boundary_profile(&outcomes, cfg.bins)?
    } else {
        Vec::new()
    };

    Ok(EvalReport {
        queries: t.n,
        beam: cfg.beam,
        top1: fraction(t.top1, t.n),
        top2: fraction(t.top2, t.n),
        kendall_tau: if t.tau_n == 0 {
            0.0
        } else {
            t.tau_sum / t.tau_n as f64
        },
        order2: fraction(t.order2, t.order2_n),
        boundary_queries: b.n,
        boundary_gap: gap,
        boundary_top1: fraction(b.top1, b.n),
        boundary_top2: fraction(b.top2, b.n),
        boundary_profile: profile,
        config: config_echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_site_set, Aabb, Family, GenSpec, Metric, Site};
    use crate::hierarchy::{build_tree, TreeParams};
    use crate::runtime::{train_tree, TrainConfig};
    use proptest::prelude::*;

    /// Brute-force τ over all pairs with explicit rank comparison.
    fn tau_oracle(scores: &[f64], distances: &[f64]) -> f64 {
        let n = scores.len();
        let (mut c, mut d) = (0i64, 0i64);
        for i in 0..n {
            for j in 0..n {
                if i >= j {
                    continue;
                }
                let score_says_i_first = scores[i] > scores[j];
                let dist_says_i_first = distances[i] < distances[j];
                if scores[i] == scores[j] || distances[i] == distances[j] {
                    continue;
                }
                if score_says_i_first == dist_says_i_first {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        (c - d) as f64 / (c + d) as f64
    }

    #[test]
    fn tau_examples() {
        let d = [0.1, 0.4, 0.9, 1.3];
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&neg, &d).unwrap(), 1.0);
        assert_eq!(kendall_tau(&d, &d).unwrap(), -1.0);
        // One adjacent swap among four items.
        let swapped = [-0.1, -0.9, -0.4, -1.3];
        assert_eq!(tau_oracle(&swapped, &d), 2.0 / 3.0);
        assert!((kendall_tau(&swapped, &d).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        // Ties leave the denominator.
        assert_eq!(
            kendall_tau(&[1.0, 1.0, 0.0], &[0.0, 1.0, 2.0]).unwrap(),
            1.0
        );
    }

    proptest! {
        #[test]
        fn tau_properties(pairs in prop::collection::vec((-10.0f64..10.0, 0.0f64..10.0), 2..30)) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let dists: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let tau = kendall_tau(&scores, &dists).unwrap();
            prop_assert!((-1.0..=1.0).contains(&tau));
            let oracle = tau_oracle(&scores, &dists);
            if oracle.is_finite() {
                prop_assert!((tau - oracle).abs() < 1e-12);
            }
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((kendall_tau(&neg, &dists).unwrap() + tau).abs() < 1e-12);
            // Strictly monotone transforms of the scores.
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s + 7.0).collect();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            prop_assert_eq!(kendall_tau(&affine, &dists).unwrap(), tau);
            prop_assert_eq!(kendall_tau(&exp, &dists).unwrap(), tau);
        }
    }

    fn grid_points(side: usize) -> SiteSet {
        let mut sites = Vec::new();
        for i in 0..side {
            for j in 0..side {
                sites.push(Site::Point {
                    p: vec![
                        (i as f64 + 0.5) / side as f64,
                        (j as f64 + 0.5) / side as f64,
                    ],
                });
            }
        }
        SiteSet::new(Aabb::unit(2), Metric::L2, sites).unwrap()
    }

    #[test]
    fn oracle_as_predictor_is_perfect() {
        let ss = random_site_set(
            &GenSpec {
                dim: 2,
                n: 40,
                family: Family::Mixed,
                size_range: [0.02, 0.1],
                domain: Aabb::unit(2),
                metric: Metric::L2,
            },
            2,
        )
        .unwrap();
        let pred = OraclePredictor { ss: &ss };
        let queries = sample_uniform(ss.domain(), 2000, 3);
        assert_eq!(top_k_accuracy(&pred, &ss, &queries, 1).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&pred, &ss, &queries, 2).unwrap(), 1.0);
        assert_eq!(order2_accuracy(&pred, &ss, &queries).unwrap(), 1.0);
        let outcomes = evaluate_queries(&pred, &ss, &queries);
        assert!(outcomes.iter().all(|o| o.tau == Some(1.0)));
        let profile = boundary_profile(&outcomes, 8).unwrap();
        assert_eq!(profile.len(), 8);
        assert!(profile.iter().all(|b| b.errors == 0));
        assert!(top_k_accuracy(&pred, &ss, &[], 1).is_err());
        assert!(boundary_profile(&outcomes, 1).is_err());
    }

    #[test]
    fn untrained_flat_model_is_at_chance() {
        // 16 equal-area cells; an untrained flat tree always answers site 0.
        let ss = grid_points(4);
        let tree = build_tree(&ss, TreeParams::default(), 0).unwrap();
        assert!(tree.node(0).model.is_none());
        let pred = TreePredictor {
            tree: &tree,
            beam: 1,
        };
        let queries = sample_uniform(ss.domain(), 20_000, 5);
        let acc = top_k_accuracy(&pred, &ss, &queries, 1).unwrap();
        assert!((acc - 1.0 / 16.0).abs() < 0.01, "{acc}");
    }

    #[test]
    fn two_sites_order2_iff_top1() {
        let ss = SiteSet::new(
            Aabb::unit(2),
            Metric::L2,
            vec![
                Site::Point { p: vec![0.3, 0.5] },
                Site::Point { p: vec![0.7, 0.5] },
            ],
        )
        .unwrap();
        let mut tree = build_tree(&ss, TreeParams::default(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            n_uniform: 100,
            n_boundary: 100,
            hidden: vec![4],
            ..TrainConfig::default()
        };
        train_tree(&mut tree, &ss, &cfg).unwrap();
        let pred = TreePredictor {
            tree: &tree,
            beam: 1,
        };
        for o in evaluate_queries(&pred, &ss, &sample_uniform(ss.domain(), 500, 1)) {
            assert_eq!(o.order2, Some(o.top1));
            assert!(o.top2);
        }
    }

    #[test]
    fn report_invariants_on_trained_hierarchy() {
        let ss = random_site_set(
            &GenSpec {
                dim: 2,
                n: 60,
                family: Family::Segments,
                size_range: [0.02, 0.08],
                domain: Aabb::unit(2),
                metric: Metric::L2,
            },
            6,
        )
        .unwrap();
        let params = TreeParams {
            k: 4,
            leaf_capacity: 20,
            dilation: 0.1,
        };
        let mut tree = build_tree(&ss, params, 1).unwrap();
        assert_eq!(tree.depth(), 2);
        let cfg = TrainConfig {
            epochs: 5,
            n_uniform: 500,
            n_boundary: 500,
            hidden: vec![16, 16],
            frequencies: 2,
            ..TrainConfig::default()
        };
        train_tree(&mut tree, &ss, &cfg).unwrap();
        let eval = EvalConfig {
            queries: 3000,
            boundary_queries: 500,
            ..EvalConfig::default()
        };
        let mut prev_scores: Option<Vec<f64>> = None;
        let queries = sample_uniform(ss.domain(), 1000, 12);
        for beam in [1, 2, 3, 4] {
            let pred = TreePredictor { tree: &tree, beam };
            let report = evaluate(
                &pred,
                &ss,
                &EvalConfig {
                    beam,
                    ..eval.clone()
                },
                serde_json::Value::Null,
            )
            .unwrap();
            assert!(report.top2 >= report.top1);
            assert!(report.boundary_top2 >= report.boundary_top1);
            assert!((0.0..=1.0).contains(&report.top1));
            assert!((-1.0..=1.0).contains(&report.kendall_tau));
            let scores: Vec<f64> = queries.iter().map(|x| pred.envelope_value(x)).collect();
            if let Some(prev) = &prev_scores {
                assert!(scores.iter().zip(prev).all(|(s, p)| s >= p));
            }
            prev_scores = Some(scores);
        }
    }
}
