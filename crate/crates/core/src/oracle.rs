//! Exact brute-force evaluation of the lower envelope.
//!
//! Every query scans all sites; there is no spatial index. Ties are broken
//! toward the smaller site index everywhere.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SiteSet;

/// The `k` nearest sites of a query, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedNeighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl OrderedNeighbors {
    /// Sites attaining the minimum distance (the stratum label set).
    pub fn tie_group(&self) -> &[usize] {
        let Some(&d0) = self.distances.first() else {
            return &[];
        };
        let n = self.distances.iter().take_while(|&&d| d == d0).count();
        &self.indices[..n]
    }
}

/// `(min_e f_e(x), smallest argmin index)`.
pub fn envelope(ss: &SiteSet, x: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for e in 0..ss.len() {
        let d = ss.distance(e, x);
        if d < best.0 {
            best = (d, e);
        }
    }
    best
}

/// Envelope restricted to `subset`; returns the position within `subset`.
pub fn envelope_within(ss: &SiteSet, subset: &[usize], x: &[f64]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (pos, &e) in subset.iter().enumerate() {
        let d = ss.distance(e, x);
        if d < best.0 || (d == best.0 && e < subset[best.1]) {
            best = (d, pos);
        }
    }
    best
}

/// Two smallest distances and the argmin, in one pass: `(label, d1, d2)`.
/// `d2` is `+∞` for a single site.
pub fn two_nearest(ss: &SiteSet, x: &[f64]) -> (usize, f64, f64) {
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    let mut label = 0;
    for e in 0..ss.len() {
        let d = ss.distance(e, x);
        if d < d1 {
            d2 = d1;
            d1 = d;
            label = e;
        } else if d < d2 {
            d2 = d;
        }
    }
    (label, d1, d2)
}

/// The `k` nearest sites of `x`, ascending by distance then index.
pub fn order_k(ss: &SiteSet, x: &[f64], k: usize) -> Result<OrderedNeighbors> {
    if k == 0 || k > ss.len() {
        return Err(Error::InvalidArgument(format!(
            "order k = {k} must lie in 1..={}",
            ss.len()
        )));
    }
    let mut all: Vec<(f64, usize)> = (0..ss.len()).map(|e| (ss.distance(e, x), e)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(OrderedNeighbors {
        indices: all.iter().map(|p| p.1).collect(),
        distances: all.iter().map(|p| p.0).collect(),
    })
}

/// Fat-bisector membership with true distances: at least two sites of
/// `subset` come within `eps` of the subset minimum.
pub fn in_fat_bisector(ss: &SiteSet, subset: &[usize], x: &[f64], eps: f64) -> bool {
    if subset.len() < 2 {
        return false;
    }
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    for &e in subset {
        let d = ss.distance(e, x);
        if d < d1 {
            d2 = d1;
            d1 = d;
        } else if d < d2 {
            d2 = d;
        }
    }
    d2 - d1 <= eps
}

/// Writes one CSV row per query: coordinates, label and the two smallest
/// distances. Keeping `d1, d2` lets callers re-threshold by ε later.
pub fn write_label_csv<W: Write>(ss: &SiteSet, queries: &[Vec<f64>], mut out: W) -> Result<()> {
    let header: Vec<String> = (1..=ss.dim())
        .map(|i| format!("x{i}"))
        .chain(["label".into(), "d1".into(), "d2".into()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for x in queries {
        let (label, d1, d2) = two_nearest(ss, x);
        let coords: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        let d2 = if d2.is_finite() {
            d2.to_string()
        } else {
            String::new()
        };
        writeln!(out, "{},{label},{d1},{d2}", coords.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_site_set, Aabb, Family, GenSpec, Metric, Site};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn points(ps: &[[f64; 2]]) -> SiteSet {
        let domain = Aabb::new(vec![-10.0, -10.0], vec![10.0, 10.0]);
        let sites = ps.iter().map(|p| Site::Point { p: p.to_vec() }).collect();
        SiteSet::new(domain, Metric::L2, sites).unwrap()
    }

    /// Independent route: full sort of every distance.
    fn full_sort(ss: &SiteSet, x: &[f64]) -> Vec<(f64, usize)> {
        let mut v: Vec<(f64, usize)> = ss
            .sites()
            .iter()
            .enumerate()
            .map(|(e, s)| (s.distance(x, ss.metric()), e))
            .collect();
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        v
    }

    fn random_set(n: usize, family: Family, seed: u64) -> SiteSet {
        random_site_set(
            &GenSpec {
                dim: 2,
                n,
                family,
                size_range: [0.02, 0.1],
                domain: Aabb::unit(2),
                metric: Metric::L2,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn envelope_examples() {
        let ss = points(&[[0.0, 0.0], [4.0, 0.0]]);
        assert_eq!(envelope(&ss, &[1.0, 0.0]), (1.0, 0));
        assert_eq!(envelope(&ss, &[2.0, 0.0]).1, 0);
        let ss = points(&[[4.0, 0.0], [0.0, 0.0]]);
        assert_eq!(envelope(&ss, &[2.0, 0.0]).1, 0);
    }

    #[test]
    fn envelope_matches_full_sort_on_segments() {
        let ss = random_set(20, Family::Segments, 4);
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (v, l) = envelope(&ss, &x);
            let sorted = full_sort(&ss, &x);
            assert_eq!(l, sorted[0].1);
            assert_eq!(v, sorted[0].0);
            let (l2, d1, d2) = two_nearest(&ss, &x);
            assert_eq!((l2, d1, d2), (sorted[0].1, sorted[0].0, sorted[1].0));
        }
    }

    #[test]
    fn order_k_examples() {
        let ss = points(&[[0.0, 0.0], [1.0, 0.0], [5.0, 0.0]]);
        assert_eq!(order_k(&ss, &[0.4, 0.0], 2).unwrap().indices, vec![0, 1]);
        let mut all = order_k(&ss, &[3.0, 1.0], 3).unwrap().indices;
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(order_k(&ss, &[0.0, 0.0], 4).is_err());
        assert!(order_k(&ss, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn order_k_matches_full_sort() {
        let ss = random_set(50, Family::Mixed, 8);
        let mut rng = rng_from_seed(2);
        for _ in 0..100 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let nb = order_k(&ss, &x, 5).unwrap();
            let sorted = full_sort(&ss, &x);
            let expect: Vec<usize> = sorted[..5].iter().map(|p| p.1).collect();
            assert_eq!(nb.indices, expect);
            assert!(nb.distances.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(nb.indices[0], envelope(&ss, &x).1);
        }
    }

    #[test]
    fn tie_group_collects_equal_minimum() {
        let ss = points(&[[0.0, 0.0], [2.0, 0.0], [9.0, 9.0]]);
        let nb = order_k(&ss, &[1.0, 0.0], 3).unwrap();
        assert_eq!(nb.tie_group(), &[0, 1]);
    }

    #[test]
    fn fat_bisector_examples() {
        let ss = points(&[[0.0, 0.0], [2.0, 0.0]]);
        let all = [0, 1];
        assert!(in_fat_bisector(&ss, &all, &[1.0, 0.0], 0.0));
        assert!(!in_fat_bisector(&ss, &all, &[0.0, 0.0], 0.5));
        // f1 = 0.8, f2 = 1.2
        assert!(in_fat_bisector(&ss, &all, &[0.8, 0.0], 0.4));
        assert!(!in_fat_bisector(&ss, &all, &[0.8, 0.0], 0.39));
        assert!(!in_fat_bisector(&ss, &[0], &[1.0, 0.0], 100.0));
    }

    #[test]
    fn fat_bisector_is_monotone_in_eps_and_matches_order2() {
        let ss = random_set(30, Family::Segments, 3);
        let all: Vec<usize> = (0..30).collect();
        let mut rng = rng_from_seed(9);
        for _ in 0..2000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let eps = rng.gen_range(0.0..0.1);
            let wider = eps + rng.gen_range(0.0..0.1);
            if in_fat_bisector(&ss, &all, &x, eps) {
                assert!(in_fat_bisector(&ss, &all, &x, wider));
            }
            let nb = order_k(&ss, &x, 2).unwrap();
            assert_eq!(
                in_fat_bisector(&ss, &all, &x, eps),
                nb.distances[1] - nb.distances[0] <= eps
            );
        }
    }

    #[test]
    fn label_csv_rows() {
        let ss = points(&[[0.0, 0.0], [4.0, 0.0]]);
        let mut buf = Vec::new();
        write_label_csv(&ss, &[vec![1.0, 0.0]], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x1,x2,label,d1,d2\n1,0,0,1,3\n");
    }
}
