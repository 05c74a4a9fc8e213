//! Parametric sites and their point-to-site distance functions.
//!
//! A [`SiteSet`] is the indexed family of sites together with the domain box
//! and the metric. Every site/metric pair it accepts has an exact distance:
//! points and axis-aligned boxes support L1, L2 and L∞, while segments and
//! ellipses are L2 only.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
    Linf,
}

impl Metric {
    /// Norm of a difference vector.
    #[inline]
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Metric::L1 => v.iter().map(|c| c.abs()).sum(),
            Metric::L2 => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
            Metric::Linf => v.iter().fold(0.0, |m, c| m.max(c.abs())),
        }
    }

    /// Distance between two points.
    #[inline]
    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::Linf => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        Metric::L2.dist(&self.lo, &self.hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| *l <= *c && *c <= *h)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(
            self.lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.min(*b))
                .collect(),
            self.hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.max(*b))
                .collect(),
        )
    }

    /// Grows every side by `margin`.
    pub fn dilate(&self, margin: f64) -> Aabb {
        Aabb::new(
            self.lo.iter().map(|l| l - margin).collect(),
            self.hi.iter().map(|h| h + margin).collect(),
        )
    }

    /// Intersection with `other`. Callers must ensure the boxes overlap.
    pub fn clip(&self, other: &Aabb) -> Aabb {
        Aabb::new(
            self.lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| a.max(*b))
                .collect(),
            self.hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| a.min(*b))
                .collect(),
        )
    }

    /// Nearest point of the box.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(c, (l, h))| c.clamp(*l, *h))
            .collect()
    }

    fn is_valid(&self) -> bool {
        self.lo.len() == self.hi.len()
            && self
                .lo
                .iter()
                .zip(&self.hi)
                .all(|(l, h)| l.is_finite() && h.is_finite() && l <= h)
    }
}

/// A geometric primitive inducing a distance function over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Site {
    Point {
        p: Vec<f64>,
    },
    Segment {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Axis-aligned ellipse curve in the plane.
    Ellipse {
        center: [f64; 2],
        radii: [f64; 2],
    },
    /// Solid axis-aligned box.
    Cuboid {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Site {
    pub fn kind(&self) -> &'static str {
        match self {
            Site::Point { .. } => "point",
            Site::Segment { .. } => "segment",
            Site::Ellipse { .. } => "ellipse",
            Site::Cuboid { .. } => "cuboid",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Site::Point { p } => p.len(),
            Site::Segment { a, .. } => a.len(),
            Site::Ellipse { .. } => 2,
            Site::Cuboid { lo, .. } => lo.len(),
        }
    }

    /// Checks the geometric constraints of the variant.
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|c| c.is_finite());
        let bad = |msg: &str| Err(Error::InvalidSite(msg.to_string()));
        match self {
            Site::Point { p } => {
                if p.is_empty() || !finite(p) {
                    return bad("point coordinates must be finite");
                }
            }
            Site::Segment { a, b } => {
                if a.len() != b.len() || a.is_empty() || !finite(a) || !finite(b) {
                    return bad("segment endpoints must be finite and of equal dimension");
                }
                if a == b {
                    return bad("segment endpoints must differ");
                }
            }
            Site::Ellipse { center, radii } => {
                if !finite(center) || !finite(radii) {
                    return bad("ellipse parameters must be finite");
                }
                if radii[0] <= 0.0 || radii[1] <= 0.0 {
                    return bad("ellipse radii must be positive");
                }
            }
            Site::Cuboid { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() || !finite(lo) || !finite(hi) {
                    return bad("cuboid corners must be finite and of equal dimension");
                }
                if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return bad("cuboid requires lo < hi componentwise");
                }
            }
        }
        Ok(())
    }

    /// Whether the distance to this site is implemented exactly under `metric`.
    pub fn supports(&self, metric: Metric) -> Result<()> {
        match (self, metric) {
            (Site::Point { .. } | Site::Cuboid { .. }, _) => Ok(()),
            (Site::Segment { .. }, Metric::L2) | (Site::Ellipse { .. }, Metric::L2) => Ok(()),
            (site, _) => Err(Error::UnsupportedMetric {
                site: site.kind(),
                required: "the L2 metric",
            }),
        }
    }

    /// Point used to summarize the site for clustering.
    pub fn representative_point(&self) -> Vec<f64> {
        match self {
            Site::Point { p } => p.clone(),
            Site::Segment { a, b } => a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect(),
            Site::Ellipse { center, .. } => center.to_vec(),
            Site::Cuboid { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        match self {
            Site::Point { p } => Aabb::new(p.clone(), p.clone()),
            Site::Segment { a, b } => Aabb::new(
                a.iter().zip(b).map(|(x, y)| x.min(*y)).collect(),
                a.iter().zip(b).map(|(x, y)| x.max(*y)).collect(),
            ),
            Site::Ellipse { center, radii } => Aabb::new(
                vec![center[0] - radii[0], center[1] - radii[1]],
                vec![center[0] + radii[0], center[1] + radii[1]],
            ),
            Site::Cuboid { lo, hi } => Aabb::new(lo.clone(), hi.clone()),
        }
    }

    /// Distance from `x` to the nearest point of the site under `metric`.
    ///
    /// The pair must have passed [`Site::supports`]; `SiteSet` construction
    /// enforces this, so unsupported pairs fall back to L2 here.
    pub fn distance(&self, x: &[f64], metric: Metric) -> f64 {
        match self {
            Site::Point { p } => metric.dist(x, p),
            Site::Cuboid { lo, hi } => {
                let mut acc = 0.0f64;
                for i in 0..x.len() {
                    let d = if x[i] < lo[i] {
                        lo[i] - x[i]
                    } else if x[i] > hi[i] {
                        x[i] - hi[i]
                    } else {
                        0.0
                    };
                    match metric {
                        Metric::L1 => acc += d,
                        Metric::L2 => acc += d * d,
                        Metric::Linf => acc = acc.max(d),
                    }
                }
                if metric == Metric::L2 {
                    acc.sqrt()
                } else {
                    acc
                }
            }
            Site::Segment { a, b } => segment_distance(x, a, b),
            Site::Ellipse { center, radii } => {
                ellipse_distance(x[0] - center[0], x[1] - center[1], radii[0], radii[1])
            }
        }
    }
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut t = 0.0;
    for i in 0..x.len() {
        let e = b[i] - a[i];
        ab2 += e * e;
        t += (x[i] - a[i]) * e;
    }
    let t = (t / ab2).clamp(0.0, 1.0);
    let mut s = 0.0;
    for i in 0..x.len() {
        let c = x[i] - (a[i] + t * (b[i] - a[i]));
        s += c * c;
    }
    s.sqrt()
}

const ELLIPSE_TOL: f64 = 1e-10;
const ELLIPSE_MAX_ITER: usize = 100;

/// Euclidean distance from `(px, py)` (relative to the center) to the
/// boundary of the axis-aligned ellipse with semi-axes `rx`, `ry`.
///
/// Works in the first quadrant, where the nearest boundary point lies at a
/// parameter `t ∈ [0, π/2]` that is the unique root of
/// `h(t) = (rx² − ry²) sin t cos t − px rx sin t + py ry cos t`
/// (`h(0) ≥ 0`, `h(π/2) ≤ 0`). The root is found by Newton steps safeguarded
/// by a shrinking bisection bracket.
pub(crate) fn ellipse_distance(px: f64, py: f64, rx: f64, ry: f64) -> f64 {
    // Reduce to rx >= ry and the first quadrant.
    let (mut u, mut v, a, b) = if rx >= ry {
        (px.abs(), py.abs(), rx, ry)
    } else {
        (py.abs(), px.abs(), ry, rx)
    };
    if u == 0.0 {
        return (v - b).abs();
    }
    let c2 = a * a - b * b;
    if v == 0.0 {
        // On the major axis: either the vertex or a point off-axis (evolute interior).
        if u < c2 / a {
            let x0 = a * a * u / c2;
            let y0 = b * (1.0 - (x0 / a) * (x0 / a)).max(0.0).sqrt();
            return ((x0 - u) * (x0 - u) + y0 * y0).sqrt();
        }
        return (u - a).abs();
    }
    // Scale-free iteration keeps the tolerance meaningful for tiny/huge inputs.
    let scale = a;
    u /= scale;
    v /= scale;
    let (a, b, c2) = (1.0, b / scale, c2 / (scale * scale));

    let h = |t: f64| {
        let (s, c) = t.sin_cos();
        c2 * s * c - u * a * s + v * b * c
    };
    let dh = |t: f64| {
        let (s, c) = t.sin_cos();
        c2 * (c * c - s * s) - u * a * c - v * b * s
    };

    let mut lo = 0.0f64;
    let mut hi = std::f64::consts::FRAC_PI_2;
    // Start from the direction of the query point.
    let mut t = (v * a).atan2(u * b).clamp(lo, hi);
    for _ in 0..ELLIPSE_MAX_ITER {
        let ht = h(t);
        if ht == 0.0 {
            break;
        }
        if ht > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let d = dh(t);
        let mut next = if d != 0.0 { t - ht / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - t).abs();
        t = next;
        if step < ELLIPSE_TOL || hi - lo < ELLIPSE_TOL {
            break;
        }
    }
    let (s, c) = t.sin_cos();
    let dx = u - a * c;
    let dy = v - b * s;
    scale * (dx * dx + dy * dy).sqrt()
}

/// Indexed family of sites over a box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSiteSet")]
pub struct SiteSet {
    dim: usize,
    metric: Metric,
    domain: Aabb,
    sites: Vec<Site>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSiteSet {
    dim: usize,
    metric: Metric,
    domain: Aabb,
    sites: Vec<Site>,
}

impl TryFrom<RawSiteSet> for SiteSet {
    type Error = Error;

    fn try_from(raw: RawSiteSet) -> Result<Self> {
        let ss = SiteSet::new(raw.domain, raw.metric, raw.sites)?;
        if ss.dim != raw.dim {
            return Err(Error::InvalidSiteSet(format!(
                "declared dim {} does not match domain dim {}",
                raw.dim, ss.dim
            )));
        }
        Ok(ss)
    }
}

impl SiteSet {
    /// Validates and assembles a site set. Unsupported site/metric pairs are
    /// rejected here so that distance queries never fail.
    pub fn new(domain: Aabb, metric: Metric, sites: Vec<Site>) -> Result<Self> {
        let dim = domain.dim();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidSiteSet(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if !domain.is_valid() || domain.lo.iter().zip(&domain.hi).any(|(l, h)| l >= h) {
            return Err(Error::InvalidSiteSet("domain must satisfy lo < hi".into()));
        }
        if sites.is_empty() {
            return Err(Error::InvalidSiteSet(
                "at least one site is required".into(),
            ));
        }
        for (i, site) in sites.iter().enumerate() {
            site.validate()
                .map_err(|e| Error::InvalidSiteSet(format!("site {i}: {e}")))?;
            if site.dim() != dim {
                return Err(Error::InvalidSiteSet(format!(
                    "site {i} has dimension {}, expected {dim}",
                    site.dim()
                )));
            }
            site.supports(metric)?;
            if !domain.intersects(&site.bounding_box()) {
                return Err(Error::InvalidSiteSet(format!(
                    "site {i} lies outside the domain"
                )));
            }
        }
        Ok(Self {
            dim,
            metric,
            domain,
            sites,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `f_e(x)`.
    #[inline]
    pub fn distance(&self, e: usize, x: &[f64]) -> f64 {
        self.sites[e].distance(x, self.metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Points,
    Segments,
    Ellipses,
    Cuboids,
    Mixed,
}

/// Parameters for [`random_site_set`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub dim: usize,
    pub n: usize,
    pub family: Family,
    /// Range of the characteristic size (segment length, ellipse major
    /// diameter, box edge scale). Ignored for points.
    pub size_range: [f64; 2],
    pub domain: Aabb,
    pub metric: Metric,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 200,
            family: Family::Segments,
            size_range: [0.02, 0.1],
            domain: Aabb::unit(2),
            metric: Metric::L2,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeneration(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(2..=3).contains(&self.dim) || self.domain.dim() != self.dim {
            return bad(format!(
                "dimension {} is not supported by the domain",
                self.dim
            ));
        }
        let [lo, hi] = self.size_range;
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
            return bad(format!("size range [{lo}, {hi}] is empty or nonpositive"));
        }
        if hi >= self.domain.diagonal() {
            return bad("size range must stay below the domain diagonal".into());
        }
        if self.family == Family::Ellipses && self.dim != 2 {
            return bad("ellipses are only available in 2D".into());
        }
        if matches!(self.family, Family::Ellipses | Family::Segments) && self.metric != Metric::L2 {
            return bad(format!("{:?} require the L2 metric", self.family).to_lowercase());
        }
        Ok(())
    }
}

/// Generates `n` random sites with representative points uniform in the
/// domain. Identical `(spec, seed)` pairs yield identical site sets.
pub fn random_site_set(spec: &GenSpec, seed: u64) -> Result<SiteSet> {
    spec.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, stream::SITES));
    let d = spec.dim;
    let [smin, smax] = spec.size_range;

    let mut mixed_pool = vec![Family::Points, Family::Cuboids];
    if spec.metric == Metric::L2 {
        mixed_pool.push(Family::Segments);
        if d == 2 {
            mixed_pool.push(Family::Ellipses);
        }
    }

    let mut sites = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let c: Vec<f64> = (0..d)
            .map(|i| rng.gen_range(spec.domain.lo[i]..=spec.domain.hi[i]))
            .collect();
        let size = if smax > smin {
            rng.gen_range(smin..smax)
        } else {
            smin
        };
        let family = match spec.family {
            Family::Mixed => mixed_pool[rng.gen_range(0..mixed_pool.len())],
            f => f,
        };
        let site = match family {
            Family::Points => Site::Point { p: c },
            Family::Segments => {
                let dir = random_direction(&mut rng, d);
                let half = 0.5 * size;
                Site::Segment {
                    a: c.iter().zip(&dir).map(|(ci, ui)| ci - half * ui).collect(),
                    b: c.iter().zip(&dir).map(|(ci, ui)| ci + half * ui).collect(),
                }
            }
            Family::Ellipses => {
                let major = 0.5 * size;
                let minor = major * rng.gen_range(0.3..1.0);
                let radii = if rng.gen_bool(0.5) {
                    [major, minor]
                } else {
                    [minor, major]
                };
                Site::Ellipse {
                    center: [c[0], c[1]],
                    radii,
                }
            }
            Family::Cuboids => {
                let half: Vec<f64> = (0..d)
                    .map(|_| 0.5 * size * rng.gen_range(0.5..1.0))
                    .collect();
                Site::Cuboid {
                    lo: c.iter().zip(&half).map(|(ci, h)| ci - h).collect(),
                    hi: c.iter().zip(&half).map(|(ci, h)| ci + h).collect(),
                }
            }
            Family::Mixed => unreachable!("mixed resolves to a concrete family"),
        };
        sites.push(site);
    }
    SiteSet::new(spec.domain.clone(), spec.metric, sites)
}

fn random_direction(rng: &mut crate::rng::Rng, d: usize) -> Vec<f64> {
    if d == 2 {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        return vec![t.cos(), t.sin()];
    }
    // Uniform on the sphere via z and azimuth.
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    vec![r * t.cos(), r * t.sin(), z]
}
