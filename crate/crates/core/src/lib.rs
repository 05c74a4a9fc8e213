//! Hierarchical neural surrogates of generalized Voronoi diagrams.
//!
//! A [`SiteSet`] of parametric sites (points, segments, ellipses, boxes)
//! defines the lower envelope `L(x) = min_e f_e(x)` of its distance
//! functions. The [`oracle`] evaluates it exactly by brute force. A
//! [`SiteTree`] splits the sites by k-means and attaches a small classifier
//! ([`Mlp`]) to every node; routing a query through the tree replaces the
//! global argmin by a few local argmax decisions. [`evaluation`] measures the
//! surrogate against the oracle.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod hierarchy;
pub mod neural;
pub mod oracle;
pub mod raster;
pub mod rng;
pub mod runtime;
pub mod sampler;

pub use error::{Error, Result};
pub use evaluation::{evaluate, EvalConfig, EvalReport, OraclePredictor, Predictor, TreePredictor};
pub use geometry::{random_site_set, Aabb, Family, GenSpec, Metric, Site, SiteSet};
pub use hierarchy::{build_tree, kmeans, KMeansResult, SiteTree, TreeNode, TreeParams};
pub use neural::{AdamConfig, AdamState, Encoding, Mlp, ModelFile};
pub use oracle::OrderedNeighbors;
pub use raster::{rasterize, Image, RasterMode};
pub use runtime::{
    fit_node, infer, neural_envelope, node_dataset, train_tree, NodeTraining, Prediction,
    TrainConfig,
};
pub use sampler::{LabeledSample, SamplePlan};
