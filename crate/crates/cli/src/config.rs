use std::path::{Path, PathBuf};

use envfield_core::rng::{derive_seed, stream};
use envfield_core::{EvalConfig, GenSpec, TrainConfig, TreeParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterConfig {
    pub resolution: usize,
    /// Last-axis coordinate of the slice drawn for 3D site sets.
    pub slice: Option<f64>,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            slice: None,
        }
    }
}

/// Everything a run needs. `train.seed` and `eval.seed` are derived from
/// `seed` during resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; 0 lets rayon decide. Never changes results.
    pub threads: usize,
    pub sites: GenSpec,
    pub tree: TreeParams,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub raster: RasterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            threads: 0,
            sites: GenSpec::default(),
            tree: TreeParams::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            raster: RasterConfig::default(),
        }
    }
}

/// Seeds handed to each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub sites: u64,
    pub tree: u64,
    pub train: u64,
    pub eval: u64,
}

pub const SEED_SCHEME: &str = "derive(p, t) = mix64(mix64(p) + 0x9e3779b97f4a7c15 * (t + 1)), \
mix64 = SplitMix64 finalizer, wrapping u64 arithmetic. Stage seeds: sites = derive(root, 7), \
tree = derive(root, 9), train = derive(root, 10), eval = derive(root, 11). Node v uses \
derive(tree, v) for k-means and derive(train, v) for sampling, init and epoch shuffles; \
consumers split a seed further with fixed stream tags.";

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            sites: derive_seed(root, stream::SITES),
            tree: derive_seed(root, stream::TREE),
            train: derive_seed(root, stream::TRAIN),
            eval: derive_seed(root, stream::EVAL),
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Seeds {
        Seeds::from_root(self.seed)
    }

    /// Fills derived fields and validates every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let seeds = self.seeds();
        for (name, given, derived) in [
            ("train.seed", self.train.seed, seeds.train),
            ("eval.seed", self.eval.seed, seeds.eval),
        ] {
            if given != 0 && given != derived {
                return Err(CliError::Config(format!(
                    "{name} is derived from the root seed; set `seed` instead"
                )));
            }
        }
        self.train.seed = seeds.train;
        self.eval.seed = seeds.eval;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let section = |name: &str, r: envfield_core::Result<()>| {
            r.map_err(|e| CliError::Config(format!("{name}: {e}")))
        };
        section("sites", self.sites.validate())?;
        section("tree", self.tree.validate())?;
        section("train", self.train.validate())?;
        section("eval", self.eval.validate())?;
        if self.raster.resolution == 0 {
            return Err(CliError::Config(
                "raster: resolution must be positive".into(),
            ));
        }
        if let Some(z) = self.raster.slice {
            let d = &self.sites.domain;
            let last = d.dim() - 1;
            if self.sites.dim != 3 || !(d.lo[last] <= z && z <= d.hi[last]) {
                return Err(CliError::Config(
                    "raster: slice needs a 3D domain and must lie inside it".into(),
                ));
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(CliError::Config("output directory must be set".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Applies `key=value` to a JSON tree. The key is a dotted path; the value is
/// parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(map) => map,
            _ => {
                return Err(CliError::Config(format!(
                    "`{}` is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("keys have at least one part")
}

/// Reads the config file (or starts from defaults), applies the overrides
/// in order and resolves the result.
pub fn load(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for s in sets {
        apply_override(&mut value, s)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg.train.seed, cfg.seeds().train);
        assert_eq!(cfg.eval.seed, cfg.seeds().eval);
        assert_eq!(cfg.sites.n, 200);
    }

    #[test]
    fn overrides_nest_and_parse() {
        let cfg = load(
            None,
            &[
                "train.epochs=3".into(),
                "sites.family=points".into(),
                "train.hidden=[8,8]".into(),
                "output=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.hidden, vec![8, 8]);
        assert_eq!(cfg.output, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["trian.epochs=3", "train.epoch=3", "sites.nn=4"] {
            assert!(
                matches!(load(None, &[bad.into()]), Err(CliError::Config(_))),
                "{bad}"
            );
        }
        assert!(load(None, &["noequals".into()]).is_err());
        assert!(load(None, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            "sites.n=0",
            "train.epochs=0",
            "eval.bins=1",
            "raster.resolution=0",
            "tree.k=1",
        ] {
            assert!(
                matches!(load(None, &[bad.into()]), Err(CliError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn derived_seeds_guarded() {
        assert!(load(None, &["train.seed=5".into()]).is_err());
        let cfg = load(None, &["seed=3".into()]).unwrap();
        // A resolved config can be fed back verbatim.
        let text = serde_json::to_string(&cfg).unwrap();
        let again: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(again.resolve().unwrap(), cfg);
    }
}
