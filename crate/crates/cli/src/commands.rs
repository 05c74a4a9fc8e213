use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use envfield_core::evaluation::profile_csv;
use envfield_core::raster::rasterize;
use envfield_core::runtime::rank;
use envfield_core::sampler::write_dataset;
use envfield_core::{
    build_tree, evaluate, fit_node, node_dataset, random_site_set, EvalReport, Family,
    LabeledSample, Mlp, ModelFile, NodeTraining, OraclePredictor, RasterMode, SiteSet, SiteTree,
    TreePredictor,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::{CliError, StageError};

type StageResult<T> = Result<T, StageError>;

fn write_file(path: &Path, bytes: &[u8]) -> StageResult<()> {
    fs::write(path, bytes).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> StageResult<String> {
    fs::read_to_string(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StageResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(envfield_core::Error::from)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Empties (or creates) an artifact subdirectory so no stale files survive.
fn fresh_dir(path: &Path) -> StageResult<()> {
    let io = |source| StageError::Io {
        path: path.to_path_buf(),
        source,
    };
    if path.exists() {
        fs::remove_dir_all(path).map_err(io)?;
    }
    fs::create_dir_all(path).map_err(io)
}

/// An output directory with its manifest.
pub struct Run {
    pub cfg: RunConfig,
    manifest: Manifest,
}

impl Run {
    pub fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = &cfg.output;
        let setup = |source| CliError::Stage {
            stage: "setup".into(),
            source: StageError::Io {
                path: dir.clone(),
                source,
            },
        };
        fs::create_dir_all(dir).map_err(setup)?;
        let manifest = Manifest::open(dir, cfg);
        manifest.write(dir).map_err(setup)?;
        Ok(Self {
            cfg: cfg.clone(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.output
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    /// Runs one stage and records its outcome in the manifest.
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce(&Self) -> StageResult<T>,
    ) -> Result<T, CliError> {
        let out = f(self).map_err(|source| CliError::Stage {
            stage: name.to_string(),
            source,
        });
        self.manifest.record(name, out.as_ref().map(|_| ()));
        let written = self.manifest.write(&self.cfg.output);
        let value = out?;
        written.map_err(|source| CliError::Stage {
            stage: name.to_string(),
            source: StageError::Io {
                path: self.path("MANIFEST.json"),
                source,
            },
        })?;
        Ok(value)
    }

    pub fn gen(&mut self) -> Result<SiteSet, CliError> {
        self.stage("gen", |run| {
            let ss = random_site_set(&run.cfg.sites, run.cfg.seeds().sites)?;
            let mut text = ss.to_json()?;
            text.push('\n');
            write_file(&run.path("sites.json"), text.as_bytes())?;
            Ok(ss)
        })
    }

    pub fn load_sites(&self) -> StageResult<SiteSet> {
        Ok(SiteSet::from_json(&read_text(&self.path("sites.json"))?)?)
    }

    pub fn build(&mut self, ss: &SiteSet) -> Result<SiteTree, CliError> {
        self.stage("build", |run| {
            let tree = build_tree(ss, run.cfg.tree, run.cfg.seeds().tree)?;
            let mut text = tree.to_json()?;
            text.push('\n');
            write_file(&run.path("tree.json"), text.as_bytes())?;
            Ok(tree)
        })
    }

    pub fn load_tree(&self) -> StageResult<SiteTree> {
        Ok(SiteTree::from_json(&read_text(&self.path("tree.json"))?)?)
    }

    /// Builds every node's training set and writes `datasets/<node>.bin`.
    pub fn sample(
        &mut self,
        ss: &SiteSet,
        tree: &SiteTree,
    ) -> Result<Vec<Option<Vec<LabeledSample>>>, CliError> {
        self.stage("sample", |run| {
            let sets = (0..tree.nodes.len())
                .into_par_iter()
                .map(|id| {
                    node_dataset(tree, id, ss, &run.cfg.train).map_err(|e| {
                        envfield_core::Error::Node {
                            node: id,
                            source: Box::new(e),
                        }
                    })
                })
                .collect::<envfield_core::Result<Vec<_>>>()?;
            let dir = run.path("datasets");
            fresh_dir(&dir)?;
            for (id, data) in sets.iter().enumerate() {
                if let Some(data) = data {
                    let mut bytes = Vec::new();
                    write_dataset(data, ss.dim(), &mut bytes)?;
                    write_file(&dir.join(format!("{id}.bin")), &bytes)?;
                }
            }
            Ok(sets)
        })
    }

    /// Fits every node that has a dataset and writes `models/<node>.json`,
    /// `training.json` and a `tree.json` that references the models.
    pub fn train(
        &mut self,
        ss: &SiteSet,
        tree: &mut SiteTree,
        sets: &[Option<Vec<LabeledSample>>],
    ) -> Result<Vec<NodeTraining>, CliError> {
        self.stage("train", |run| {
            let fitted = sets
                .par_iter()
                .enumerate()
                .map(|(id, data)| match data {
                    Some(data) => fit_node(tree, id, ss.dim(), &run.cfg.train, data)
                        .map(|(m, r)| (Some(m), r))
                        .map_err(|e| envfield_core::Error::Node {
                            node: id,
                            source: Box::new(e),
                        }),
                    None => Ok((
                        None,
                        NodeTraining {
                            node: id,
                            classes: tree.node(id).class_count(),
                            samples: 0,
                            losses: Vec::new(),
                            train_accuracy: 1.0,
                        },
                    )),
                })
                .collect::<envfield_core::Result<Vec<_>>>()?;
            let dir = run.path("models");
            fresh_dir(&dir)?;
            let mut reports = Vec::with_capacity(fitted.len());
            let mut trained = tree.clone();
            for (id, (model, report)) in fitted.into_iter().enumerate() {
                let node = &mut trained.nodes[id];
                node.model_ref = None;
                if let Some(model) = &model {
                    let name = format!("models/{id}.json");
                    write_json(&run.path(&name), &model.to_file(id))?;
                    node.model_ref = Some(name);
                }
                node.model = model;
                reports.push(report);
            }
            let mut text = trained.to_json()?;
            text.push('\n');
            write_file(&run.path("tree.json"), text.as_bytes())?;
            write_json(&run.path("training.json"), &reports)?;
            Ok((trained, reports))
        })
        .map(|(trained, reports)| {
            *tree = trained;
            reports
        })
    }

    /// Loads `tree.json` with every model it references.
    pub fn load_trained_tree(&self) -> StageResult<SiteTree> {
        let mut tree = self.load_tree()?;
        for node in &mut tree.nodes {
            match &node.model_ref {
                Some(name) => {
                    let file: ModelFile = serde_json::from_str(&read_text(&self.path(name))?)
                        .map_err(envfield_core::Error::from)?;
                    node.model = Some(Mlp::from_file(&file)?);
                }
                None if node.class_count() >= 2 => {
                    return Err(StageError::Missing(format!(
                        "node {} has no trained model; run `train` first",
                        node.id
                    )))
                }
                None => {}
            }
        }
        Ok(tree)
    }

    /// Writes `report.json` and `profile.csv`.
    pub fn eval(&mut self, ss: &SiteSet, tree: &SiteTree) -> Result<EvalReport, CliError> {
        self.stage("eval", |run| {
            let pred = TreePredictor {
                tree,
                beam: run.cfg.eval.beam,
            };
            let report = evaluate(&pred, ss, &run.cfg.eval, run.cfg.to_value())?;
            write_json(&run.path("report.json"), &report)?;
            write_file(
                &run.path("profile.csv"),
                profile_csv(&report.boundary_profile).as_bytes(),
            )?;
            Ok(report)
        })
    }

    /// Writes label, error and envelope images for the tree and the oracle.
    pub fn raster(&mut self, ss: &SiteSet, tree: &SiteTree) -> Result<(), CliError> {
        self.stage("raster", |run| {
            let dir = run.path("rasters");
            fresh_dir(&dir)?;
            let pred = TreePredictor {
                tree,
                beam: run.cfg.eval.beam,
            };
            let oracle = OraclePredictor { ss };
            let r = &run.cfg.raster;
            let jobs: [(&str, &dyn envfield_core::Predictor, RasterMode); 5] = [
                ("labels", &pred, RasterMode::Labels),
                ("error", &pred, RasterMode::Error),
                ("envelope", &pred, RasterMode::Envelope),
                ("oracle_labels", &oracle, RasterMode::Labels),
                ("oracle_envelope", &oracle, RasterMode::Envelope),
            ];
            for (name, p, mode) in jobs {
                let img = rasterize(p, Some(&oracle), ss, r.resolution, mode, r.slice)?;
                write_file(&dir.join(format!("{name}.ppm")), &img.to_ppm())?;
            }
            Ok(())
        })
    }
}

fn summary(report: &EvalReport) -> String {
    format!(
        "top1 {:.4}  top2 {:.4}  tau {:.4}  order2 {:.4}  boundary top1 {:.4}",
        report.top1, report.top2, report.kendall_tau, report.order2, report.boundary_top1
    )
}

fn family_name(f: Family) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<SiteSet, CliError> {
    let mut run = Run::open(cfg)?;
    let ss = run.gen()?;
    println!(
        "generated {} {} sites in {}D",
        ss.len(),
        family_name(cfg.sites.family),
        ss.dim()
    );
    Ok(ss)
}

/// Maps a missing prerequisite to a failure of the stage that needed it.
fn prerequisite<T>(stage: &str, r: StageResult<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Stage {
        stage: stage.to_string(),
        source,
    })
}

pub fn cmd_build(cfg: &RunConfig) -> Result<SiteTree, CliError> {
    let mut run = Run::open(cfg)?;
    let ss = prerequisite("build", run.load_sites())?;
    let tree = run.build(&ss)?;
    println!("built {} nodes, depth {}", tree.nodes.len(), tree.depth());
    Ok(tree)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<NodeTraining>, CliError> {
    let mut run = Run::open(cfg)?;
    let ss = prerequisite("sample", run.load_sites())?;
    let mut tree = prerequisite("sample", run.load_tree())?;
    let sets = run.sample(&ss, &tree)?;
    let reports = run.train(&ss, &mut tree, &sets)?;
    let models = reports.iter().filter(|r| r.samples > 0).count();
    println!("trained {models} models");
    Ok(reports)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let mut run = Run::open(cfg)?;
    let ss = prerequisite("eval", run.load_sites())?;
    let tree = prerequisite("eval", run.load_trained_tree())?;
    let report = run.eval(&ss, &tree)?;
    println!("{}", summary(&report));
    Ok(report)
}

pub fn cmd_raster(cfg: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::open(cfg)?;
    let ss = prerequisite("raster", run.load_sites())?;
    let tree = prerequisite("raster", run.load_trained_tree())?;
    run.raster(&ss, &tree)?;
    println!("wrote {}", run.path("rasters").display());
    Ok(())
}

pub fn cmd_pipeline(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let mut run = Run::open(cfg)?;
    let ss = run.gen()?;
    let mut tree = run.build(&ss)?;
    let sets = run.sample(&ss, &tree)?;
    run.train(&ss, &mut tree, &sets)?;
    drop(sets);
    let report = run.eval(&ss, &tree)?;
    run.raster(&ss, &tree)?;
    println!("{}", summary(&report));
    Ok(report)
}

/// Reads query points, one per row. A leading header row is skipped.
pub fn read_queries(text: &str, dim: usize) -> Result<Vec<Vec<f64>>, StageError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| StageError::Missing(format!("query file: {e}")))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(x) if x.len() == dim && x.iter().all(|c| c.is_finite()) => out.push(x),
            Err(_) if i == 0 => continue,
            _ => {
                return Err(StageError::Missing(format!(
                    "query row {} must hold {dim} finite coordinates",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Predictions as CSV rows `x1..xd, site, score, leaf`.
pub fn predictions_csv(tree: &SiteTree, queries: &[Vec<f64>], dim: usize, beam: usize) -> Vec<u8> {
    let rows: Vec<(usize, f64, usize)> = queries
        .par_iter()
        .map(|x| rank(tree, x, beam).candidates[0])
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.extend(["site", "score", "leaf"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for (x, (site, score, leaf)) in queries.iter().zip(rows) {
        let mut rec: Vec<String> = x.iter().map(|c| c.to_string()).collect();
        rec.extend([site.to_string(), score.to_string(), leaf.to_string()]);
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn cmd_infer(
    cfg: &RunConfig,
    input: &Path,
    output: Option<&Path>,
    beam: Option<usize>,
) -> Result<usize, CliError> {
    let beam = beam.unwrap_or(cfg.eval.beam);
    if beam == 0 {
        return Err(CliError::Config("beam must be at least 1".into()));
    }
    let run = Run::open(cfg)?;
    let tree = prerequisite("infer", run.load_trained_tree())?;
    let dim = tree.node(tree.root).region.dim();
    let queries = prerequisite(
        "infer",
        read_text(input).and_then(|t| read_queries(&t, dim)),
    )?;
    let bytes = predictions_csv(&tree, &queries, dim, beam);
    match output {
        Some(path) => prerequisite("infer", write_file(path, &bytes))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|source| CliError::Stage {
                stage: "infer".into(),
                source: StageError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                },
            })?,
    }
    Ok(queries.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    /// Boundary thickness as a fraction of each node's region diagonal.
    #[value(name = "epsilon")]
    Epsilon,
    /// Fixed length of every generated segment.
    #[value(name = "segment_length")]
    SegmentLength,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::SegmentLength => "segment_length",
        }
    }

    /// Configuration of one sweep point. Seeds are unchanged, so a
    /// single-value sweep reproduces the plain pipeline.
    pub fn apply(self, base: &RunConfig, value: f64, index: usize) -> Result<RunConfig, CliError> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Epsilon => cfg.train.epsilon = value,
            SweepParam::SegmentLength => {
                if cfg.sites.family != Family::Segments {
                    return Err(CliError::Config(
                        "segment_length sweeps need sites.family = segments".into(),
                    ));
                }
                cfg.sites.size_range = [value, value];
            }
        }
        cfg.output = base
            .output
            .join("sweep")
            .join(format!("{}-{index}", self.name()));
        cfg.resolve()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub report: Option<EvalReport>,
}

pub fn sweep_table(param: SweepParam, rows: &[SweepRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "parameter",
        "value",
        "status",
        "top1",
        "top2",
        "kendall_tau",
        "order2",
        "boundary_top1",
        "boundary_top2",
    ])
    .expect("in-memory write");
    for row in rows {
        let mut rec = vec![
            param.name().to_string(),
            row.value.to_string(),
            row.status.clone(),
        ];
        match &row.report {
            Some(r) => rec.extend(
                [
                    r.top1,
                    r.top2,
                    r.kendall_tau,
                    r.order2,
                    r.boundary_top1,
                    r.boundary_top2,
                ]
                .iter()
                .map(|v| v.to_string()),
            ),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// One pipeline per value under `<output>/sweep/`, summarized in
/// `<output>/table.csv`. A failing value becomes a row and the sweep goes on.
pub fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    // Fail fast on configuration problems shared by every value.
    if param == SweepParam::SegmentLength && cfg.sites.family != Family::Segments {
        return Err(CliError::Config(
            "segment_length sweeps need sites.family = segments".into(),
        ));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        println!("{} = {value}", param.name());
        let outcome = param.apply(cfg, value, i).and_then(|c| cmd_pipeline(&c));
        rows.push(match outcome {
            Ok(report) => SweepRow {
                value,
                status: "ok".into(),
                report: Some(report),
            },
            Err(e) => {
                eprintln!("error: {e}");
                SweepRow {
                    value,
                    status: e.to_string(),
                    report: None,
                }
            }
        });
    }
    let table = cfg.output.join("table.csv");
    fs::create_dir_all(&cfg.output)
        .and_then(|_| fs::write(&table, sweep_table(param, &rows)))
        .map_err(|source| CliError::Stage {
            stage: "sweep".into(),
            source: StageError::Io {
                path: table,
                source,
            },
        })?;
    Ok(rows)
}
