//! End-to-end use of the public API on a small point set.

use envfield_core::{
    build_tree, evaluate, infer, random_site_set, rasterize, train_tree, EvalConfig, Family,
    GenSpec, Mlp, ModelFile, OraclePredictor, RasterMode, SiteSet, SiteTree, TrainConfig,
    TreeParams, TreePredictor,
};

fn small() -> (SiteSet, SiteTree) {
    let spec = GenSpec {
        n: 24,
        family: Family::Points,
        ..GenSpec::default()
    };
    let ss = random_site_set(&spec, 5).unwrap();
    let params = TreeParams {
        k: 4,
        leaf_capacity: 8,
        ..TreeParams::default()
    };
    let mut tree = build_tree(&ss, params, 6).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        n_uniform: 600,
        n_boundary: 600,
        hidden: vec![32],
        seed: 7,
        ..TrainConfig::default()
    };
    train_tree(&mut tree, &ss, &cfg).unwrap();
    (ss, tree)
}

#[test]
fn trained_tree_beats_chance_and_round_trips() {
    let (ss, tree) = small();
    let cfg = EvalConfig {
        queries: 4000,
        boundary_queries: 500,
        seed: 8,
        ..EvalConfig::default()
    };
    let report = evaluate(
        &TreePredictor {
            tree: &tree,
            beam: 1,
        },
        &ss,
        &cfg,
        serde_json::Value::Null,
    )
    .unwrap();
    // 24 sites, so chance is about 0.04; the budget above is deliberately tiny.
    assert!(report.top1 > 0.5, "top1 {}", report.top1);
    assert!(report.top2 >= report.top1);

    // Weights travel separately from the tree, as the CLI stores them.
    let mut back = SiteTree::from_json(&tree.to_json().unwrap()).unwrap();
    for (node, orig) in back.nodes.iter_mut().zip(&tree.nodes) {
        if let Some(m) = &orig.model {
            let text = serde_json::to_string(&m.to_file(orig.id)).unwrap();
            let file: ModelFile = serde_json::from_str(&text).unwrap();
            node.model = Some(Mlp::from_file(&file).unwrap());
        }
    }
    for x in [[0.1, 0.2], [0.5, 0.5], [0.93, 0.71]] {
        let a = infer(&tree, &x, 1);
        let b = infer(&back, &x, 1);
        assert_eq!(a.site, b.site);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}

#[test]
fn training_is_deterministic() {
    let (_, a) = small();
    let (_, b) = small();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn oracle_raster_has_no_errors_against_itself() {
    let (ss, _) = small();
    let oracle = OraclePredictor { ss: &ss };
    let img = rasterize(&oracle, Some(&oracle), &ss, 32, RasterMode::Error, None).unwrap();
    assert!(img.rgb.iter().all(|&v| v == 255));
    assert!(img.to_ppm().starts_with(b"P6\n32 32\n255\n"));
}
