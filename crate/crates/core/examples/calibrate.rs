//! Scratch calibration for the desk-scale acceptance configuration.

use std::time::Instant;

use graphdiff::checkpoint::{generate, train, GenerateSettings, TrainSettings};
use graphdiff::datagen::{gen_airway_tree, hierarchy_omega, Corpus};
use graphdiff::edge::NoisingKind;
use graphdiff::eval::validity_rate;
use graphdiff::graph::SpatialGraph;
use graphdiff::projector::StructuralConstraint;
use graphdiff::rng::substream;
use graphdiff::Checkpoint;

fn corpus(count: usize, seed: u64) -> Corpus {
    use rand::Rng;
    let graphs = (0..count)
        .map(|i| {
            let mut rng = substream(seed, "calib.trees", i as u64);
            let n = rng.random_range(40..=120);
            gen_airway_tree(n, &mut rng)
        })
        .collect();
    Corpus { graphs, labels: Some((1..=4).map(|k| format!("L{k}")).collect()) }
}

fn main() {
    let t0 = Instant::now();
    let data = corpus(300, 42);
    let mean_n: f64 =
        data.graphs.iter().map(|g| g.node_count() as f64).sum::<f64>() / data.graphs.len() as f64;
    println!("corpus: 300 trees, mean n = {mean_n:.1} [{:?}]", t0.elapsed());

    let settings = TrainSettings {
        steps: 120,
        hidden: 32,
        blocks: 2,
        lr: 1e-3,
        batch_size: 16,
        coord_epochs: 120,
        edge_epochs: std::env::var("EDGE_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(24),
        seed: 1,
        ..Default::default()
    };

    let t1 = Instant::now();
    let outcome = train(&data, &settings, None).unwrap();
    println!(
        "train: coord {:.4} -> {:.4}, edge {:.4} -> {:.4} [{:?}]",
        outcome.coord_curve.first().unwrap(),
        outcome.coord_curve.last().unwrap(),
        outcome.edge_curve.first().unwrap(),
        outcome.edge_curve.last().unwrap(),
        t1.elapsed()
    );
    let ckpt = outcome.checkpoint;

    let omega = hierarchy_omega(4);
    let count = 50usize;

    // (c) full projector
    let t2 = Instant::now();
    let full = GenerateSettings {
        omega: Some(omega.clone()),
        structural: StructuralConstraint::Forest,
        ..GenerateSettings::new(count, 7)
    };
    let samples = generate(&ckpt, &full).unwrap();
    let graphs: Vec<SpatialGraph> = samples.iter().map(|s| s.graph.clone()).collect();
    let mut log = graphdiff::InterventionLog::default();
    for s in &samples {
        log.merge(&s.log);
    }
    let mean_edges: f64 =
        graphs.iter().map(|g| g.edge_count() as f64).sum::<f64>() / graphs.len() as f64;
    println!(
        "full projector: validity {:.1}%, mean |E| {mean_edges:.1}, intervention {:.4} [{:?}] ({} cand)",
        validity_rate(&graphs, Some(&omega), true),
        log.intervention_rate(),
        t2.elapsed(),
        log.candidates,
    );

    // (b) structural-only
    let structural_only = GenerateSettings {
        structural: StructuralConstraint::Forest,
        ..GenerateSettings::new(count, 7)
    };
    let sb: Vec<SpatialGraph> =
        generate(&ckpt, &structural_only).unwrap().into_iter().map(|s| s.graph).collect();
    println!(
        "structural-only: validity {:.1}% (omega+forest), forest-only validity {:.1}%",
        validity_rate(&sb, Some(&omega), true),
        validity_rate(&sb, None, true),
    );

    // (a) uniform noising, no projector
    let uniform = GenerateSettings {
        noising_override: Some(NoisingKind::Uniform),
        ..GenerateSettings::new(count, 7)
    };
    let sa: Vec<SpatialGraph> =
        generate(&ckpt, &uniform).unwrap().into_iter().map(|s| s.graph).collect();
    let ua_edges: f64 = sa.iter().map(|g| g.edge_count() as f64).sum::<f64>() / sa.len() as f64;
    println!(
        "uniform no-projector: validity {:.1}%, mean |E| {ua_edges:.1}",
        validity_rate(&sa, Some(&omega), true)
    );

    // k = 0 ablation
    let k0 = GenerateSettings { k: 0, ..full.clone() };
    let s0: Vec<SpatialGraph> =
        generate(&ckpt, &k0).unwrap().into_iter().map(|s| s.graph).collect();
    let k0_edges: f64 = s0.iter().map(|g| g.edge_count() as f64).sum::<f64>() / s0.len() as f64;
    println!("k=0: mean |E| {k0_edges:.1} vs k=4 {mean_edges:.1}");

    // untrained model intervention
    let untrained = Checkpoint {
        edge: graphdiff::nn::EdgeDenoiser::init(32, 2, 5, 999),
        ..ckpt.clone()
    };
    let su = generate(&untrained, &full).unwrap();
    let mut ulog = graphdiff::InterventionLog::default();
    for s in &su {
        ulog.merge(&s.log);
    }
    println!(
        "untrained intervention {:.4} ({} cand) vs trained {:.4}",
        ulog.intervention_rate(),
        ulog.candidates,
        log.intervention_rate()
    );

    // link prediction sanity on 10 held-out trees
    let t3 = Instant::now();
    let mut bal_model = Vec::new();
    let mut bal_base = Vec::new();
    for i in 0..10u64 {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = substream(77, "calib.heldout", i);
        let n = rng.random_range(40..=120);
        let truth = gen_airway_tree(n, &mut rng);
        let mut edges: Vec<_> = truth.edges().to_vec();
        edges.shuffle(&mut rng);
        let keep = edges.len() - (edges.len() as f64 * 0.3).round() as usize;
        let partial = SpatialGraph::new(
            truth.coords().to_vec(),
            edges[..keep].iter().map(|e| (e.i, e.j, e.label)).collect(),
        )
        .unwrap();
        let (completed, _) = graphdiff::checkpoint::link_predict_graph(
            &ckpt,
            &partial,
            100,
            Some(omega.clone()),
            StructuralConstraint::Forest,
            4,
            i,
        )
        .unwrap();
        let m = graphdiff::eval::link_pred_metrics(&completed, &truth, &partial).unwrap();
        let b = graphdiff::eval::link_pred_metrics(&partial, &truth, &partial).unwrap();
        bal_model.push(m.balanced_accuracy);
        bal_base.push(b.balanced_accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "link prediction: model {:.2}% vs all-no-edge {:.2}% [{:?}]",
        mean(&bal_model),
        mean(&bal_base),
        t3.elapsed()
    );
    println!("total {:?}", t0.elapsed());
}
