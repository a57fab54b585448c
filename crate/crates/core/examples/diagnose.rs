//! Scratch diagnostic: where does no-edge confidence collapse?

use graphdiff::checkpoint::{train, TrainSettings};
use graphdiff::coord::sample_coords;
use graphdiff::datagen::{gen_airway_tree, Corpus};
use graphdiff::edge::{forward_noise_edges, pairs, EdgeState, TransitionModel};
use graphdiff::nn::EdgeDenoiser;
use graphdiff::projector::{reverse_sample_with, ProjectorConfig, StructuralConstraint};
use graphdiff::rng::substream;
use ndarray::Array2;
use rand::Rng;

fn mean_p0_on_empty(model: &EdgeDenoiser, state: &EdgeState, coords: &Array2<f64>, time: f64) -> (f64, usize) {
    let probs = model.forward(state, coords, time).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for (idx, _) in pairs(state.node_count()).enumerate() {
        if state.classes()[idx] == 0 {
            total += probs[(idx, 0)];
            count += 1;
        }
    }
    (total / count as f64, count)
}

fn radius_stats(coords: &Array2<f64>) -> (f64, f64) {
    let n = coords.nrows();
    let mut center = [0.0; 3];
    for r in coords.rows() {
        for d in 0..3 {
            center[d] += r[d] / n as f64;
        }
    }
    let radii: Vec<f64> = coords
        .rows()
        .into_iter()
        .map(|r| {
            ((r[0] - center[0]).powi(2) + (r[1] - center[1]).powi(2) + (r[2] - center[2]).powi(2))
                .sqrt()
        })
        .collect();
    let mean = radii.iter().sum::<f64>() / n as f64;
    let max = radii.iter().cloned().fold(0.0, f64::max);
    (mean, max)
}

fn close_pairs(coords: &Array2<f64>, r: f64) -> usize {
    pairs(coords.nrows())
        .filter(|&(i, j)| {
            let mut d2 = 0.0;
            for c in 0..3 {
                let d = coords[(i, c)] - coords[(j, c)];
                d2 += d * d;
            }
            d2.sqrt() < r
        })
        .count()
}

fn main() {
    let graphs: Vec<_> = (0..300)
        .map(|i| {
            let mut rng = substream(42, "calib.trees", i as u64);
            let n = rng.random_range(40..=120);
            gen_airway_tree(n, &mut rng)
        })
        .collect();
    let data = Corpus { graphs, labels: Some((1..=4).map(|k| format!("L{k}")).collect()) };

    let settings = TrainSettings {
        steps: 120,
        hidden: 32,
        blocks: 2,
        lr: 1e-3,
        batch_size: 16,
        coord_epochs: 120,
        edge_epochs: 40,
        seed: 1,
        ..Default::default()
    };
    let outcome = train(&data, &settings, None).unwrap();
    let ckpt = outcome.checkpoint;
    println!(
        "edge loss {:.4} -> {:.4}",
        outcome.edge_curve.first().unwrap(),
        outcome.edge_curve.last().unwrap()
    );

    let sched = ckpt.schedule().unwrap();
    let tm = TransitionModel::absorbing(5).unwrap();

    let g = &data.graphs[0];
    let coords_real = ckpt.normalization.normalize_coords(g);
    let e0 = EdgeState::from_graph(g);
    println!(
        "real cloud: n={}, radius mean/max {:?}, close pairs(<0.25) {} (edges {})",
        g.node_count(),
        radius_stats(&coords_real),
        close_pairs(&coords_real, 0.25),
        g.edge_count()
    );

    // (a) forward-noised training-like inputs
    let mut rng = substream(5, "diag", 0);
    for t in [110usize, 90, 60, 30, 5] {
        let et = forward_noise_edges(&e0, t, &tm, &sched, &mut rng).unwrap();
        let (p0, cnt) = mean_p0_on_empty(&ckpt.edge, &et, &coords_real, t as f64 / 120.0);
        println!("(a) forward t={t}: mean p0 on {cnt} empty pairs = {p0:.4}");
    }

    // (b) chain on real coords
    let cfg = ProjectorConfig::new(
        Some(graphdiff::datagen::hierarchy_omega(4)),
        StructuralConstraint::Forest,
        4,
    );
    let mut rc = substream(6, "chain", 0);
    let mut rp = substream(6, "proj", 0);
    let mut printed = std::collections::BTreeSet::from([110usize, 90, 60, 30, 5]);
    let (_, log) = reverse_sample_with(
        &ckpt.edge,
        &coords_real,
        &tm,
        &sched,
        &cfg,
        &mut rc,
        &mut rp,
        |t, s| {
            if printed.remove(&t) {
                let (p0, _) = mean_p0_on_empty(&ckpt.edge, s, &coords_real, t as f64 / 120.0);
                println!("(b) chain(real coords) t={t}: edges {} mean p0 {p0:.4}", s.edge_count());
            }
        },
    )
    .unwrap();
    println!(
        "(b) candidates {} accepted {} rate {:.4}",
        log.candidates,
        log.accepted,
        log.intervention_rate()
    );

    // (c) chain on generated coords
    let mut rngc = substream(7, "coords", 0);
    let coords_gen = sample_coords(&ckpt.coord, g.node_count(), &sched, &mut rngc).unwrap();
    println!(
        "generated cloud: radius mean/max {:?}, close pairs(<0.25) {}",
        radius_stats(&coords_gen),
        close_pairs(&coords_gen, 0.25)
    );
    let mut rc = substream(8, "chain", 0);
    let mut rp = substream(8, "proj", 0);
    let mut printed = std::collections::BTreeSet::from([110usize, 90, 60, 30, 5]);
    let (_, log) = reverse_sample_with(
        &ckpt.edge,
        &coords_gen,
        &tm,
        &sched,
        &cfg,
        &mut rc,
        &mut rp,
        |t, s| {
            if printed.remove(&t) {
                let (p0, _) = mean_p0_on_empty(&ckpt.edge, s, &coords_gen, t as f64 / 120.0);
                println!("(c) chain(gen coords) t={t}: edges {} mean p0 {p0:.4}", s.edge_count());
            }
        },
    )
    .unwrap();
    println!(
        "(c) candidates {} accepted {} rate {:.4}",
        log.candidates,
        log.accepted,
        log.intervention_rate()
    );
}
