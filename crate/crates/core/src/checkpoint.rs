//! Self-describing model checkpoints and the two-stage pipeline built
//! on top of them: corpus training, constrained generation, and graph
//! completion.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coord::{sample_coords, Normalization};
use crate::datagen::Corpus;
use crate::edge::{EdgeState, NoisingKind, TransitionModel};
use crate::error::{Error, Result};
use crate::graph::{OmegaMatrix, SpatialGraph};
use crate::io::{read_json, write_json_atomic};
use crate::nn::{fit_coords, fit_edges, CoordDenoiser, EdgeDenoiser, TrainConfig};
use crate::projector::{
    link_predict, reverse_sample, InterventionLog, ProjectorConfig, StructuralConstraint,
};
use crate::rng::substream;
use crate::schedule::{DiffusionSchedule, ScheduleKind, StageTag};

pub const CHECKPOINT_FORMAT: &str = "graphdiff-model-v1";

/// Everything needed to sample: both denoisers, the diffusion
/// configuration, the label alphabet, normalization constants, and the
/// empirical node-count distribution of the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub schedule_kind: ScheduleKind,
    pub steps: usize,
    pub noising: NoisingKind,
    pub labels: Vec<String>,
    pub normalization: Normalization,
    pub node_counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<Vec<f64>>,
    pub coord: CoordDenoiser,
    pub edge: EdgeDenoiser,
}

impl Checkpoint {
    /// Total edge classes, the no-edge class included.
    pub fn class_count(&self) -> usize {
        self.edge.classes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = read_json(path)?;
        ckpt.validate().map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ckpt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format tag '{}'", self.format)));
        }
        if self.labels.len() + 1 != self.edge.classes {
            return Err(Error::Checkpoint(format!(
                "{} labels but {} edge classes",
                self.labels.len(),
                self.edge.classes
            )));
        }
        if self.steps < 1 {
            return Err(Error::Checkpoint("schedule has zero steps".into()));
        }
        if !self.coord.params.all_finite() || !self.edge.params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        if self.node_counts.is_empty() {
            return Err(Error::Checkpoint("empty node-count distribution".into()));
        }
        self.schedule()?;
        self.transition_model()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        Ok(DiffusionSchedule::of_kind(self.schedule_kind, self.steps)?.with_stage(StageTag::Edge))
    }

    pub fn transition_model(&self) -> Result<TransitionModel> {
        match self.noising {
            NoisingKind::Absorbing => TransitionModel::absorbing(self.class_count()),
            NoisingKind::Uniform => TransitionModel::uniform(self.class_count()),
            NoisingKind::Marginal => {
                let m = self.marginal.clone().ok_or_else(|| {
                    Error::Checkpoint("marginal noising without stored frequencies".into())
                })?;
                TransitionModel::marginal(m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Both,
    Coords,
    Edges,
}

impl std::str::FromStr for TrainStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(TrainStage::Both),
            "coords" => Ok(TrainStage::Coords),
            "edges" => Ok(TrainStage::Edges),
            other => Err(Error::InvalidConfig(format!(
                "unknown training stage '{other}' (expected both, coords or edges)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub noising: NoisingKind,
    pub hidden: usize,
    pub blocks: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub coord_epochs: usize,
    pub edge_epochs: usize,
    pub seed: u64,
    pub stage: TrainStage,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            schedule: ScheduleKind::Linear,
            steps: 500,
            noising: NoisingKind::Absorbing,
            hidden: 64,
            blocks: 3,
            lr: 3e-4,
            weight_decay: 0.0,
            batch_size: 8,
            coord_epochs: 200,
            edge_epochs: 200,
            seed: 0,
            stage: TrainStage::Both,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub coord_curve: Vec<f64>,
    pub edge_curve: Vec<f64>,
}

/// Trains one or both stages on a corpus and assembles a checkpoint.
/// With `init`, the untouched stage keeps the initial model's weights.
pub fn train(
    corpus: &Corpus,
    settings: &TrainSettings,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    let graphs = &corpus.graphs;
    if graphs.is_empty() {
        return Err(Error::InvalidConfig("training corpus is empty".into()));
    }
    let max_label = graphs
        .iter()
        .flat_map(|g| g.edges().iter().map(|e| e.label))
        .max()
        .unwrap_or(0);
    let labels: Vec<String> = match &corpus.labels {
        Some(l) => {
            if max_label > l.len() {
                return Err(Error::LabelOutOfRange { label: max_label, max: l.len() });
            }
            l.clone()
        }
        None => (1..=max_label.max(1)).map(|k| format!("L{k}")).collect(),
    };
    let classes = labels.len() + 1;

    let normalization = Normalization::fit(graphs)?;
    let node_counts: Vec<usize> = graphs.iter().map(|g| g.node_count()).collect();

    let coord_data: Vec<_> = graphs.iter().map(|g| normalization.normalize_coords(g)).collect();
    let edge_data: Vec<_> = graphs
        .iter()
        .zip(&coord_data)
        .map(|(g, c)| (EdgeState::from_graph(g), c.clone()))
        .collect();
    let edge_states: Vec<EdgeState> = edge_data.iter().map(|(s, _)| s.clone()).collect();
    let tm = TransitionModel::of_kind(settings.noising, classes, &edge_states)?;

    let mut coord_model = match init {
        Some(ckpt) => ckpt.coord.clone(),
        None => CoordDenoiser::init(settings.hidden, settings.seed),
    };
    let mut edge_model = match init {
        Some(ckpt) => {
            if ckpt.edge.classes != classes {
                return Err(Error::InvalidConfig(format!(
                    "initial checkpoint has {} classes but the corpus needs {classes}",
                    ckpt.edge.classes
                )));
            }
            ckpt.edge.clone()
        }
        None => EdgeDenoiser::init(settings.hidden, settings.blocks, classes, settings.seed),
    };

    let sched_coord =
        DiffusionSchedule::of_kind(settings.schedule, settings.steps)?.with_stage(StageTag::Coordinate);
    let sched_edge =
        DiffusionSchedule::of_kind(settings.schedule, settings.steps)?.with_stage(StageTag::Edge);

    let mut coord_curve = Vec::new();
    let mut edge_curve = Vec::new();
    if matches!(settings.stage, TrainStage::Both | TrainStage::Coords) {
        let cfg = TrainConfig {
            lr: settings.lr,
            weight_decay: settings.weight_decay,
            epochs: settings.coord_epochs,
            batch_size: settings.batch_size,
            seed: settings.seed,
        };
        coord_curve = fit_coords(&mut coord_model, &coord_data, &sched_coord, &cfg)?;
    }
    if matches!(settings.stage, TrainStage::Both | TrainStage::Edges) {
        let cfg = TrainConfig {
            lr: settings.lr,
            weight_decay: settings.weight_decay,
            epochs: settings.edge_epochs,
            batch_size: settings.batch_size,
            seed: settings.seed,
        };
        edge_curve = fit_edges(&mut edge_model, &edge_data, &tm, &sched_edge, &cfg)?;
    }

    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        schedule_kind: settings.schedule,
        steps: settings.steps,
        noising: settings.noising,
        labels,
        normalization,
        node_counts,
        marginal: match settings.noising {
            NoisingKind::Marginal => Some(tm.target().to_vec()),
            _ => None,
        },
        coord: coord_model,
        edge: edge_model,
    };
    checkpoint.validate()?;
    Ok(TrainOutcome { checkpoint, coord_curve, edge_curve })
}

#[derive(Debug, Clone)]
pub struct GenerateSettings {
    pub count: usize,
    pub seed: u64,
    pub omega: Option<OmegaMatrix>,
    pub structural: StructuralConstraint,
    pub k: usize,
    /// Sample with a different noising kernel than the checkpoint was
    /// trained with (ablation support).
    pub noising_override: Option<NoisingKind>,
}

impl GenerateSettings {
    pub fn new(count: usize, seed: u64) -> Self {
        GenerateSettings {
            count,
            seed,
            omega: None,
            structural: StructuralConstraint::None,
            k: 4,
            noising_override: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub graph: SpatialGraph,
    pub log: InterventionLog,
}

/// Samples `count` graphs through both stages. Chains fan out in
/// parallel; every chain draws from named substreams of the master
/// seed, so outputs are reproducible regardless of thread scheduling.
pub fn generate(ckpt: &Checkpoint, settings: &GenerateSettings) -> Result<Vec<GeneratedSample>> {
    let sched = ckpt.schedule()?;
    let tm = match settings.noising_override {
        None => ckpt.transition_model()?,
        Some(NoisingKind::Absorbing) => TransitionModel::absorbing(ckpt.class_count())?,
        Some(NoisingKind::Uniform) => TransitionModel::uniform(ckpt.class_count())?,
        Some(NoisingKind::Marginal) => {
            let m = ckpt.marginal.clone().ok_or_else(|| {
                Error::InvalidConfig("checkpoint stores no marginal frequencies".into())
            })?;
            TransitionModel::marginal(m)?
        }
    };
    if let Some(omega) = &settings.omega {
        if omega.size() + 1 != ckpt.class_count() {
            return Err(Error::InvalidConfig(format!(
                "omega covers {} labels but the model has {}",
                omega.size(),
                ckpt.class_count() - 1
            )));
        }
    }
    let cfg =
        ProjectorConfig::new(settings.omega.clone(), settings.structural, settings.k);

    (0..settings.count)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let mut rng_nodes = substream(settings.seed, "nodes", i);
            let n = ckpt.node_counts[rng_nodes.random_range(0..ckpt.node_counts.len())];

            let mut rng_coords = substream(settings.seed, "coords", i);
            let coords = sample_coords(&ckpt.coord, n, &sched, &mut rng_coords)?;

            let mut rng_edges = substream(settings.seed, "edges", i);
            let mut rng_proj = substream(settings.seed, "projector", i);
            let (state, log) =
                reverse_sample(&ckpt.edge, &coords, &tm, &sched, &cfg, &mut rng_edges, &mut rng_proj)?;

            let graph = state.to_graph(ckpt.normalization.denormalize_array(&coords))?;
            Ok(GeneratedSample { graph, log })
        })
        .collect()
}

/// Completes a partial graph with a truncated reverse chain. The output
/// keeps the input coordinates verbatim and its edge set is a superset
/// of the input's.
pub fn link_predict_graph(
    ckpt: &Checkpoint,
    input: &SpatialGraph,
    steps: usize,
    omega: Option<OmegaMatrix>,
    structural: StructuralConstraint,
    k: usize,
    seed: u64,
) -> Result<(SpatialGraph, InterventionLog)> {
    if ckpt.noising != NoisingKind::Absorbing {
        return Err(Error::InvalidConfig(
            "link prediction requires a checkpoint trained with absorbing noising".into(),
        ));
    }
    if let Some(bad) = input.edges().iter().find(|e| e.label >= ckpt.class_count()) {
        return Err(Error::LabelOutOfRange {
            label: bad.label,
            max: ckpt.class_count() - 1,
        });
    }
    let sched = ckpt.schedule()?;
    let tm = ckpt.transition_model()?;
    let cfg = ProjectorConfig::new(omega, structural, k);
    let coords_model = ckpt.normalization.normalize_coords(input);
    let state = EdgeState::from_graph(input);

    let mut rng_edges = substream(seed, "edges", 0);
    let mut rng_proj = substream(seed, "projector", 0);
    let (out, log) = link_predict(
        &ckpt.edge,
        &state,
        &coords_model,
        &tm,
        &sched,
        &cfg,
        steps,
        &mut rng_edges,
        &mut rng_proj,
    )?;
    Ok((out.to_graph(input.coords().to_vec())?, log))
}
