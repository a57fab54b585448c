//! Trainable denoisers: a self-contained reverse-mode gradient engine,
//! the two network architectures, AdamW, and the training loops.

pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use model::{time_embedding, CoordDenoiser, EdgeDenoiser, TIME_EMBED_DIM};
pub use optim::{AdamW, AdamWConfig};
pub use params::{bind_params, grad, BoundParams, ParamSet};
pub use tape::{Gradients, Tape, TensorId};
pub use train::{edge_eval_loss, fit_coords, fit_edges, TrainConfig};
