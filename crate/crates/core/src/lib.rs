//! Streaming PARAFAC2 decomposition of irregular tensors.
//!
//! A dataset is a set of slices `X_k` sharing a column space but with their
//! own row counts. [`parafac2_als`] fits a static model; [`StreamState`]
//! absorbs new rows and new slices batch by batch with exponential
//! forgetting, and [`anomaly`] turns the per-batch reconstruction errors into
//! flags.

pub mod anomaly;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod linalg;
pub mod normalize;
pub mod parafac2;
pub mod replay;
pub mod stream;
pub mod synth;
pub mod tensor;

pub use anomaly::{detect, AnomalyFlag, ErrorSeries, Level, DEFAULT_WINDOW};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use normalize::{ColumnStats, StatsPolicy};
pub use parafac2::{parafac2_als, AlsFit, AlsOptions, FactorSet, RowBlocks};
pub use replay::replay;
pub use stream::checkpoint::{Checkpoint, Encoding, FORMAT_VERSION};
pub use stream::{
    dash_update, prepare_update, PreparedUpdate, StreamState, UpdateOptions, UpdateOutcome,
    DEFAULT_LAMBDA,
};
pub use synth::{synthesize, Injection, SynthParams};
pub use tensor::{IrregularTensor, SliceMatrix, UpdateBatch};
