//! Recurrent interval regressor: a dense-tanh stack, one LSTM layer and a
//! linear read-out, trained with truncated BPTT and Adam.

mod adam;
pub mod gradcheck;
mod linalg;
mod net;
mod scaling;
mod train;
pub mod weights;

pub use adam::Adam;
pub use net::{Architecture, DenseLayer, LstmLayer, LstmState, RecurrentNet};
pub use scaling::MinMaxScaler;
pub use train::{corpus_loss, train, Sequence, TrainConfig, TrainReport};
pub use weights::{NamedModel, WeightFile};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("non-finite activation; weights are corrupt")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient buffer has a different architecture")]
    ArchitectureMismatch,
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
