//! Batch construction, losses and the optimization loop.

pub mod batch;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use batch::*;
pub use gradcheck::*;
pub use loss::*;
pub use optim::*;
pub use trainer::*;
