//! Small dense numeric core: matrices, forward kernels, a reverse-mode tape,
//! SGD and a finite-difference gradient checker.

pub mod check;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use check::{finite_diff_check, relative_error, GradCheck};
pub use ops::{batchnorm_apply, cosine_sim, linear_apply, log_softmax, softmax, softmax_rows, BatchNorm, Mode};
pub use optim::sgd_step;
pub use tape::{Grads, Tape, Var};
pub use tensor::{argmax, Tensor2};
