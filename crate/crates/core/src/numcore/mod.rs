//! Dense numerics shared by every model: matrices, affine layers,
//! activations, dropout, softmax, RMSProp and a gradient checker.

pub mod activation;
pub mod dropout;
pub mod gradcheck;
pub mod layer;
pub mod matrix;
pub mod rmsprop;
pub mod rng;
pub mod softmax;

pub use activation::Activation;
pub use dropout::{apply_site, dropout_apply, DropoutMask, DropoutSite, MaskSet, Mode};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, GradCheckable};
pub use layer::LinearLayer;
pub use matrix::{dot, l2_norm, Matrix};
pub use rmsprop::{rmsprop_step, RmsPropConfig};
pub use softmax::{log_softmax_cols, log_softmax_rows, log_sum_exp, softmax_cols, softmax_rows};
