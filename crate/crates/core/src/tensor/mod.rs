//! Dense linear algebra with reverse-mode gradients.

mod adam;
mod matrix;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamState, ParamSet, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use matrix::{relu, sigmoid, softplus, DenseMatrix};
pub use sparse::CsrMatrix;
pub use tape::{bin_index, GradientStore, ParamId, Tape, Var, PROB_CLIP};

use rand::Rng;

/// Xavier/Glorot-uniform initialization for a `fan_in x fan_out` weight.
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    DenseMatrix::new(fan_in, fan_out, data).expect("length matches shape")
}
