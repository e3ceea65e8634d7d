//! Dense matrices, probability transforms and seeded randomness.
//!
//! All reductions sum left to right in index order so that results are
//! bit-reproducible for a given seed.

mod matrix;
mod prob;
mod rng;

pub use matrix::{argmax, argmin, dot, norm, squared_distance, Matrix};
pub(crate) use prob::softmax_in_place;
pub use prob::{
    cosine_distance, entropy, l2_normalize, log_sum_exp, normalize_rows, softmax, softmax_rows, xlogx, LOG_EPS,
};
pub use rng::Rng;
