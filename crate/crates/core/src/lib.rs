#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod linalg;
pub mod operator;
pub mod rng;
pub mod slh;
pub mod spectral;
pub mod superop;
pub mod trajectory;
