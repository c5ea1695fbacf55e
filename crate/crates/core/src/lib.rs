//! Instance edges decoded from diffusion self-attention.
//!
//! The pipeline reads per-timestep attention stacks ([`tensor_io`]), fuses
//! mixed-resolution blocks ([`aggregation`]), picks the timestep where
//! instance structure appears ([`iep`]), scores boundaries from opposite-pixel
//! divergences ([`abdiv`]) and refines masks against those edges ([`bgp`]).
//! [`synthetic_oracle`] generates attention with known ground truth and
//! [`metrics`] scores edges, instances and panoptic outputs.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abdiv;
pub mod aggregation;
pub mod bgp;
pub mod iep;
pub mod metrics;
pub mod synthetic_oracle;
pub mod tensor_io;
