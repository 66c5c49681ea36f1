//! Numerical laboratory for condensing zero-range processes on finite site
//! graphs: exact stationary and potential-theoretic quantities, level-two
//! rate functions across time scales, recovery sequences and Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gamma;
pub mod graph;
pub mod linalg;
pub mod measure;
pub mod metastability;
pub mod rate;
pub mod simulate;
pub mod real;
pub mod zrp;

pub use error::{Error, Result};
pub use real::Real;

pub type SiteGraph64 = graph::SiteGraph<f64>;
pub type SiteGraph32 = graph::SiteGraph<f32>;
pub type ZrpModel64 = zrp::ZrpModel<f64>;
pub type ZrpModel32 = zrp::ZrpModel<f32>;
pub type ConfigSpace64 = zrp::ConfigSpace<f64>;
pub type ConfigSpace32 = zrp::ConfigSpace<f32>;
pub type ModelFamily64 = zrp::ModelFamily<f64>;
pub type DiscreteMeasure64 = measure::DiscreteMeasure<f64>;
pub type SimplexPoint64 = measure::SimplexPoint<f64>;
pub type SimplexMeasure64 = measure::SimplexMeasure<f64>;
pub type RecoverySequence64 = gamma::RecoverySequence<f64>;
pub type GammaReport64 = gamma::GammaReport<f64>;
