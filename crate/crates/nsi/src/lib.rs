//! Counterfactual estimation from panel data under network interference.
//!
//! Given an interference graph, a treatment panel and observed outcomes,
//! the estimator finds donor units whose neighborhood treatment histories
//! match the ego unit's, then predicts the ego's outcomes under a target
//! counterfactual via principal component regression on the donor panel.
//! The crate also ships the donor-matching rule, pre- and post-data
//! validity tests, a coloring-based experiment design with guaranteed test
//! passage, and a seeded simulation harness.
//!
//! Numeric code is generic over [`Scalar`] (implemented for `f32`/`f64`);
//! the `*32`/`*64` aliases at the crate root pick a concrete precision.

pub mod bench;
pub mod design;
pub mod donors;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod io;
pub mod panel;
pub mod scalar;
pub mod validity;

pub use error::{NsiError, Result};
pub use scalar::Scalar;

pub use donors::{find_donors, find_si_donors, DonorMode, DonorSet};
pub use estimator::{estimate, select_kappa, CiSpec, KappaChoice, KappaPolicy};
pub use graph::{make_regular_graph, Coloring, NetworkGraph, RegularGraphKind};
pub use panel::{simulate, true_estimand, SimConfig, TreatmentPanel};
pub use validity::{colrank_diagnostic, subspace_inclusion_test, training_treatment_test};

pub type Panel32 = panel::ObservationPanel<f32>;
pub type Panel64 = panel::ObservationPanel<f64>;
pub type SimConfig32 = panel::SimConfig<f32>;
pub type SimConfig64 = panel::SimConfig<f64>;
pub type World32 = panel::LatentFactorWorld<f32>;
pub type World64 = panel::LatentFactorWorld<f64>;
pub type Report32 = estimator::EstimateReport<f32>;
pub type Report64 = estimator::EstimateReport<f64>;
