//! Energy ISP operations: lossy OPF dispatch with nodal prices, demand
//! curves, exchange limits for the protocol stack, decoupling checks,
//! service fees and surplus accounting.

pub mod decoupling;
pub mod demand;
pub mod fees;
pub mod limits;
pub mod model;
pub mod opf;
pub mod qp;
pub mod surplus;

use thiserror::Error;

pub use decoupling::{verify_decoupling, DecouplingReport, TradeEffect};
pub use demand::DemandCurve;
pub use fees::{compute_service_fee, FeeAllocation, Participant};
pub use limits::{compute_limits, Attachment, HeadroomPolicy, LimitPlan, ProRata};
pub use model::GridModel;
pub use opf::{solve_opf, solve_opf_with, OpfOptions, OpfSolution};
pub use surplus::{account_surplus, ParticipantFlow, ResourceClass, SurplusReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid config: {0}")]
    Config(String),
    #[error("period {period}: demand cannot be served within limits")]
    Infeasible { period: usize },
    #[error("period {period}: no convergence after {iterations} iterations")]
    NotConverged { period: usize, iterations: usize },
    #[error("elasticity must be negative, got {0}")]
    BadElasticity(String),
    #[error("period {0} is outside the day")]
    BadPeriod(usize),
    #[error("QP solver: {0}")]
    Solver(#[from] qp::QpError),
    #[error("surplus partition {partition} does not add up to welfare {welfare}")]
    AccountingMismatch { welfare: f64, partition: f64 },
}
