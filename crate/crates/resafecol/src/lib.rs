//! Safety-enhanced collocation NMPC for autonomous driving.
//!
//! This crate implements trajectory optimization where every state and input
//! channel is a truncated Legendre series, and continuous-time inequality
//! constraints are enforced over the whole horizon through *regional convex
//! hulls*: per-subinterval Bernstein control values computed by a linear map
//! on the spline coefficients. Nonlinear constraints (ellipsoidal collision
//! barriers and their exponential-CBF conditions) are evaluated on the hull
//! entries and enlarged by a second-order margin handled as a penalized slack.
//!
//! The crate ships three transcriptions of the same continuous-time problem:
//!
//! - [`transcription::transcribe_resafecol`] — collocation defects plus
//!   regional-hull inequality rows (the `resafecol` method),
//! - [`transcription::transcribe_dms`] — direct multiple shooting with RK4
//!   integration and node-only constraints,
//! - [`transcription::transcribe_psc`] — the same spline parameterization as
//!   `resafecol` but with constraints at collocation nodes only.
//!
//! An SQP solver with an ADMM QP subproblem solver ([`solver`]), a
//! curvilinear single-track vehicle model ([`vehicle`]), a closed-loop
//! simulator with deliberate plant mismatch ([`sim`]), and a scenario/benchmark
//! harness ([`harness`]) complete the stack.
//!
//! Start with the runnable examples (`cargo run --example <name>`):
//!
//! | example | shows |
//! |---|---|
//! | `legendre_spline` | basis construction, LGL nodes/weights, spline evaluation |
//! | `regional_hulls` | hull matrices, range bounds, tightening with region count |
//! | `nonlinear_enclosure` | second-order safety envelopes for a barrier function |
//! | `double_integrator` | all three transcriptions vs. the analytic optimum |
//! | `internode_violation` | node-only constraints failing between nodes |
//! | `obstacle_avoidance` | closed-loop CBF collision avoidance |
//! | `stop_and_go` | intersection pedestrian handled by the CBF formulation |
//! | `region_sweep` | benchmark sensitivity to the number of hull regions |

pub mod basis;
pub mod envelope;
pub mod error;
pub mod harness;
pub mod ocp;
pub mod safety;
pub mod sim;
pub mod solver;
pub mod transcription;
pub mod vehicle;

pub use error::{Error, Result};
