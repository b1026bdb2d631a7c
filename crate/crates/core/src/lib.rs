//! Balanced multi-task RL optimization laboratory.
//!
//! Group-relative policy optimization trains against advantages z-scored
//! within sampled response groups. When several tasks of very different
//! difficulty share one policy, the easy tasks dominate the update
//! direction: their expected metric responds to parameter changes while
//! hard tasks sit on a plateau. This crate implements the machinery to
//! study and counter that imbalance on exactly solvable toy environments:
//!
//! - [`metrics`]: task metrics (accuracy, IoU, temporal IoU, span F1) and
//!   retention gates;
//! - [`reward`]: metric-to-reward mappings with derivatives, the format
//!   and repetition terms, and the composite reward;
//! - [`group_norm`]: advantage normalization with its exact Jacobian;
//! - [`objectives`]: the GRPO / GSPO / SAPO surrogate family, values and
//!   analytic gradients, with optional per-task coefficients and exact KL
//!   regularization;
//! - [`dca`]: the dynamic coefficient scheduler;
//! - [`dynamics`]: gradient-dynamics instrumentation (sensitivity
//!   profiles, rate decomposition, dominance analysis);
//! - [`sim`]: enumerable environments, the softmax policy, and the
//!   deterministic training loop;
//! - [`config`] / [`runner`] / [`verify`]: the experiment harness behind
//!   the command-line front end.
//!
//! Everything numerical is either closed-form or exactly enumerable, so
//! the verification suites can hold tight tolerances.

pub mod config;
pub mod dca;
pub mod dynamics;
pub mod group_norm;
pub mod metrics;
pub mod objectives;
pub mod reward;
pub mod runner;
pub mod sim;
pub mod verify;
