//! Moving box averages for measure-preserving torus actions.
//!
//! The crate covers both sides of the cone-condition dichotomy for averages
//! over moving boxes under `Z^d` rotations and `R^d` linear flows:
//!
//! * [`cone`]: box families, cone cross-sections and an empirical verdict;
//! * [`systems`]: exact torus rotations and suspension flows, torus sets and
//!   observables;
//! * [`averaging`]: box averages, maximal averages, summed-area batch
//!   evaluation, the composition defect and convergence experiments;
//! * [`towers`]: explicit Rokhlin towers with exact certificates;
//! * [`sweepout`]: the counterexample sets `H_p`, `F_p` and the ratio check;
//! * [`submanifold`]: flat-piece averages and the genericity-failure
//!   experiment;
//! * [`cli`]: configuration and report emission for the `boxavg` binary.

pub mod averaging;
pub mod cli;
pub mod cone;
pub mod exact;
pub mod report;
pub mod slicing;
pub mod submanifold;
pub mod sweepout;
pub mod systems;
pub mod towers;

pub use cone::{BoxEntry, BoxFamily, Mode, Rational};
pub use exact::ExactScalar;
