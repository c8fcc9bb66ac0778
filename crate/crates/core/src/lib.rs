//! Closed-loop verification of a controller driven by an imperfect
//! classifier.
//!
//! The classifier is summarized by a confusion matrix; composing it with a
//! discrete controller and a fixed true environment yields a Markov chain on
//! which temporal-logic specifications are checked exactly.

pub mod chain;
pub mod confusion;
pub mod engine;
pub mod logic;
pub mod scenario;
pub mod io;
pub mod sweep;
