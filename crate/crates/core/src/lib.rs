//! Partially observable multi-room grid worlds for probing spatial belief.
//!
//! The crate is `no_std` with `alloc`: scene generation, the action and
//! observation loop, constraint-propagation belief tracking, the scripted
//! explorers, task generation and grading, and the probing metrics are all
//! pure computations over value types. IO, transport and persistence live in
//! the `gridmind` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod belief;
pub mod env;
pub mod falsebelief;
pub mod geom;
pub mod lexicon;
pub mod probe;
pub mod proxies;
pub mod scenegen;
pub mod spatial;
pub mod tasks;

pub use geom::{Cardinal, Cell, Frame, Pose, Rect};
pub use scenegen::{generate_scene, validate_scene, Scene, SceneConfig, SceneError};
