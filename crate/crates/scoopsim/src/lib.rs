//! Deterministic planar simulator and control library for bimanual food
//! scooping: a pusher herds food across a plate into a spoon held by a second
//! arm, the spoon levels out to capture it, and a short transfer motion tests
//! whether the catch survives.
//!
//! The crate is organized around seven modules:
//!
//! - [`worldmodel`] — food class catalog, scene state, seeded scenario spawning
//! - [`physics`] — fixed-step contact dynamics, squeeze forces, breakage,
//!   residue shedding, mass accounting
//! - [`primitive`] — the three-phase push/scoop/transfer motion, its per-tick
//!   command generator, and rollout execution with per-tick records
//! - [`perception`] — overhead and spoon-mounted side views, segmentation,
//!   pooled feature vectors
//! - [`learning`] — dataset generation, augmentation, and from-scratch binary
//!   classifiers (linear and one-hidden-layer) trained with AdamW on BCE
//! - [`policy`] — risk gating, the closed-loop stop servo, open-loop and
//!   single-arm baselines, and a ground-truth oracle servo
//! - [`bench`] — outcome taxonomy, experiment runner, results tables, traces
//!
//! Everything is deterministic: fixed integration step, named seeded RNG
//! streams, ordered contact solving, and sorted aggregation over parallel
//! trials. Two runs with the same inputs produce byte-identical outputs.
//!
//! The `examples/` directory is the guided tour; each example exercises one
//! capability end to end (`cargo run --release --example alpha_sweep`, etc.).
//! A thin `scoopsim` binary wraps the same library calls for scripted use.

pub mod bench;
pub mod geom;
pub mod learning;
pub mod perception;
pub mod physics;
pub mod policy;
pub mod primitive;
pub mod rng;
pub mod worldmodel;

pub use worldmodel::{FoodClassSpec, FoodItem, ScenarioConfig, ToolState, WorldState};
