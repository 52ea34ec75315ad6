//! Language-aligned reward machines: a small DSL, a compiled machine with
//! per-state instruction embeddings, labeling functions, a MiniGrid-style
//! gridworld and RM-conditioned agents.

pub mod agent;
pub mod config;
pub mod embed;
pub mod fm_gen;
pub mod fixtures;
pub mod gridworld;
pub mod labeling;
pub mod machine;
pub mod par;
pub mod rm_dsl;
