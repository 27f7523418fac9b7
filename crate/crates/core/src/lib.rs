//! Chain-of-Programming orchestration engine: a five-stage prompt chain
//! (requirements, design, code, debugging, annotation) around a shared
//! information pool, with knowledge-base retrieval and an evaluation harness.

pub mod annotation;
pub mod clock;
pub mod config;
pub mod debug;
pub mod design;
pub mod engine;
pub mod evaluation;
pub mod fixtures;
pub mod implementation;
pub mod kb;
pub mod llm;
pub mod pool;
pub mod requirements;
pub mod session;
pub mod templates;
