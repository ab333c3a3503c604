//! Knowledge-grounded tree search agent for automated data science.

pub mod action;
pub mod coder;
pub mod knowledge;
pub mod llm;
pub mod orchestrator;
pub mod policy;
pub mod prompts;
pub mod sandbox;
pub mod text;
pub mod tree;
