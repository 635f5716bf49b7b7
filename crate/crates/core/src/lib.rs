pub mod cli;
pub mod config;
pub mod consensus;
pub mod engine;
pub mod identity;
pub mod ledger;
pub mod node;
pub mod overlay;
pub mod rng;
pub mod simnet;
