pub mod ui;
pub mod sim;
pub mod mapping;
pub mod encoder;
pub mod dsl;
pub mod bundled;
pub mod text;
pub mod codegen;
pub mod fusion;
pub mod eval;
pub mod config;
