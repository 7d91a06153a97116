pub mod a3c;
pub mod cli;
pub mod engine;
pub mod eval;
pub mod goalmap;
pub mod mts;
pub mod nn;
pub mod observation;
pub mod scenario;
pub mod server;
