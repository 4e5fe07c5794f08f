pub mod cli;
pub mod contrast;
pub mod gradsuite;
pub mod graphs;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod pretrain;
pub mod scope;
pub mod tensor;
