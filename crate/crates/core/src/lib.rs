pub mod datamodel;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod learner;
pub mod pipeline;
pub mod selector;
pub mod synth;
