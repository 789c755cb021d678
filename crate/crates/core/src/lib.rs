pub mod delay;
pub mod ec_model;
pub mod elm;
pub mod metrics;
pub mod mic;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod select;
pub mod timeseries;
