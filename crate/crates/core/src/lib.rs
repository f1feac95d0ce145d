//! Multi-graph recurrent network (MGRN) for news-driven stock movement
//! prediction: relation graphs, per-graph GCNs fused by attention, an LSTM
//! classifier, and percentile-accuracy / long-short evaluation.

pub mod eval;
pub mod exec;
pub mod graph;
pub mod model;
pub mod news;
pub mod numerics;
pub mod pipeline;
pub mod synth;
