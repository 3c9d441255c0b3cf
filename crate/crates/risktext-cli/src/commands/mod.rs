pub mod assess;
pub mod eval;
pub mod preprocess;
pub mod pretrain;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;
