pub mod ratemodel;
pub mod corpus;
pub mod relfreq;
pub mod lm;
pub mod eval;
pub mod synth;
