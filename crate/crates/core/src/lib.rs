//! Desk-scale multilingual language-modeling laboratory: corpora, tokenizers,
//! small language models, scaling-curve fits, typological similarity,
//! synthetic language families, statistics, and grid orchestration.

pub mod corpus;
pub mod tokenize;
pub mod model;
pub mod scaling;
pub mod stats;
pub mod lab;
pub mod synthlang;
pub mod typology;
