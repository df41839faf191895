//! Extractive summarization for long documents.

pub mod autodiff;
pub mod extraction;
pub mod corpus;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod synthetic;
pub mod training;
