pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod extraction;
pub mod label_model;
pub mod signals;
