//! Predicting the time bin of a user's next smart-home action.

pub mod diffcore;
pub mod datamodel;
pub mod syngen;
pub mod table;
pub mod embed;
pub mod nets;
pub mod experiment;
