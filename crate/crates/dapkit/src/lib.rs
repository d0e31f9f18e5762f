pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod objectives;
pub mod numcore;
