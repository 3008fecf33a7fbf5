pub mod cli;
pub mod closed;
pub mod conic;
pub mod error;
pub mod fixture;
pub mod generate;
pub mod matrix;
pub mod model;
pub mod oracle;
pub mod polish;
pub mod relay;
pub mod solver;
