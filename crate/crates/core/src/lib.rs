pub mod assembly;
pub mod cli;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod la;
pub mod linsolve;
pub mod oracle;
pub mod solver;
pub mod specops;
