pub mod cli;
pub mod dot;
pub mod format;
pub mod gen;
