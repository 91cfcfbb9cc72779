pub mod certify;
pub mod config;
pub mod contour;
pub mod field;
pub mod geometry;
pub mod iise;
pub mod linprog;
pub mod lyapunov;
pub mod matrix;
pub mod relu;
pub mod report;
pub mod system;
mod vecops;
