//! Nash equilibrium solvers for games whose losses are convex in each player's own
//! coordinate, including nonsmooth losses handled through Steklov averaging.

pub mod game;
pub mod steklov;
pub mod diagnostics;
pub mod solvers;
pub mod cli;
