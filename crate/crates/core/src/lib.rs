//! Finite-element homogenization of steady Darcy flow in periodic fissured
//! porous media whose blocks are in imperfect contact with the fissures.
//!
//! The crate computes the effective model (cell problems, homogenized
//! tensor, extra source and boundary lift), solves it on the macroscopic
//! domain, and checks it against ε-resolved micro solutions.

pub mod cell;
pub mod config;
pub mod error;
pub mod expr;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod macroscale;
pub mod mesh;
pub mod micro;
pub mod run;
pub mod study;

pub use error::{Error, Result};
