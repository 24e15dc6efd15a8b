//! Core domain types shared by all solvers: grids, ensembles, fields,
//! initial data and configuration.

pub mod config;
pub mod datum;
pub mod ensemble;
pub mod field;
pub mod grids;
pub mod vec3;
