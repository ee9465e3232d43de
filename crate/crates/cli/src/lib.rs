//! IO companion to `pjrm-core`: run configuration, the PJRM grid container,
//! PGM renders, CSV outputs, and the subcommand implementations behind the
//! `pjrm` binary.

pub mod commands;
pub mod config;
pub mod container;
pub mod csvout;
pub mod pgm;
