//! Evolutionary design-space exploration of the memory subsystem.
//!
//! Three layers are covered, each pairing a simulator with an evolutionary
//! search:
//!
//! * register file: a steady-state finite-difference thermal model
//!   ([`thermal`]) and an NSGA-II register placement search ([`regfile`]);
//! * caches: a trace-driven split I/D cache simulator with time and energy
//!   models ([`cache`]) and an NSGA-II configuration search ([`cacheopt`]);
//! * dynamic memory: a heap simulator replaying allocation traces through
//!   parameterized allocators ([`dmm`]) and grammatical-evolution synthesis of
//!   custom allocators ([`dmmopt`]).
//!
//! [`traces`] defines the shared input formats, [`evolve`] the search engines
//! and [`stats`] the paired significance tests used to compare results.

pub mod cache;
pub mod cacheopt;
pub mod dmm;
pub mod dmmopt;
pub mod evolve;
pub mod regfile;
pub mod stats;
pub mod thermal;
pub mod traces;
