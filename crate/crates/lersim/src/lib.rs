//! Simulation and fitting toolkit for spin ensembles coupled to superconducting
//! lumped-element resonators (LERs).
//!
//! The crate covers the full modeling chain for on-chip magnetic spectroscopy:
//!
//! * [`spin`] — effective electronuclear spin Hamiltonians: levels, transition
//!   matrix elements, thermal populations, resonance fields.
//! * [`field`] — Biot–Savart maps of the microwave magnetic field above a
//!   resonator, from a discretized 2D current distribution.
//! * [`iomodel`] — input–output theory: broadband line transmission,
//!   coupled resonator–spin |S21| maps, pulse dynamics, resonance extraction.
//! * [`coupling`] — collective spin–photon coupling rates integrated over a
//!   crystal volume against a field map; cooperativities.
//! * [`fit`] — damped least-squares fitting of 2D transmission maps.
//! * [`map`] — the `TransmissionMap` container and its CSV form, shared by the
//!   simulation and fitting layers.
//!
//! Heavy kernels (field maps, map columns, multi-start fits) run data-parallel
//! when the `parallel` feature (default) is enabled and fall back to sequential
//! loops otherwise. Results are bit-identical for any worker count: outputs are
//! partitioned disjointly and every reduction uses a fixed pairwise order.

pub mod constants;
pub mod coupling;
pub mod error;
pub mod exec;
pub mod field;
pub mod fit;
pub mod iomodel;
pub mod leastsq;
pub mod map;
pub mod spin;

pub use error::{Error, Result};
