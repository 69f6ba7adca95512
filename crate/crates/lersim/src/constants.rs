//! Physical constants in the unit system used throughout the crate:
//! energies as frequencies (GHz), fields in tesla, geometry in micrometers.

use serde::{Deserialize, Serialize};

/// Bohr magneton over Planck constant, GHz per tesla.
pub const MU_B_OVER_H: f64 = 13.996245;

/// Nuclear magneton over Planck constant, GHz per tesla.
pub const MU_N_OVER_H: f64 = 7.6225932e-3;

/// Boltzmann constant over Planck constant, GHz per kelvin.
pub const K_B_OVER_H: f64 = 20.836619;

/// Planck constant, J·s.
pub const H_PLANCK: f64 = 6.62607015e-34;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054571817e-34;

/// mu_0 / (4 pi) expressed in T·µm/A, so that Biot–Savart sums taken with
/// current elements in A·µm and distances in µm come out in tesla.
pub const MU0_OVER_4PI_UM: f64 = 0.1;

/// CODATA constant set used by the spin and input–output modules.
///
/// A value object rather than bare consts so that configs can echo the set
/// they were computed with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Bohr magneton / h, GHz/T.
    pub mu_b_over_h: f64,
    /// Nuclear magneton / h, GHz/T.
    pub mu_n_over_h: f64,
    /// Planck constant, J·s.
    pub h: f64,
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Boltzmann constant / h, GHz/K.
    pub k_b_over_h: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mu_b_over_h: MU_B_OVER_H,
            mu_n_over_h: MU_N_OVER_H,
            h: H_PLANCK,
            hbar: HBAR,
            k_b_over_h: K_B_OVER_H,
        }
    }
}
