//! Effective electronuclear spin Hamiltonian of one paramagnetic species:
//! construction, diagonalization, transition matrix elements, thermal
//! populations, resonance fields, and parameter-strain sensitivities.
//!
//! The Hamiltonian, in frequency units (GHz, i.e. H/h), is
//!
//! ```text
//! H = mu_B [ g_e_perp (Sx Bx + Sy By) + g_e_par Sz Bz ]
//!   - mu_N g_I (I . B)
//!   + A_par Sz Iz + A_perp (Sx Ix + Sy Iy)
//!   + p Iz^2
//! ```
//!
//! with the static field B in tesla applied in the crystal frame whose z axis
//! is the C3 anisotropy axis. `A_par` is the axial hyperfine coefficient
//! (of `Sz Iz`), `A_perp` the transverse one.

mod levels;
mod operators;

pub use levels::{LevelSet, Transition};
pub use operators::{dimension, is_valid_spin, spin_operators};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};

/// Parameters of one isotope's effective spin Hamiltonian.
///
/// The JSON form uses the exact keys shown in the serde attributes; energies
/// are GHz throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotopeParams {
    pub label: String,
    /// Natural abundance as a fraction in [0, 1].
    pub abundance: f64,
    /// Effective electronic spin.
    #[serde(rename = "S")]
    pub s: f64,
    /// Nuclear spin.
    #[serde(rename = "I")]
    pub i: f64,
    pub g_e_perp: f64,
    pub g_e_par: f64,
    #[serde(rename = "g_I")]
    pub g_i: f64,
    /// Transverse hyperfine coefficient (of Sx Ix + Sy Iy), GHz.
    #[serde(rename = "A_perp_GHz")]
    pub a_perp_ghz: f64,
    /// Axial hyperfine coefficient (of Sz Iz), GHz.
    #[serde(rename = "A_par_GHz")]
    pub a_par_ghz: f64,
    /// Axial quadrupole coefficient (of Iz^2), GHz.
    #[serde(rename = "p_GHz")]
    pub p_ghz: f64,
}

impl IsotopeParams {
    /// Hilbert-space dimension (2S+1)(2I+1).
    pub fn dimension(&self) -> usize {
        dimension(self.s) * dimension(self.i)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_spin(self.s) || !is_valid_spin(self.i) {
            return Err(Error::InvalidConfig(format!(
                "spins must be non-negative half-integers, got S = {}, I = {}",
                self.s, self.i
            )));
        }
        if !(0.0..=1.0).contains(&self.abundance) {
            return Err(Error::InvalidConfig(format!(
                "abundance must lie in [0, 1], got {}",
                self.abundance
            )));
        }
        let fields = [
            self.g_e_perp,
            self.g_e_par,
            self.g_i,
            self.a_perp_ghz,
            self.a_par_ghz,
            self.p_ghz,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("isotope parameter"));
        }
        if self.i == 0.0
            && (self.g_i != 0.0
                || self.a_perp_ghz != 0.0
                || self.a_par_ghz != 0.0
                || self.p_ghz != 0.0)
        {
            return Err(Error::InvalidConfig(format!(
                "{}: nuclear terms must vanish when I = 0",
                self.label
            )));
        }
        Ok(())
    }
}

/// 171Yb: S = 1/2 coupled to I = 1/2.
pub fn yb171() -> IsotopeParams {
    IsotopeParams {
        label: "171Yb".into(),
        abundance: 0.14,
        s: 0.5,
        i: 0.5,
        g_e_perp: 2.935,
        g_e_par: 4.225,
        g_i: -0.02592,
        a_perp_ghz: 2.2221,
        a_par_ghz: 3.3729,
        p_ghz: 0.0,
    }
}

/// The zero-nuclear-spin Yb isotopes, lumped as one species.
pub fn yb_i0() -> IsotopeParams {
    IsotopeParams {
        label: "I0Yb".into(),
        abundance: 0.70,
        s: 0.5,
        i: 0.0,
        g_e_perp: 2.935,
        g_e_par: 4.225,
        g_i: 0.0,
        a_perp_ghz: 0.0,
        a_par_ghz: 0.0,
        p_ghz: 0.0,
    }
}

/// 173Yb: S = 1/2 coupled to I = 5/2, the 12-level qudit species.
pub fn yb173() -> IsotopeParams {
    IsotopeParams {
        label: "173Yb".into(),
        abundance: 0.16,
        s: 0.5,
        i: 2.5,
        g_e_perp: 2.935,
        g_e_par: 4.225,
        g_i: -0.02592,
        a_perp_ghz: -0.615,
        a_par_ghz: -0.897,
        p_ghz: -0.066,
    }
}

/// The three built-in species with natural abundances (sum = 1).
pub fn builtin_isotopes() -> Vec<IsotopeParams> {
    vec![yb171(), yb_i0(), yb173()]
}

/// Look up a built-in species by label (case-insensitive).
pub fn builtin_isotope(label: &str) -> Option<IsotopeParams> {
    builtin_isotopes()
        .into_iter()
        .find(|p| p.label.eq_ignore_ascii_case(label))
}

/// One isotope's spin system with cached product-space operators.
///
/// Immutable after construction; safe to share across workers.
#[derive(Debug, Clone)]
pub struct SpinSystem {
    params: IsotopeParams,
    constants: PhysicalConstants,
    dim: usize,
    /// Field-independent part: hyperfine + quadrupole, GHz.
    h_static: DMatrix<Complex64>,
    /// Zeeman generators dH/dB_k, GHz/T. These are also the drive operators
    /// V_k coupling the spins to a microwave field along k.
    zeeman: [DMatrix<Complex64>; 3],
}

impl SpinSystem {
    pub fn new(params: IsotopeParams) -> Result<Self> {
        Self::with_constants(params, PhysicalConstants::default())
    }

    pub fn with_constants(params: IsotopeParams, constants: PhysicalConstants) -> Result<Self> {
        params.validate()?;
        let ds = dimension(params.s);
        let di = dimension(params.i);
        let dim = ds * di;

        let (sx, sy, sz) = spin_operators(params.s);
        let (ix, iy, iz) = spin_operators(params.i);
        let id_s = DMatrix::<Complex64>::identity(ds, ds);
        let id_i = DMatrix::<Complex64>::identity(di, di);

        let kron = operators::kron;
        let sx_t = kron(&sx, &id_i);
        let sy_t = kron(&sy, &id_i);
        let sz_t = kron(&sz, &id_i);
        let ix_t = kron(&id_s, &ix);
        let iy_t = kron(&id_s, &iy);
        let iz_t = kron(&id_s, &iz);

        let re = |x: f64| Complex64::new(x, 0.0);
        let h_static = kron(&sz, &iz) * re(params.a_par_ghz)
            + (kron(&sx, &ix) + kron(&sy, &iy)) * re(params.a_perp_ghz)
            + kron(&id_s, &(&iz * &iz)) * re(params.p_ghz);

        let mu_b = constants.mu_b_over_h;
        let mu_n = constants.mu_n_over_h;
        let zeeman = [
            &sx_t * re(mu_b * params.g_e_perp) - &ix_t * re(mu_n * params.g_i),
            &sy_t * re(mu_b * params.g_e_perp) - &iy_t * re(mu_n * params.g_i),
            &sz_t * re(mu_b * params.g_e_par) - &iz_t * re(mu_n * params.g_i),
        ];

        Ok(Self {
            params,
            constants,
            dim,
            h_static,
            zeeman,
        })
    }

    pub fn params(&self) -> &IsotopeParams {
        &self.params
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// dH/dB_z, GHz/T; also the z drive operator.
    pub(crate) fn zeeman_z(&self) -> &DMatrix<Complex64> {
        &self.zeeman[2]
    }

    /// Build the Hamiltonian at static field `b` (tesla), in GHz.
    pub fn hamiltonian(&self, b: [f64; 3]) -> Result<DMatrix<Complex64>> {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("magnetic field"));
        }
        let mut h = self.h_static.clone();
        for k in 0..3 {
            if b[k] != 0.0 {
                h += &self.zeeman[k] * Complex64::new(b[k], 0.0);
            }
        }
        Ok(h)
    }

    /// Drive operator b_vec . V in GHz per tesla of `b_vec` magnitude
    /// (GHz if `b_vec` is itself a field in tesla).
    pub fn drive_operator(&self, b_vec: [f64; 3]) -> DMatrix<Complex64> {
        let mut v = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for k in 0..3 {
            if b_vec[k] != 0.0 {
                v += &self.zeeman[k] * Complex64::new(b_vec[k], 0.0);
            }
        }
        v
    }

    /// Rebuild the system with one Hamiltonian parameter scaled by `factor`.
    pub fn with_scaled_param(&self, param: StrainParam, factor: f64) -> Result<Self> {
        let mut p = self.params.clone();
        match param {
            StrainParam::APar => p.a_par_ghz *= factor,
            StrainParam::APerp => p.a_perp_ghz *= factor,
            StrainParam::P => p.p_ghz *= factor,
        }
        Self::with_constants(p, self.constants)
    }
}

/// Hamiltonian parameter subject to strain analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainParam {
    APar,
    APerp,
    P,
}

impl std::str::FromStr for StrainParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a_par" | "apar" => Ok(StrainParam::APar),
            "a_perp" | "aperp" => Ok(StrainParam::APerp),
            "p" => Ok(StrainParam::P),
            other => Err(Error::InvalidConfig(format!(
                "unknown strain parameter '{other}' (expected a_par, a_perp or p)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::MU_B_OVER_H;

    #[test]
    fn builtin_abundances_sum_to_one() {
        let total: f64 = builtin_isotopes().iter().map(|p| p.abundance).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn builtin_dimensions() {
        assert_eq!(yb171().dimension(), 4);
        assert_eq!(yb_i0().dimension(), 2);
        assert_eq!(yb173().dimension(), 12);
    }

    #[test]
    fn i0_zeeman_is_diagonal_with_expected_entries() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        let h = sys.hamiltonian([0.0, 0.0, 0.1]).unwrap();
        let expect = 0.5 * 4.225 * MU_B_OVER_H * 0.1;
        assert!((h[(0, 0)].re - expect).abs() < 1e-12);
        assert!((h[(1, 1)].re + expect).abs() < 1e-12);
        assert!(h[(0, 1)].norm() < 1e-15);
        assert!((expect - 2.9567).abs() < 1e-3);
    }

    #[test]
    fn yb173_zero_field_trace_is_35_p() {
        let sys = SpinSystem::new(yb173()).unwrap();
        let h = sys.hamiltonian([0.0; 3]).unwrap();
        let trace: Complex64 = h.trace();
        assert!((trace.re - 35.0 * (-0.066)).abs() < 1e-12);
        assert!(trace.im.abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_is_hermitian_for_random_fields() {
        for (n, sys) in builtin_isotopes().into_iter().enumerate() {
            let sys = SpinSystem::new(sys).unwrap();
            let b = [0.013 * (n as f64 + 1.0), -0.002, 0.08];
            let h = sys.hamiltonian(b).unwrap();
            let diff = (&h - h.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
            let scale = h.iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn nan_field_rejected() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        assert!(matches!(
            sys.hamiltonian([f64::NAN, 0.0, 0.0]),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn i0_with_nuclear_terms_rejected() {
        let mut p = yb_i0();
        p.g_i = -0.1;
        assert!(SpinSystem::new(p).is_err());
    }

    #[test]
    fn isotope_json_round_trip_uses_spec_keys() {
        let p = yb173();
        let json = serde_json::to_string(&p).unwrap();
        for key in [
            "label",
            "abundance",
            "\"S\"",
            "\"I\"",
            "g_e_perp",
            "g_e_par",
            "g_I",
            "A_perp_GHz",
            "A_par_GHz",
            "p_GHz",
        ] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        let q: IsotopeParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, q);
    }
}
