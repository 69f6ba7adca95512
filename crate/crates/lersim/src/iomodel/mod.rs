//! Input–output theory of the transmission measurement.
//!
//! Two model families share this module:
//!
//! * broadband line transmission — spin transitions couple directly to the
//!   feedline with rates `Gamma_ij` and imprint inverse-Lorentzian dips on
//!   `S21 = alpha / (1 + sum Gamma/(gamma + i(Omega - f)))`;
//! * resonator-mediated transmission — one LER mode (f_r, kappa_i, kappa_e,
//!   phi) hybridizes with M spin-transition oscillators (Omega_m, gamma_m,
//!   G_m), and `|S21|` follows from the steady state of the coupled-mode
//!   system.
//!
//! All rates are half-widths in ordinary frequency (GHz); the time-domain
//! integrator converts to angular rates internally.

mod dynamics;
mod extract;

pub use dynamics::{time_evolve, DriveEnvelope, PulseResult, PulseSpec};
pub use extract::{extract_from_column, extract_from_ringdown, ColumnResonance, RingdownFit};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{HBAR, K_B_OVER_H, MU_B_OVER_H};
use crate::error::{Error, Result};
use crate::exec;
use crate::map::TransmissionMap;
use crate::spin::{LevelSet, SpinSystem};

/// Lumped-element resonator parameters. Rates are half-widths in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Bare resonance frequency, GHz.
    pub f_r: f64,
    /// Internal loss half-width, GHz.
    pub kappa_i: f64,
    /// External (line-coupling) half-width, GHz.
    pub kappa_e: f64,
    /// Line-shape asymmetry phase, radians.
    pub phi: f64,
    /// Complex attenuation of the feed line.
    pub alpha: Complex64,
}

impl ResonatorParams {
    /// Symmetric resonator with unit transmission background.
    pub fn symmetric(f_r: f64, kappa_i: f64, kappa_e: f64) -> Self {
        Self {
            f_r,
            kappa_i,
            kappa_e,
            phi: 0.0,
            alpha: Complex64::new(1.0, 0.0),
        }
    }

    /// Total half-width kappa = kappa_i + kappa_e.
    pub fn kappa(&self) -> f64 {
        self.kappa_i + self.kappa_e
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_i >= 0.0) || !(self.kappa_e > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss rates must satisfy kappa_i >= 0 and kappa_e > 0, got {} and {}",
                self.kappa_i, self.kappa_e
            )));
        }
        if !self.f_r.is_finite() || !self.phi.is_finite() || !self.alpha.is_finite() {
            return Err(Error::NonFiniteInput("resonator parameter"));
        }
        Ok(())
    }
}

/// One spin-transition oscillator coupled to the resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinModeParams {
    /// Transition frequency Omega, GHz.
    pub omega: f64,
    /// Spin half-width gamma, GHz (> 0).
    pub gamma: f64,
    /// Collective coupling G to the resonator, GHz.
    pub coupling: f64,
    /// Direct line coupling Gamma; zero unless the spins also couple to the
    /// feedline.
    #[serde(default)]
    pub gamma_line: f64,
}

impl SpinModeParams {
    pub fn new(omega: f64, gamma: f64, coupling: f64) -> Self {
        Self {
            omega,
            gamma,
            coupling,
            gamma_line: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.coupling >= 0.0) || !(self.gamma_line >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "spin mode requires gamma > 0, G >= 0, Gamma >= 0; got gamma = {}, G = {}, Gamma = {}",
                self.gamma, self.coupling, self.gamma_line
            )));
        }
        if !self.omega.is_finite() {
            return Err(Error::NonFiniteInput("spin mode frequency"));
        }
        Ok(())
    }
}

/// A resonator plus M spin-transition oscillators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledModeModel {
    pub resonator: ResonatorParams,
    pub spins: Vec<SpinModeParams>,
}

impl CoupledModeModel {
    pub fn new(resonator: ResonatorParams, spins: Vec<SpinModeParams>) -> Result<Self> {
        resonator.validate()?;
        for s in &spins {
            s.validate()?;
        }
        Ok(Self { resonator, spins })
    }

    /// Steady-state mode amplitudes (b_1..b_{M+1}) under unit drive at `f`.
    ///
    /// The interaction matrix is an arrowhead (spins couple to the resonator,
    /// not to each other), so the solve is done by Schur elimination in O(M)
    /// without forming the matrix. Equivalent to a dense solve of the
    /// (M+1)x(M+1) system; a test pins that equivalence.
    pub fn mode_amplitudes(&self, f: f64) -> Result<Vec<Complex64>> {
        let r = &self.resonator;
        let i = Complex64::new(0.0, 1.0);
        let kappa_e_term = (Complex64::new(0.0, r.phi).exp() * r.kappa_e).sqrt();
        let d0 = Complex64::new(r.kappa(), r.f_r - f);
        let rhs0 = -i * kappa_e_term;

        let mut denom = d0;
        let mut rhs = rhs0;
        let mut spin_d = Vec::with_capacity(self.spins.len());
        for s in &self.spins {
            let dm = Complex64::new(s.gamma + s.gamma_line, s.omega - f);
            if dm.norm() == 0.0 {
                return Err(Error::SingularSystem { f });
            }
            let g = Complex64::new(s.coupling, 0.0);
            denom += g * g / dm;
            if s.gamma_line > 0.0 {
                let rhs_m = -i * Complex64::new(s.gamma_line, 0.0).sqrt();
                rhs -= i * g * rhs_m / dm;
            }
            spin_d.push(dm);
        }
        if denom.norm() == 0.0 {
            return Err(Error::SingularSystem { f });
        }
        let b1 = rhs / denom;
        let mut out = Vec::with_capacity(self.spins.len() + 1);
        out.push(b1);
        for (s, dm) in self.spins.iter().zip(&spin_d) {
            let rhs_m = if s.gamma_line > 0.0 {
                -i * Complex64::new(s.gamma_line, 0.0).sqrt()
            } else {
                Complex64::new(0.0, 0.0)
            };
            let g = Complex64::new(s.coupling, 0.0);
            out.push((rhs_m - i * g * b1) / dm);
        }
        Ok(out)
    }

    /// Complex transmission alpha * (1 - i sqrt(kappa_e e^{i phi}) b_1
    /// - i sum_m sqrt(Gamma_m) b_{m+1}).
    pub fn s21(&self, f: f64) -> Result<Complex64> {
        let r = &self.resonator;
        let i = Complex64::new(0.0, 1.0);
        let kappa_e_term = (Complex64::new(0.0, r.phi).exp() * r.kappa_e).sqrt();
        let b = self.mode_amplitudes(f)?;
        let mut out = Complex64::new(1.0, 0.0) - i * kappa_e_term * b[0];
        for (s, bm) in self.spins.iter().zip(&b[1..]) {
            if s.gamma_line > 0.0 {
                out -= i * Complex64::new(s.gamma_line, 0.0).sqrt() * bm;
            }
        }
        Ok(r.alpha * out)
    }

    /// |S21| at drive frequency `f` (GHz).
    pub fn s21_magnitude(&self, f: f64) -> Result<f64> {
        Ok(self.s21(f)?.norm())
    }
}

/// One directly line-coupled transition of the broadband model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadbandTransition {
    /// Transition frequency Omega, GHz.
    pub omega: f64,
    /// Spin half-width gamma, GHz (> 0).
    pub gamma: f64,
    /// Line coupling rate Gamma, GHz.
    pub gamma_line: f64,
}

/// Broadband line transmission at drive frequency `f`.
pub fn broadband_s21(
    transitions: &[BroadbandTransition],
    f: f64,
    alpha: Complex64,
) -> Result<Complex64> {
    let mut denom = Complex64::new(1.0, 0.0);
    for t in transitions {
        if !(t.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "broadband transition requires gamma > 0, got {}",
                t.gamma
            )));
        }
        denom += Complex64::new(t.gamma_line, 0.0) / Complex64::new(t.gamma, t.omega - f);
    }
    Ok(alpha / denom)
}

/// Bosonic occupation entering the line-coupling rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Occupation {
    /// n = 0 (the mK/GHz regime).
    #[default]
    Zero,
    /// Bose–Einstein occupation at (Omega, T).
    Thermal,
}

impl Occupation {
    pub fn value(&self, omega_ghz: f64, t_kelvin: f64) -> f64 {
        match self {
            Occupation::Zero => 0.0,
            Occupation::Thermal => {
                let x = omega_ghz / (K_B_OVER_H * t_kelvin);
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 / (x.exp() - 1.0)
                }
            }
        }
    }
}

/// Line-coupling rate of one transition:
/// `Gamma = 2 pi g |<j|V|i>|^2 dP Omega (n + 1)` in GHz, with the matrix
/// element taken along `b_dir` (GHz/T) and `g_density` a free scalar
/// absorbing mode density and geometry.
#[allow(clippy::too_many_arguments)]
pub fn broadband_gamma(
    sys: &SpinSystem,
    levels: &LevelSet,
    i: usize,
    j: usize,
    t_kelvin: f64,
    g_density: f64,
    occupation: Occupation,
    b_dir: [f64; 3],
) -> Result<f64> {
    if !(g_density >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "g_density must be non-negative, got {g_density}"
        )));
    }
    let element = sys.drive_element(levels, i, j, b_dir)?;
    let omega = levels.transition_frequency(i, j)?;
    let dp = levels.population_difference(
        i.min(j),
        i.max(j),
        t_kelvin,
        sys.constants().k_b_over_h,
    )?;
    let n = occupation.value(omega, t_kelvin);
    Ok(2.0 * std::f64::consts::PI * g_density * element * element * dp * omega * (n + 1.0))
}

/// How a transition's frequency depends on the sweep field.
#[derive(Debug, Clone)]
pub enum TransitionLaw {
    /// Omega(B) = g_eff * mu_B/h * B + omega0.
    Linear { g_eff: f64, omega0: f64 },
    /// Omega(B) from the spin Hamiltonian gap (i, j) at B along z.
    Hamiltonian {
        sys: std::sync::Arc<SpinSystem>,
        i: usize,
        j: usize,
    },
}

impl TransitionLaw {
    pub fn omega(&self, b: f64) -> Result<f64> {
        match self {
            TransitionLaw::Linear { g_eff, omega0 } => Ok(g_eff * MU_B_OVER_H * b + omega0),
            TransitionLaw::Hamiltonian { sys, i, j } => sys.transition_frequency_z(*i, *j, b),
        }
    }
}

/// One field-dependent transition of a cavity-map simulation.
#[derive(Debug, Clone)]
pub struct MapTransition {
    pub law: TransitionLaw,
    /// Collective coupling G, GHz.
    pub coupling: f64,
    /// Spin half-width gamma, GHz.
    pub gamma: f64,
    /// Direct line coupling, GHz (usually zero).
    pub gamma_line: f64,
}

/// Specification of a simulated |S21|(B, f) map.
#[derive(Debug, Clone)]
pub struct CavityMapSpec {
    pub resonator: ResonatorParams,
    pub transitions: Vec<MapTransition>,
    pub b_axis: Vec<f64>,
    pub f_axis: Vec<f64>,
}

/// Dense |S21| map of the coupled resonator-spin system; columns are
/// independent and evaluated in parallel when enabled.
pub fn simulate_map(spec: &CavityMapSpec) -> Result<TransmissionMap> {
    spec.resonator.validate()?;
    let nb = spec.b_axis.len();
    let nf = spec.f_axis.len();
    let columns: Vec<Result<Vec<f64>>> = exec::map_indices(nb, |bi| {
        let b = spec.b_axis[bi];
        let spins = spec
            .transitions
            .iter()
            .map(|t| {
                Ok(SpinModeParams {
                    omega: t.law.omega(b)?,
                    gamma: t.gamma,
                    coupling: t.coupling,
                    gamma_line: t.gamma_line,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = CoupledModeModel::new(spec.resonator, spins)?;
        spec.f_axis
            .iter()
            .map(|&f| model.s21_magnitude(f))
            .collect::<Result<Vec<f64>>>()
    });
    let mut magnitude = Vec::with_capacity(nb * nf);
    for col in columns {
        magnitude.extend(col?);
    }
    TransmissionMap::new(spec.b_axis.clone(), spec.f_axis.clone(), magnitude)
}

/// Result of a field-sweep normalization: the normalized map plus the cells
/// masked because the reference column vanished there.
#[derive(Debug, Clone)]
pub struct NormalizedMap {
    pub map: TransmissionMap,
    /// (b index in the output map, f index) of masked cells (set to 0).
    pub masked: Vec<(usize, usize)>,
}

fn normalize_column(
    reference: &[f64],
    signal: &[f64],
    bi_out: usize,
    masked: &mut Vec<(usize, usize)>,
) -> Vec<f64> {
    signal
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(fi, (s, r))| {
            if *r == 0.0 {
                masked.push((bi_out, fi));
                0.0
            } else {
                (s - r) / r
            }
        })
        .collect()
}

/// Single-pair normalization `(S21(B1, f) - S21(B2, f)) / S21(B2, f)`.
///
/// `b1` and `b2` must both lie on the map's B axis with B1 < B2; the output
/// map has the single B value B1. Any cell where `S21(B2, f) = 0` is masked
/// to 0 and reported.
pub fn normalize_pair(map: &TransmissionMap, b1: f64, b2: f64) -> Result<NormalizedMap> {
    if b1 == b2 {
        return Err(Error::DegenerateNormalizationPair(b1));
    }
    if b1 > b2 {
        return Err(Error::InvalidConfig(format!(
            "normalization pair must satisfy B1 < B2, got {b1} > {b2}"
        )));
    }
    let i1 = map.b_index(b1)?;
    let i2 = map.b_index(b2)?;
    let mut masked = Vec::new();
    let values = normalize_column(map.column(i2), map.column(i1), 0, &mut masked);
    Ok(NormalizedMap {
        map: TransmissionMap::new(vec![b1], map.f_axis().to_vec(), values)?,
        masked,
    })
}

/// Sliding-pair normalization along the whole sweep: output column k is
/// `(S21(B_k) - S21(B_{k+1})) / S21(B_{k+1})`, labeled with B_k. Suppresses
/// any field-independent signal exactly.
pub fn normalize_sweep(map: &TransmissionMap) -> Result<NormalizedMap> {
    let nb = map.b_axis().len();
    if nb < 2 {
        return Err(Error::MalformedMap(
            "sweep normalization needs at least two field columns".into(),
        ));
    }
    let mut masked = Vec::new();
    let mut values = Vec::with_capacity((nb - 1) * map.f_axis().len());
    for bi in 0..nb - 1 {
        values.extend(normalize_column(
            map.column(bi + 1),
            map.column(bi),
            bi,
            &mut masked,
        ));
    }
    Ok(NormalizedMap {
        map: TransmissionMap::new(
            map.b_axis()[..nb - 1].to_vec(),
            map.f_axis().to_vec(),
            values,
        )?,
        masked,
    })
}

/// Intracavity photon number at input power `p_in_watts`:
/// `n = kappa_e / (kappa_i + kappa_e)^2 * P_in / (hbar omega_r)`, evaluated
/// with angular rates (rad/s) and omega_r = 2 pi f_r.
pub fn photon_number(p_in_watts: f64, resonator: &ResonatorParams) -> Result<f64> {
    if !(p_in_watts >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "input power must be non-negative, got {p_in_watts}"
        )));
    }
    resonator.validate()?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let kappa_i = two_pi * resonator.kappa_i * 1e9;
    let kappa_e = two_pi * resonator.kappa_e * 1e9;
    let omega_r = two_pi * resonator.f_r * 1e9;
    Ok(kappa_e / (kappa_i + kappa_e).powi(2) * p_in_watts / (HBAR * omega_r))
}
