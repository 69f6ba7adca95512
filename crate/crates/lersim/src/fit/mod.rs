//! Least-squares fits of transmission maps.
//!
//! [`fit_resonator_map`] fits the coupled-mode model to a full |S21|(B, f)
//! map at once: resonator parameters (f_r, kappa_i, kappa_e, phi, alpha)
//! plus per-transition (G, gamma) and, for the linear frequency law,
//! (Omega0, g_eff). [`broadband::fit_broadband_map`] fits the line model to
//! broadband spectroscopy maps. Multi-start jitter, deterministic
//! tie-breaking, and linearized uncertainties come with both.

mod broadband;
mod synthetic;

pub use broadband::{
    fit_broadband_map, simulate_broadband_map, BroadbandFitConfig, BroadbandFitResult,
    BroadbandSpecies,
};
pub use synthetic::generate_synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::MU_B_OVER_H;
use crate::coupling::cooperativity;
use crate::error::{Error, Result};
use crate::exec;
use crate::iomodel::{extract_from_column, ColumnResonance, CoupledModeModel, ResonatorParams,
    SpinModeParams};
use crate::leastsq::{self, Status};
use crate::map::TransmissionMap;
use crate::spin::{IsotopeParams, SpinSystem};

/// One scalar fit parameter: initial value, optional box bounds, frozen flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub init: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default)]
    pub frozen: bool,
}

impl ParamSpec {
    pub fn free(init: f64) -> Self {
        Self {
            init,
            lower: None,
            upper: None,
            frozen: false,
        }
    }

    pub fn bounded(init: f64, lower: f64, upper: f64) -> Self {
        Self {
            init,
            lower: Some(lower),
            upper: Some(upper),
            frozen: false,
        }
    }

    pub fn frozen(init: f64) -> Self {
        Self {
            init,
            lower: None,
            upper: None,
            frozen: true,
        }
    }

    fn lo(&self) -> f64 {
        self.lower.unwrap_or(f64::NEG_INFINITY)
    }

    fn hi(&self) -> f64 {
        self.upper.unwrap_or(f64::INFINITY)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.init.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "initial value of {name} must be finite"
            )));
        }
        if !(self.lo() <= self.init && self.init <= self.hi()) {
            return Err(Error::InvalidConfig(format!(
                "bounds of {name} must contain the initial value {}",
                self.init
            )));
        }
        Ok(())
    }
}

/// Frequency law of one fitted transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaLaw {
    /// Omega(B) = g_eff mu_B/h B + omega0, both fittable.
    Linear { omega0: ParamSpec, g_eff: ParamSpec },
    /// Omega(B) pinned by the spin Hamiltonian gap (i, j).
    Hamiltonian {
        isotope: IsotopeParams,
        i: usize,
        j: usize,
    },
}

/// One transition of the fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionFitConfig {
    /// Collective coupling G, GHz.
    pub coupling: ParamSpec,
    /// Spin half-width gamma, GHz; lower bound must stay positive.
    pub gamma: ParamSpec,
    pub law: OmegaLaw,
}

/// Optimizer knobs exposed in the config JSON.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub cost_tol: f64,
    pub step_tol: f64,
    pub fd_rel_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = leastsq::Options::default();
        Self {
            max_iterations: d.max_iterations,
            cost_tol: d.cost_tol,
            step_tol: d.step_tol,
            fd_rel_step: d.fd_rel_step,
        }
    }
}

impl OptimizerConfig {
    fn to_options(self) -> leastsq::Options {
        leastsq::Options {
            max_iterations: self.max_iterations,
            cost_tol: self.cost_tol,
            step_tol: self.step_tol,
            fd_rel_step: self.fd_rel_step,
            ..leastsq::Options::default()
        }
    }
}

/// Full 2D-map fit configuration (the JSON interface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub f_r: ParamSpec,
    pub kappa_i: ParamSpec,
    pub kappa_e: ParamSpec,
    pub phi: ParamSpec,
    /// Background transmission magnitude |alpha|.
    pub alpha: ParamSpec,
    #[serde(default)]
    pub transitions: Vec<TransitionFitConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Number of multi-start runs (>= 1); run 0 uses the configured initial
    /// values, later runs jitter G and omega0.
    #[serde(default = "default_multi_start")]
    pub multi_start: usize,
    #[serde(default)]
    pub seed: u64,
    /// Compute per-column resonance diagnostics for the result.
    #[serde(default = "default_true")]
    pub column_diagnostics: bool,
}

fn default_multi_start() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl FitConfig {
    /// A permissive config around rough resonator values, M = 0.
    pub fn bare(f_r: f64, kappa: f64) -> Self {
        Self {
            f_r: ParamSpec::free(f_r),
            kappa_i: ParamSpec::bounded(kappa / 2.0, 0.0, f64::INFINITY),
            kappa_e: ParamSpec::bounded(kappa / 2.0, kappa * 1e-6, f64::INFINITY),
            phi: ParamSpec::bounded(0.0, -std::f64::consts::PI, std::f64::consts::PI),
            alpha: ParamSpec::bounded(1.0, 1e-9, f64::INFINITY),
            transitions: Vec::new(),
            optimizer: OptimizerConfig::default(),
            multi_start: 1,
            seed: 0,
            column_diagnostics: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.f_r.validate("f_r")?;
        self.kappa_i.validate("kappa_i")?;
        self.kappa_e.validate("kappa_e")?;
        self.phi.validate("phi")?;
        self.alpha.validate("alpha")?;
        if self.kappa_e.lo() < 0.0 || self.kappa_i.lo() < 0.0 {
            return Err(Error::InvalidConfig(
                "loss-rate bounds must be non-negative".into(),
            ));
        }
        for (m, t) in self.transitions.iter().enumerate() {
            t.coupling.validate(&format!("transitions[{m}].coupling"))?;
            t.gamma.validate(&format!("transitions[{m}].gamma"))?;
            if !(t.gamma.lo() > 0.0) && !t.gamma.frozen {
                return Err(Error::InvalidConfig(format!(
                    "transitions[{m}].gamma needs a positive lower bound"
                )));
            }
            if t.coupling.lo() < 0.0 && !t.coupling.frozen {
                return Err(Error::InvalidConfig(format!(
                    "transitions[{m}].coupling lower bound must be >= 0"
                )));
            }
            if let OmegaLaw::Linear { omega0, g_eff } = &t.law {
                omega0.validate(&format!("transitions[{m}].omega0"))?;
                g_eff.validate(&format!("transitions[{m}].g_eff"))?;
            }
        }
        if self.multi_start == 0 {
            return Err(Error::InvalidConfig(
                "multi_start must be at least 1".into(),
            ));
        }
        self.optimizer.to_options().validate()
    }
}

/// Value with its one-sigma estimate (absent for frozen parameters or a
/// degenerate covariance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedParam {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedTransition {
    pub coupling: FittedParam,
    pub gamma: FittedParam,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0: Option<FittedParam>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_eff: Option<FittedParam>,
    /// C = G^2 / (gamma kappa), recomputed from the fitted values.
    pub cooperativity: f64,
}

/// Per-column effective resonance, from the data and from the fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnDiagnostic {
    pub b_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<ColumnResonance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ColumnResonance>,
}

/// Outcome of a 2D map fit (the JSON interface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub f_r: FittedParam,
    pub kappa_i: FittedParam,
    pub kappa_e: FittedParam,
    /// kappa_i + kappa_e.
    pub kappa: f64,
    pub phi: FittedParam,
    pub alpha: FittedParam,
    pub transitions: Vec<FittedTransition>,
    /// sqrt(sum of squared residuals) at the optimum.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub status: Status,
    pub converged: bool,
    pub degenerate: bool,
    /// Indices (in the packed parameter vector) frozen because their
    /// Jacobian column vanished.
    pub auto_frozen: Vec<usize>,
    pub multi_start_runs: usize,
    pub best_run: usize,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub column_diagnostics: Vec<ColumnDiagnostic>,
}

impl FitResult {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Packed-parameter model shared by the fit loop and the result assembly.
struct PackedModel {
    /// Per transition: cached Omega(B) per column for Hamiltonian laws.
    omega_cache: Vec<Option<Vec<f64>>>,
    n_transitions: usize,
}

const RESONATOR_PARAMS: usize = 5;
const PER_TRANSITION: usize = 4;

impl PackedModel {
    fn new(config: &FitConfig, b_axis: &[f64]) -> Result<Self> {
        let mut omega_cache = Vec::with_capacity(config.transitions.len());
        for t in &config.transitions {
            match &t.law {
                OmegaLaw::Linear { .. } => omega_cache.push(None),
                OmegaLaw::Hamiltonian { isotope, i, j } => {
                    let sys = SpinSystem::new(isotope.clone())?;
                    let omegas = b_axis
                        .iter()
                        .map(|&b| sys.transition_frequency_z(*i, *j, b))
                        .collect::<Result<Vec<f64>>>()?;
                    omega_cache.push(Some(omegas));
                }
            }
        }
        Ok(Self {
            omega_cache,
            n_transitions: config.transitions.len(),
        })
    }

    fn n_params(&self) -> usize {
        RESONATOR_PARAMS + PER_TRANSITION * self.n_transitions
    }

    fn resonator(&self, p: &[f64]) -> ResonatorParams {
        ResonatorParams {
            f_r: p[0],
            kappa_i: p[1],
            kappa_e: p[2],
            phi: p[3],
            alpha: num_complex::Complex64::new(p[4], 0.0),
        }
    }

    fn spin_modes(&self, p: &[f64], bi: usize, b: f64) -> Vec<SpinModeParams> {
        (0..self.n_transitions)
            .map(|m| {
                let base = RESONATOR_PARAMS + PER_TRANSITION * m;
                let omega = match &self.omega_cache[m] {
                    Some(cache) => cache[bi],
                    None => p[base + 3] * MU_B_OVER_H * b + p[base + 2],
                };
                SpinModeParams {
                    omega,
                    gamma: p[base + 1],
                    coupling: p[base],
                    gamma_line: 0.0,
                }
            })
            .collect()
    }

    /// Model magnitudes over the whole map grid, column-parallel.
    fn evaluate(&self, p: &[f64], b_axis: &[f64], f_axis: &[f64]) -> Result<Vec<f64>> {
        let resonator = self.resonator(p);
        resonator.validate()?;
        let columns: Vec<Result<Vec<f64>>> = exec::map_indices(b_axis.len(), |bi| {
            let spins = self.spin_modes(p, bi, b_axis[bi]);
            let model = CoupledModeModel {
                resonator,
                spins,
            };
            f_axis.iter().map(|&f| model.s21_magnitude(f)).collect()
        });
        let mut out = Vec::with_capacity(b_axis.len() * f_axis.len());
        for c in columns {
            out.extend(c?);
        }
        Ok(out)
    }
}

fn pack_config(config: &FitConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>, Vec<f64>) {
    let mut x0 = vec![
        config.f_r.init,
        config.kappa_i.init,
        config.kappa_e.init,
        config.phi.init,
        config.alpha.init,
    ];
    let mut lo = vec![
        config.f_r.lo(),
        config.kappa_i.lo().max(0.0),
        config.kappa_e.lo().max(1e-300),
        config.phi.lo(),
        config.alpha.lo().max(0.0),
    ];
    let mut hi = vec![
        config.f_r.hi(),
        config.kappa_i.hi(),
        config.kappa_e.hi(),
        config.phi.hi(),
        config.alpha.hi(),
    ];
    let mut frozen = vec![
        config.f_r.frozen,
        config.kappa_i.frozen,
        config.kappa_e.frozen,
        config.phi.frozen,
        config.alpha.frozen,
    ];
    let kappa_scale = (config.kappa_i.init + config.kappa_e.init).max(1e-12);
    let mut scales = vec![
        kappa_scale.max(config.f_r.init.abs() * 1e-9),
        kappa_scale,
        kappa_scale,
        1.0,
        config.alpha.init.abs().max(1e-3),
    ];
    for t in &config.transitions {
        let (omega0, g_eff) = match &t.law {
            OmegaLaw::Linear { omega0, g_eff } => (*omega0, *g_eff),
            // Placeholders for Hamiltonian-law transitions; always frozen.
            OmegaLaw::Hamiltonian { .. } => (ParamSpec::frozen(0.0), ParamSpec::frozen(0.0)),
        };
        x0.extend([t.coupling.init, t.gamma.init, omega0.init, g_eff.init]);
        lo.extend([
            t.coupling.lo().max(0.0),
            t.gamma.lo().max(1e-300),
            omega0.lo(),
            g_eff.lo(),
        ]);
        hi.extend([t.coupling.hi(), t.gamma.hi(), omega0.hi(), g_eff.hi()]);
        frozen.extend([t.coupling.frozen, t.gamma.frozen, omega0.frozen, g_eff.frozen]);
        scales.extend([
            t.coupling.init.abs().max(1e-6),
            t.gamma.init.abs().max(1e-6),
            t.gamma.init.abs().max(1e-6),
            g_eff.init.abs().max(0.1),
        ]);
    }
    (x0, lo, hi, frozen, scales)
}

/// Fit the coupled-mode model to a full |S21|(B, f) map.
///
/// Multi-start runs (seeded, parallel) jitter G and omega0; the best run is
/// the one with the lowest residual, ties broken by the smaller coupling
/// vector, then by run index.
pub fn fit_resonator_map(map: &TransmissionMap, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if map.magnitude().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("map magnitude"));
    }
    let model = PackedModel::new(config, map.b_axis())?;
    let (x0, lo, hi, frozen, scales) = pack_config(config);
    let opts = config.optimizer.to_options();
    let data = map.magnitude();

    let f_span = {
        let f = map.f_axis();
        (f[f.len() - 1] - f[0]).abs()
    };

    // Start points: run 0 exact, others jittered.
    let starts: Vec<Vec<f64>> = (0..config.multi_start)
        .map(|run| {
            if run == 0 {
                return x0.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (run as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let mut x = x0.clone();
            for m in 0..model.n_transitions {
                let base = RESONATOR_PARAMS + PER_TRANSITION * m;
                if !frozen[base] {
                    let factor = 0.6 + 0.8 * rng.gen::<f64>();
                    x[base] = (x[base] * factor).clamp(lo[base], hi[base]);
                }
                if !frozen[base + 2] {
                    let shift = (rng.gen::<f64>() - 0.5) * 0.2 * f_span;
                    x[base + 2] = (x[base + 2] + shift).clamp(lo[base + 2], hi[base + 2]);
                }
            }
            x
        })
        .collect();

    let runs: Vec<Result<leastsq::Solution>> = exec::map_indices(starts.len(), |run| {
        let problem = leastsq::Problem {
            residuals: |p: &[f64]| {
                let model_vals = model.evaluate(p, map.b_axis(), map.f_axis())?;
                Ok(model_vals
                    .iter()
                    .zip(data)
                    .map(|(m, d)| m - d)
                    .collect())
            },
            x0: &starts[run],
            lower: &lo,
            upper: &hi,
            frozen: &frozen,
            scales: &scales,
        };
        leastsq::solve(problem, &opts)
    });

    let mut best: Option<(usize, leastsq::Solution)> = None;
    for (run, sol) in runs.into_iter().enumerate() {
        let sol = sol?;
        let replace = match &best {
            None => true,
            Some((_, cur)) => {
                let d = sol.cost - cur.cost;
                if d.abs() <= 1e-12 * cur.cost.max(1e-300) {
                    // Tie: smaller coupling vector wins (lexicographic).
                    let g_new: Vec<f64> = (0..model.n_transitions)
                        .map(|m| sol.params[RESONATOR_PARAMS + PER_TRANSITION * m])
                        .collect();
                    let g_cur: Vec<f64> = (0..model.n_transitions)
                        .map(|m| cur.params[RESONATOR_PARAMS + PER_TRANSITION * m])
                        .collect();
                    g_new < g_cur
                } else {
                    d < 0.0
                }
            }
        };
        if replace {
            best = Some((run, sol));
        }
    }
    let (best_run, sol) = best.expect("at least one multi-start run");

    let sig = |k: usize| -> Option<f64> {
        if frozen[k] {
            return None;
        }
        sol.sigmas.as_ref().map(|s| s[k])
    };
    let p = &sol.params;
    let kappa = p[1] + p[2];
    let transitions = (0..model.n_transitions)
        .map(|m| {
            let base = RESONATOR_PARAMS + PER_TRANSITION * m;
            let is_linear = matches!(config.transitions[m].law, OmegaLaw::Linear { .. });
            Ok(FittedTransition {
                coupling: FittedParam {
                    value: p[base],
                    sigma: sig(base),
                },
                gamma: FittedParam {
                    value: p[base + 1],
                    sigma: sig(base + 1),
                },
                omega0: is_linear.then(|| FittedParam {
                    value: p[base + 2],
                    sigma: sig(base + 2),
                }),
                g_eff: is_linear.then(|| FittedParam {
                    value: p[base + 3],
                    sigma: sig(base + 3),
                }),
                cooperativity: cooperativity(p[base], p[base + 1], kappa)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let column_diagnostics = if config.column_diagnostics {
        let model_vals = model.evaluate(p, map.b_axis(), map.f_axis())?;
        let nf = map.f_axis().len();
        map.b_axis()
            .iter()
            .enumerate()
            .map(|(bi, &b)| ColumnDiagnostic {
                b_t: b,
                data: extract_from_column(map.f_axis(), map.column(bi)).ok(),
                model: extract_from_column(map.f_axis(), &model_vals[bi * nf..(bi + 1) * nf])
                    .ok(),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(FitResult {
        f_r: FittedParam {
            value: p[0],
            sigma: sig(0),
        },
        kappa_i: FittedParam {
            value: p[1],
            sigma: sig(1),
        },
        kappa_e: FittedParam {
            value: p[2],
            sigma: sig(2),
        },
        kappa,
        phi: FittedParam {
            value: p[3],
            sigma: sig(3),
        },
        alpha: FittedParam {
            value: p[4],
            sigma: sig(4),
        },
        transitions,
        residual_norm: sol.cost.sqrt(),
        initial_residual_norm: sol.initial_cost.sqrt(),
        status: sol.status,
        converged: sol.status.converged(),
        degenerate: sol.degenerate,
        auto_frozen: sol.auto_frozen,
        multi_start_runs: config.multi_start,
        best_run,
        iterations: sol.iterations,
        column_diagnostics,
    })
}

/// Rough resonator seed read off a map: the effective resonance of the
/// most-detuned edge column (the one whose dip fit has the lower residual),
/// plus the field of the largest column-to-column dip shift as a crossing
/// hint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MapSeed {
    pub f_r: f64,
    pub kappa_i: f64,
    pub kappa_e: f64,
    pub phi: f64,
    pub alpha: f64,
    /// Field of the largest dip shift between neighbouring columns.
    pub crossing_b: Option<f64>,
}

pub fn initial_guess_from_map(map: &TransmissionMap) -> Result<MapSeed> {
    let nb = map.b_axis().len();
    let first = extract_from_column(map.f_axis(), map.column(0));
    let last = extract_from_column(map.f_axis(), map.column(nb - 1));
    let edge = match (first, last) {
        (Ok(a), Ok(b)) => {
            if a.residual <= b.residual {
                a
            } else {
                b
            }
        }
        (Ok(a), Err(_)) => a,
        (Err(_), Ok(b)) => b,
        (Err(e), Err(_)) => return Err(e),
    };

    // Largest dip-position shift between neighbouring columns.
    let dip_f: Vec<Option<f64>> = (0..nb)
        .map(|bi| {
            let col = map.column(bi);
            col.iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| map.f_axis()[k])
        })
        .collect();
    let mut crossing_b = None;
    let mut best_shift = 0.0;
    for bi in 1..nb {
        if let (Some(a), Some(b)) = (dip_f[bi - 1], dip_f[bi]) {
            let shift = (b - a).abs();
            if shift > best_shift {
                best_shift = shift;
                crossing_b = Some(0.5 * (map.b_axis()[bi - 1] + map.b_axis()[bi]));
            }
        }
    }

    Ok(MapSeed {
        f_r: edge.f_r,
        kappa_i: edge.kappa_i,
        kappa_e: edge.kappa_e,
        phi: edge.phi,
        alpha: edge.alpha,
        crossing_b,
    })
}
