//! Broadband (direct line-coupling) spectroscopy: simulation of normalized
//! transmission maps for an isotope mixture, and the corresponding fit of
//! coupling density, per-species line widths, and relative weights.

use serde::{Deserialize, Serialize};

use super::{FittedParam, OptimizerConfig, ParamSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::iomodel::{broadband_s21, BroadbandTransition, Occupation};
use crate::leastsq::{self, Status};
use crate::map::TransmissionMap;
use crate::spin::{IsotopeParams, SpinSystem};

/// Drop transitions whose drive element is below this fraction of the
/// species' strongest element (they are invisible at double precision).
const ELEMENT_CUTOFF: f64 = 1e-6;

/// One species of the measured mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BroadbandSpecies {
    pub isotope: IsotopeParams,
    /// Mixture weight (natural abundance for as-grown crystals).
    pub weight: f64,
    /// Inhomogeneous half-width of this species' transitions, GHz.
    pub gamma: f64,
}

/// Parameter-independent per-transition factors:
/// Gamma = g_density * weight * factor.
struct ColumnCache {
    /// [species][column] -> list of (omega, factor).
    transitions: Vec<Vec<Vec<(f64, f64)>>>,
}

fn build_cache(
    species: &[BroadbandSpecies],
    b_axis: &[f64],
    temperature_k: f64,
    occupation: Occupation,
    b_dir: [f64; 3],
) -> Result<ColumnCache> {
    let systems = species
        .iter()
        .map(|s| SpinSystem::new(s.isotope.clone()))
        .collect::<Result<Vec<_>>>()?;
    let per_species: Vec<Vec<Vec<(f64, f64)>>> = systems
        .iter()
        .map(|sys| -> Result<Vec<Vec<(f64, f64)>>> {
            let cols: Vec<Result<Vec<(f64, f64)>>> = exec::map_indices(b_axis.len(), |bi| {
                let levels = sys.levels_z(b_axis[bi])?;
                let n = levels.len();
                let k_b = sys.constants().k_b_over_h;
                let populations = levels.thermal_populations(temperature_k, k_b)?;
                let mut elems = Vec::new();
                let mut max_elem = 0.0f64;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let e = sys.drive_element(&levels, i, j, b_dir)?;
                        max_elem = max_elem.max(e);
                        elems.push((i, j, e));
                    }
                }
                let mut out = Vec::new();
                for (i, j, e) in elems {
                    if e < ELEMENT_CUTOFF * max_elem {
                        continue;
                    }
                    let omega = levels.transition_frequency(i, j)?;
                    if omega <= 0.0 {
                        continue;
                    }
                    let dp = populations[i] - populations[j];
                    let occ = occupation.value(omega, temperature_k);
                    let factor =
                        2.0 * std::f64::consts::PI * e * e * dp * omega * (occ + 1.0);
                    out.push((omega, factor));
                }
                Ok(out)
            });
            cols.into_iter().collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ColumnCache {
        transitions: per_species,
    })
}

fn model_map(
    cache: &ColumnCache,
    b_axis: &[f64],
    f_axis: &[f64],
    g_density: f64,
    alpha: f64,
    gammas: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let n_species = cache.transitions.len();
    let columns: Vec<Result<Vec<f64>>> = exec::map_indices(b_axis.len(), |bi| {
        let mut transitions = Vec::new();
        for s in 0..n_species {
            let strength = g_density * weights[s];
            for &(omega, factor) in &cache.transitions[s][bi] {
                transitions.push(BroadbandTransition {
                    omega,
                    gamma: gammas[s],
                    gamma_line: strength * factor,
                });
            }
        }
        f_axis
            .iter()
            .map(|&f| {
                Ok(broadband_s21(&transitions, f, num_complex::Complex64::new(alpha, 0.0))?
                    .norm())
            })
            .collect()
    });
    let mut out = Vec::with_capacity(b_axis.len() * f_axis.len());
    for c in columns {
        out.extend(c?);
    }
    Ok(out)
}

/// Simulate the raw broadband transmission map |S21|(B, f) of an isotope
/// mixture directly coupled to the feed line. The drive field is transverse
/// to the anisotropy axis (x).
pub fn simulate_broadband_map(
    species: &[BroadbandSpecies],
    b_axis: &[f64],
    f_axis: &[f64],
    temperature_k: f64,
    g_density: f64,
    occupation: Occupation,
) -> Result<TransmissionMap> {
    if species.is_empty() {
        return Err(Error::InvalidConfig("no species in the mixture".into()));
    }
    for s in species {
        if !(s.gamma > 0.0) || !(s.weight >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "species {} needs gamma > 0 and weight >= 0",
                s.isotope.label
            )));
        }
    }
    let cache = build_cache(species, b_axis, temperature_k, occupation, [1.0, 0.0, 0.0])?;
    let gammas: Vec<f64> = species.iter().map(|s| s.gamma).collect();
    let weights: Vec<f64> = species.iter().map(|s| s.weight).collect();
    let values = model_map(&cache, b_axis, f_axis, g_density, 1.0, &gammas, &weights)?;
    TransmissionMap::new(b_axis.to_vec(), f_axis.to_vec(), values)
}

/// Broadband fit configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BroadbandFitConfig {
    pub species: Vec<BroadbandSpecies>,
    pub temperature_k: f64,
    /// Coupling density (one scalar for the whole dataset).
    pub g_density: ParamSpec,
    /// Per-species half-width initial specs; one entry per species.
    pub gammas: Vec<ParamSpec>,
    /// Fit relative species weights (abundance diagnostic). While active the
    /// overall scale is carried by the weights, so `g_density` is frozen.
    #[serde(default)]
    pub fit_weights: bool,
    /// Compare sliding-pair normalized maps instead of raw ones.
    #[serde(default = "super::default_true")]
    pub normalized: bool,
    #[serde(default)]
    pub occupation: Occupation,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

/// Broadband fit outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BroadbandFitResult {
    pub g_density: FittedParam,
    pub gammas: Vec<FittedParam>,
    /// Normalized species weights (sum = 1) when `fit_weights` was set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<FittedParam>>,
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub status: Status,
    pub converged: bool,
}

/// Fit the broadband model to a raw |S21|(B, f) map.
///
/// With `normalized`, both data and model go through the same sliding-pair
/// normalization before the residuals are formed, which cancels the overall
/// attenuation exactly.
pub fn fit_broadband_map(
    map: &TransmissionMap,
    config: &BroadbandFitConfig,
) -> Result<BroadbandFitResult> {
    let n_species = config.species.len();
    if n_species == 0 {
        return Err(Error::InvalidConfig("no species in the mixture".into()));
    }
    if config.gammas.len() != n_species {
        return Err(Error::InvalidConfig(format!(
            "gammas has {} entries for {} species",
            config.gammas.len(),
            n_species
        )));
    }
    config.g_density.validate("g_density")?;
    for (k, g) in config.gammas.iter().enumerate() {
        g.validate(&format!("gammas[{k}]"))?;
        if !(g.init > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gammas[{k}] must start positive"
            )));
        }
    }

    let cache = build_cache(
        &config.species,
        map.b_axis(),
        config.temperature_k,
        config.occupation,
        [1.0, 0.0, 0.0],
    )?;

    // Parameter packing: [g_density, alpha, gamma_s..., weight_s...].
    let mut x0 = vec![config.g_density.init, 1.0];
    let mut lo = vec![config.g_density.lo().max(0.0), 1e-9];
    let mut hi = vec![config.g_density.hi(), f64::INFINITY];
    let g_frozen = config.g_density.frozen || config.fit_weights;
    let mut frozen = vec![g_frozen, config.normalized];
    let mut scales = vec![config.g_density.init.abs().max(1e-12), 1.0];
    for g in &config.gammas {
        x0.push(g.init);
        lo.push(g.lo().max(1e-12));
        hi.push(g.hi());
        frozen.push(g.frozen);
        scales.push(g.init.abs());
    }
    for s in &config.species {
        x0.push(s.weight);
        lo.push(0.0);
        hi.push(f64::INFINITY);
        frozen.push(!config.fit_weights);
        scales.push(s.weight.abs().max(1e-3));
    }

    let nf = map.f_axis().len();
    let data: Vec<f64> = if config.normalized {
        let mut out = Vec::new();
        for bi in 0..map.b_axis().len() - 1 {
            let cur = map.column(bi);
            let next = map.column(bi + 1);
            for fi in 0..nf {
                out.push(if next[fi] == 0.0 {
                    0.0
                } else {
                    (cur[fi] - next[fi]) / next[fi]
                });
            }
        }
        out
    } else {
        map.magnitude().to_vec()
    };

    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        let g_density = p[0];
        let alpha = p[1];
        let gammas = &p[2..2 + n_species];
        let weights = &p[2 + n_species..2 + 2 * n_species];
        let model = model_map(
            &cache,
            map.b_axis(),
            map.f_axis(),
            g_density,
            alpha,
            gammas,
            weights,
        )?;
        if config.normalized {
            let mut r = Vec::with_capacity(data.len());
            for bi in 0..map.b_axis().len() - 1 {
                for fi in 0..nf {
                    let cur = model[bi * nf + fi];
                    let next = model[(bi + 1) * nf + fi];
                    let m = if next == 0.0 { 0.0 } else { (cur - next) / next };
                    r.push(m - data[bi * nf + fi]);
                }
            }
            Ok(r)
        } else {
            Ok(model.iter().zip(&data).map(|(m, d)| m - d).collect())
        }
    };

    let problem = leastsq::Problem {
        residuals,
        x0: &x0,
        lower: &lo,
        upper: &hi,
        frozen: &frozen,
        scales: &scales,
    };
    let sol = leastsq::solve(problem, &config.optimizer.to_options())?;

    let sig = |k: usize| -> Option<f64> {
        if frozen[k] {
            None
        } else {
            sol.sigmas.as_ref().map(|s| s[k])
        }
    };
    let p = &sol.params;
    let weights = config.fit_weights.then(|| {
        let raw = &p[2 + n_species..2 + 2 * n_species];
        let total: f64 = raw.iter().sum();
        raw.iter()
            .enumerate()
            .map(|(k, w)| FittedParam {
                value: w / total,
                sigma: sig(2 + n_species + k).map(|s| s / total),
            })
            .collect::<Vec<_>>()
    });

    Ok(BroadbandFitResult {
        g_density: FittedParam {
            value: p[0],
            sigma: sig(0),
        },
        gammas: (0..n_species)
            .map(|k| FittedParam {
                value: p[2 + k],
                sigma: sig(2 + k),
            })
            .collect(),
        weights,
        residual_norm: sol.cost.sqrt(),
        initial_residual_norm: sol.initial_cost.sqrt(),
        status: sol.status,
        converged: sol.status.converged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iomodel::broadband_gamma;
    use crate::spin::{builtin_isotopes, yb173, yb_i0};
    use approx::assert_relative_eq;

    fn natural_mixture(gammas: [f64; 3]) -> Vec<BroadbandSpecies> {
        builtin_isotopes()
            .into_iter()
            .zip(gammas)
            .map(|(isotope, gamma)| BroadbandSpecies {
                weight: isotope.abundance,
                isotope,
                gamma,
            })
            .collect()
    }

    #[test]
    fn cached_rates_match_direct_evaluation() {
        // The per-transition factors must reproduce the direct rate formula.
        let species = vec![BroadbandSpecies {
            isotope: yb173(),
            weight: 1.0,
            gamma: 0.023,
        }];
        let b = 0.0805;
        let t = 0.010;
        let g_density = 3.7e-4;
        let cache = build_cache(&species, &[b], t, Occupation::Zero, [1.0, 0.0, 0.0]).unwrap();
        let sys = SpinSystem::new(yb173()).unwrap();
        let levels = sys.levels_z(b).unwrap();
        let mut direct = Vec::new();
        for i in 0..12 {
            for j in (i + 1)..12 {
                let g = broadband_gamma(
                    &sys,
                    &levels,
                    i,
                    j,
                    t,
                    g_density,
                    Occupation::Zero,
                    [1.0, 0.0, 0.0],
                )
                .unwrap();
                if g > 0.0 {
                    direct.push((levels.transition_frequency(i, j).unwrap(), g));
                }
            }
        }
        for &(omega, factor) in &cache.transitions[0][0] {
            let gamma_line = g_density * factor;
            let (_, reference) = direct
                .iter()
                .min_by(|a, b| (a.0 - omega).abs().total_cmp(&(b.0 - omega).abs()))
                .unwrap();
            assert_relative_eq!(gamma_line, reference, max_relative = 1e-9);
        }
    }

    #[test]
    fn single_i0_species_gives_single_branch() {
        let species = vec![BroadbandSpecies {
            isotope: yb_i0(),
            weight: 1.0,
            gamma: 0.023,
        }];
        let b_axis: Vec<f64> = (0..30).map(|k| 0.02 + 0.0025 * k as f64).collect();
        let f_axis: Vec<f64> = (0..130).map(|k| 1.0 + 0.05 * k as f64).collect();
        let map =
            simulate_broadband_map(&species, &b_axis, &f_axis, 0.010, 1e-6, Occupation::Zero)
                .unwrap();
        // Each column's minimum tracks the single electronic branch
        // Omega = g_par mu_B B.
        for (bi, &b) in b_axis.iter().enumerate() {
            let col = map.column(bi);
            let (kmin, _) = col
                .iter()
                .enumerate()
                .min_by(|a, c| a.1.total_cmp(c.1))
                .unwrap();
            let expect = 4.225 * crate::constants::MU_B_OVER_H * b;
            assert!(
                (f_axis[kmin] - expect).abs() <= 0.06,
                "branch off at column {bi}: {} vs {expect}",
                f_axis[kmin]
            );
        }
    }

    #[test]
    fn round_trip_recovers_gamma_and_weights() {
        let truth = natural_mixture([0.021, 0.023, 0.025]);
        let b_axis: Vec<f64> = (0..36).map(|k| 0.01 + 0.0035 * k as f64).collect();
        let f_axis: Vec<f64> = (0..90).map(|k| 0.4 + 0.09 * k as f64).collect();
        let g_density = 2.4e-4;
        let map = simulate_broadband_map(&truth, &b_axis, &f_axis, 0.010, g_density,
            Occupation::Zero)
        .unwrap();

        // Gamma recovery with known weights.
        let config = BroadbandFitConfig {
            species: truth.clone(),
            temperature_k: 0.010,
            g_density: ParamSpec::bounded(g_density * 1.25, 0.0, 1.0),
            gammas: vec![
                ParamSpec::bounded(0.016, 1e-4, 0.2),
                ParamSpec::bounded(0.030, 1e-4, 0.2),
                ParamSpec::bounded(0.020, 1e-4, 0.2),
            ],
            fit_weights: false,
            normalized: true,
            occupation: Occupation::Zero,
            optimizer: OptimizerConfig::default(),
        };
        let fit = fit_broadband_map(&map, &config).unwrap();
        for (got, want) in fit.gammas.iter().zip([0.021, 0.023, 0.025]) {
            assert_relative_eq!(got.value, want, max_relative = 0.02);
        }
        assert_relative_eq!(fit.g_density.value, g_density, max_relative = 0.05);

        // Abundance diagnostic: start from uniform weights.
        let mut config = config;
        config.fit_weights = true;
        config.species.iter_mut().for_each(|s| s.weight = 1.0 / 3.0);
        config.gammas = vec![
            ParamSpec::bounded(0.021, 1e-4, 0.2),
            ParamSpec::bounded(0.023, 1e-4, 0.2),
            ParamSpec::bounded(0.025, 1e-4, 0.2),
        ];
        config.g_density = ParamSpec::frozen(g_density);
        let fit = fit_broadband_map(&map, &config).unwrap();
        let weights = fit.weights.unwrap();
        for (got, want) in weights.iter().zip([0.14, 0.70, 0.16]) {
            assert!(
                (got.value - want).abs() <= 0.03,
                "weight {} vs {want}",
                got.value
            );
        }
    }
}
