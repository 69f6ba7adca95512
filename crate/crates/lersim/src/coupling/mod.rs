//! Collective spin–photon coupling rates.
//!
//! Every grid cell inside the crystal contributes the coupling of its
//! expected spin count N_k = abundance * doping * rho * dV_k in quadrature:
//!
//! ```text
//! G^2 = sum_k N_k * (scale * |<psi_j| V(b_k * i_zpf) |psi_i>| * dP^e)^2
//! ```
//!
//! which gives the ensemble square-root-of-N enhancement: G scales as
//! sqrt(doping), sqrt(abundance), sqrt(rho), and linearly in `scale` and
//! `i_zpf`. The population-difference exponent `e` defaults to the linear
//! convention (e = 1) with a square-root option.
//!
//! Cells inherit the field grid (node-centered, dV = dx dy dz); partial
//! cells at the crystal boundary are weighted by their fractional overlap.
//! The cell reduction uses the same fixed pairwise contract as the field
//! kernel, so results are independent of the parallel degree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::field::FieldGrid;
use crate::spin::{LevelSet, SpinSystem};

/// Crystal volume and composition relative to the field grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    /// Bounding box, µm, in the field-grid frame.
    pub box_min_um: [f64; 3],
    pub box_max_um: [f64; 3],
    /// Spin density at 100% doping, spins per µm^3.
    pub spin_density_per_um3: f64,
    /// Doping fraction x in (0, 1].
    pub doping: f64,
    /// Isotope abundance in (0, 1].
    pub abundance: f64,
    /// Crystal anisotropy axis; must be parallel to z, the frame the spin
    /// Hamiltonian is written in.
    pub anisotropy_axis: [f64; 3],
}

impl CrystalSpec {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            if !(self.box_min_um[k] < self.box_max_um[k]) {
                return Err(Error::InvalidConfig(format!(
                    "crystal box must have positive extent on axis {k}"
                )));
            }
        }
        if !(self.doping > 0.0 && self.doping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "doping must lie in (0, 1], got {}",
                self.doping
            )));
        }
        if !(self.abundance > 0.0 && self.abundance <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "abundance must lie in (0, 1], got {}",
                self.abundance
            )));
        }
        if !(self.spin_density_per_um3 > 0.0) {
            return Err(Error::InvalidConfig(
                "spin density must be positive".into(),
            ));
        }
        let a = self.anisotropy_axis;
        let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if !(norm > 0.0) || (a[2].abs() / norm) < 1.0 - 1e-9 {
            return Err(Error::InvalidConfig(
                "anisotropy axis must be a unit vector parallel to z".into(),
            ));
        }
        Ok(())
    }

    /// Box translated by `dz_um` away from the chip plane (along +z).
    pub fn shifted_z(&self, dz_um: f64) -> Self {
        let mut out = *self;
        out.box_min_um[2] += dz_um;
        out.box_max_um[2] += dz_um;
        out
    }
}

/// Exponent applied to the population difference in the per-spin coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPExponent {
    /// g ~ dP (the printed convention).
    #[default]
    Linear,
    /// g ~ sqrt(dP) (standard ensemble counting).
    Sqrt,
}

impl DeltaPExponent {
    pub fn apply(&self, delta_p: f64) -> f64 {
        match self {
            DeltaPExponent::Linear => delta_p,
            DeltaPExponent::Sqrt => delta_p.signum() * delta_p.abs().sqrt(),
        }
    }
}

/// Result of one volume integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    /// Collective coupling, GHz.
    pub g_ghz: f64,
    /// Number of cells with nonzero overlap.
    pub cell_count: usize,
    pub temperature_k: f64,
    pub scale: f64,
    pub i_zpf_a: f64,
    /// Set when the crystal box does not intersect the grid: the result is
    /// zero coupling by construction.
    pub empty_intersection: bool,
    /// Per-cell contributions g~ (such that G = sqrt(sum g~^2)), when
    /// requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contributions: Option<Vec<f64>>,
}

/// One collective-coupling evaluation: grid, crystal, spin system and level
/// set (at the transition's resonance field), level pair, and scaling knobs.
#[derive(Clone, Copy)]
pub struct CouplingJob<'a> {
    pub grid: &'a FieldGrid,
    pub crystal: &'a CrystalSpec,
    pub sys: &'a SpinSystem,
    pub levels: &'a LevelSet,
    pub i: usize,
    pub j: usize,
    pub temperature_k: f64,
    /// Zero-point current of the resonator mode, amperes; converts the
    /// per-ampere field map to a per-photon field.
    pub i_zpf_a: f64,
    /// Overall scaling factor (effective filling).
    pub scale: f64,
    pub delta_p_exponent: DeltaPExponent,
}

struct CellRange {
    lo: [usize; 3],
    hi: [usize; 3], // inclusive
}

impl CellRange {
    fn count(&self) -> usize {
        (0..3).map(|k| self.hi[k] - self.lo[k] + 1).product()
    }

    fn unflatten(&self, mut n: usize) -> [usize; 3] {
        let nx = self.hi[0] - self.lo[0] + 1;
        let ny = self.hi[1] - self.lo[1] + 1;
        let ix = self.lo[0] + n % nx;
        n /= nx;
        let iy = self.lo[1] + n % ny;
        let iz = self.lo[2] + n / ny;
        [ix, iy, iz]
    }
}

/// Cells (node-centered, half-spacing extent) overlapping the crystal box.
fn intersect_cells(grid: &FieldGrid, crystal: &CrystalSpec) -> Option<CellRange> {
    let spec = &grid.spec;
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for k in 0..3 {
        let s = spec.spacing_um[k];
        let first = spec.origin_um[k];
        let last = spec.origin_um[k] + (spec.counts[k] - 1) as f64 * s;
        // A cell centered at node n covers [n - s/2, n + s/2].
        let min_wanted = crystal.box_min_um[k];
        let max_wanted = crystal.box_max_um[k];
        if max_wanted <= first - 0.5 * s || min_wanted >= last + 0.5 * s {
            return None;
        }
        let lo_idx = ((min_wanted - first) / s + 0.5).floor().max(0.0) as usize;
        let hi_idx = (((max_wanted - first) / s - 0.5).ceil().max(0.0) as usize)
            .min(spec.counts[k] - 1);
        if lo_idx > hi_idx {
            return None;
        }
        lo[k] = lo_idx;
        hi[k] = hi_idx;
    }
    Some(CellRange { lo, hi })
}

/// Fractional overlap of the cell at node (ix, iy, iz) with the crystal box.
fn overlap_fraction(grid: &FieldGrid, crystal: &CrystalSpec, idx: [usize; 3]) -> f64 {
    let spec = &grid.spec;
    let mut frac = 1.0;
    for k in 0..3 {
        let s = spec.spacing_um[k];
        let center = spec.origin_um[k] + idx[k] as f64 * s;
        let cell_lo = center - 0.5 * s;
        let cell_hi = center + 0.5 * s;
        let lo = cell_lo.max(crystal.box_min_um[k]);
        let hi = cell_hi.min(crystal.box_max_um[k]);
        if hi <= lo {
            return 0.0;
        }
        frac *= (hi - lo) / s;
    }
    frac
}

impl CouplingJob<'_> {
    /// Whether the (possibly shifted) crystal box lies inside the volume
    /// tiled by grid cells.
    fn box_inside_grid(&self, crystal: &CrystalSpec) -> bool {
        let spec = &self.grid.spec;
        (0..3).all(|k| {
            let s = spec.spacing_um[k];
            let first = spec.origin_um[k] - 0.5 * s;
            let last = spec.origin_um[k] + (spec.counts[k] - 1) as f64 * s + 0.5 * s;
            crystal.box_min_um[k] >= first - 1e-9 * s && crystal.box_max_um[k] <= last + 1e-9 * s
        })
    }

    fn compute_for(&self, crystal: &CrystalSpec, keep_contributions: bool) -> Result<CouplingResult> {
        crystal.validate()?;
        if !(self.temperature_k > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature_k));
        }
        if !(self.i_zpf_a > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "zero-point current must be positive, got {}",
                self.i_zpf_a
            )));
        }
        let range = match intersect_cells(self.grid, crystal) {
            Some(r) => r,
            None => {
                return Ok(CouplingResult {
                    g_ghz: 0.0,
                    cell_count: 0,
                    temperature_k: self.temperature_k,
                    scale: self.scale,
                    i_zpf_a: self.i_zpf_a,
                    empty_intersection: true,
                    contributions: keep_contributions.then(Vec::new),
                });
            }
        };

        let elem = self
            .sys
            .drive_element_vector(self.levels, self.i, self.j)?;
        let dp = self.levels.population_difference(
            self.i.min(self.j),
            self.i.max(self.j),
            self.temperature_k,
            self.sys.constants().k_b_over_h,
        )?;
        let dp_term = self.delta_p_exponent.apply(dp);
        let spec = &self.grid.spec;
        let cell_volume = spec.spacing_um[0] * spec.spacing_um[1] * spec.spacing_um[2];
        let density = crystal.abundance * crystal.doping * crystal.spin_density_per_um3;
        let prefactor = self.scale * self.i_zpf_a * dp_term;

        let n = range.count();
        // g~^2 per cell, computed in parallel into disjoint slots, then
        // reduced with the fixed pairwise tree.
        let grid = self.grid;
        let sq: Vec<f64> = exec::map_indices(n, |cell| {
            let idx = range.unflatten(cell);
            let w = overlap_fraction(grid, crystal, idx);
            if w == 0.0 {
                return 0.0;
            }
            let b = grid.value(idx[0], idx[1], idx[2]);
            let coupling = b[0] * elem[0] + b[1] * elem[1] + b[2] * elem[2];
            let n_spins = density * cell_volume * w;
            let g_tilde_sq = n_spins * (prefactor * coupling.norm()).powi(2);
            g_tilde_sq
        });
        let total = exec::pairwise_sum(n, &|k| sq[k]);
        let cell_count = sq.iter().filter(|v| **v > 0.0).count();
        Ok(CouplingResult {
            g_ghz: total.sqrt(),
            cell_count,
            temperature_k: self.temperature_k,
            scale: self.scale,
            i_zpf_a: self.i_zpf_a,
            empty_intersection: false,
            contributions: keep_contributions
                .then(|| sq.iter().map(|v| v.sqrt()).collect()),
        })
    }

    /// Collective coupling G of the (i, j) transition over the crystal.
    pub fn collective_coupling(&self) -> Result<CouplingResult> {
        self.compute_for(self.crystal, false)
    }

    /// Same, keeping per-cell contributions.
    pub fn collective_coupling_with_cells(&self) -> Result<CouplingResult> {
        self.compute_for(self.crystal, true)
    }

    /// G evaluated at each temperature. Only the population difference
    /// depends on T, so ratios follow the dP ratios exactly.
    pub fn temperature_curve(&self, temperatures: &[f64]) -> Result<Vec<CouplingResult>> {
        temperatures
            .iter()
            .map(|&t| {
                let mut job = *self;
                job.temperature_k = t;
                job.compute_for(self.crystal, false)
            })
            .collect()
    }

    /// G versus crystal–chip gap: the box is translated by each `gap_um`
    /// along +z (away from the chip plane) and recomputed. A shift that
    /// pushes the box outside the tiled grid volume produces a per-point
    /// error entry instead of a truncated integral.
    pub fn gap_scan(&self, gaps_um: &[f64]) -> Vec<GapScanPoint> {
        gaps_um
            .iter()
            .map(|&gap| {
                let shifted = self.crystal.shifted_z(gap);
                let entry = if !self.box_inside_grid(&shifted) {
                    Err(Error::CrystalOutsideGrid)
                } else {
                    self.compute_for(&shifted, false)
                };
                match entry {
                    Ok(res) => GapScanPoint {
                        gap_um: gap,
                        g_ghz: Some(res.g_ghz),
                        error: None,
                    },
                    Err(e) => GapScanPoint {
                        gap_um: gap,
                        g_ghz: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    }
}

/// One entry of a gap scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScanPoint {
    pub gap_um: f64,
    pub g_ghz: Option<f64>,
    pub error: Option<String>,
}

/// Cooperativity C = G^2 / (gamma kappa); all half-widths in GHz.
pub fn cooperativity(g: f64, gamma: f64, kappa: f64) -> Result<f64> {
    if !(gamma > 0.0 && kappa > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cooperativity needs gamma > 0 and kappa > 0, got {gamma} and {kappa}"
        )));
    }
    Ok(g * g / (gamma * kappa))
}

/// JSON report of one coupling evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingReport {
    pub transition: [usize; 2],
    pub temperature_k: f64,
    pub g_ghz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cooperativity: Option<f64>,
    pub cell_count: usize,
    pub scale: f64,
    pub i_zpf_a: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldGrid, GridSpec};
    use crate::spin::{yb173, SpinSystem};
    use approx::assert_relative_eq;

    fn uniform_grid(b: [f64; 3], counts: [usize; 3]) -> FieldGrid {
        let spec = GridSpec {
            origin_um: [0.0; 3],
            spacing_um: [1.0; 3],
            counts,
        };
        FieldGrid::new(spec, vec![b; counts[0] * counts[1] * counts[2]]).unwrap()
    }

    fn crystal(min: [f64; 3], max: [f64; 3]) -> CrystalSpec {
        CrystalSpec {
            box_min_um: min,
            box_max_um: max,
            spin_density_per_um3: 2.0,
            doping: 0.05,
            abundance: 0.16,
            anisotropy_axis: [0.0, 0.0, 1.0],
        }
    }

    struct Fixture {
        grid: FieldGrid,
        sys: SpinSystem,
        levels: crate::spin::LevelSet,
    }

    impl Fixture {
        fn new() -> Self {
            let sys = SpinSystem::new(yb173()).unwrap();
            let levels = sys.levels_z(0.0203).unwrap();
            Self {
                grid: uniform_grid([1e-6, 0.0, 0.0], [8, 8, 8]),
                sys,
                levels,
            }
        }

        fn job<'a>(&'a self, c: &'a CrystalSpec) -> CouplingJob<'a> {
            CouplingJob {
                grid: &self.grid,
                crystal: c,
                sys: &self.sys,
                levels: &self.levels,
                i: 1,
                j: 2,
                temperature_k: 0.010,
                i_zpf_a: 1e-8,
                scale: 1.0,
                delta_p_exponent: DeltaPExponent::Linear,
            }
        }
    }

    #[test]
    fn uniform_field_gives_sqrt_n_scaling() {
        let fx = Fixture::new();
        // Whole cells only: 2x2x2 vs 4x4x2 cell boxes (aligned to cell
        // boundaries at half-integer coordinates).
        let c8 = crystal([0.5, 0.5, 0.5], [2.5, 2.5, 2.5]);
        let c32 = crystal([0.5, 0.5, 0.5], [4.5, 4.5, 2.5]);
        let g8 = fx.job(&c8).collective_coupling().unwrap();
        let g32 = fx.job(&c32).collective_coupling().unwrap();
        assert_eq!(g8.cell_count, 8);
        assert_eq!(g32.cell_count, 32);
        assert_relative_eq!(g32.g_ghz / g8.g_ghz, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_field_region_gives_zero_coupling() {
        let fx = Fixture::new();
        let grid = uniform_grid([0.0; 3], [4, 4, 4]);
        let c = crystal([0.5; 3], [2.5; 3]);
        let mut job = fx.job(&c);
        job.grid = &grid;
        let res = job.collective_coupling().unwrap();
        assert_eq!(res.g_ghz, 0.0);
        assert!(!res.empty_intersection);
    }

    #[test]
    fn doping_scales_as_square_root() {
        let fx = Fixture::new();
        let c1 = crystal([0.5; 3], [3.5; 3]);
        let mut c2 = c1;
        c2.doping = 2.0 * c1.doping;
        let g1 = fx.job(&c1).collective_coupling().unwrap().g_ghz;
        let g2 = fx.job(&c2).collective_coupling().unwrap().g_ghz;
        assert_relative_eq!(g2 / g1, 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn abundance_enrichment_factor() {
        let fx = Fixture::new();
        let c = crystal([0.5; 3], [3.5; 3]);
        let mut enriched = c;
        enriched.abundance = 1.0;
        let g0 = fx.job(&c).collective_coupling().unwrap().g_ghz;
        let g1 = fx.job(&enriched).collective_coupling().unwrap().g_ghz;
        assert_relative_eq!(g1 / g0, (1.0f64 / 0.16).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(g1 / g0, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn linear_in_scale_and_zero_point_current() {
        let fx = Fixture::new();
        let c = crystal([0.5; 3], [3.5; 3]);
        let base = fx.job(&c).collective_coupling().unwrap().g_ghz;
        let mut job = fx.job(&c);
        job.scale = 3.0;
        assert_relative_eq!(
            job.collective_coupling().unwrap().g_ghz,
            3.0 * base,
            max_relative = 1e-12
        );
        let mut job = fx.job(&c);
        job.i_zpf_a *= 7.0;
        assert_relative_eq!(
            job.collective_coupling().unwrap().g_ghz,
            7.0 * base,
            max_relative = 1e-12
        );
    }

    #[test]
    fn partition_invariance() {
        let fx = Fixture::new();
        let whole = crystal([0.5, 0.5, 0.5], [6.5, 4.5, 3.5]);
        // Split along x into two disjoint sub-boxes.
        let left = crystal([0.5, 0.5, 0.5], [3.25, 4.5, 3.5]);
        let right = crystal([3.25, 0.5, 0.5], [6.5, 4.5, 3.5]);
        let gw = fx.job(&whole).collective_coupling().unwrap().g_ghz;
        let gl = fx.job(&left).collective_coupling().unwrap().g_ghz;
        let gr = fx.job(&right).collective_coupling().unwrap().g_ghz;
        let combined = (gl * gl + gr * gr).sqrt();
        assert_relative_eq!(combined, gw, max_relative = 1e-12);
    }

    #[test]
    fn empty_intersection_flags_and_zeroes() {
        let fx = Fixture::new();
        let c = crystal([100.0; 3], [110.0; 3]);
        let res = fx.job(&c).collective_coupling().unwrap();
        assert!(res.empty_intersection);
        assert_eq!(res.g_ghz, 0.0);
        assert_eq!(res.cell_count, 0);
    }

    #[test]
    fn temperature_ratio_follows_population_difference() {
        let fx = Fixture::new();
        let c = crystal([0.5; 3], [3.5; 3]);
        let job = fx.job(&c);
        let curve = job.temperature_curve(&[0.010, 0.050]).unwrap();
        let dp1 = fx
            .levels
            .population_difference(1, 2, 0.010, fx.sys.constants().k_b_over_h)
            .unwrap();
        let dp2 = fx
            .levels
            .population_difference(1, 2, 0.050, fx.sys.constants().k_b_over_h)
            .unwrap();
        assert_relative_eq!(
            curve[1].g_ghz / curve[0].g_ghz,
            dp2 / dp1,
            max_relative = 1e-12
        );
        // Infinite-temperature limit: couplings vanish.
        let hot = job.temperature_curve(&[1e12]).unwrap();
        assert!(hot[0].g_ghz < 1e-10 * curve[0].g_ghz);
    }

    #[test]
    fn gap_scan_identity_and_errors() {
        let fx = Fixture::new();
        let c = crystal([0.5, 0.5, 0.5], [3.5, 3.5, 2.5]);
        let job = fx.job(&c);
        let scan = job.gap_scan(&[0.0, 1.0, 100.0]);
        let baseline = job.collective_coupling().unwrap().g_ghz;
        assert_eq!(scan[0].g_ghz.unwrap(), baseline);
        assert!(scan[1].g_ghz.is_some());
        assert!(scan[2].g_ghz.is_none() && scan[2].error.is_some());
    }

    #[test]
    fn cooperativity_reference_values() {
        let c12 = cooperativity(0.24e-3, 1.6e-3, 3.78e-6).unwrap();
        assert!((c12 - 9.52).abs() < 0.02);
        let c01 = cooperativity(0.13e-3, 2.1e-3, 3.78e-6).unwrap();
        assert!((c01 - 2.13).abs() < 0.01);
        assert_eq!(cooperativity(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(cooperativity(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn sqrt_exponent_halves_temperature_sensitivity() {
        let fx = Fixture::new();
        let c = crystal([0.5; 3], [3.5; 3]);
        let mut job = fx.job(&c);
        job.delta_p_exponent = DeltaPExponent::Sqrt;
        let curve = job.temperature_curve(&[0.010, 0.050]).unwrap();
        let dp1 = fx
            .levels
            .population_difference(1, 2, 0.010, fx.sys.constants().k_b_over_h)
            .unwrap();
        let dp2 = fx
            .levels
            .population_difference(1, 2, 0.050, fx.sys.constants().k_b_over_h)
            .unwrap();
        assert_relative_eq!(
            curve[1].g_ghz / curve[0].g_ghz,
            (dp2 / dp1).sqrt(),
            max_relative = 1e-12
        );
    }
}
