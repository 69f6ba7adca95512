//! Level sets: eigenvalues/eigenvectors of the spin Hamiltonian with a
//! deterministic ordering and phase convention, plus the level-pair queries
//! built on them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::constants::MU_B_OVER_H;
use crate::error::{Error, Result};

use super::{SpinSystem, StrainParam};

/// Energy clusters closer than this (GHz) are treated as degenerate and
/// re-ordered by the z-Zeeman generator, which reproduces the limit of an
/// infinitesimal symmetry-breaking field along z.
const DEGENERACY_TOL_GHZ: f64 = 1e-9;

/// Finite-difference step for d(omega)/dB, tesla.
const SLOPE_STEP_T: f64 = 1e-5;

/// Bisection tolerance for resonance fields, tesla.
const RESONANCE_TOL_T: f64 = 1e-7;

/// Eigenlevels of a spin system at one static field.
///
/// Energies are ascending (index 0 is the ground state) and eigenvector
/// phases are fixed by making the largest-magnitude component of each state
/// real and positive, so matrix elements are reproducible across platforms.
#[derive(Debug, Clone)]
pub struct LevelSet {
    /// Applied static field, tesla.
    pub field: [f64; 3],
    /// Level energies in GHz, ascending.
    energies: Vec<f64>,
    /// Column k is the eigenvector of level k.
    states: DMatrix<Complex64>,
}

/// One level pair with the quantities entering the line-coupling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Lower level index.
    pub i: usize,
    /// Upper level index (i < j).
    pub j: usize,
    /// Transition frequency E_j - E_i, GHz (non-negative).
    pub omega: f64,
    /// |<psi_j| b_dir . V |psi_i>| in GHz per tesla of drive field.
    pub matrix_element: f64,
    /// Thermal population difference P_i - P_j at the queried temperature.
    pub delta_p: f64,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, k: usize) -> Result<f64> {
        self.energies
            .get(k)
            .copied()
            .ok_or(Error::LevelIndexOutOfRange {
                index: k,
                dim: self.energies.len(),
            })
    }

    /// Unitary eigenvector matrix (columns are states).
    pub fn states(&self) -> &DMatrix<Complex64> {
        &self.states
    }

    pub fn state(&self, k: usize) -> Result<DVector<Complex64>> {
        if k >= self.energies.len() {
            return Err(Error::LevelIndexOutOfRange {
                index: k,
                dim: self.energies.len(),
            });
        }
        Ok(self.states.column(k).into_owned())
    }

    /// Transition frequency E_j - E_i for an ordered pair i < j, GHz.
    pub fn transition_frequency(&self, i: usize, j: usize) -> Result<f64> {
        let (lo, hi) = order_pair(i, j, self.energies.len())?;
        Ok(self.energies[hi] - self.energies[lo])
    }

    /// Boltzmann populations over all levels at temperature `t` (kelvin).
    ///
    /// Sums to 1 within 1e-12; stable down to microkelvin via max-shift.
    pub fn thermal_populations(&self, t: f64, k_b_over_h: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTemperature(t));
        }
        let beta = 1.0 / (k_b_over_h * t);
        let e0 = self.energies[0];
        let weights: Vec<f64> = self
            .energies
            .iter()
            .map(|e| (-(e - e0) * beta).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / z).collect())
    }

    /// Population difference P_i - P_j at temperature `t`.
    pub fn population_difference(
        &self,
        i: usize,
        j: usize,
        t: f64,
        k_b_over_h: f64,
    ) -> Result<f64> {
        let n = self.energies.len();
        check_index(i, n)?;
        check_index(j, n)?;
        let p = self.thermal_populations(t, k_b_over_h)?;
        Ok(p[i] - p[j])
    }
}

fn check_index(k: usize, n: usize) -> Result<()> {
    if k >= n {
        return Err(Error::LevelIndexOutOfRange { index: k, dim: n });
    }
    Ok(())
}

fn order_pair(i: usize, j: usize, n: usize) -> Result<(usize, usize)> {
    check_index(i, n)?;
    check_index(j, n)?;
    if i == j {
        return Err(Error::InvalidConfig(format!(
            "transition requires two distinct levels, got ({i},{j})"
        )));
    }
    Ok((i.min(j), i.max(j)))
}

impl SpinSystem {
    /// Diagonalize the Hamiltonian at `b` (tesla).
    pub fn levels(&self, b: [f64; 3]) -> Result<LevelSet> {
        let h = self.hamiltonian(b)?;
        let eig = nalgebra::SymmetricEigen::try_new(h, f64::EPSILON, 10_000)
            .ok_or(Error::EigenNonConvergence {
                dim: self.dimension(),
            })?;

        // Ascending energy order.
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let mut energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut states = DMatrix::<Complex64>::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            states.set_column(col, &eig.eigenvectors.column(k));
        }

        self.resolve_degeneracies(&mut energies, &mut states);
        fix_phases(&mut states);

        Ok(LevelSet {
            field: b,
            energies,
            states,
        })
    }

    /// Convenience for the common axial geometry: `B = bz * z_hat`.
    pub fn levels_z(&self, bz: f64) -> Result<LevelSet> {
        self.levels([0.0, 0.0, bz])
    }

    /// Within each numerically degenerate energy cluster, rotate the basis to
    /// diagonalize dH/dB_z and order by its ascending expectation value. This
    /// is the exact limit of breaking ties with an infinitesimal field along
    /// z and keeps level indices stable through zero-field degeneracies.
    fn resolve_degeneracies(&self, energies: &mut [f64], states: &mut DMatrix<Complex64>) {
        let n = energies.len();
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && (energies[end] - energies[end - 1]).abs() < DEGENERACY_TOL_GHZ {
                end += 1;
            }
            let width = end - start;
            if width > 1 {
                let sub = states.columns(start, width).into_owned();
                let zz = self.zeeman_z();
                let projected = sub.adjoint() * (zz * &sub);
                if let Some(rot) =
                    nalgebra::SymmetricEigen::try_new(projected, f64::EPSILON, 10_000)
                {
                    let mut suborder: Vec<usize> = (0..width).collect();
                    suborder
                        .sort_by(|&a, &c| rot.eigenvalues[a].total_cmp(&rot.eigenvalues[c]));
                    let rotated = &sub * &rot.eigenvectors;
                    for (offset, &k) in suborder.iter().enumerate() {
                        states.set_column(start + offset, &rotated.column(k));
                    }
                }
            }
            start = end;
        }
    }

    /// |<psi_j| b_vec . V |psi_i>|, in GHz per unit of `b_vec` in tesla.
    ///
    /// With a unit direction vector this is the matrix element in GHz/T; with
    /// a physical field vector in tesla it is the coupling in GHz.
    pub fn drive_element(
        &self,
        levels: &LevelSet,
        i: usize,
        j: usize,
        b_vec: [f64; 3],
    ) -> Result<f64> {
        let (lo, hi) = order_pair(i, j, levels.len())?;
        let v = self.drive_operator(b_vec);
        let bra = levels.states.column(hi);
        let ket = levels.states.column(lo);
        Ok((bra.adjoint() * (&v * ket))[(0, 0)].norm())
    }

    /// The three complex drive elements `<psi_j| V_k |psi_i>` (k = x, y, z) in
    /// GHz/T. `|sum_k b_k elem_k|` then gives the coupling for any field
    /// vector without rebuilding operators; this is the hot path of volume
    /// integrations.
    pub fn drive_element_vector(
        &self,
        levels: &LevelSet,
        i: usize,
        j: usize,
    ) -> Result<[Complex64; 3]> {
        let (lo, hi) = order_pair(i, j, levels.len())?;
        let bra = levels.states.column(hi);
        let ket = levels.states.column(lo);
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for k in 0..3 {
            out[k] = (bra.adjoint() * (&self.zeeman[k] * ket))[(0, 0)];
        }
        Ok(out)
    }

    /// Assemble a [`Transition`] record at temperature `t` for a unit drive
    /// direction `b_dir`.
    pub fn transition(
        &self,
        levels: &LevelSet,
        i: usize,
        j: usize,
        b_dir: [f64; 3],
        t: f64,
    ) -> Result<Transition> {
        let (lo, hi) = order_pair(i, j, levels.len())?;
        Ok(Transition {
            i: lo,
            j: hi,
            omega: levels.transition_frequency(lo, hi)?,
            matrix_element: self.drive_element(levels, lo, hi, b_dir)?,
            delta_p: levels.population_difference(lo, hi, t, self.constants().k_b_over_h)?,
        })
    }

    /// Transition frequency of pair (i, j) at field `bz` along z, GHz.
    pub fn transition_frequency_z(&self, i: usize, j: usize, bz: f64) -> Result<f64> {
        self.levels_z(bz)?.transition_frequency(i, j)
    }

    /// Field (tesla, along z) at which the (i, j) gap equals `f_target` GHz,
    /// found by bisection to 1e-7 T. The gap must cross `f_target` inside
    /// `[b_lo, b_hi]`.
    pub fn resonance_field(
        &self,
        i: usize,
        j: usize,
        f_target: f64,
        b_lo: f64,
        b_hi: f64,
    ) -> Result<f64> {
        let no_resonance = || Error::NoResonanceInRange {
            i,
            j,
            f_target,
            lo: b_lo,
            hi: b_hi,
        };
        if !(b_lo < b_hi) {
            return Err(no_resonance());
        }
        let g = |b: f64| -> Result<f64> {
            Ok(self.transition_frequency_z(i, j, b)? - f_target)
        };
        let mut lo = b_lo;
        let mut hi = b_hi;
        let mut g_lo = g(lo)?;
        let g_hi = g(hi)?;
        if g_lo == 0.0 {
            return Ok(lo);
        }
        if g_hi == 0.0 {
            return Ok(hi);
        }
        if g_lo.signum() == g_hi.signum() {
            return Err(no_resonance());
        }
        while hi - lo > RESONANCE_TOL_T {
            let mid = 0.5 * (lo + hi);
            let g_mid = g(mid)?;
            if g_mid == 0.0 {
                return Ok(mid);
            }
            if g_mid.signum() == g_lo.signum() {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Dimensionless effective slope g_eff = (1/mu_B) d(omega_ij)/dB at field
    /// `bz` along z, from a central difference with a 1e-5 T step.
    pub fn effective_slope(&self, i: usize, j: usize, bz: f64) -> Result<f64> {
        let up = self.transition_frequency_z(i, j, bz + SLOPE_STEP_T)?;
        let dn = self.transition_frequency_z(i, j, bz - SLOPE_STEP_T)?;
        Ok((up - dn) / (2.0 * SLOPE_STEP_T) / MU_B_OVER_H)
    }

    /// Sensitivity of the (i, j) gap to a fractional change of one Hamiltonian
    /// parameter: the central slope of omega_ij versus +/- `rel_step` scaling,
    /// in GHz per unit fractional change.
    pub fn strain_sensitivity(
        &self,
        i: usize,
        j: usize,
        bz: f64,
        param: StrainParam,
        rel_step: f64,
    ) -> Result<f64> {
        if !(rel_step > 0.0 && rel_step <= 0.05) {
            return Err(Error::InvalidStrainStep(rel_step));
        }
        let up = self
            .with_scaled_param(param, 1.0 + rel_step)?
            .transition_frequency_z(i, j, bz)?;
        let dn = self
            .with_scaled_param(param, 1.0 - rel_step)?
            .transition_frequency_z(i, j, bz)?;
        Ok((up - dn) / (2.0 * rel_step))
    }
}

/// Make the largest-magnitude component of each column real and positive.
fn fix_phases(states: &mut DMatrix<Complex64>) {
    let (n, cols) = states.shape();
    for c in 0..cols {
        let mut best = 0;
        let mut best_norm = 0.0;
        for r in 0..n {
            let v = states[(r, c)].norm_sqr();
            if v > best_norm {
                best_norm = v;
                best = r;
            }
        }
        let pivot = states[(best, c)];
        if pivot.norm() > 0.0 {
            let phase = pivot.conj() / pivot.norm();
            for r in 0..n {
                states[(r, c)] *= phase;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{K_B_OVER_H, MU_B_OVER_H, MU_N_OVER_H};
    use crate::spin::{yb171, yb173, yb_i0};
    use approx::assert_relative_eq;

    #[test]
    fn i0_zero_field_is_doubly_degenerate_at_zero() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        let levels = sys.levels([0.0; 3]).unwrap();
        assert_eq!(levels.len(), 2);
        assert!(levels.energies()[0].abs() < 1e-14);
        assert!(levels.energies()[1].abs() < 1e-14);
    }

    #[test]
    fn energies_ascend_and_states_are_unitary() {
        let sys = SpinSystem::new(yb173()).unwrap();
        for bz in [0.0, 0.017, 0.0886, 0.5] {
            let levels = sys.levels_z(bz).unwrap();
            for w in levels.energies().windows(2) {
                assert!(w[0] <= w[1]);
            }
            let u = levels.states();
            let gram = u.adjoint() * u;
            let id = DMatrix::<Complex64>::identity(12, 12);
            let err = (gram - id).iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "unitarity error {err} at bz = {bz}");
        }
    }

    #[test]
    fn eigen_reconstruction_matches_hamiltonian() {
        for params in crate::spin::builtin_isotopes() {
            let sys = SpinSystem::new(params).unwrap();
            for bz in [0.0, 0.02, 0.3] {
                let h = sys.hamiltonian([0.0, 0.0, bz]).unwrap();
                let levels = sys.levels_z(bz).unwrap();
                let u = levels.states();
                let diag = DMatrix::from_diagonal(&DVector::from_iterator(
                    levels.len(),
                    levels.energies().iter().map(|&e| Complex64::new(e, 0.0)),
                ));
                let rebuilt = u * diag * u.adjoint();
                let err = (&h - rebuilt).iter().map(|c| c.norm()).fold(0.0, f64::max);
                assert!(err < 1e-9, "reconstruction error {err} at bz = {bz}");
            }
        }
    }

    #[test]
    fn phase_convention_is_applied() {
        let sys = SpinSystem::new(yb171()).unwrap();
        let levels = sys.levels_z(0.04).unwrap();
        for c in 0..levels.len() {
            let col = levels.states().column(c);
            let (mut best, mut best_norm) = (0, 0.0);
            for (r, v) in col.iter().enumerate() {
                if v.norm_sqr() > best_norm {
                    best_norm = v.norm_sqr();
                    best = r;
                }
            }
            let pivot = col[best];
            assert!(pivot.im.abs() < 1e-12 && pivot.re > 0.0);
        }
    }

    #[test]
    fn i0_transverse_element_is_half_g_perp_mu_b() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        let levels = sys.levels_z(0.05).unwrap();
        let x = sys.drive_element(&levels, 0, 1, [1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(x, 0.5 * 2.935 * MU_B_OVER_H, max_relative = 1e-12);
        assert!((x - 20.540).abs() < 1e-3);
        let z = sys.drive_element(&levels, 0, 1, [0.0, 0.0, 1.0]).unwrap();
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn element_is_symmetric_in_the_pair() {
        let sys = SpinSystem::new(yb173()).unwrap();
        let levels = sys.levels_z(0.02).unwrap();
        let a = sys.drive_element(&levels, 3, 7, [1.0, 0.0, 0.0]).unwrap();
        let b = sys.drive_element(&levels, 7, 3, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nuclear_to_electronic_ratio_without_hyperfine() {
        let mut params = yb173();
        params.a_par_ghz = 0.0;
        params.a_perp_ghz = 0.0;
        let sys = SpinSystem::new(params).unwrap();
        let levels = sys.levels_z(0.08).unwrap();
        let mut max_nuclear = 0.0f64;
        let mut max_electronic = 0.0f64;
        for i in 0..12 {
            for j in (i + 1)..12 {
                let elem = sys.drive_element(&levels, i, j, [1.0, 0.0, 0.0]).unwrap();
                let omega = levels.transition_frequency(i, j).unwrap();
                if omega > 1.0 {
                    max_electronic = max_electronic.max(elem);
                } else if omega > 1e-6 {
                    max_nuclear = max_nuclear.max(elem);
                }
            }
        }
        let ratio = max_nuclear / max_electronic;
        // Exactly 3x the bare gyromagnetic ratio: the strongest I-ladder
        // element is 3/2 against the electronic 1/2.
        let bare = 0.02592 * MU_N_OVER_H / (2.935 * MU_B_OVER_H);
        assert_relative_eq!(ratio, 3.0 * bare, max_relative = 1e-9);
        assert!(ratio < 1e-4);
    }

    #[test]
    fn populations_limits() {
        let sys = SpinSystem::new(yb173()).unwrap();
        let levels = sys.levels_z(0.017).unwrap();
        let hot = levels.thermal_populations(1e6, K_B_OVER_H).unwrap();
        assert!((hot.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for p in &hot {
            assert!((p - 1.0 / 12.0).abs() < 1e-6);
        }
        let cold = levels.thermal_populations(1e-6, K_B_OVER_H).unwrap();
        assert!((cold[0] - 1.0).abs() < 1e-12);
        for (k, p) in cold.iter().enumerate().skip(1) {
            assert!(*p < 1e-15, "level {k} still populated: {p}");
        }
        assert!(levels.thermal_populations(0.0, K_B_OVER_H).is_err());
        assert!(levels.thermal_populations(-1.0, K_B_OVER_H).is_err());
    }

    #[test]
    fn delta_p_is_antisymmetric_and_bounded() {
        let sys = SpinSystem::new(yb173()).unwrap();
        let levels = sys.levels_z(0.02).unwrap();
        for (i, j) in [(0, 1), (2, 5), (0, 11)] {
            let a = levels.population_difference(i, j, 0.05, K_B_OVER_H).unwrap();
            let b = levels.population_difference(j, i, 0.05, K_B_OVER_H).unwrap();
            assert_eq!(a, -b);
            assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn i0_effective_slope_is_g_par() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        for bz in [0.01, 0.05, 0.3] {
            let g = sys.effective_slope(0, 1, bz).unwrap();
            assert_relative_eq!(g, 4.225, max_relative = 1e-9);
        }
    }

    #[test]
    fn resonance_field_i0_at_cavity_frequency() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        let b = sys.resonance_field(0, 1, 2.93, 1e-4, 0.2).unwrap();
        let analytic = 2.93 / (4.225 * MU_B_OVER_H);
        assert!((b - analytic).abs() < 1e-6);
        assert!((0.0485..=0.0505).contains(&b));
    }

    #[test]
    fn resonance_field_requires_sign_change() {
        let sys = SpinSystem::new(yb_i0()).unwrap();
        let err = sys.resonance_field(0, 1, 2.93, 0.2, 0.4).unwrap_err();
        assert!(matches!(err, Error::NoResonanceInRange { .. }));
    }

    #[test]
    fn strain_sensitivity_preconditions_and_i0() {
        let sys = SpinSystem::new(yb173()).unwrap();
        assert!(matches!(
            sys.strain_sensitivity(0, 1, 0.02, StrainParam::P, 0.0),
            Err(Error::InvalidStrainStep(_))
        ));
        assert!(matches!(
            sys.strain_sensitivity(0, 1, 0.02, StrainParam::P, 0.06),
            Err(Error::InvalidStrainStep(_))
        ));
        let sys0 = SpinSystem::new(yb_i0()).unwrap();
        let s = sys0
            .strain_sensitivity(0, 1, 0.02, StrainParam::APar, 0.01)
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn hyperfine_free_spectrum_is_sixfold_i0_copy() {
        let mut params = yb173();
        params.a_par_ghz = 0.0;
        params.a_perp_ghz = 0.0;
        params.p_ghz = 0.0;
        params.g_i = 0.0;
        let sys = SpinSystem::new(params).unwrap();
        let sys0 = SpinSystem::new(yb_i0()).unwrap();
        let bz = 0.07;
        let big = sys.levels_z(bz).unwrap();
        let small = sys0.levels_z(bz).unwrap();
        for (k, e) in big.energies().iter().enumerate() {
            let expect = small.energies()[k / 6];
            assert!((e - expect).abs() < 1e-10);
        }
    }
}
