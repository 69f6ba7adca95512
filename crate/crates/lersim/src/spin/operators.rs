//! Angular-momentum operator matrices for arbitrary (half-)integer spin.
//!
//! Basis convention: projection quantum number m descending from +j to -j,
//! so index 0 is the maximal-projection state. One code path serves all
//! spin values via the standard ladder construction.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// `(jx, jy, jz)` for spin `j` as dense complex matrices of dimension `2j+1`.
pub fn spin_operators(j: f64) -> (DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>) {
    let dim = dimension(j);
    let m = |k: usize| j - k as f64;

    let mut jz = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        jz[(k, k)] = Complex64::new(m(k), 0.0);
    }

    // j+ raises m: <m(k-1)| j+ |m(k)> = sqrt(j(j+1) - m(m+1)).
    let mut jp = DMatrix::<Complex64>::zeros(dim, dim);
    for k in 1..dim {
        let mm = m(k);
        jp[(k - 1, k)] = Complex64::new((j * (j + 1.0) - mm * (mm + 1.0)).sqrt(), 0.0);
    }
    let jm = jp.adjoint();

    let jx = (&jp + &jm).scale(0.5);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    (jx, jy, jz)
}

/// Multiplicity `2j+1` of spin `j`.
pub fn dimension(j: f64) -> usize {
    (2.0 * j + 1.0).round() as usize
}

/// True when `j` is a non-negative integer or half-integer.
pub fn is_valid_spin(j: f64) -> bool {
    if !j.is_finite() || j < 0.0 {
        return false;
    }
    let twice = 2.0 * j;
    (twice - twice.round()).abs() < 1e-9
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a * b - b * a
    }

    #[test]
    fn ladder_algebra_holds_for_half_integer_spins() {
        for &j in &[0.0, 0.5, 1.0, 2.5] {
            let (jx, jy, jz) = spin_operators(j);
            // [jx, jy] = i jz
            let lhs = commutator(&jx, &jy);
            let rhs = &jz * Complex64::new(0.0, 1.0);
            assert!((lhs - rhs).norm() < 1e-12, "j = {j}");
            // Casimir j^2 = j(j+1) I
            let j2 = &jx * &jx + &jy * &jy + &jz * &jz;
            let expect = DMatrix::identity(dimension(j), dimension(j))
                * Complex64::new(j * (j + 1.0), 0.0);
            assert!((j2 - expect).norm() < 1e-12, "j = {j}");
        }
    }

    #[test]
    fn spin_validation() {
        assert!(is_valid_spin(0.0));
        assert!(is_valid_spin(2.5));
        assert!(!is_valid_spin(-0.5));
        assert!(!is_valid_spin(0.3));
        assert!(!is_valid_spin(f64::NAN));
    }
}
