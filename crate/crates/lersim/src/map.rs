//! `TransmissionMap`: |S21| (optionally with phase) on a rectangular
//! (magnetic field, frequency) grid — the common currency between simulated
//! and measured spectroscopy data.
//!
//! CSV form: literal header `B_T,f_GHz,S21_mag` (plus `,S21_phase_rad` when
//! phase is present), then one row per cell in B-major order. Values use
//! shortest round-trip float formatting, so save/load cycles are bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    b_axis: Vec<f64>,
    f_axis: Vec<f64>,
    /// B-major: index bi * f_axis.len() + fi.
    magnitude: Vec<f64>,
    phase: Option<Vec<f64>>,
}

fn check_monotone(axis: &[f64], name: &'static str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::AxisNotMonotone(name));
    }
    let ascending = axis.windows(2).all(|w| w[0] < w[1]);
    let descending = axis.windows(2).all(|w| w[0] > w[1]);
    if !(ascending || descending) {
        return Err(Error::AxisNotMonotone(name));
    }
    Ok(())
}

impl TransmissionMap {
    pub fn new(b_axis: Vec<f64>, f_axis: Vec<f64>, magnitude: Vec<f64>) -> Result<Self> {
        Self::with_phase(b_axis, f_axis, magnitude, None)
    }

    pub fn with_phase(
        b_axis: Vec<f64>,
        f_axis: Vec<f64>,
        magnitude: Vec<f64>,
        phase: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_monotone(&b_axis, "B")?;
        check_monotone(&f_axis, "f")?;
        let cells = b_axis.len() * f_axis.len();
        if magnitude.len() != cells {
            return Err(Error::MalformedMap(format!(
                "value count {} does not match {} x {} grid",
                magnitude.len(),
                b_axis.len(),
                f_axis.len()
            )));
        }
        if let Some(ph) = &phase {
            if ph.len() != cells {
                return Err(Error::MalformedMap(format!(
                    "phase count {} does not match {} cells",
                    ph.len(),
                    cells
                )));
            }
        }
        Ok(Self {
            b_axis,
            f_axis,
            magnitude,
            phase,
        })
    }

    pub fn b_axis(&self) -> &[f64] {
        &self.b_axis
    }

    pub fn f_axis(&self) -> &[f64] {
        &self.f_axis
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn has_phase(&self) -> bool {
        self.phase.is_some()
    }

    pub fn phase(&self) -> Option<&[f64]> {
        self.phase.as_deref()
    }

    pub fn get(&self, bi: usize, fi: usize) -> f64 {
        self.magnitude[bi * self.f_axis.len() + fi]
    }

    pub fn get_phase(&self, bi: usize, fi: usize) -> Option<f64> {
        self.phase.as_ref().map(|p| p[bi * self.f_axis.len() + fi])
    }

    /// One fixed-B column over the frequency axis.
    pub fn column(&self, bi: usize) -> &[f64] {
        let nf = self.f_axis.len();
        &self.magnitude[bi * nf..(bi + 1) * nf]
    }

    /// Index of an axis value matched to within one part in 1e9 (or exactly).
    pub fn b_index(&self, b: f64) -> Result<usize> {
        find_on_axis(&self.b_axis, b).ok_or(Error::NotOnAxis {
            axis: "B",
            value: b,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if self.phase.is_some() {
            out.push_str("B_T,f_GHz,S21_mag,S21_phase_rad\n");
        } else {
            out.push_str("B_T,f_GHz,S21_mag\n");
        }
        for (bi, b) in self.b_axis.iter().enumerate() {
            for (fi, f) in self.f_axis.iter().enumerate() {
                match &self.phase {
                    Some(ph) => {
                        let _ = writeln!(
                            out,
                            "{},{},{},{}",
                            b,
                            f,
                            self.get(bi, fi),
                            ph[bi * self.f_axis.len() + fi]
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{},{},{}", b, f, self.get(bi, fi));
                    }
                }
            }
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn from_csv_str(text: &str, path: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            line: 1,
            detail: "empty file".into(),
        })?;
        let with_phase = match header.trim() {
            "B_T,f_GHz,S21_mag" => false,
            "B_T,f_GHz,S21_mag,S21_phase_rad" => true,
            other => {
                return Err(Error::MalformedHeader {
                    path: path.into(),
                    line: 1,
                    detail: format!("unrecognized header '{other}'"),
                })
            }
        };
        let ncols = if with_phase { 4 } else { 3 };

        let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
        for (idx, row) in lines {
            let lineno = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = row.split(',').collect();
            if toks.len() != ncols {
                return Err(Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("expected {ncols} values, got {}", toks.len()),
                });
            }
            let mut vals = [0.0f64; 4];
            for (k, tok) in toks.iter().enumerate() {
                vals[k] = tok.trim().parse().map_err(|_| Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("cannot parse '{tok}'"),
                })?;
            }
            rows.push((vals[0], vals[1], vals[2], vals[3]));
        }
        if rows.is_empty() {
            return Err(Error::MalformedMap(format!("{path} has no data rows")));
        }

        // Reconstruct axes: B-major means the f axis repeats within each
        // B block.
        let mut f_axis = Vec::new();
        let first_b = rows[0].0;
        for r in &rows {
            if r.0 == first_b {
                f_axis.push(r.1);
            } else {
                break;
            }
        }
        let nf = f_axis.len();
        if nf == 0 || rows.len() % nf != 0 {
            return Err(Error::MalformedMap(format!(
                "{path}: row count {} is not a multiple of the f-axis length {nf}",
                rows.len()
            )));
        }
        let nb = rows.len() / nf;
        let mut b_axis = Vec::with_capacity(nb);
        let mut magnitude = Vec::with_capacity(rows.len());
        let mut phase = if with_phase {
            Some(Vec::with_capacity(rows.len()))
        } else {
            None
        };
        for bi in 0..nb {
            let block = &rows[bi * nf..(bi + 1) * nf];
            let b = block[0].0;
            for (fi, r) in block.iter().enumerate() {
                if r.0 != b {
                    return Err(Error::MalformedMap(format!(
                        "{path}: B value changes inside a block (row {})",
                        bi * nf + fi + 2
                    )));
                }
                if r.1 != f_axis[fi] {
                    return Err(Error::MalformedMap(format!(
                        "{path}: f axis differs between B blocks (row {})",
                        bi * nf + fi + 2
                    )));
                }
                magnitude.push(r.2);
                if let Some(ph) = &mut phase {
                    ph.push(r.3);
                }
            }
            b_axis.push(b);
        }
        Self::with_phase(b_axis, f_axis, magnitude, phase)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

pub(crate) fn find_on_axis(axis: &[f64], value: f64) -> Option<usize> {
    axis.iter().position(|&x| {
        x == value || (x - value).abs() <= 1e-9 * x.abs().max(value.abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_map(phase: bool) -> TransmissionMap {
        let b = vec![0.01, 0.02, 0.03];
        let f = vec![2.9, 2.93, 2.96, 2.99];
        let mag: Vec<f64> = (0..12).map(|k| 1.0 - 0.01 * k as f64 / 3.0).collect();
        let ph = phase.then(|| (0..12).map(|k| -0.2 + 0.01 * k as f64).collect());
        TransmissionMap::with_phase(b, f, mag, ph).unwrap()
    }

    #[test]
    fn csv_round_trip_bit_exact() {
        for with_phase in [false, true] {
            let map = small_map(with_phase);
            let text = map.to_csv_string();
            let back = TransmissionMap::from_csv_str(&text, "<t>").unwrap();
            assert_eq!(map, back);
            assert_eq!(text, back.to_csv_string());
        }
    }

    #[test]
    fn axes_must_be_strictly_monotone() {
        assert!(matches!(
            TransmissionMap::new(vec![0.1, 0.1], vec![1.0, 2.0], vec![0.0; 4]),
            Err(Error::AxisNotMonotone("B"))
        ));
        assert!(matches!(
            TransmissionMap::new(vec![0.1, 0.2], vec![2.0, 1.0, 3.0], vec![0.0; 6]),
            Err(Error::AxisNotMonotone("f"))
        ));
        // Descending is allowed (a downward sweep is still monotone).
        assert!(TransmissionMap::new(vec![0.2, 0.1], vec![1.0, 2.0], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            TransmissionMap::new(vec![0.1, 0.2], vec![1.0, 2.0], vec![0.0; 3]),
            Err(Error::MalformedMap(_))
        ));
    }

    #[test]
    fn loader_rejects_ragged_blocks() {
        let text = "B_T,f_GHz,S21_mag\n0.01,1,0.5\n0.01,2,0.5\n0.02,1,0.5\n";
        assert!(matches!(
            TransmissionMap::from_csv_str(text, "<t>"),
            Err(Error::MalformedMap(_))
        ));
    }

    #[test]
    fn b_index_finds_axis_values() {
        let map = small_map(false);
        assert_eq!(map.b_index(0.02).unwrap(), 1);
        assert!(map.b_index(0.025).is_err());
    }
}
