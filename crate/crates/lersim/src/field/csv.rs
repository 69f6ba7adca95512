//! CSV forms of [`CurrentSheet`] and [`FieldGrid`].
//!
//! Current sheet: one header line of values `nx,ny,dx_um,dy_um,plane_z_um`,
//! then nx*ny lines `i,j,dIx_Aum,dIy_Aum`.
//!
//! Field grid: one header line of values
//! `x0_um,y0_um,z0_um,dx_um,dy_um,dz_um,nx,ny,nz`, then one line per node
//! `x_um,y_um,z_um,bx_TperA,by_TperA,bz_TperA` with x fastest and z slowest.
//!
//! Numbers are written with Rust's shortest round-trip formatting and a `.`
//! decimal separator, so a write/read cycle reproduces every value bit-exactly
//! regardless of locale.

use std::fmt::Write as _;
use std::path::Path;

use super::{CurrentSheet, FieldGrid, GridSpec};
use crate::error::{Error, Result};

fn parse_field<T: std::str::FromStr>(
    tok: &str,
    path: &str,
    line: usize,
    what: &str,
) -> Result<T> {
    tok.trim().parse::<T>().map_err(|_| Error::MalformedRow {
        path: path.into(),
        line,
        detail: format!("cannot parse {what} from '{tok}'"),
    })
}

impl CurrentSheet {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            self.nx, self.ny, self.dx_um, self.dy_um, self.plane_z_um
        );
        for j in 0..self.ny {
            for i in 0..self.nx {
                let e = self.element(i, j);
                let _ = writeln!(out, "{},{},{},{}", i, j, e[0], e[1]);
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
        let toks: Vec<&str> = header.split(',').collect();
        if toks.len() != 5 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                line: 1,
                detail: format!("expected 5 header values, got {}", toks.len()),
            });
        }
        let bad_header = |what: &str, tok: &str| Error::MalformedHeader {
            path: path.into(),
            line: 1,
            detail: format!("cannot parse {what} from '{tok}'"),
        };
        let nx: usize = toks[0].trim().parse().map_err(|_| bad_header("nx", toks[0]))?;
        let ny: usize = toks[1].trim().parse().map_err(|_| bad_header("ny", toks[1]))?;
        let dx: f64 = toks[2].trim().parse().map_err(|_| bad_header("dx_um", toks[2]))?;
        let dy: f64 = toks[3].trim().parse().map_err(|_| bad_header("dy_um", toks[3]))?;
        let pz: f64 = toks[4]
            .trim()
            .parse()
            .map_err(|_| bad_header("plane_z_um", toks[4]))?;
        if nx * ny == 0 {
            return Err(Error::EmptySheet(format!("nx = {nx}, ny = {ny} in {path}")));
        }

        let mut elements = vec![[f64::NAN, f64::NAN]; nx * ny];
        let mut seen = vec![false; nx * ny];
        let mut rows = 0usize;
        for (idx, row) in lines {
            let lineno = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = row.split(',').collect();
            if toks.len() != 4 {
                return Err(Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("expected 4 values, got {}", toks.len()),
                });
            }
            let i: usize = parse_field(toks[0], path, lineno, "i")?;
            let j: usize = parse_field(toks[1], path, lineno, "j")?;
            let dix: f64 = parse_field(toks[2], path, lineno, "dIx_Aum")?;
            let diy: f64 = parse_field(toks[3], path, lineno, "dIy_Aum")?;
            if i >= nx || j >= ny {
                return Err(Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("indices ({i},{j}) outside {nx}x{ny} sheet"),
                });
            }
            if !dix.is_finite() || !diy.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.into(),
                    line: lineno,
                });
            }
            let flat = j * nx + i;
            if seen[flat] {
                return Err(Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("duplicate element ({i},{j})"),
                });
            }
            seen[flat] = true;
            elements[flat] = [dix, diy];
            rows += 1;
        }
        if rows != nx * ny {
            return Err(Error::RowCountMismatch {
                path: path.into(),
                expected: nx * ny,
                got: rows,
            });
        }
        CurrentSheet::new(nx, ny, dx, dy, pz, elements)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

impl FieldGrid {
    pub fn to_csv_string(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.origin_um[0],
            s.origin_um[1],
            s.origin_um[2],
            s.spacing_um[0],
            s.spacing_um[1],
            s.spacing_um[2],
            s.counts[0],
            s.counts[1],
            s.counts[2]
        );
        for (k, v) in self.values().iter().enumerate() {
            let [ix, iy, iz] = s.unflatten(k);
            let p = s.position(ix, iy, iz);
            let _ = writeln!(out, "{},{},{},{},{},{}", p[0], p[1], p[2], v[0], v[1], v[2]);
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
        let toks: Vec<&str> = header.split(',').collect();
        if toks.len() != 9 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                line: 1,
                detail: format!("expected 9 header values, got {}", toks.len()),
            });
        }
        let f = |k: usize, what: &str| -> Result<f64> {
            toks[k].trim().parse().map_err(|_| Error::MalformedHeader {
                path: path.into(),
                line: 1,
                detail: format!("cannot parse {what} from '{}'", toks[k]),
            })
        };
        let u = |k: usize, what: &str| -> Result<usize> {
            toks[k].trim().parse().map_err(|_| Error::MalformedHeader {
                path: path.into(),
                line: 1,
                detail: format!("cannot parse {what} from '{}'", toks[k]),
            })
        };
        let spec = GridSpec {
            origin_um: [f(0, "x0")?, f(1, "y0")?, f(2, "z0")?],
            spacing_um: [f(3, "dx")?, f(4, "dy")?, f(5, "dz")?],
            counts: [u(6, "nx")?, u(7, "ny")?, u(8, "nz")?],
        };
        spec.validate()
            .map_err(|e| Error::MalformedHeader {
                path: path.into(),
                line: 1,
                detail: e.to_string(),
            })?;

        let mut values = Vec::with_capacity(spec.node_count());
        for (idx, row) in lines {
            let lineno = idx + 1;
            if row.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = row.split(',').collect();
            if toks.len() != 6 {
                return Err(Error::MalformedRow {
                    path: path.into(),
                    line: lineno,
                    detail: format!("expected 6 values, got {}", toks.len()),
                });
            }
            let bx: f64 = parse_field(toks[3], path, lineno, "bx_TperA")?;
            let by: f64 = parse_field(toks[4], path, lineno, "by_TperA")?;
            let bz: f64 = parse_field(toks[5], path, lineno, "bz_TperA")?;
            if !bx.is_finite() || !by.is_finite() || !bz.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.into(),
                    line: lineno,
                });
            }
            values.push([bx, by, bz]);
        }
        if values.len() != spec.node_count() {
            return Err(Error::RowCountMismatch {
                path: path.into(),
                expected: spec.node_count(),
                got: values.len(),
            });
        }
        FieldGrid::new(spec, values)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{biot_savart, CurrentSheet, GridSpec};
    use crate::error::Error;

    #[test]
    fn sheet_round_trip_is_bit_exact() {
        let sheet = CurrentSheet::new(
            3,
            2,
            0.7,
            1.3,
            -2.5,
            vec![
                [1.0, 0.0],
                [0.1234567890123457, -9.87e-12],
                [0.0, 1.0 / 3.0],
                [-1.5, 2.5],
                [f64::MIN_POSITIVE, 0.0],
                [3.0e300, -2.0e-300],
            ],
        )
        .unwrap();
        let text = sheet.to_csv_string();
        let back = CurrentSheet::from_csv_str(&text, "<test>").unwrap();
        assert_eq!(sheet, back);
        assert_eq!(text, back.to_csv_string());
    }

    #[test]
    fn grid_round_trip_is_bit_exact() {
        let sheet = CurrentSheet::new(4, 4, 1.0, 1.0, 0.0, vec![[0.3, -0.2]; 16]).unwrap();
        let spec = GridSpec {
            origin_um: [0.1, -0.4, 3.0],
            spacing_um: [0.9, 1.1, 2.3],
            counts: [3, 2, 2],
        };
        let grid = biot_savart(&sheet, &spec).unwrap();
        let text = grid.to_csv_string();
        let back = super::super::FieldGrid::from_csv_str(&text, "<test>").unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn empty_sheet_header_is_rejected() {
        let err = CurrentSheet::from_csv_str("0,0,1,1,0\n", "<test>").unwrap_err();
        assert!(matches!(err, Error::EmptySheet(_)));
    }

    #[test]
    fn malformed_inputs_give_distinct_errors() {
        assert!(matches!(
            CurrentSheet::from_csv_str("1,1,1,1\n0,0,1,0\n", "<t>").unwrap_err(),
            Error::MalformedHeader { .. }
        ));
        assert!(matches!(
            CurrentSheet::from_csv_str("1,1,1,1,0\n0,0,abc,0\n", "<t>").unwrap_err(),
            Error::MalformedRow { .. }
        ));
        assert!(matches!(
            CurrentSheet::from_csv_str("2,1,1,1,0\n0,0,1,0\n", "<t>").unwrap_err(),
            Error::RowCountMismatch { .. }
        ));
        assert!(matches!(
            CurrentSheet::from_csv_str("1,1,1,1,0\n0,0,NaN,0\n", "<t>").unwrap_err(),
            Error::NonFiniteValue { .. }
        ));
        assert!(matches!(
            CurrentSheet::from_csv_str("1,2,1,1,0\n0,0,1,0\n0,0,2,0\n", "<t>").unwrap_err(),
            Error::MalformedRow { .. }
        ));
    }

    #[test]
    fn one_by_one_sheet_parses_to_cell_center() {
        let sheet = CurrentSheet::from_csv_str("1,1,2,2,5\n0,0,1,0\n", "<t>").unwrap();
        assert_eq!(sheet.element_position(0, 0), [1.0, 1.0, 5.0]);
        assert_eq!(sheet.element(0, 0), [1.0, 0.0]);
    }
}
