//! Microwave magnetic field maps above a resonator.
//!
//! The resonator's current distribution enters as a discretized 2D sheet of
//! current elements (A·µm); the field it generates per ampere of peak current
//! is accumulated on a 3D node grid by direct Biot–Savart summation. The sum
//! over elements uses a fixed pairwise tree and the output nodes are
//! partitioned disjointly across workers, so results are bit-identical for
//! any parallel degree.

mod csv;

use crate::constants::MU0_OVER_4PI_UM;
use crate::error::{Error, Result};
use crate::exec;

/// Discretized planar current distribution.
///
/// Element (i, j) sits at the cell center ((i+1/2) dx, (j+1/2) dy, plane_z)
/// in micrometers and carries the current element (dIx, dIy) in A·µm
/// (surface current density integrated over the cell).
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSheet {
    pub nx: usize,
    pub ny: usize,
    pub dx_um: f64,
    pub dy_um: f64,
    pub plane_z_um: f64,
    /// Row-major: index j * nx + i.
    elements: Vec<[f64; 2]>,
}

impl CurrentSheet {
    pub fn new(
        nx: usize,
        ny: usize,
        dx_um: f64,
        dy_um: f64,
        plane_z_um: f64,
        elements: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if nx * ny == 0 {
            return Err(Error::EmptySheet(format!("nx = {nx}, ny = {ny}")));
        }
        if !(dx_um > 0.0 && dy_um > 0.0) || !plane_z_um.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sheet geometry must be positive and finite: dx = {dx_um}, dy = {dy_um}, z = {plane_z_um}"
            )));
        }
        if elements.len() != nx * ny {
            return Err(Error::RowCountMismatch {
                path: "<memory>".into(),
                expected: nx * ny,
                got: elements.len(),
            });
        }
        if elements.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("current element"));
        }
        Ok(Self {
            nx,
            ny,
            dx_um,
            dy_um,
            plane_z_um,
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, i: usize, j: usize) -> [f64; 2] {
        self.elements[j * self.nx + i]
    }

    pub fn elements(&self) -> &[[f64; 2]] {
        &self.elements
    }

    /// Cell-center position of element (i, j), µm.
    pub fn element_position(&self, i: usize, j: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.dx_um,
            (j as f64 + 0.5) * self.dy_um,
            self.plane_z_um,
        ]
    }

    /// Minimum allowed distance between an evaluation point and any element.
    pub fn clearance_um(&self) -> f64 {
        0.1 * self.dx_um.min(self.dy_um)
    }

    /// A sheet carrying a straight wire of current `i_amp` along +x, one
    /// element per cell. Used as an analytic reference.
    pub fn straight_wire_x(
        n_segments: usize,
        segment_um: f64,
        plane_z_um: f64,
        i_amp: f64,
    ) -> Result<Self> {
        let elements = vec![[i_amp * segment_um, 0.0]; n_segments];
        Self::new(n_segments, 1, segment_um, segment_um, plane_z_um, elements)
    }
}

/// Node lattice specification: positions are `origin + index * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin_um: [f64; 3],
    pub spacing_um: [f64; 3],
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn node_count(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count() == 0 {
            return Err(Error::InvalidConfig("grid has zero nodes".into()));
        }
        if self.spacing_um.iter().any(|s| !(*s > 0.0))
            || self.origin_um.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig(
                "grid origin must be finite and spacing positive".into(),
            ));
        }
        Ok(())
    }

    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin_um[0] + ix as f64 * self.spacing_um[0],
            self.origin_um[1] + iy as f64 * self.spacing_um[1],
            self.origin_um[2] + iz as f64 * self.spacing_um[2],
        ]
    }

    /// Flat storage index; x fastest, z slowest.
    pub fn flat(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.counts[1] + iy) * self.counts[0] + ix
    }

    pub fn unflatten(&self, k: usize) -> [usize; 3] {
        let nx = self.counts[0];
        let ny = self.counts[1];
        [k % nx, (k / nx) % ny, k / (nx * ny)]
    }
}

/// Dense vector field on a node grid, tesla per ampere of resonator current.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    /// Indexed by [`GridSpec::flat`].
    values: Vec<[f64; 3]>,
}

/// Axis-aligned box in µm used to select grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub min_um: [f64; 3],
    pub max_um: [f64; 3],
}

impl Region {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min_um[k] && p[k] <= self.max_um[k])
    }
}

impl FieldGrid {
    pub fn new(spec: GridSpec, values: Vec<[f64; 3]>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.node_count() {
            return Err(Error::RowCountMismatch {
                path: "<memory>".into(),
                expected: spec.node_count(),
                got: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        self.values[self.spec.flat(ix, iy, iz)]
    }

    /// Trilinear interpolation of the field at `r` (µm). Exact at grid nodes;
    /// points outside the node hull are rejected.
    pub fn sample(&self, r: [f64; 3]) -> Result<[f64; 3]> {
        let mut i0 = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..3 {
            let n = self.spec.counts[k];
            let u = (r[k] - self.spec.origin_um[k]) / self.spec.spacing_um[k];
            let max = (n - 1) as f64;
            if !u.is_finite() || u < -1e-9 || u > max + 1e-9 {
                return Err(Error::OutOfGridBounds { point: r });
            }
            let clamped = u.clamp(0.0, max);
            let mut base = clamped.floor();
            if base > max - 1.0 {
                base = (max - 1.0).max(0.0);
            }
            let t = clamped - base;
            // Snap to the node when within rounding distance so nodal samples
            // return stored values bit-exactly.
            let t = if t < 1e-12 {
                0.0
            } else if t > 1.0 - 1e-12 {
                1.0
            } else {
                t
            };
            i0[k] = base as usize;
            frac[k] = if n == 1 { 0.0 } else { t };
        }
        let mut out = [0.0f64; 3];
        for corner in 0..8 {
            let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for k in 0..3 {
                w *= if d[k] == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = self.spec.flat(
                (i0[0] + d[0]).min(self.spec.counts[0] - 1),
                (i0[1] + d[1]).min(self.spec.counts[1] - 1),
                (i0[2] + d[2]).min(self.spec.counts[2] - 1),
            );
            let v = self.values[idx];
            for k in 0..3 {
                out[k] += w * v[k];
            }
        }
        Ok(out)
    }

    /// RMS over the region's nodes of the transverse weight
    /// (bx^2 + by^2)/|b|^2. Nodes with |b| = 0 count as fully axial.
    pub fn transverse_fraction(&self, region: &Region) -> Result<f64> {
        let mut selected = Vec::new();
        for k in 0..self.values.len() {
            let [ix, iy, iz] = self.spec.unflatten(k);
            if region.contains(self.spec.position(ix, iy, iz)) {
                selected.push(k);
            }
        }
        if selected.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let sum_sq = exec::pairwise_sum(selected.len(), &|n| {
            let b = self.values[selected[n]];
            let total = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
            if total == 0.0 {
                0.0
            } else {
                let q = (b[0] * b[0] + b[1] * b[1]) / total;
                q * q
            }
        });
        Ok((sum_sq / selected.len() as f64).sqrt())
    }
}

/// Field contribution of every sheet element at one point, fixed pairwise
/// order over elements. `point` must already satisfy the clearance check.
fn field_at_point(sheet: &CurrentSheet, point: [f64; 3]) -> [f64; 3] {
    let nx = sheet.nx;
    let dx = sheet.dx_um;
    let dy = sheet.dy_um;
    let dz = point[2] - sheet.plane_z_um;
    let raw = exec::pairwise_sum3(sheet.elements.len(), &|k| {
        let e = sheet.elements[k];
        if e[0] == 0.0 && e[1] == 0.0 {
            return [0.0; 3];
        }
        let i = k % nx;
        let j = k / nx;
        let rx = point[0] - (i as f64 + 0.5) * dx;
        let ry = point[1] - (j as f64 + 0.5) * dy;
        let r2 = rx * rx + ry * ry + dz * dz;
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        // (dIx, dIy, 0) x (rx, ry, rz)
        [
            e[1] * dz * inv_r3,
            -e[0] * dz * inv_r3,
            (e[0] * ry - e[1] * rx) * inv_r3,
        ]
    });
    [
        MU0_OVER_4PI_UM * raw[0],
        MU0_OVER_4PI_UM * raw[1],
        MU0_OVER_4PI_UM * raw[2],
    ]
}

fn check_clearance(sheet: &CurrentSheet, spec: &GridSpec) -> Result<()> {
    let clearance = sheet.clearance_um();
    for iz in 0..spec.counts[2] {
        let z = spec.origin_um[2] + iz as f64 * spec.spacing_um[2];
        if (z - sheet.plane_z_um).abs() >= clearance {
            continue;
        }
        for iy in 0..spec.counts[1] {
            for ix in 0..spec.counts[0] {
                let p = spec.position(ix, iy, iz);
                // On a regular lattice the nearest element center is the
                // clamped rounded index; clearance < 0.1 cell keeps every
                // other center strictly farther away.
                let i = ((p[0] / sheet.dx_um - 0.5).round().max(0.0) as usize).min(sheet.nx - 1);
                let j = ((p[1] / sheet.dy_um - 0.5).round().max(0.0) as usize).min(sheet.ny - 1);
                let c = sheet.element_position(i, j);
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                if d2 < clearance * clearance {
                    return Err(Error::ClearanceViolation {
                        point: [ix, iy, iz],
                        i,
                        j,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Biot–Savart sum of the sheet's elements on every node of `spec`,
/// parallel over nodes when the `parallel` feature is enabled.
pub fn biot_savart(sheet: &CurrentSheet, spec: &GridSpec) -> Result<FieldGrid> {
    spec.validate()?;
    check_clearance(sheet, spec)?;
    let mut values = vec![[0.0f64; 3]; spec.node_count()];
    let spec_copy = *spec;
    exec::fill_slots(&mut values, |k| {
        let [ix, iy, iz] = spec_copy.unflatten(k);
        field_at_point(sheet, spec_copy.position(ix, iy, iz))
    });
    FieldGrid::new(*spec, values)
}

/// Sequential reference path of [`biot_savart`]: same arithmetic, same
/// reduction order, one worker.
pub fn biot_savart_serial(sheet: &CurrentSheet, spec: &GridSpec) -> Result<FieldGrid> {
    spec.validate()?;
    check_clearance(sheet, spec)?;
    let mut values = vec![[0.0f64; 3]; spec.node_count()];
    let spec_copy = *spec;
    exec::fill_slots_seq(&mut values, |k| {
        let [ix, iy, iz] = spec_copy.unflatten(k);
        field_at_point(sheet, spec_copy.position(ix, iy, iz))
    });
    FieldGrid::new(*spec, values)
}
