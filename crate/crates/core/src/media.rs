//! Wavenumber-field construction for the model problems: constant k, layered
//! (wedge-style) velocity models, generic velocity-grid ingestion, and
//! point-source right-hand sides.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::field::{DistField, RealField};
use crate::grid::{DistLayout, Grid2D};

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("wavenumber must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("velocity model does not cover depth {0}")]
    UncoveredRegion(f64),
    #[error("velocity file is {file_nx} x {file_ny} but the grid is {nx} x {ny} (resampling disabled)")]
    DimensionMismatch {
        file_nx: usize,
        file_ny: usize,
        nx: usize,
        ny: usize,
    },
    #[error("malformed velocity file: {0}")]
    MalformedFile(String),
    #[error("non-positive velocity {v} at file cell ({i}, {j})")]
    NonPositiveVelocity { v: f64, i: usize, j: usize },
    #[error("source location ({x}, {y}) lies outside the domain")]
    LocationOutsideDomain { x: f64, y: f64 },
}

/// Per-point wavenumber k(i, j) on a layout, with its mesh width attached so
/// kh diagnostics travel with the field.
#[derive(Debug, Clone)]
pub struct WavenumberField {
    pub field: RealField,
}

impl WavenumberField {
    pub fn layout(&self) -> &Arc<DistLayout> {
        &self.field.layout
    }

    /// max(k) * h, the resolution parameter the run guard checks.
    pub fn max_kh(&self) -> f64 {
        let (_, mx) = self.field.min_max();
        mx * self.field.layout.grid.h
    }

    /// Samples onto the standard coarsening of this field's layout, taking
    /// the value at the coincident fine point.
    pub fn coarsen_onto(&self, coarse: &Arc<DistLayout>) -> WavenumberField {
        WavenumberField {
            field: self.field.coarsen_onto(coarse),
        }
    }
}

/// Constant wavenumber over the whole grid.
pub fn constant_k(layout: &Arc<DistLayout>, k: f64) -> Result<WavenumberField, MediaError> {
    if !(k > 0.0) {
        return Err(MediaError::NonPositiveK(k));
    }
    Ok(WavenumberField {
        field: RealField::from_global_fn(layout, |_, _| k),
    })
}

/// One layer of a depth-sorted velocity model. Interfaces may slope: the top
/// of the layer at horizontal position x is the line through
/// `(x0, top_at_x0)` and `(x1, top_at_x1)`.
#[derive(Debug, Clone, Copy)]
pub struct VelocityLayer {
    pub top_at_x0: f64,
    pub top_at_x1: f64,
    pub velocity: f64,
}

/// Ordered list of layers from the top of the domain downwards. The first
/// layer extends up to y1, the last down to y0; a point exactly on an
/// interface takes the upper layer's velocity.
#[derive(Debug, Clone)]
pub struct LayeredVelocityModel {
    pub layers: Vec<VelocityLayer>,
}

impl LayeredVelocityModel {
    /// Velocity at physical position (x, y); `y` grows upward. A point
    /// exactly on an interface belongs to the upper layer.
    pub fn velocity_at(&self, grid: &Grid2D, x: f64, y: f64) -> Result<f64, MediaError> {
        let frac = (x - grid.x0) / (grid.x1 - grid.x0);
        for (idx, layer) in self.layers.iter().enumerate() {
            let lower = match self.layers.get(idx + 1) {
                Some(next) => next.top_at_x0 + frac * (next.top_at_x1 - next.top_at_x0),
                None => grid.y0,
            };
            if y >= lower || idx + 1 == self.layers.len() {
                if layer.velocity <= 0.0 {
                    return Err(MediaError::NonPositiveVelocity {
                        v: layer.velocity,
                        i: 0,
                        j: 0,
                    });
                }
                return Ok(layer.velocity);
            }
        }
        Err(MediaError::UncoveredRegion(y))
    }

    /// Three-layer wedge used as the default heterogeneous benchmark. The
    /// velocities (2000, 1500, 3000 m/s top to bottom) and the slanted middle
    /// layer are configuration defaults, not measured data.
    pub fn default_wedge() -> Self {
        LayeredVelocityModel {
            layers: vec![
                VelocityLayer {
                    top_at_x0: 0.0,
                    top_at_x1: 0.0,
                    velocity: 2000.0,
                },
                VelocityLayer {
                    top_at_x0: -400.0,
                    top_at_x1: -500.0,
                    velocity: 1500.0,
                },
                VelocityLayer {
                    top_at_x0: -800.0,
                    top_at_x1: -600.0,
                    velocity: 3000.0,
                },
            ],
        }
    }
}

/// k = 2*pi*f / c with c from a layered model.
pub fn layered_k(
    layout: &Arc<DistLayout>,
    model: &LayeredVelocityModel,
    f: f64,
) -> Result<WavenumberField, MediaError> {
    if !(f > 0.0) {
        return Err(MediaError::NonPositiveK(f));
    }
    let grid = layout.grid;
    // Validate the full grid up front so errors surface deterministically.
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            model.velocity_at(&grid, grid.x(i), grid.y(j))?;
        }
    }
    let field = RealField::from_global_fn(layout, |i, j| {
        let c = model.velocity_at(&grid, grid.x(i), grid.y(j)).unwrap();
        2.0 * std::f64::consts::PI * f / c
    });
    Ok(WavenumberField { field })
}

/// Parsed velocity grid: `values[r][c]` with row 0 the top of the domain.
struct VelocityGrid {
    nx: usize,
    ny: usize,
    values: Vec<Vec<f64>>,
}

fn parse_velocity_file(text: &str) -> Result<VelocityGrid, MediaError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| MediaError::MalformedFile("empty file".into()))?;
    let mut it = header.split_whitespace();
    let nx: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MediaError::MalformedFile("header must be 'nx ny'".into()))?;
    let ny: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MediaError::MalformedFile("header must be 'nx ny'".into()))?;
    let mut values = Vec::with_capacity(ny);
    for r in 0..ny {
        let line = lines
            .next()
            .ok_or_else(|| MediaError::MalformedFile(format!("missing row {}", r + 1)))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| MediaError::MalformedFile(format!("bad number '{t}'")))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != nx {
            return Err(MediaError::MalformedFile(format!(
                "row {} has {} values, expected {}",
                r + 1,
                row.len(),
                nx
            )));
        }
        for (c, &v) in row.iter().enumerate() {
            if !(v > 0.0) {
                return Err(MediaError::NonPositiveVelocity { v, i: c, j: r });
            }
        }
        values.push(row);
    }
    Ok(VelocityGrid { nx, ny, values })
}

impl VelocityGrid {
    /// Bilinear sample at fractional cell coordinates, with row 0 at the top.
    fn sample(&self, fx: f64, fy: f64) -> f64 {
        let i0 = (fx.floor() as usize).min(self.nx - 1);
        let j0 = (fy.floor() as usize).min(self.ny - 1);
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v00 = self.values[j0][i0];
        let v10 = self.values[j0][i1];
        let v01 = self.values[j1][i0];
        let v11 = self.values[j1][i1];
        (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10
            + (1.0 - tx) * ty * v01
            + tx * ty * v11
    }
}

/// Reads an ASCII velocity grid (line 1: `nx ny`; then ny rows of nx
/// velocities in m/s, top row first) and converts to k = 2*pi*f/c. With
/// `resample`, mismatched dimensions are bilinearly interpolated onto the
/// grid; otherwise they are an error.
pub fn load_velocity_grid(
    path: &Path,
    layout: &Arc<DistLayout>,
    f: f64,
    resample: bool,
) -> Result<WavenumberField, MediaError> {
    let text = fs::read_to_string(path)
        .map_err(|e| MediaError::MalformedFile(format!("{}: {e}", path.display())))?;
    velocity_grid_to_k(&text, layout, f, resample)
}

/// Same as [`load_velocity_grid`] but from in-memory text.
pub fn velocity_grid_to_k(
    text: &str,
    layout: &Arc<DistLayout>,
    f: f64,
    resample: bool,
) -> Result<WavenumberField, MediaError> {
    if !(f > 0.0) {
        return Err(MediaError::NonPositiveK(f));
    }
    let vg = parse_velocity_file(text)?;
    let grid = layout.grid;
    if !resample && (vg.nx != grid.nx || vg.ny != grid.ny) {
        return Err(MediaError::DimensionMismatch {
            file_nx: vg.nx,
            file_ny: vg.ny,
            nx: grid.nx,
            ny: grid.ny,
        });
    }
    let sx = (vg.nx - 1) as f64 / (grid.nx - 1) as f64;
    let sy = (vg.ny - 1) as f64 / (grid.ny - 1) as f64;
    let field = RealField::from_global_fn(layout, |i, j| {
        // File row 0 is the top of the domain (j = ny-1).
        let fx = i as f64 * sx;
        let fy = (grid.ny - 1 - j) as f64 * sy;
        let c = vg.sample(fx, fy);
        2.0 * std::f64::consts::PI * f / c
    });
    Ok(WavenumberField { field })
}

/// Discrete point source: zero everywhere except the grid point nearest to
/// `location`, which carries 1/h^2 so the nodal quadrature recovers unit
/// mass. Nearest-point ties break toward the lower index.
pub fn point_source_rhs(
    layout: &Arc<DistLayout>,
    location: (f64, f64),
) -> Result<DistField, MediaError> {
    let grid = layout.grid;
    let (x, y) = location;
    if x < grid.x0 - 1e-12 || x > grid.x1 + 1e-12 || y < grid.y0 - 1e-12 || y > grid.y1 + 1e-12 {
        return Err(MediaError::LocationOutsideDomain { x, y });
    }
    let snap = |t: f64, n: usize| -> usize {
        let f = t.clamp(0.0, (n - 1) as f64);
        let lo = f.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        // Tie (exact .5) goes to the lower index.
        if f - lo as f64 <= 0.5 || lo == hi {
            lo
        } else {
            hi
        }
    };
    let si = snap((x - grid.x0) / grid.h, grid.nx);
    let sj = snap((y - grid.y0) / grid.h, grid.ny);
    let amp = Complex64::new(1.0 / (grid.h * grid.h), 0.0);
    Ok(DistField::from_global_fn(layout, |i, j| {
        if i == si && j == sj {
            amp
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_layout(n: usize) -> Arc<DistLayout> {
        DistLayout::single(Grid2D::unit_square(n).unwrap(), 1)
    }

    #[test]
    fn constant_k_kh_values() {
        let l = unit_layout(33);
        let k = constant_k(&l, 20.0).unwrap();
        assert!((k.max_kh() - 0.625).abs() < 1e-14);
        let l = unit_layout(65);
        let k = constant_k(&l, 20.0).unwrap();
        assert!((k.max_kh() - 0.3125).abs() < 1e-14);
        let k = constant_k(&l, 1.0).unwrap();
        let (mn, mx) = k.field.min_max();
        assert_eq!((mn, mx), (1.0, 1.0));
        assert!(constant_k(&l, 0.0).is_err());
    }

    #[test]
    fn single_layer_matches_constant() {
        let g = Grid2D::new(9, 9, [0.0, -100.0, 100.0, 0.0]).unwrap();
        let l = DistLayout::single(g, 1);
        let model = LayeredVelocityModel {
            layers: vec![VelocityLayer {
                top_at_x0: 0.0,
                top_at_x1: 0.0,
                velocity: 2000.0,
            }],
        };
        let k = layered_k(&l, &model, 10.0).unwrap();
        let (mn, mx) = k.field.min_max();
        let expect = 2.0 * PI * 10.0 / 2000.0;
        assert!((mn - expect).abs() < 1e-14 && (mx - expect).abs() < 1e-14);
    }

    #[test]
    fn two_layers_step_at_interface() {
        let g = Grid2D::new(9, 9, [0.0, -100.0, 100.0, 0.0]).unwrap();
        let l = DistLayout::single(g, 1);
        let model = LayeredVelocityModel {
            layers: vec![
                VelocityLayer {
                    top_at_x0: 0.0,
                    top_at_x1: 0.0,
                    velocity: 1000.0,
                },
                VelocityLayer {
                    top_at_x0: -50.0,
                    top_at_x1: -50.0,
                    velocity: 2000.0,
                },
            ],
        };
        let k = layered_k(&l, &model, 10.0).unwrap();
        let k_top = 2.0 * PI * 10.0 / 1000.0;
        let k_bot = 2.0 * PI * 10.0 / 2000.0;
        // j = 4 sits exactly on the interface (y = -50) -> upper layer.
        assert!((k.field.get_global(3, 4) - k_top).abs() < 1e-14);
        assert!((k.field.get_global(3, 3) - k_bot).abs() < 1e-14);
        assert!((k.field.get_global(3, 5) - k_top).abs() < 1e-14);
    }

    #[test]
    fn velocity_file_constant() {
        let l = unit_layout(3);
        let text = "3 3\n2000 2000 2000\n2000 2000 2000\n2000 2000 2000\n";
        let k = velocity_grid_to_k(text, &l, 10.0, false).unwrap();
        let expect = 2.0 * PI * 10.0 / 2000.0;
        let (mn, mx) = k.field.min_max();
        assert!((mn - expect).abs() < 1e-14 && (mx - expect).abs() < 1e-14);
    }

    #[test]
    fn velocity_file_validation() {
        let l = unit_layout(3);
        let bad = "3 3\n2000 2000 2000\n2000 0 2000\n2000 2000 2000\n";
        assert!(matches!(
            velocity_grid_to_k(bad, &l, 10.0, false),
            Err(MediaError::NonPositiveVelocity { .. })
        ));
        let mismatched = "5 5\n".to_string() + &"1 1 1 1 1\n".repeat(5);
        assert!(matches!(
            velocity_grid_to_k(&mismatched, &l, 10.0, false),
            Err(MediaError::DimensionMismatch { .. })
        ));
        assert!(velocity_grid_to_k("junk", &l, 10.0, false).is_err());
    }

    #[test]
    fn velocity_file_bilinear_resample() {
        // 5x5 file resampled onto 9x9: every grid point lands either on a
        // file node or midway between two, so the bilinear oracle is exact.
        let mut text = String::from("5 5\n");
        let vf = |i: usize, r: usize| 1000.0 + 100.0 * i as f64 + 40.0 * r as f64;
        for r in 0..5 {
            let row: Vec<String> = (0..5).map(|i| format!("{}", vf(i, r))).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        let l = unit_layout(9);
        let k = velocity_grid_to_k(&text, &l, 10.0, true).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let fx = i as f64 * 0.5;
                let fy = (8 - j) as f64 * 0.5;
                let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
                let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
                let i1 = (i0 + 1).min(4);
                let j1 = (j0 + 1).min(4);
                let c = lerp(
                    lerp(vf(i0, j0), vf(i1, j0), tx),
                    lerp(vf(i0, j1), vf(i1, j1), tx),
                    ty,
                );
                let expect = 2.0 * PI * 10.0 / c;
                assert!(
                    (k.field.get_global(i, j) - expect).abs() < 1e-12,
                    "at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn point_source_center() {
        let l = unit_layout(33);
        let b = point_source_rhs(&l, (0.5, 0.5)).unwrap();
        let dense = b.to_dense();
        let nz: Vec<usize> = (0..dense.len()).filter(|&p| dense[p].norm() > 0.0).collect();
        assert_eq!(nz, vec![16 * 33 + 16]); // 0-based (16,16) == 1-based (17,17)
        assert!((dense[nz[0]].re - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn point_source_on_top_boundary() {
        let g = Grid2D::new(73, 121, [0.0, -1000.0, 600.0, 0.0]).unwrap();
        let l = DistLayout::single(g, 1);
        let b = point_source_rhs(&l, (300.0, 0.0)).unwrap();
        let dense = b.to_dense();
        let nz: Vec<usize> = (0..dense.len()).filter(|&p| dense[p].norm() > 0.0).collect();
        assert_eq!(nz.len(), 1);
        let (i, j) = (nz[0] / 121, nz[0] % 121);
        assert_eq!(j, 120); // top row
        assert_eq!(i, 36); // x = 300 at h = 600/72
        assert!(point_source_rhs(&l, (700.0, 0.0)).is_err());
    }

    #[test]
    fn default_wedge_kh_at_paper_resolution() {
        let g = Grid2D::new(73, 121, [0.0, -1000.0, 600.0, 0.0]).unwrap();
        let l = DistLayout::single(g, 1);
        let k = layered_k(&l, &LayeredVelocityModel::default_wedge(), 10.0).unwrap();
        // Slowest layer 1500 m/s at f = 10 Hz, h = 600/72.
        assert!(k.max_kh() <= 0.34907 + 1e-5, "kh = {}", k.max_kh());
    }
}
