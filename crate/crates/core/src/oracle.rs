//! Assembled-matrix test oracles. The solver never assembles anything; these
//! matrices exist so matrix-free kernels can be checked against explicit
//! sparse algebra on desk-scale grids. Rows are rebuilt here directly from
//! the discretization rules, independent of the stencil kernels they verify.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::Grid2D;
use crate::operators::BcKind;

/// Memory guard for oracle assembly.
pub const ORACLE_MAX_POINTS: usize = 129 * 129;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid {nx} x {ny} exceeds the assembled-oracle cap of 129 x 129 points")]
    GridTooLarge { nx: usize, ny: usize },
}

/// Minimal CSR matrix over complex doubles.
#[derive(Debug, Clone)]
pub struct SparseComplex {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl SparseComplex {
    pub fn from_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, Complex64)>>) -> Self {
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            // merge duplicate column entries
            let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some((lc, lv)) if *lc == c => *lv += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        SparseComplex {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        for r in 0..self.nrows {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[p] * x[self.indices[p]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn nnz_of_row(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn transpose(&self) -> SparseComplex {
        let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                rows[self.indices[p]].push((r, self.data[p]));
            }
        }
        SparseComplex::from_rows(self.ncols, self.nrows, rows)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[p])] += self.data[p];
            }
        }
        m
    }
}

/// Row-major flat index of a grid point, matching `DistField::to_dense`.
#[inline]
pub fn flat(grid: &Grid2D, i: usize, j: usize) -> usize {
    i * grid.ny + j
}

/// Assembles the 5-point Helmholtz (shift = None) or CSLP operator. `k` is
/// the dense per-point wavenumber in the same row-major layout.
pub fn assemble_matrix(
    grid: &Grid2D,
    k: &[f64],
    bc: BcKind,
    shift: Option<(f64, f64)>,
) -> Result<SparseComplex, OracleError> {
    if grid.n_points() > ORACLE_MAX_POINTS {
        return Err(OracleError::GridTooLarge {
            nx: grid.nx,
            ny: grid.ny,
        });
    }
    let s = shift
        .map(|(b1, b2)| Complex64::new(b1, b2))
        .unwrap_or_else(|| Complex64::new(1.0, 0.0));
    let n = grid.n_points();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut rows: Vec<Vec<(usize, Complex64)>> = Vec::with_capacity(n);
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let p = flat(grid, i, j);
            let on_l = i == 0;
            let on_r = i == grid.nx - 1;
            let on_b = j == 0;
            let on_t = j == grid.ny - 1;
            let on_boundary = on_l || on_r || on_b || on_t;
            if bc == BcKind::Dirichlet && on_boundary {
                rows.push(vec![(p, Complex64::new(1.0, 0.0))]);
                continue;
            }
            let kij = k[p];
            let mut center = Complex64::new(4.0 * inv_h2, 0.0) - s * (kij * kij);
            let mut row = Vec::with_capacity(5);
            let som = Complex64::new(0.0, -2.0 * kij / grid.h);
            if on_l {
                center += som;
                row.push((flat(grid, i + 1, j), Complex64::new(-2.0 * inv_h2, 0.0)));
            } else if on_r {
                center += som;
                row.push((flat(grid, i - 1, j), Complex64::new(-2.0 * inv_h2, 0.0)));
            } else {
                row.push((flat(grid, i + 1, j), Complex64::new(-inv_h2, 0.0)));
                row.push((flat(grid, i - 1, j), Complex64::new(-inv_h2, 0.0)));
            }
            if on_b {
                center += som;
                row.push((flat(grid, i, j + 1), Complex64::new(-2.0 * inv_h2, 0.0)));
            } else if on_t {
                center += som;
                row.push((flat(grid, i, j - 1), Complex64::new(-2.0 * inv_h2, 0.0)));
            } else {
                row.push((flat(grid, i, j + 1), Complex64::new(-inv_h2, 0.0)));
                row.push((flat(grid, i, j - 1), Complex64::new(-inv_h2, 0.0)));
            }
            row.push((p, center));
            rows.push(row);
        }
    }
    Ok(SparseComplex::from_rows(n, n, rows))
}

/// Transfer stencil tables shared by the assembled transfer oracles.
pub mod stencils {
    /// Full-weighting restriction, 3x3, over 16.
    pub const FW_3X3: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
    /// Bilinear interpolation column weights, 3x3, over 4.
    pub const BILINEAR_3X3: [[f64; 3]; 3] = FW_3X3;
    /// Quintic (cubic-Bezier-derived) transfer pair, 5x5, over 64.
    pub const QUINTIC_5X5: [[f64; 5]; 5] = [
        [1.0, 4.0, 6.0, 4.0, 1.0],
        [4.0, 16.0, 24.0, 16.0, 4.0],
        [6.0, 24.0, 36.0, 24.0, 6.0],
        [4.0, 16.0, 24.0, 16.0, 4.0],
        [1.0, 4.0, 6.0, 4.0, 1.0],
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferOrder {
    Low,
    High,
}

/// Assembles the restriction matrix (coarse x fine). Out-of-domain taps are
/// dropped without renormalization; with `dirichlet_copy`, coarse boundary
/// rows copy the coincident fine point instead (the multigrid-path rule for
/// identity boundary rows).
pub fn assemble_restriction(
    order: TransferOrder,
    fine: &Grid2D,
    dirichlet_copy: bool,
) -> SparseComplex {
    let coarse = fine.coarsen().expect("restriction needs a coarsenable grid");
    let (radius, scale): (isize, f64) = match order {
        TransferOrder::Low => (1, 1.0 / 16.0),
        TransferOrder::High => (2, 1.0 / 64.0),
    };
    let weight = |di: isize, dj: isize| -> f64 {
        match order {
            TransferOrder::Low => stencils::FW_3X3[(di + 1) as usize][(dj + 1) as usize],
            TransferOrder::High => stencils::QUINTIC_5X5[(di + 2) as usize][(dj + 2) as usize],
        }
    };
    let mut rows = Vec::with_capacity(coarse.n_points());
    for ic in 0..coarse.nx {
        for jc in 0..coarse.ny {
            let (fi, fj) = (2 * ic, 2 * jc);
            let on_boundary =
                ic == 0 || ic == coarse.nx - 1 || jc == 0 || jc == coarse.ny - 1;
            if dirichlet_copy && on_boundary {
                rows.push(vec![(flat(fine, fi, fj), Complex64::new(1.0, 0.0))]);
                continue;
            }
            let mut row = Vec::new();
            for di in -radius..=radius {
                for dj in -radius..=radius {
                    let ti = fi as isize + di;
                    let tj = fj as isize + dj;
                    if ti < 0 || tj < 0 || ti >= fine.nx as isize || tj >= fine.ny as isize {
                        continue;
                    }
                    row.push((
                        flat(fine, ti as usize, tj as usize),
                        Complex64::new(scale * weight(di, dj), 0.0),
                    ));
                }
            }
            rows.push(row);
        }
    }
    SparseComplex::from_rows(coarse.n_points(), fine.n_points(), rows)
}

/// Assembles the prolongation matrix (fine x coarse): fine point `f` takes
/// from coarse point `c` the stencil weight at offset `f - 2c`.
pub fn assemble_prolongation(order: TransferOrder, fine: &Grid2D) -> SparseComplex {
    let coarse = fine.coarsen().expect("prolongation needs a coarsenable grid");
    let (radius, scale): (isize, f64) = match order {
        TransferOrder::Low => (1, 1.0 / 4.0),
        TransferOrder::High => (2, 1.0 / 64.0),
    };
    let weight = |di: isize, dj: isize| -> f64 {
        match order {
            TransferOrder::Low => stencils::BILINEAR_3X3[(di + 1) as usize][(dj + 1) as usize],
            TransferOrder::High => stencils::QUINTIC_5X5[(di + 2) as usize][(dj + 2) as usize],
        }
    };
    let mut rows = Vec::with_capacity(fine.n_points());
    for fi in 0..fine.nx {
        for fj in 0..fine.ny {
            let mut row = Vec::new();
            for ic in 0..coarse.nx as isize {
                for jc in 0..coarse.ny as isize {
                    let di = fi as isize - 2 * ic;
                    let dj = fj as isize - 2 * jc;
                    if di.abs() > radius || dj.abs() > radius {
                        continue;
                    }
                    row.push((
                        (ic as usize) * coarse.ny + jc as usize,
                        Complex64::new(scale * weight(di, dj), 0.0),
                    ));
                }
            }
            rows.push(row);
        }
    }
    SparseComplex::from_rows(fine.n_points(), coarse.n_points(), rows)
}

use num_complex::ComplexFloat;

/// Dense complex solve via LU (test sizes only).
pub fn dense_solve(a: &DMatrix<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    let lu = a.clone().lu();
    let x = lu.solve(&rhs).expect("oracle dense system is singular");
    x.iter().copied().collect()
}

/// Max relative elementwise deviation between two complex vectors, scaled by
/// the largest magnitude in `reference`.
pub fn rel_err(got: &[Complex64], reference: &[Complex64]) -> f64 {
    let scale = reference
        .iter()
        .map(|c| c.abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    got.iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}
