//! Structured-grid bookkeeping: the global vertex-centered grid, blockwise
//! Cartesian partitioning with one (or wider) halo layers, and the index
//! correspondence between a fine grid and its standard coarsening.
//!
//! Grid points are indexed 0-based as `(i, j)` with `i` along x and `j`
//! along y. Standard coarsening keeps every other point, so coarse point
//! `(ic, jc)` sits on fine point `(2*ic, 2*jc)`.

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("anisotropic spacing: hx = {hx:.12e} differs from hy = {hy:.12e}")]
    AnisotropicSpacing { hx: f64, hy: f64 },
    #[error("degenerate domain extents [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateDomain { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("grid needs at least 3 points per direction, got {nx} x {ny}")]
    TooFewPoints { nx: usize, ny: usize },
    #[error("partition {px} x {py} would leave a worker with no points on a {nx} x {ny} grid")]
    TooManyWorkers {
        px: usize,
        py: usize,
        nx: usize,
        ny: usize,
    },
    #[error("halo width {halo} exceeds the owned extent of some subdomain")]
    HaloExceedsBlock { halo: usize },
    #[error("grid {nx} x {ny} is not coarsenable: point counts must be odd and at least 5")]
    NotCoarsenable { nx: usize, ny: usize },
}

/// Global uniform vertex-centered grid over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    /// Mesh width, identical in both directions.
    pub h: f64,
}

impl Grid2D {
    /// Builds a grid and checks that both directions share the same mesh
    /// width (1e-10 relative).
    pub fn new(nx: usize, ny: usize, extents: [f64; 4]) -> Result<Self, GridError> {
        let [x0, y0, x1, y1] = extents;
        if nx < 3 || ny < 3 {
            return Err(GridError::TooFewPoints { nx, ny });
        }
        if !(x1 > x0) || !(y1 > y0) {
            return Err(GridError::DegenerateDomain { x0, x1, y0, y1 });
        }
        let hx = (x1 - x0) / (nx - 1) as f64;
        let hy = (y1 - y0) / (ny - 1) as f64;
        if (hx - hy).abs() > 1e-10 * hx.abs().max(hy.abs()) {
            return Err(GridError::AnisotropicSpacing { hx, hy });
        }
        Ok(Grid2D {
            nx,
            ny,
            x0,
            y0,
            x1,
            y1,
            h: hx,
        })
    }

    /// Unit-square grid with `n` points per direction.
    pub fn unit_square(n: usize) -> Result<Self, GridError> {
        Self::new(n, n, [0.0, 0.0, 1.0, 1.0])
    }

    pub fn n_points(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.h * i as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + self.h * j as f64
    }

    pub fn is_coarsenable(&self) -> bool {
        self.nx >= 5 && self.ny >= 5 && self.nx % 2 == 1 && self.ny % 2 == 1
    }

    /// Standard coarsening: keeps every other point, doubling the mesh width.
    pub fn coarsen(&self) -> Result<Grid2D, GridError> {
        if !self.is_coarsenable() {
            return Err(GridError::NotCoarsenable {
                nx: self.nx,
                ny: self.ny,
            });
        }
        Ok(Grid2D {
            nx: (self.nx + 1) / 2,
            ny: (self.ny + 1) / 2,
            h: 2.0 * self.h,
            ..*self
        })
    }
}

/// Fine-grid image of a coarse point under standard coarsening.
#[inline]
pub fn fine_index(coarse: (usize, usize)) -> (usize, usize) {
    (2 * coarse.0, 2 * coarse.1)
}

/// Splits `n` points over `p` blocks as evenly as possible, larger blocks
/// first.
pub fn balanced_ranges(n: usize, p: usize) -> Vec<Range<usize>> {
    let base = n / p;
    let rem = n % p;
    let mut out = Vec::with_capacity(p);
    let mut lo = 0;
    for b in 0..p {
        let len = base + usize::from(b < rem);
        out.push(lo..lo + len);
        lo += len;
    }
    out
}

/// Blockwise Cartesian partition of the global index set. The cut runs
/// between two grid points, so owned ranges tile the grid exactly; worker
/// ids are row-major over `(px, py)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianPartition {
    pub px: usize,
    pub py: usize,
    pub x_ranges: Vec<Range<usize>>,
    pub y_ranges: Vec<Range<usize>>,
}

impl CartesianPartition {
    pub fn new(grid: &Grid2D, px: usize, py: usize) -> Result<Self, GridError> {
        if px == 0 || py == 0 || px > grid.nx || py > grid.ny {
            return Err(GridError::TooManyWorkers {
                px,
                py,
                nx: grid.nx,
                ny: grid.ny,
            });
        }
        Ok(CartesianPartition {
            px,
            py,
            x_ranges: balanced_ranges(grid.nx, px),
            y_ranges: balanced_ranges(grid.ny, py),
        })
    }

    pub fn n_workers(&self) -> usize {
        self.px * self.py
    }

    /// Block coordinates of a worker id (row-major layout).
    pub fn block_of(&self, w: usize) -> (usize, usize) {
        (w % self.px, w / self.px)
    }

    pub fn worker_at(&self, bx: usize, by: usize) -> usize {
        by * self.px + bx
    }

    pub fn owned(&self, w: usize) -> (Range<usize>, Range<usize>) {
        let (bx, by) = self.block_of(w);
        (self.x_ranges[bx].clone(), self.y_ranges[by].clone())
    }

    /// Worker owning global point `(gi, gj)`.
    pub fn owner_of(&self, gi: usize, gj: usize) -> usize {
        let bx = self.x_ranges.iter().position(|r| r.contains(&gi)).unwrap();
        let by = self.y_ranges.iter().position(|r| r.contains(&gj)).unwrap();
        self.worker_at(bx, by)
    }
}

/// One worker's window on the global grid: the owned index box plus a halo
/// frame of fixed width. Local indices include the halo offset.
#[derive(Debug, Clone)]
pub struct SubdomainView {
    pub worker: usize,
    pub i_range: Range<usize>,
    pub j_range: Range<usize>,
    pub halo: usize,
}

impl SubdomainView {
    pub fn owned_nx(&self) -> usize {
        self.i_range.len()
    }

    pub fn owned_ny(&self) -> usize {
        self.j_range.len()
    }

    /// Local array extents including the halo frame.
    pub fn local_nx(&self) -> usize {
        self.owned_nx() + 2 * self.halo
    }

    pub fn local_ny(&self) -> usize {
        self.owned_ny() + 2 * self.halo
    }

    #[inline]
    pub fn local_of_global(&self, gi: usize, gj: usize) -> (usize, usize) {
        (
            gi + self.halo - self.i_range.start,
            gj + self.halo - self.j_range.start,
        )
    }

    #[inline]
    pub fn global_of_local(&self, li: usize, lj: usize) -> (isize, isize) {
        (
            li as isize - self.halo as isize + self.i_range.start as isize,
            lj as isize - self.halo as isize + self.j_range.start as isize,
        )
    }
}

/// A grid together with its partition and per-worker views; the shared
/// immutable layout behind every distributed field on that level.
#[derive(Debug, Clone)]
pub struct DistLayout {
    pub grid: Grid2D,
    pub part: CartesianPartition,
    pub halo: usize,
    pub views: Vec<SubdomainView>,
}

impl DistLayout {
    pub fn new(grid: Grid2D, px: usize, py: usize, halo: usize) -> Result<Arc<Self>, GridError> {
        let part = CartesianPartition::new(&grid, px, py)?;
        Self::from_partition(grid, part, halo)
    }

    pub fn from_partition(
        grid: Grid2D,
        part: CartesianPartition,
        halo: usize,
    ) -> Result<Arc<Self>, GridError> {
        // Halo exchange copies from the direct neighbor only, so no owned
        // extent may be narrower than the halo (unless there is no neighbor
        // on that axis at all).
        if part.px > 1 && part.x_ranges.iter().any(|r| r.len() < halo) {
            return Err(GridError::HaloExceedsBlock { halo });
        }
        if part.py > 1 && part.y_ranges.iter().any(|r| r.len() < halo) {
            return Err(GridError::HaloExceedsBlock { halo });
        }
        let views = (0..part.n_workers())
            .map(|w| {
                let (ir, jr) = part.owned(w);
                SubdomainView {
                    worker: w,
                    i_range: ir,
                    j_range: jr,
                    halo,
                }
            })
            .collect();
        Ok(Arc::new(DistLayout {
            grid,
            part,
            halo,
            views,
        }))
    }

    /// Serial layout: the whole grid on one worker.
    pub fn single(grid: Grid2D, halo: usize) -> Arc<Self> {
        Self::new(grid, 1, 1, halo).expect("single-block layout is always valid")
    }

    pub fn n_workers(&self) -> usize {
        self.part.n_workers()
    }

    /// Layout of the standard coarsening of this grid. Each owned range is
    /// halved along the block cuts so coarse ownership nests inside fine
    /// ownership (a coarse point and its fine image share a worker). When a
    /// halved range would drop below 2 points the level is agglomerated onto
    /// a single worker instead, which keeps the hierarchy depth independent
    /// of the partition.
    pub fn coarsen(&self, halo: usize) -> Result<Arc<Self>, GridError> {
        let cgrid = self.grid.coarsen()?;
        let x_ranges = coarsen_ranges(&self.part.x_ranges);
        let y_ranges = coarsen_ranges(&self.part.y_ranges);
        let thin = |rs: &Vec<Range<usize>>| rs.len() > 1 && rs.iter().any(|r| r.len() < 2.max(halo));
        if thin(&x_ranges) || thin(&y_ranges) {
            return Ok(Self::single(cgrid, halo));
        }
        let part = CartesianPartition {
            px: self.part.px,
            py: self.part.py,
            x_ranges,
            y_ranges,
        };
        Self::from_partition(cgrid, part, halo)
    }

    /// True when `coarse` is the range-halved child of `self` on the same
    /// worker layout, so intergrid transfers are purely local.
    pub fn nests_over(&self, coarse: &DistLayout) -> bool {
        coarse.part.px == self.part.px
            && coarse.part.py == self.part.py
            && coarse.part.x_ranges == coarsen_ranges(&self.part.x_ranges)
            && coarse.part.y_ranges == coarsen_ranges(&self.part.y_ranges)
    }
}

/// Halves ownership ranges along standard coarsening: coarse point `c` goes
/// to the worker owning fine point `2c`.
pub fn coarsen_ranges(ranges: &[Range<usize>]) -> Vec<Range<usize>> {
    ranges
        .iter()
        .map(|r| r.start.div_ceil(2)..r.end.div_ceil(2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_width_from_counts_and_extents() {
        let g = Grid2D::new(33, 33, [0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((g.h - 1.0 / 32.0).abs() < 1e-15);
        let g = Grid2D::new(3, 3, [0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((g.h - 0.5).abs() < 1e-15);
        // Wedge-shaped domain: 600/288 == 1000/480.
        let g = Grid2D::new(289, 481, [0.0, -1000.0, 600.0, 0.0]).unwrap();
        assert!((g.h - 600.0 / 288.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(
            Grid2D::new(33, 33, [0.0, 0.0, 1.0, 2.0]),
            Err(GridError::AnisotropicSpacing { .. })
        ));
        assert!(matches!(
            Grid2D::new(33, 33, [0.0, 0.0, 0.0, 1.0]),
            Err(GridError::DegenerateDomain { .. })
        ));
        assert!(matches!(
            Grid2D::new(2, 3, [0.0, 0.0, 1.0, 1.5]),
            Err(GridError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn balanced_split_sizes() {
        let g = Grid2D::unit_square(33).unwrap();
        let p = CartesianPartition::new(&g, 2, 2).unwrap();
        let widths: Vec<usize> = p.x_ranges.iter().map(|r| r.len()).collect();
        assert_eq!(widths, vec![17, 16]);

        let p = CartesianPartition::new(&g, 1, 1).unwrap();
        assert_eq!(p.owned(0), (0..33, 0..33));

        let g = Grid2D::unit_square(961).unwrap();
        let p = CartesianPartition::new(&g, 6, 6).unwrap();
        for r in p.x_ranges.iter().chain(p.y_ranges.iter()) {
            assert!(r.len() == 160 || r.len() == 161);
        }
    }

    #[test]
    fn too_many_workers_rejected() {
        let g = Grid2D::unit_square(3).unwrap();
        assert!(matches!(
            CartesianPartition::new(&g, 4, 1),
            Err(GridError::TooManyWorkers { .. })
        ));
    }

    #[test]
    fn tiling_is_exact_and_unique() {
        // Exhaustive ownership check on small grids and all px, py in 1..=3.
        for n in [5usize, 9, 33, 65] {
            let g = Grid2D::unit_square(n).unwrap();
            for px in 1..=3 {
                for py in 1..=3 {
                    let p = CartesianPartition::new(&g, px, py).unwrap();
                    let mut owners = vec![0usize; n * n];
                    for w in 0..p.n_workers() {
                        let (ir, jr) = p.owned(w);
                        for i in ir.clone() {
                            for j in jr.clone() {
                                owners[i * n + j] += 1;
                            }
                        }
                    }
                    assert!(owners.iter().all(|&c| c == 1), "tiling broken at n={n}");
                }
            }
        }
    }

    #[test]
    fn coarsening_counts_and_index_map() {
        let g = Grid2D::unit_square(33).unwrap();
        let c = g.coarsen().unwrap();
        assert_eq!((c.nx, c.ny), (17, 17));
        assert!((c.h - 1.0 / 16.0).abs() < 1e-15);

        let g = Grid2D::unit_square(65).unwrap();
        assert_eq!(g.coarsen().unwrap().nx, 33);

        // 1-based (3, 5) -> (5, 9) is 0-based (2, 4) -> (4, 8).
        assert_eq!(fine_index((2, 4)), (4, 8));

        let g = Grid2D::new(4, 4, [0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(g.coarsen(), Err(GridError::NotCoarsenable { .. })));
    }

    #[test]
    fn coarsening_composes_with_index_maps() {
        // Coarsening twice matches composing the two index maps.
        let g = Grid2D::unit_square(33).unwrap();
        let c1 = g.coarsen().unwrap();
        let c2 = c1.coarsen().unwrap();
        assert_eq!((c2.nx, c2.ny), (9, 9));
        for ic in 0..c2.nx {
            for jc in 0..c2.ny {
                let on_c1 = fine_index((ic, jc));
                let on_fine = fine_index(on_c1);
                assert!(on_fine.0 < g.nx && on_fine.1 < g.ny);
                assert_eq!(on_fine, (4 * ic, 4 * jc));
            }
        }
    }

    #[test]
    fn derived_coarse_layout_nests() {
        let g = Grid2D::unit_square(33).unwrap();
        let fine = DistLayout::new(g, 2, 3, 1).unwrap();
        let coarse = fine.coarsen(1).unwrap();
        assert!(fine.nests_over(&coarse));
        // Every coarse point's fine image is owned by the same worker.
        for w in 0..coarse.n_workers() {
            let (ir, jr) = coarse.part.owned(w);
            let (fir, fjr) = fine.part.owned(w);
            for ic in ir {
                assert!(fir.contains(&(2 * ic)));
            }
            for jc in jr.clone() {
                assert!(fjr.contains(&(2 * jc)));
            }
        }
    }

    #[test]
    fn deep_coarsening_agglomerates() {
        let g = Grid2D::unit_square(9).unwrap();
        let fine = DistLayout::new(g, 3, 3, 1).unwrap();
        let coarse = fine.coarsen(1).unwrap(); // 5x5 over 3 workers -> width {2,2,1}
        assert_eq!(coarse.n_workers(), 1);
        assert_eq!(coarse.grid.nx, 5);
    }
}
