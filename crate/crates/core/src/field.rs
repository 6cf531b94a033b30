//! Distributed complex-valued grid fields: the universal vector type for
//! every operator and Krylov solver in this crate.
//!
//! A field owns one block per worker, laid out `(i, j)` with a halo frame.
//! Workers touch only owned+halo data; `exchange_halos` and the global
//! reductions are the only synchronization points, and reductions combine
//! per-worker partial sums in worker order so results are deterministic for
//! a fixed partition.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::DistLayout;

/// Blocks below this many total points are processed without the thread
/// pool; the fork/join overhead dominates otherwise.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone)]
pub struct DistField {
    pub layout: Arc<DistLayout>,
    pub blocks: Vec<Array2<Complex64>>,
    halo_fresh: bool,
}

impl DistField {
    pub fn zeros(layout: &Arc<DistLayout>) -> Self {
        let blocks = layout
            .views
            .iter()
            .map(|v| Array2::zeros((v.local_nx(), v.local_ny())))
            .collect();
        DistField {
            layout: layout.clone(),
            blocks,
            // All-zero halos are consistent with all-zero interiors.
            halo_fresh: true,
        }
    }

    /// Fills owned points from a function of the global index.
    pub fn from_global_fn(
        layout: &Arc<DistLayout>,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Self {
        let mut out = Self::zeros(layout);
        for (v, b) in layout.views.iter().zip(out.blocks.iter_mut()) {
            for gi in v.i_range.clone() {
                for gj in v.j_range.clone() {
                    let (li, lj) = v.local_of_global(gi, gj);
                    b[[li, lj]] = f(gi, gj);
                }
            }
        }
        out.halo_fresh = false;
        out
    }

    pub fn halo_fresh(&self) -> bool {
        self.halo_fresh
    }

    pub fn mark_stale(&mut self) {
        self.halo_fresh = false;
    }

    #[inline]
    pub fn assert_fresh(&self) {
        debug_assert!(self.halo_fresh, "stale halo: exchange before applying a stencil");
    }

    fn use_par(&self) -> bool {
        self.layout.grid.n_points() >= PAR_THRESHOLD && self.blocks.len() > 1
    }

    /// Runs `f` on every block (in parallel when worthwhile), then marks the
    /// halos stale.
    pub fn for_each_block_mut<F>(&mut self, f: F)
    where
        F: Fn(usize, &mut Array2<Complex64>) + Sync,
    {
        if self.use_par() {
            self.blocks
                .par_iter_mut()
                .enumerate()
                .for_each(|(w, b)| f(w, b));
        } else {
            for (w, b) in self.blocks.iter_mut().enumerate() {
                f(w, b);
            }
        }
        self.halo_fresh = false;
    }

    /// Zip over blocks of `self` and one other field.
    pub fn zip_blocks_mut<F>(&mut self, other: &DistField, f: F)
    where
        F: Fn(usize, &mut Array2<Complex64>, &Array2<Complex64>) + Sync,
    {
        debug_assert!(Arc::ptr_eq(&self.layout, &other.layout));
        if self.use_par() {
            self.blocks
                .par_iter_mut()
                .zip(other.blocks.par_iter())
                .enumerate()
                .for_each(|(w, (b, o))| f(w, b, o));
        } else {
            for (w, (b, o)) in self.blocks.iter_mut().zip(other.blocks.iter()).enumerate() {
                f(w, b, o);
            }
        }
        self.halo_fresh = false;
    }

    /// Per-worker map-reduce over owned points, combined in worker order.
    pub fn reduce_owned<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &Array2<Complex64>) -> T + Sync,
    {
        if self.use_par() {
            self.blocks
                .par_iter()
                .enumerate()
                .map(|(w, b)| f(w, b))
                .collect()
        } else {
            self.blocks.iter().enumerate().map(|(w, b)| f(w, b)).collect()
        }
    }

    /// `self := a*x + self`
    pub fn axpy(&mut self, a: Complex64, x: &DistField) {
        self.zip_blocks_mut(x, |_, b, o| {
            for (u, v) in b.iter_mut().zip(o.iter()) {
                *u += a * v;
            }
        });
    }

    /// `self := a*self`
    pub fn scale(&mut self, a: Complex64) {
        self.for_each_block_mut(|_, b| {
            for u in b.iter_mut() {
                *u *= a;
            }
        });
    }

    /// `self := x - self` (handy for residual updates)
    pub fn rsub(&mut self, x: &DistField) {
        self.zip_blocks_mut(x, |_, b, o| {
            for (u, v) in b.iter_mut().zip(o.iter()) {
                *u = v - *u;
            }
        });
    }

    pub fn copy_from(&mut self, x: &DistField) {
        self.zip_blocks_mut(x, |_, b, o| b.assign(o));
        self.halo_fresh = x.halo_fresh;
    }

    /// l2 inner product `<self, other> = sum conj(other_i) * self_i` over
    /// owned points. Partial sums per worker use Neumaier compensation and
    /// combine in worker order, keeping cross-partition differences at the
    /// rounding level.
    pub fn dot(&self, other: &DistField) -> Complex64 {
        debug_assert!(Arc::ptr_eq(&self.layout, &other.layout));
        let layout = self.layout.clone();
        let partials: Vec<(Complex64, Complex64)> = if self.use_par() {
            self.blocks
                .par_iter()
                .zip(other.blocks.par_iter())
                .enumerate()
                .map(|(w, (a, b))| dot_block(&layout, w, a, b))
                .collect()
        } else {
            self.blocks
                .iter()
                .zip(other.blocks.iter())
                .enumerate()
                .map(|(w, (a, b))| dot_block(&layout, w, a, b))
                .collect()
        };
        let mut sum = Complex64::new(0.0, 0.0);
        let mut comp = Complex64::new(0.0, 0.0);
        for (s, c) in partials {
            neumaier_add(&mut sum, &mut comp, s);
            neumaier_add(&mut sum, &mut comp, c);
        }
        sum + comp
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).re.max(0.0).sqrt()
    }

    /// Gathers the whole field into a dense row-major `nx * ny` vector
    /// (index `i * ny + j`). Test and oracle helper.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let g = self.layout.grid;
        let mut out = vec![Complex64::new(0.0, 0.0); g.nx * g.ny];
        for (v, b) in self.layout.views.iter().zip(self.blocks.iter()) {
            for gi in v.i_range.clone() {
                for gj in v.j_range.clone() {
                    let (li, lj) = v.local_of_global(gi, gj);
                    out[gi * g.ny + gj] = b[[li, lj]];
                }
            }
        }
        out
    }

    pub fn from_dense(layout: &Arc<DistLayout>, dense: &[Complex64]) -> Self {
        let ny = layout.grid.ny;
        Self::from_global_fn(layout, |gi, gj| dense[gi * ny + gj])
    }

    /// Refreshes every halo cell from the owning neighbor. Interior values
    /// are untouched; halo cells beyond the physical boundary are left as
    /// they are (boundary stencils never read them).
    pub fn exchange_halos(&mut self) {
        let h = self.layout.halo;
        if h == 0 || self.layout.n_workers() == 1 {
            self.halo_fresh = true;
            return;
        }
        let part = self.layout.part.clone();
        let views = self.layout.views.clone();

        // Phase 1: west/east strips over owned rows.
        let mut copies: Vec<(usize, [usize; 4], Vec<Complex64>)> = Vec::new();
        for w in 0..views.len() {
            let (bx, by) = part.block_of(w);
            let v = &views[w];
            let onx = v.owned_nx();
            let ony = v.owned_ny();
            if bx > 0 {
                let nb = part.worker_at(bx - 1, by);
                let nv = &views[nb];
                // neighbor's last h owned columns -> our west halo
                let strip = slice_strip(
                    &self.blocks[nb],
                    nv.owned_nx(),
                    nv.owned_nx() + h,
                    h,
                    h + ony,
                );
                copies.push((w, [0, h, h, h + ony], strip));
            }
            if bx + 1 < part.px {
                let nb = part.worker_at(bx + 1, by);
                // neighbor's first h owned columns -> our east halo
                let strip = slice_strip(&self.blocks[nb], h, h + h, h, h + ony);
                copies.push((w, [h + onx, h + onx + h, h, h + ony], strip));
            }
        }
        self.apply_copies(copies);

        // Phase 2: south/north strips over the full local width, so corner
        // halo cells pick up diagonal values via the phase-1 columns.
        let mut copies: Vec<(usize, [usize; 4], Vec<Complex64>)> = Vec::new();
        for w in 0..views.len() {
            let (bx, by) = part.block_of(w);
            let v = &views[w];
            let lnx = v.local_nx();
            let ony = v.owned_ny();
            if by > 0 {
                let nb = part.worker_at(bx, by - 1);
                let nv = &views[nb];
                // neighbor's last h owned rows (full width) -> our south halo
                let strip = slice_strip(
                    &self.blocks[nb],
                    0,
                    lnx,
                    nv.owned_ny(),
                    nv.owned_ny() + h,
                );
                copies.push((w, [0, lnx, 0, h], strip));
            }
            if by + 1 < part.py {
                let nb = part.worker_at(bx, by + 1);
                // neighbor's first h owned rows -> our north halo
                let strip = slice_strip(&self.blocks[nb], 0, lnx, h, h + h);
                copies.push((w, [0, lnx, h + ony, h + ony + h], strip));
            }
        }
        self.apply_copies(copies);
        self.halo_fresh = true;
    }

    fn apply_copies(&mut self, copies: Vec<(usize, [usize; 4], Vec<Complex64>)>) {
        for (w, [i0, i1, j0, j1], data) in copies {
            let b = &mut self.blocks[w];
            let mut it = data.into_iter();
            for li in i0..i1 {
                for lj in j0..j1 {
                    b[[li, lj]] = it.next().unwrap();
                }
            }
        }
    }
}

fn slice_strip(
    b: &Array2<Complex64>,
    i0: usize,
    i1: usize,
    j0: usize,
    j1: usize,
) -> Vec<Complex64> {
    let mut out = Vec::with_capacity((i1 - i0) * (j1 - j0));
    for li in i0..i1 {
        for lj in j0..j1 {
            out.push(b[[li, lj]]);
        }
    }
    out
}

fn dot_block(
    layout: &DistLayout,
    w: usize,
    a: &Array2<Complex64>,
    b: &Array2<Complex64>,
) -> (Complex64, Complex64) {
    let v = &layout.views[w];
    let h = v.halo;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut comp = Complex64::new(0.0, 0.0);
    for li in h..h + v.owned_nx() {
        for lj in h..h + v.owned_ny() {
            let t = a[[li, lj]] * b[[li, lj]].conj();
            neumaier_add(&mut sum, &mut comp, t);
        }
    }
    (sum, comp)
}

#[inline]
fn neumaier_add(sum: &mut Complex64, comp: &mut Complex64, v: Complex64) {
    comp.re += neumaier_step(&mut sum.re, v.re);
    comp.im += neumaier_step(&mut sum.im, v.im);
}

#[inline]
fn neumaier_step(sum: &mut f64, v: f64) -> f64 {
    let t = *sum + v;
    let c = if sum.abs() >= v.abs() {
        (*sum - t) + v
    } else {
        (v - t) + *sum
    };
    *sum = t;
    c
}

/// Copies a field into a different layout of the same grid (used when a
/// coarse level is agglomerated onto fewer workers). Models a gather/scatter
/// collective; owned regions are copied verbatim.
pub fn redistribute(src: &DistField, dst_layout: &Arc<DistLayout>) -> DistField {
    assert_eq!(src.layout.grid.nx, dst_layout.grid.nx);
    assert_eq!(src.layout.grid.ny, dst_layout.grid.ny);
    let mut dst = DistField::zeros(dst_layout);
    for (dv, db) in dst_layout.views.iter().zip(dst.blocks.iter_mut()) {
        for (sv, sb) in src.layout.views.iter().zip(src.blocks.iter()) {
            let i0 = dv.i_range.start.max(sv.i_range.start);
            let i1 = dv.i_range.end.min(sv.i_range.end);
            let j0 = dv.j_range.start.max(sv.j_range.start);
            let j1 = dv.j_range.end.min(sv.j_range.end);
            for gi in i0..i1 {
                for gj in j0..j1 {
                    let (dli, dlj) = dv.local_of_global(gi, gj);
                    let (sli, slj) = sv.local_of_global(gi, gj);
                    db[[dli, dlj]] = sb[[sli, slj]];
                }
            }
        }
    }
    dst.mark_stale();
    dst
}

/// Real-valued companion field (wavenumbers). Immutable after construction;
/// halos are filled once.
#[derive(Debug, Clone)]
pub struct RealField {
    pub layout: Arc<DistLayout>,
    pub blocks: Vec<Array2<f64>>,
}

impl RealField {
    pub fn from_global_fn(
        layout: &Arc<DistLayout>,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut blocks: Vec<Array2<f64>> = layout
            .views
            .iter()
            .map(|v| Array2::zeros((v.local_nx(), v.local_ny())))
            .collect();
        // Fill owned and halo cells directly from the global function; real
        // fields are constructed per-subdomain and never mutated, so there
        // is no exchange step to keep consistent.
        for (v, b) in layout.views.iter().zip(blocks.iter_mut()) {
            for li in 0..v.local_nx() {
                for lj in 0..v.local_ny() {
                    let (gi, gj) = v.global_of_local(li, lj);
                    if gi >= 0
                        && gj >= 0
                        && (gi as usize) < layout.grid.nx
                        && (gj as usize) < layout.grid.ny
                    {
                        b[[li, lj]] = f(gi as usize, gj as usize);
                    }
                }
            }
        }
        RealField {
            layout: layout.clone(),
            blocks,
        }
    }

    #[inline]
    pub fn get(&self, w: usize, li: usize, lj: usize) -> f64 {
        self.blocks[w][[li, lj]]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for (v, b) in self.layout.views.iter().zip(self.blocks.iter()) {
            for gi in v.i_range.clone() {
                for gj in v.j_range.clone() {
                    let (li, lj) = v.local_of_global(gi, gj);
                    mn = mn.min(b[[li, lj]]);
                    mx = mx.max(b[[li, lj]]);
                }
            }
        }
        (mn, mx)
    }

    /// Samples this field at every-other point onto the coarsened layout.
    pub fn coarsen_onto(&self, coarse: &Arc<DistLayout>) -> RealField {
        let fine = self.clone();
        RealField::from_global_fn(coarse, |gi, gj| {
            let (fi, fj) = crate::grid::fine_index((gi, gj));
            fine.get_global(fi, fj)
        })
    }

    /// Global random access (only used at construction time of derived
    /// fields; applications read locally).
    pub fn get_global(&self, gi: usize, gj: usize) -> f64 {
        let w = self.layout.part.owner_of(gi, gj);
        let (li, lj) = self.layout.views[w].local_of_global(gi, gj);
        self.blocks[w][[li, lj]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_field_halos_stay_constant() {
        let g = Grid2D::unit_square(9).unwrap();
        let layout = DistLayout::new(g, 2, 2, 1).unwrap();
        let mut f = DistField::from_global_fn(&layout, |_, _| c(3.25));
        f.exchange_halos();
        for (v, b) in layout.views.iter().zip(f.blocks.iter()) {
            for li in 0..v.local_nx() {
                for lj in 0..v.local_ny() {
                    let (gi, gj) = v.global_of_local(li, lj);
                    let inside = gi >= 0 && gj >= 0 && (gi as usize) < 9 && (gj as usize) < 9;
                    if inside {
                        assert_eq!(b[[li, lj]], c(3.25));
                    }
                }
            }
        }
    }

    #[test]
    fn single_partition_exchange_is_noop() {
        let g = Grid2D::unit_square(9).unwrap();
        let layout = DistLayout::single(g, 1);
        let mut f = DistField::from_global_fn(&layout, |i, j| c((i + 10 * j) as f64));
        let before = f.to_dense();
        f.exchange_halos();
        assert_eq!(before, f.to_dense());
    }

    #[test]
    fn halos_match_global_formula() {
        let g = Grid2D::unit_square(9).unwrap();
        let layout = DistLayout::new(g, 2, 2, 1).unwrap();
        let mut f = DistField::from_global_fn(&layout, |i, j| c((i + j) as f64));
        f.exchange_halos();
        for (v, b) in layout.views.iter().zip(f.blocks.iter()) {
            for li in 0..v.local_nx() {
                for lj in 0..v.local_ny() {
                    let (gi, gj) = v.global_of_local(li, lj);
                    if gi >= 0 && gj >= 0 && (gi as usize) < 9 && (gj as usize) < 9 {
                        assert_eq!(b[[li, lj]], c((gi + gj) as f64), "mismatch at {gi},{gj}");
                    }
                }
            }
        }
    }

    #[test]
    fn wide_halo_corners_arrive() {
        let g = Grid2D::unit_square(17).unwrap();
        let layout = DistLayout::new(g, 2, 2, 2).unwrap();
        let mut f = DistField::from_global_fn(&layout, |i, j| c((3 * i + 7 * j) as f64));
        f.exchange_halos();
        for (v, b) in layout.views.iter().zip(f.blocks.iter()) {
            for li in 0..v.local_nx() {
                for lj in 0..v.local_ny() {
                    let (gi, gj) = v.global_of_local(li, lj);
                    if gi >= 0 && gj >= 0 && (gi as usize) < 17 && (gj as usize) < 17 {
                        assert_eq!(b[[li, lj]], c((3 * gi + 7 * gj) as f64));
                    }
                }
            }
        }
    }

    #[test]
    fn dot_matches_dense_and_is_partition_invariant() {
        let g = Grid2D::unit_square(17).unwrap();
        let mk = |px, py| {
            let layout = DistLayout::new(g, px, py, 1).unwrap();
            let a = DistField::from_global_fn(&layout, |i, j| {
                Complex64::new(i as f64 * 0.1, j as f64 - 3.0)
            });
            let b = DistField::from_global_fn(&layout, |i, j| {
                Complex64::new((i * j) as f64 * 0.01, 1.0 / (1.0 + i as f64))
            });
            a.dot(&b)
        };
        let d11 = mk(1, 1);
        let d22 = mk(2, 2);
        let d32 = mk(3, 2);
        assert!((d11 - d22).norm() <= 1e-12 * d11.norm());
        assert!((d11 - d32).norm() <= 1e-12 * d11.norm());
    }

    #[test]
    fn redistribute_roundtrip() {
        let g = Grid2D::unit_square(9).unwrap();
        let a = DistLayout::new(g, 2, 2, 1).unwrap();
        let b = DistLayout::single(g, 0);
        let f = DistField::from_global_fn(&a, |i, j| c((i * 100 + j) as f64));
        let gathered = redistribute(&f, &b);
        let back = redistribute(&gathered, &a);
        assert_eq!(f.to_dense(), back.to_dense());
    }
}
