//! Matrix-free intergrid transfers: full-weighting restriction, bilinear
//! interpolation, and the quintic-weight (cubic-Bezier-derived) pair used as
//! higher-order deflation vectors.
//!
//! Restriction is gather-style (each coarse point reads fine taps around its
//! fine image), prolongation reads coarse taps per fine point; both are
//! race-free under domain decomposition. Taps falling outside the physical
//! domain are dropped without renormalizing the remaining weights; the
//! full-weighting kind optionally copies coincident values on coarse
//! boundary rows, which preserves identity rows through the multigrid
//! hierarchy for Dirichlet problems.

use std::sync::Arc;

use num_complex::Complex64;

use crate::field::{redistribute, DistField};
use crate::grid::DistLayout;
use crate::oracle::stencils::{FW_3X3, QUINTIC_5X5};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictKind {
    FullWeighting,
    /// Full weighting with coarse boundary rows copying the coincident fine
    /// value (used on Dirichlet multigrid levels).
    FullWeightingDirichletCopy,
    HighOrder,
}

impl RestrictKind {
    pub fn radius(&self) -> usize {
        match self {
            RestrictKind::HighOrder => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProlongKind {
    Bilinear,
    HighOrder,
}

#[inline]
fn restrict_weight(kind: RestrictKind, di: isize, dj: isize) -> f64 {
    match kind {
        RestrictKind::HighOrder => QUINTIC_5X5[(di + 2) as usize][(dj + 2) as usize] / 64.0,
        _ => FW_3X3[(di + 1) as usize][(dj + 1) as usize] / 16.0,
    }
}

#[inline]
fn prolong_weight(kind: ProlongKind, di: isize, dj: isize) -> f64 {
    match kind {
        ProlongKind::HighOrder => QUINTIC_5X5[(di + 2) as usize][(dj + 2) as usize] / 64.0,
        ProlongKind::Bilinear => FW_3X3[(di + 1) as usize][(dj + 1) as usize] / 4.0,
    }
}

/// Fine-to-coarse transfer onto `coarse_layout`.
pub fn restrict(kind: RestrictKind, fine: &DistField, coarse_layout: &Arc<DistLayout>) -> DistField {
    fine.assert_fresh();
    if fine.layout.nests_over(coarse_layout) {
        debug_assert!(fine.layout.halo >= kind.radius());
        let mut out = DistField::zeros(coarse_layout);
        let fl = fine.layout.clone();
        let cl = coarse_layout.clone();
        out.for_each_block_mut(|w, ob| {
            let cv = &cl.views[w];
            let fv = &fl.views[w];
            let fb = &fine.blocks[w];
            for ic in cv.i_range.clone() {
                for jc in cv.j_range.clone() {
                    let val = gather_one(kind, &fl, |gi, gj| {
                        let (li, lj) = fv.local_of_global(gi, gj);
                        fb[[li, lj]]
                    }, ic, jc);
                    let (li, lj) = cv.local_of_global(ic, jc);
                    ob[[li, lj]] = val;
                }
            }
        });
        out
    } else {
        // Agglomerated target: gather the (tiny) fine level to one worker,
        // restrict serially, then scatter into the requested layout.
        let fine_single = redistribute(fine, &DistLayout::single(fine.layout.grid, 0));
        let coarse_single = DistLayout::single(coarse_layout.grid, 0);
        let mut out = DistField::zeros(&coarse_single);
        let fl = fine_single.layout.clone();
        let fb = &fine_single.blocks[0];
        let cg = coarse_single.grid;
        for ic in 0..cg.nx {
            for jc in 0..cg.ny {
                let val = gather_one(kind, &fl, |gi, gj| fb[[gi, gj]], ic, jc);
                out.blocks[0][[ic, jc]] = val;
            }
        }
        out.mark_stale();
        redistribute(&out, coarse_layout)
    }
}

fn gather_one(
    kind: RestrictKind,
    fine_layout: &DistLayout,
    fine_at: impl Fn(usize, usize) -> Complex64,
    ic: usize,
    jc: usize,
) -> Complex64 {
    let g = fine_layout.grid;
    let (fi, fj) = (2 * ic, 2 * jc);
    if kind == RestrictKind::FullWeightingDirichletCopy {
        let cnx = (g.nx + 1) / 2;
        let cny = (g.ny + 1) / 2;
        if ic == 0 || ic == cnx - 1 || jc == 0 || jc == cny - 1 {
            return fine_at(fi, fj);
        }
    }
    let r = kind.radius() as isize;
    let mut acc = Complex64::new(0.0, 0.0);
    for di in -r..=r {
        let ti = fi as isize + di;
        if ti < 0 || ti >= g.nx as isize {
            continue;
        }
        for dj in -r..=r {
            let tj = fj as isize + dj;
            if tj < 0 || tj >= g.ny as isize {
                continue;
            }
            acc += restrict_weight(kind, di, dj) * fine_at(ti as usize, tj as usize);
        }
    }
    acc
}

/// Coarse-to-fine transfer onto `fine_layout`.
pub fn prolong(kind: ProlongKind, coarse: &DistField, fine_layout: &Arc<DistLayout>) -> DistField {
    coarse.assert_fresh();
    if fine_layout.nests_over(&coarse.layout) {
        debug_assert!(coarse.layout.halo >= 1);
        let mut out = DistField::zeros(fine_layout);
        let fl = fine_layout.clone();
        let cl = coarse.layout.clone();
        out.for_each_block_mut(|w, ob| {
            let fv = &fl.views[w];
            let cv = &cl.views[w];
            let cb = &coarse.blocks[w];
            for fi in fv.i_range.clone() {
                for fj in fv.j_range.clone() {
                    let val = scatter_one(kind, &cl, |gi, gj| {
                        let (li, lj) = cv.local_of_global(gi, gj);
                        cb[[li, lj]]
                    }, fi, fj);
                    let (li, lj) = fv.local_of_global(fi, fj);
                    ob[[li, lj]] = val;
                }
            }
        });
        out
    } else {
        let coarse_single = redistribute(coarse, &DistLayout::single(coarse.layout.grid, 0));
        let fine_single = DistLayout::single(fine_layout.grid, 0);
        let mut out = DistField::zeros(&fine_single);
        let cl = coarse_single.layout.clone();
        let cb = &coarse_single.blocks[0];
        let fg = fine_single.grid;
        for fi in 0..fg.nx {
            for fj in 0..fg.ny {
                out.blocks[0][[fi, fj]] = scatter_one(kind, &cl, |gi, gj| cb[[gi, gj]], fi, fj);
            }
        }
        out.mark_stale();
        redistribute(&out, fine_layout)
    }
}

fn scatter_one(
    kind: ProlongKind,
    coarse_layout: &DistLayout,
    coarse_at: impl Fn(usize, usize) -> Complex64,
    fi: usize,
    fj: usize,
) -> Complex64 {
    let cg = coarse_layout.grid;
    let r: isize = match kind {
        ProlongKind::Bilinear => 1,
        ProlongKind::HighOrder => 2,
    };
    // Coarse taps ic with |fi - 2*ic| <= r.
    let lo = |f: usize| ((f as isize - r).div_euclid(2) + ((f as isize - r).rem_euclid(2) != 0) as isize).max(0);
    let hi = |f: usize, n: usize| ((f as isize + r).div_euclid(2)).min(n as isize - 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for ic in lo(fi)..=hi(fi, cg.nx) {
        let di = fi as isize - 2 * ic;
        for jc in lo(fj)..=hi(fj, cg.ny) {
            let dj = fj as isize - 2 * jc;
            acc += prolong_weight(kind, di, dj) * coarse_at(ic as usize, jc as usize);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::oracle::{assemble_prolongation, assemble_restriction, rel_err, TransferOrder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(layout: &Arc<DistLayout>, seed: u64) -> DistField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = DistField::from_global_fn(layout, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        f.exchange_halos();
        f
    }

    #[test]
    fn fw_constant_interior_is_one() {
        let g = Grid2D::unit_square(9).unwrap();
        let fine = DistLayout::single(g, 1);
        let coarse = fine.coarsen(1).unwrap();
        let mut one = DistField::from_global_fn(&fine, |_, _| Complex64::new(1.0, 0.0));
        one.exchange_halos();
        let r = restrict(RestrictKind::FullWeighting, &one, &coarse);
        let d = r.to_dense();
        let cn = coarse.grid.nx;
        for ic in 1..cn - 1 {
            for jc in 1..cn - 1 {
                assert!((d[ic * cn + jc].re - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fw_delta_gather_weight() {
        // A unit fine delta at the image of (ic, jc) contributes 4/16 there.
        let g = Grid2D::unit_square(9).unwrap();
        let fine = DistLayout::single(g, 1);
        let coarse = fine.coarsen(1).unwrap();
        let mut delta = DistField::from_global_fn(&fine, |i, j| {
            Complex64::new(if (i, j) == (4, 4) { 1.0 } else { 0.0 }, 0.0)
        });
        delta.exchange_halos();
        let r = restrict(RestrictKind::FullWeighting, &delta, &coarse).to_dense();
        let cn = coarse.grid.nx;
        for ic in 0..cn {
            for jc in 0..cn {
                let expect = if (ic, jc) == (2, 2) { 0.25 } else { 0.0 };
                assert!((r[ic * cn + jc].re - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn restrict_matches_assembled_oracles() {
        for (n, kind, order) in [
            (9, RestrictKind::FullWeighting, TransferOrder::Low),
            (17, RestrictKind::HighOrder, TransferOrder::High),
        ] {
            let g = Grid2D::unit_square(n).unwrap();
            let fine = DistLayout::single(g, 2);
            let coarse = fine.coarsen(2).unwrap();
            let f = random_field(&fine, 7 + n as u64);
            let got = restrict(kind, &f, &coarse).to_dense();
            let mat = assemble_restriction(order, &g, false);
            let expect = mat.matvec(&f.to_dense());
            assert!(rel_err(&got, &expect) < 1e-14);
        }
    }

    #[test]
    fn prolong_matches_assembled_oracles() {
        for (n, kind, order) in [
            (9, ProlongKind::Bilinear, TransferOrder::Low),
            (17, ProlongKind::HighOrder, TransferOrder::High),
        ] {
            let g = Grid2D::unit_square(n).unwrap();
            let fine = DistLayout::single(g, 2);
            let coarse = fine.coarsen(2).unwrap();
            let f = random_field(&coarse, 40 + n as u64);
            let got = prolong(kind, &f, &fine).to_dense();
            let mat = assemble_prolongation(order, &g);
            let expect = mat.matvec(&f.to_dense());
            assert!(rel_err(&got, &expect) < 1e-14);
        }
    }

    #[test]
    fn bilinear_reproduces_linear_ramp() {
        let g = Grid2D::unit_square(17).unwrap();
        let fine = DistLayout::single(g, 1);
        let coarse = fine.coarsen(1).unwrap();
        let cg = coarse.grid;
        let mut ramp = DistField::from_global_fn(&coarse, |i, j| {
            Complex64::new(cg.x(i) + 2.0 * cg.y(j), 0.0)
        });
        ramp.exchange_halos();
        let p = prolong(ProlongKind::Bilinear, &ramp, &fine).to_dense();
        for i in 0..17 {
            for j in 0..17 {
                let expect = g.x(i) + 2.0 * g.y(j);
                assert!((p[i * 17 + j].re - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn high_order_constants() {
        let g = Grid2D::unit_square(17).unwrap();
        let fine = DistLayout::single(g, 2);
        let coarse = fine.coarsen(2).unwrap();
        let mut one = DistField::from_global_fn(&fine, |_, _| Complex64::new(1.0, 0.0));
        one.exchange_halos();
        // Interior quintic gather of a constant: 256 taps-weight over 64.
        let r = restrict(RestrictKind::HighOrder, &one, &coarse).to_dense();
        let cn = coarse.grid.nx;
        for ic in 1..cn - 1 {
            for jc in 1..cn - 1 {
                assert!((r[ic * cn + jc].re - 4.0).abs() < 1e-13);
            }
        }
        // Quintic prolongation is a partition of unity in the interior.
        let mut onec = DistField::from_global_fn(&coarse, |_, _| Complex64::new(1.0, 0.0));
        onec.exchange_halos();
        let p = prolong(ProlongKind::HighOrder, &onec, &fine).to_dense();
        for i in 2..15 {
            for j in 2..15 {
                assert!((p[i * 17 + j].re - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn transfers_partition_invariant() {
        let g = Grid2D::unit_square(17).unwrap();
        let serial_fine = DistLayout::single(g, 2);
        let serial_coarse = serial_fine.coarsen(2).unwrap();
        let f = random_field(&serial_fine, 99);
        let want_r = restrict(RestrictKind::HighOrder, &f, &serial_coarse).to_dense();

        let par_fine = DistLayout::new(g, 2, 2, 2).unwrap();
        let par_coarse = par_fine.coarsen(2).unwrap();
        let mut fp = DistField::from_dense(&par_fine, &f.to_dense());
        fp.exchange_halos();
        let got_r = restrict(RestrictKind::HighOrder, &fp, &par_coarse).to_dense();
        assert!(rel_err(&got_r, &want_r) < 1e-14);

        let c = random_field(&serial_coarse, 100);
        let want_p = prolong(ProlongKind::HighOrder, &c, &serial_fine).to_dense();
        let mut cp = DistField::from_dense(&par_coarse, &c.to_dense());
        cp.exchange_halos();
        let got_p = prolong(ProlongKind::HighOrder, &cp, &par_fine).to_dense();
        assert!(rel_err(&got_p, &want_p) < 1e-14);
    }

    #[test]
    fn adjoint_scalars() {
        // <P x, y> = sigma <x, R y> on interior-supported fields:
        // sigma = 4 for the full-weighting/bilinear pair, 1 for the quintic
        // pair (both printed over 64).
        let g = Grid2D::unit_square(17).unwrap();
        let fine = DistLayout::single(g, 2);
        let coarse = fine.coarsen(2).unwrap();
        let cn = coarse.grid.nx;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xc = DistField::from_global_fn(&coarse, |i, j| {
            if i >= 2 && i < cn - 2 && j >= 2 && j < cn - 2 {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        xc.exchange_halos();
        let mut yf = DistField::from_global_fn(&fine, |i, j| {
            if i >= 4 && i < 13 && j >= 4 && j < 13 {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        yf.exchange_halos();

        for (pk, rk, sigma) in [
            (ProlongKind::Bilinear, RestrictKind::FullWeighting, 4.0),
            (ProlongKind::HighOrder, RestrictKind::HighOrder, 1.0),
        ] {
            let px = prolong(pk, &xc, &fine);
            let ry = restrict(rk, &yf, &coarse);
            let lhs = px.dot(&yf);
            let rhs = xc.dot(&ry) * sigma;
            assert!(
                (lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1e-30),
                "sigma mismatch for {pk:?}: {lhs} vs {rhs}"
            );
        }
    }
}
