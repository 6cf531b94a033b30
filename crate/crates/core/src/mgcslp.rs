//! Approximate inverse of the CSLP operator by one geometric multigrid
//! V-cycle: damped Jacobi smoothing (omega = 0.8, one pre- and one post-
//! step), full-weighting restriction, bilinear interpolation, re-discretized
//! coarse operators, and a full-GMRES coarsest-level solve to 1e-8.
//!
//! Standard GMRES as the outer method expects a constant preconditioner, so
//! in frozen mode the coarsest-level iteration count reached on the first
//! cycle is pinned and reused until `reset` (a new outer solve) releases it.
//! Variable-preconditioner outer methods (GCR, FGMRES) run tolerance-based
//! coarsest solves directly.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::field::DistField;
use crate::grid::{DistLayout, GridError};
use crate::krylov::{gmres, SolveOpts};
use crate::media::WavenumberField;
use crate::operators::{BcKind, FivePointOp};
use crate::transfer::{prolong, restrict, ProlongKind, RestrictKind};

#[derive(Debug, Error)]
pub enum MgError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("zero smoother diagonal on level {level} (shifted mass term cancels the stencil center)")]
    ZeroDiagonal { level: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct SmootherConfig {
    pub omega: f64,
    pub pre: usize,
    pub post: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            omega: 0.8,
            pre: 1,
            post: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoarsestConfig {
    pub tol: f64,
    pub maxit: usize,
}

impl Default for CoarsestConfig {
    fn default() -> Self {
        CoarsestConfig {
            tol: 1e-8,
            maxit: 500,
        }
    }
}

/// Predefined minimum coarsest-grid extent (points per direction). The
/// hierarchy stops before a level would drop below this, independent of the
/// partition; thin subdomains agglomerate instead of cutting the chain.
pub const DEFAULT_COARSEST_MIN: usize = 9;

struct MgLevel {
    layout: Arc<DistLayout>,
    op: FivePointOp,
}

/// Geometric multigrid hierarchy for one CSLP operator, applied as a single
/// V-cycle per call.
pub struct MultigridHierarchy {
    levels: Vec<MgLevel>,
    pub smoother: SmootherConfig,
    pub coarsest: CoarsestConfig,
    bc: BcKind,
    /// Pin the coarsest iteration count after the first cycle.
    pub freeze_coarsest: bool,
    frozen_iters: Option<usize>,
    /// Cycles in which the coarsest solve missed its tolerance.
    pub coarsest_no_convergence: usize,
    /// Total V-cycles applied since construction.
    pub cycles_applied: usize,
}

impl MultigridHierarchy {
    /// Builds the level chain by repeated standard coarsening down to the
    /// predefined coarsest size. Every level re-discretizes the CSLP with
    /// its own mesh width and the wavenumber sampled at coincident points.
    pub fn build(
        k: Arc<WavenumberField>,
        shift: (f64, f64),
        bc: BcKind,
    ) -> Result<Self, MgError> {
        Self::build_with_min(k, shift, bc, DEFAULT_COARSEST_MIN)
    }

    /// As [`build`](Self::build) with an explicit coarsest-grid extent.
    pub fn build_with_min(
        k: Arc<WavenumberField>,
        shift: (f64, f64),
        bc: BcKind,
        coarsest_min: usize,
    ) -> Result<Self, MgError> {
        let mut levels = Vec::new();
        let mut layout = k.layout().clone();
        let mut klev = k;
        loop {
            let op = FivePointOp::cslp(klev.clone(), bc, shift);
            check_diagonal(&op, levels.len())?;
            let g = layout.grid;
            let descend = g.is_coarsenable()
                && (g.nx + 1) / 2 >= coarsest_min
                && (g.ny + 1) / 2 >= coarsest_min;
            levels.push(MgLevel {
                layout: layout.clone(),
                op,
            });
            if !descend {
                break;
            }
            let next = layout.coarsen(1)?;
            klev = Arc::new(klev.coarsen_onto(&next));
            layout = next;
        }
        Ok(MultigridHierarchy {
            levels,
            smoother: SmootherConfig::default(),
            coarsest: CoarsestConfig::default(),
            bc,
            freeze_coarsest: true,
            frozen_iters: None,
            coarsest_no_convergence: 0,
            cycles_applied: 0,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_grid(&self, l: usize) -> &Arc<DistLayout> {
        &self.levels[l].layout
    }

    /// Releases the pinned coarsest iteration count (call at the start of
    /// each outer solve).
    pub fn reset(&mut self) {
        self.frozen_iters = None;
    }

    /// One V-cycle approximating `M^{-1} rhs` from a zero initial guess.
    pub fn apply(&mut self, rhs: &DistField) -> DistField {
        self.cycles_applied += 1;
        self.cycle(0, rhs)
    }

    fn restrict_kind(&self) -> RestrictKind {
        match self.bc {
            BcKind::Dirichlet => RestrictKind::FullWeightingDirichletCopy,
            BcKind::Sommerfeld1 => RestrictKind::FullWeighting,
        }
    }

    fn cycle(&mut self, l: usize, rhs: &DistField) -> DistField {
        if l + 1 == self.levels.len() {
            return self.coarsest_solve(rhs);
        }
        let op = self.levels[l].op.clone();
        let layout = self.levels[l].layout.clone();
        let next_layout = self.levels[l + 1].layout.clone();
        let sm = self.smoother;

        let mut u = DistField::zeros(&layout);
        damped_jacobi(&mut u, rhs, &op, sm.omega, sm.pre);

        // Coarse-grid correction on the residual.
        u.exchange_halos();
        let mut r = op.apply_new(&u);
        r.rsub(rhs); // r := rhs - M u
        r.exchange_halos();
        let rc = restrict(self.restrict_kind(), &r, &next_layout);
        let mut ec = self.cycle(l + 1, &rc);
        ec.exchange_halos();
        let e = prolong(ProlongKind::Bilinear, &ec, &layout);
        u.axpy(Complex64::new(1.0, 0.0), &e);

        damped_jacobi(&mut u, rhs, &op, sm.omega, sm.post);
        u
    }

    fn coarsest_solve(&mut self, rhs: &DistField) -> DistField {
        let op = self.levels.last().unwrap().op.clone();
        let mut apply = |v: &mut DistField| {
            v.exchange_halos();
            op.apply_new(v)
        };
        let opts = match (self.freeze_coarsest, self.frozen_iters) {
            (true, Some(n)) => SolveOpts::new(0.0, n),
            _ => SolveOpts::new(self.coarsest.tol, self.coarsest.maxit),
        };
        let res = gmres(&mut apply, None, rhs, &opts);
        if self.freeze_coarsest && self.frozen_iters.is_none() {
            self.frozen_iters = Some(res.iterations);
        }
        if !res.converged && opts.tol > 0.0 {
            self.coarsest_no_convergence += 1;
        }
        res.x
    }
}

fn check_diagonal(op: &FivePointOp, level: usize) -> Result<(), MgError> {
    let layout = op.layout.clone();
    let g = layout.grid;
    let floor = 1e-12 * 4.0 / (g.h * g.h);
    for (w, v) in layout.views.iter().enumerate() {
        for gi in v.i_range.clone() {
            for gj in v.j_range.clone() {
                let (li, lj) = v.local_of_global(gi, gj);
                let kij = op.k.field.blocks[w][[li, lj]];
                if op.diagonal_at(gi, gj, kij).norm() < floor {
                    return Err(MgError::ZeroDiagonal { level });
                }
            }
        }
    }
    Ok(())
}

/// `steps` sweeps of damped Jacobi: `u += omega * D^{-1} (rhs - M u)` with D
/// the stencil's center coefficients.
pub fn damped_jacobi(
    u: &mut DistField,
    rhs: &DistField,
    op: &FivePointOp,
    omega: f64,
    steps: usize,
) {
    let layout = op.layout.clone();
    for _ in 0..steps {
        u.exchange_halos();
        let mut r = op.apply_new(u);
        r.rsub(rhs); // r := rhs - M u
        let om = Complex64::new(omega, 0.0);
        let k = op.k.clone();
        let opc = op.clone();
        u.zip_blocks_mut(&r, |w, ub, rb| {
            let v = &layout.views[w];
            for gi in v.i_range.clone() {
                for gj in v.j_range.clone() {
                    let (li, lj) = v.local_of_global(gi, gj);
                    let d = opc.diagonal_at(gi, gj, k.field.blocks[w][[li, lj]]);
                    ub[[li, lj]] += om * rb[[li, lj]] / d;
                }
            }
        });
    }
}
