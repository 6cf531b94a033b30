//! Krylov solvers: full GMRES with modified Gram-Schmidt and Givens
//! rotations (left preconditioning, preconditioned-residual stopping), GCR
//! and flexible GMRES with right preconditioning for variable
//! preconditioners, and the coarse-grid solver wrapper.
//!
//! Operator and preconditioner callbacks may exchange the input's halos
//! (that is why they take `&mut`); owned values are never modified.

use num_complex::Complex64;

use crate::field::DistField;

/// Applies either the system operator or a preconditioner to a field.
pub type ApplyFn<'a> = &'a mut dyn FnMut(&mut DistField) -> DistField;

#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub tol: f64,
    pub maxit: usize,
    /// Restart length for GMRES; `None` means full (unrestarted).
    pub restart: Option<usize>,
    /// Recompute the stopping-criterion residual once at exit (costs one
    /// extra operator + preconditioner application).
    pub verify_final: bool,
}

impl SolveOpts {
    pub fn new(tol: f64, maxit: usize) -> Self {
        SolveOpts {
            tol,
            maxit,
            restart: None,
            verify_final: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: DistField,
    pub iterations: usize,
    /// Relative residual per iteration, starting at 1.0; preconditioned for
    /// left-preconditioned GMRES, true for GCR/FGMRES.
    pub history: Vec<f64>,
    pub converged: bool,
    pub final_relres: f64,
    /// Recomputed stopping-criterion residual when `verify_final` is set.
    pub verified_relres: Option<f64>,
    pub stagnated: bool,
}

/// One complex Givens rotation with real cosine.
#[derive(Clone, Copy)]
struct Givens {
    c: f64,
    s: Complex64,
}

impl Givens {
    fn make(a: Complex64, b: Complex64) -> (Givens, Complex64) {
        let an = a.norm();
        let bn = b.norm();
        if bn == 0.0 {
            return (
                Givens {
                    c: 1.0,
                    s: Complex64::new(0.0, 0.0),
                },
                a,
            );
        }
        if an == 0.0 {
            return (
                Givens {
                    c: 0.0,
                    s: b.conj() / bn,
                },
                Complex64::new(bn, 0.0),
            );
        }
        let t = (an * an + bn * bn).sqrt();
        let c = an / t;
        let s = (a / an) * b.conj() / t;
        let r = (a / an) * t;
        (Givens { c, s }, r)
    }

    #[inline]
    fn apply(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        (
            self.c * a + self.s * b,
            -self.s.conj() * a + self.c * b,
        )
    }
}

/// Left-preconditioned full GMRES for `P A x = P b` with zero initial guess.
/// Stops when the preconditioned relative residual drops below `opts.tol`;
/// an exact-solution breakdown (vanishing new basis vector) also stops with
/// `converged = true`.
pub fn gmres(
    op: ApplyFn,
    mut precond: Option<ApplyFn>,
    b: &DistField,
    opts: &SolveOpts,
) -> KrylovResult {
    let layout = b.layout.clone();

    let mut b0 = b.clone();
    let mut r0 = match precond.as_mut() {
        Some(p) => p(&mut b0),
        None => b0,
    };
    let beta = r0.norm();
    let mut history = vec![1.0];
    if beta == 0.0 {
        return KrylovResult {
            x: DistField::zeros(&layout),
            iterations: 0,
            history: vec![0.0],
            converged: true,
            final_relres: 0.0,
            verified_relres: Some(0.0),
            stagnated: false,
        };
    }

    let cycle_len = opts.restart.unwrap_or(opts.maxit).max(1);
    let mut x = DistField::zeros(&layout);
    let mut total_iters = 0usize;
    let mut converged = false;
    let mut relres = 1.0;

    'outer: loop {
        r0.scale(Complex64::new(1.0 / r0.norm(), 0.0));
        let res0 = if total_iters == 0 { beta } else { relres * beta };
        let mut basis: Vec<DistField> = vec![r0.clone()];
        let mut hess: Vec<Vec<Complex64>> = Vec::new();
        let mut rots: Vec<Givens> = Vec::new();
        let mut g: Vec<Complex64> = vec![Complex64::new(res0, 0.0)];
        let mut j_done = 0usize;
        let mut breakdown = false;

        for j in 0..cycle_len {
            if total_iters >= opts.maxit {
                break;
            }
            let mut w = {
                let av = op(&mut basis[j]);
                match precond.as_mut() {
                    Some(p) => {
                        let mut av = av;
                        p(&mut av)
                    }
                    None => av,
                }
            };
            let norm_before = w.norm();
            let mut hcol: Vec<Complex64> = Vec::with_capacity(j + 2);
            for vi in basis.iter().take(j + 1) {
                let hij = w.dot(vi);
                w.axpy(-hij, vi);
                hcol.push(hij);
            }
            // One reorthogonalization pass if cancellation ate the vector.
            if w.norm() < 1e-8 * norm_before {
                for (i, vi) in basis.iter().take(j + 1).enumerate() {
                    let corr = w.dot(vi);
                    w.axpy(-corr, vi);
                    hcol[i] += corr;
                }
            }
            let hnew = w.norm();
            hcol.push(Complex64::new(hnew, 0.0));

            // Apply accumulated rotations to the new column.
            for (i, rot) in rots.iter().enumerate() {
                let (a, bb) = rot.apply(hcol[i], hcol[i + 1]);
                hcol[i] = a;
                hcol[i + 1] = bb;
            }
            let (rot, r) = Givens::make(hcol[j], hcol[j + 1]);
            hcol[j] = r;
            hcol[j + 1] = Complex64::new(0.0, 0.0);
            let (g0, g1) = rot.apply(g[j], Complex64::new(0.0, 0.0));
            g[j] = g0;
            g.push(g1);
            rots.push(rot);
            hess.push(hcol);

            total_iters += 1;
            j_done = j + 1;
            relres = g[j + 1].norm() / beta;
            history.push(relres);

            if hnew <= 1e-14 * norm_before.max(1e-300) {
                breakdown = true; // exact solution found in this subspace
                converged = true;
                break;
            }
            w.scale(Complex64::new(1.0 / hnew, 0.0));
            basis.push(w);
            if relres <= opts.tol {
                converged = true;
                break;
            }
        }

        // Solve the triangular system and accumulate the update.
        if j_done > 0 {
            let mut y = vec![Complex64::new(0.0, 0.0); j_done];
            for i in (0..j_done).rev() {
                let mut acc = g[i];
                for k in i + 1..j_done {
                    acc -= hess[k][i] * y[k];
                }
                y[i] = acc / hess[i][i];
            }
            for (yi, vi) in y.iter().zip(basis.iter()) {
                x.axpy(*yi, vi);
            }
        }

        if converged || total_iters >= opts.maxit || breakdown {
            break 'outer;
        }
        // Restarted mode: rebuild the preconditioned residual P(b - A x)
        // and continue. Full GMRES is the default everywhere in this crate.
        let pax = {
            let av = op(&mut x);
            match precond.as_mut() {
                Some(p) => {
                    let mut av = av;
                    p(&mut av)
                }
                None => av,
            }
        };
        let mut pb = match precond.as_mut() {
            Some(p) => {
                let mut bb = b.clone();
                p(&mut bb)
            }
            None => b.clone(),
        };
        pb.axpy(Complex64::new(-1.0, 0.0), &pax);
        relres = pb.norm() / beta;
        r0 = pb;
    }

    let verified_relres = if opts.verify_final {
        let mut ax = op(&mut x);
        ax.rsub(b); // ax := b - A x
        let pr = match precond.as_mut() {
            Some(p) => p(&mut ax),
            None => ax,
        };
        Some(pr.norm() / beta)
    } else {
        None
    };

    KrylovResult {
        x,
        iterations: total_iters,
        history,
        converged,
        final_relres: relres,
        verified_relres,
        stagnated: false,
    }
}

/// Right-preconditioned GCR with untruncated direction storage. Convergence
/// is on the true relative residual, and the preconditioner may vary between
/// applications.
pub fn gcr(op: ApplyFn, mut precond: Option<ApplyFn>, b: &DistField, opts: &SolveOpts) -> KrylovResult {
    let layout = b.layout.clone();
    let bnorm = b.norm();
    let mut x = DistField::zeros(&layout);
    if bnorm == 0.0 {
        return KrylovResult {
            x,
            iterations: 0,
            history: vec![0.0],
            converged: true,
            final_relres: 0.0,
            verified_relres: Some(0.0),
            stagnated: false,
        };
    }
    let mut r = b.clone();
    let mut relres = 1.0;
    let mut history = vec![1.0];
    let mut zs: Vec<DistField> = Vec::new();
    let mut cs: Vec<DistField> = Vec::new();
    let mut converged = false;
    let mut stagnated = false;
    let mut iters = 0usize;
    let mut recent: Vec<f64> = Vec::new();

    while iters < opts.maxit {
        if relres <= opts.tol {
            converged = true;
            break;
        }
        let mut z = match precond.as_mut() {
            Some(p) => p(&mut r),
            None => r.clone(),
        };
        let mut c = op(&mut z);
        for (ci, zi) in cs.iter().zip(zs.iter()) {
            let h = c.dot(ci);
            c.axpy(-h, ci);
            z.axpy(-h, zi);
        }
        let cn = c.norm();
        if cn <= 1e-300 {
            stagnated = true;
            break;
        }
        let inv = Complex64::new(1.0 / cn, 0.0);
        c.scale(inv);
        z.scale(inv);
        let alpha = r.dot(&c);
        x.axpy(alpha, &z);
        r.axpy(-alpha, &c);
        cs.push(c);
        zs.push(z);
        iters += 1;
        let new_relres = r.norm() / bnorm;
        // Stagnation guard: five consecutive steps without meaningful drop.
        recent.push((relres - new_relres) / relres.max(1e-300));
        if recent.len() > 5 {
            recent.remove(0);
        }
        relres = new_relres;
        history.push(relres);
        if recent.len() == 5 && recent.iter().all(|d| *d < 1e-12) {
            stagnated = true;
            break;
        }
    }
    if relres <= opts.tol {
        converged = true;
    }

    let verified_relres = if opts.verify_final {
        let mut ax = op(&mut x);
        ax.rsub(b);
        Some(ax.norm() / bnorm)
    } else {
        None
    };

    KrylovResult {
        x,
        iterations: iters,
        history,
        converged,
        final_relres: relres,
        verified_relres,
        stagnated,
    }
}

/// Flexible GMRES: right preconditioning with a per-iteration preconditioned
/// basis, tolerant of variable preconditioners. Provided for cross-checks;
/// not used by the experiment tables.
pub fn fgmres(
    op: ApplyFn,
    mut precond: Option<ApplyFn>,
    b: &DistField,
    opts: &SolveOpts,
) -> KrylovResult {
    let layout = b.layout.clone();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return KrylovResult {
            x: DistField::zeros(&layout),
            iterations: 0,
            history: vec![0.0],
            converged: true,
            final_relres: 0.0,
            verified_relres: Some(0.0),
            stagnated: false,
        };
    }
    let mut v0 = b.clone();
    v0.scale(Complex64::new(1.0 / bnorm, 0.0));
    let mut basis = vec![v0];
    let mut zbasis: Vec<DistField> = Vec::new();
    let mut hess: Vec<Vec<Complex64>> = Vec::new();
    let mut rots: Vec<Givens> = Vec::new();
    let mut g = vec![Complex64::new(bnorm, 0.0)];
    let mut history = vec![1.0];
    let mut relres = 1.0;
    let mut converged = false;
    let mut iters = 0usize;

    for j in 0..opts.maxit {
        let mut z = match precond.as_mut() {
            Some(p) => p(&mut basis[j]),
            None => basis[j].clone(),
        };
        let mut w = op(&mut z);
        zbasis.push(z);
        let norm_before = w.norm();
        let mut hcol = Vec::with_capacity(j + 2);
        for vi in basis.iter().take(j + 1) {
            let hij = w.dot(vi);
            w.axpy(-hij, vi);
            hcol.push(hij);
        }
        if w.norm() < 1e-8 * norm_before {
            for (i, vi) in basis.iter().take(j + 1).enumerate() {
                let corr = w.dot(vi);
                w.axpy(-corr, vi);
                hcol[i] += corr;
            }
        }
        let hnew = w.norm();
        hcol.push(Complex64::new(hnew, 0.0));
        for (i, rot) in rots.iter().enumerate() {
            let (a, bb) = rot.apply(hcol[i], hcol[i + 1]);
            hcol[i] = a;
            hcol[i + 1] = bb;
        }
        let (rot, r) = Givens::make(hcol[j], hcol[j + 1]);
        hcol[j] = r;
        hcol[j + 1] = Complex64::new(0.0, 0.0);
        let (g0, g1) = rot.apply(g[j], Complex64::new(0.0, 0.0));
        g[j] = g0;
        g.push(g1);
        rots.push(rot);
        hess.push(hcol);
        iters = j + 1;
        relres = g[j + 1].norm() / bnorm;
        history.push(relres);
        let breakdown = hnew <= 1e-14 * norm_before.max(1e-300);
        if relres <= opts.tol || breakdown {
            converged = true;
            break;
        }
        w.scale(Complex64::new(1.0 / hnew, 0.0));
        basis.push(w);
    }

    let mut x = DistField::zeros(&layout);
    if iters > 0 {
        let mut y = vec![Complex64::new(0.0, 0.0); iters];
        for i in (0..iters).rev() {
            let mut acc = g[i];
            for k in i + 1..iters {
                acc -= hess[k][i] * y[k];
            }
            y[i] = acc / hess[i][i];
        }
        for (yi, zi) in y.iter().zip(zbasis.iter()) {
            x.axpy(*yi, zi);
        }
    }

    let verified_relres = if opts.verify_final {
        let mut ax = op(&mut x);
        ax.rsub(b);
        Some(ax.norm() / bnorm)
    } else {
        None
    };

    KrylovResult {
        x,
        iterations: iters,
        history,
        converged,
        final_relres: relres,
        verified_relres,
        stagnated: false,
    }
}

/// Default coarse-solve iteration cap: `4 * sqrt(unknowns)`, overridable per
/// run configuration.
pub fn default_coarse_maxit(n_unknowns: usize) -> usize {
    (4.0 * (n_unknowns as f64).sqrt()).ceil() as usize
}

/// Solves a coarse-grid system to `tol` with (optionally preconditioned)
/// full GMRES from a zero initial guess. Returns the solution, the
/// iteration count, and whether the tolerance was reached (saturation is a
/// warning condition for the caller, not an error).
pub fn coarse_solver(
    op: ApplyFn,
    precond: Option<ApplyFn>,
    rhs: &DistField,
    tol: f64,
    maxit: usize,
) -> (DistField, usize, bool) {
    let res = gmres(op, precond, rhs, &SolveOpts::new(tol, maxit));
    (res.x, res.iterations, res.converged)
}

/// Full record of one outer solve.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub outer_iterations: usize,
    /// Coarse-solve iteration counts in application order.
    pub coarse_iterations: Vec<usize>,
    /// Relative residual per outer iteration (preconditioned for left-
    /// preconditioned GMRES, true for GCR/FGMRES), starting at 1.0.
    pub residual_history: Vec<f64>,
    pub wall_time_s: f64,
    pub final_relres_precond: f64,
    pub final_relres_true: f64,
    pub flop_estimate: u64,
    pub converged: bool,
    /// Coarse solves that hit their iteration cap.
    pub coarse_saturated: usize,
    pub fine_vcycles: usize,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn avg_coarse_iters(&self) -> f64 {
        if self.coarse_iterations.is_empty() {
            0.0
        } else {
            self.coarse_iterations.iter().sum::<usize>() as f64
                / self.coarse_iterations.len() as f64
        }
    }

    pub fn max_coarse_iters(&self) -> usize {
        self.coarse_iterations.iter().copied().max().unwrap_or(0)
    }
}
