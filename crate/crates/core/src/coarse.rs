//! Matrix-free coarse-grid Helmholtz operators for the deflation solve:
//! straightforward Galerkin coarsening, per-application Galerkin stencil
//! composition, re-discretization at orders 2/4/6, the fourth-order compact
//! scheme, the two Galerkin-derived re-discretization stencils with either
//! second-order or ghost-point boundary layers, and the eigenvalue-aligned
//! compact 9-point scheme. Also the stencil-composition engine, the 9-point
//! coefficient solver, and the FLOP-cost model.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::field::DistField;
use crate::grid::DistLayout;
use crate::media::WavenumberField;
use crate::operators::{BcKind, FivePointOp};
use crate::transfer::{prolong, restrict, ProlongKind, RestrictKind};

#[derive(Debug, Error)]
pub enum CoarseError {
    #[error("this coarse-operator variant needs the fine-level operator and transfer pair")]
    MissingFineContext,
    #[error("stencil footprints are incompatible: {0}")]
    IncompatibleFootprints(String),
    #[error("stencil composition does not reproduce the expected coarse stencil: {0}")]
    CompositionMismatch(String),
    #[error("the coefficient system is singular for this mode/mesh combination")]
    SingularSystem,
}

/// The selectable coarse-grid operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseOpVariant {
    /// Interpolate, apply the fine operator, restrict.
    StrGlk,
    /// Galerkin stencil composition re-executed on every application.
    StclOpGlk,
    /// Second-order re-discretization (same scheme as the fine grid).
    RedO2,
    /// Fourth-order central re-discretization.
    RedO4,
    /// Sixth-order central re-discretization.
    RedO6,
    /// Fourth-order compact 9-point re-discretization.
    RedCmpO4,
    /// Galerkin-derived 5x5 stencil, second-order rows on the two outermost
    /// layers.
    RedGlk1,
    /// Galerkin-derived 5x5 stencil with ghost-point elimination on the
    /// second layer, second-order rows on the first layer only.
    RedGlk2,
    /// Eigenvalue-aligned compact 9-point scheme.
    Red9ptO2,
}

impl CoarseOpVariant {
    /// Halo width the coarse-level fields must carry for this operator.
    pub fn halo_width(&self) -> usize {
        match self {
            CoarseOpVariant::StrGlk => 1,
            CoarseOpVariant::StclOpGlk => 2,
            CoarseOpVariant::RedO2 | CoarseOpVariant::RedCmpO4 | CoarseOpVariant::Red9ptO2 => 1,
            CoarseOpVariant::RedO4 | CoarseOpVariant::RedGlk1 | CoarseOpVariant::RedGlk2 => 2,
            CoarseOpVariant::RedO6 => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoarseOpVariant::StrGlk => "str-glk",
            CoarseOpVariant::StclOpGlk => "stcl-op-glk",
            CoarseOpVariant::RedO2 => "red-o2",
            CoarseOpVariant::RedO4 => "red-o4",
            CoarseOpVariant::RedO6 => "red-o6",
            CoarseOpVariant::RedCmpO4 => "red-cmp-o4",
            CoarseOpVariant::RedGlk1 => "red-glk1",
            CoarseOpVariant::RedGlk2 => "red-glk2",
            CoarseOpVariant::Red9ptO2 => "red-9pt-o2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "str-glk" => CoarseOpVariant::StrGlk,
            "stcl-op-glk" => CoarseOpVariant::StclOpGlk,
            "red-o2" => CoarseOpVariant::RedO2,
            "red-o4" => CoarseOpVariant::RedO4,
            "red-o6" => CoarseOpVariant::RedO6,
            "red-cmp-o4" => CoarseOpVariant::RedCmpO4,
            "red-glk1" => CoarseOpVariant::RedGlk1,
            "red-glk2" => CoarseOpVariant::RedGlk2,
            "red-9pt-o2" => CoarseOpVariant::Red9ptO2,
            _ => return None,
        })
    }
}

/// Quintic transfer weights as integers (over 64).
const W5: [[i64; 5]; 5] = [
    [1, 4, 6, 4, 1],
    [4, 16, 24, 16, 4],
    [6, 24, 36, 24, 6],
    [4, 16, 24, 16, 4],
    [1, 4, 6, 4, 1],
];

/// Expected Galerkin-derived Laplacian stencil, scale 1/(256 * (2h)^2).
const GLK_LAPLACE_REF: [[i64; 5]; 5] = [
    [-3, -44, -98, -44, -3],
    [-44, -112, 56, -112, -44],
    [-98, 56, 980, 56, -98],
    [-44, -112, 56, -112, -44],
    [-3, -44, -98, -44, -3],
];

/// Expected Galerkin-derived mass stencil, scale k^2 / 64^2.
const GLK_MASS_REF: [[i64; 5]; 5] = [
    [1, 28, 70, 28, 1],
    [28, 784, 1960, 784, 28],
    [70, 1960, 4900, 1960, 70],
    [28, 784, 1960, 784, 28],
    [1, 28, 70, 28, 1],
];

/// Coarse 5x5 stencil pair obtained by composing the quintic transfer pair
/// with a fine-grid operator: a Laplacian part (to be scaled by 1/(2h)^2)
/// and a mass part (each tap scaled by the wavenumber at that coarse point).
#[derive(Debug, Clone)]
pub struct ComposedStencil {
    pub laplace: [[f64; 5]; 5],
    pub mass: [[f64; 5]; 5],
}

/// Integer Galerkin triple composition for 5x5 transfer weights and a 3x3
/// operator stencil: `C[m] = sum_t sum_s r[t] a[s] p[t + s - 2m]`.
fn compose_galerkin_int(a: &[[i64; 3]; 3]) -> [[i64; 5]; 5] {
    let mut c = [[0i64; 5]; 5];
    for ti in -2i64..=2 {
        for tj in -2i64..=2 {
            let rt = W5[(ti + 2) as usize][(tj + 2) as usize];
            for si in -1i64..=1 {
                for sj in -1i64..=1 {
                    let asv = a[(si + 1) as usize][(sj + 1) as usize];
                    if asv == 0 {
                        continue;
                    }
                    let (di, dj) = (ti + si, tj + sj);
                    for mi in -2i64..=2 {
                        let pi = di - 2 * mi;
                        if pi.abs() > 2 {
                            continue;
                        }
                        for mj in -2i64..=2 {
                            let pj = dj - 2 * mj;
                            if pj.abs() > 2 {
                                continue;
                            }
                            let pw = W5[(pi + 2) as usize][(pj + 2) as usize];
                            c[(mi + 2) as usize][(mj + 2) as usize] += rt * asv * pw;
                        }
                    }
                }
            }
        }
    }
    c
}

/// Recomputes the Galerkin-derived coarse stencils by stencil composition in
/// integer arithmetic and checks them against the expected matrices exactly.
pub fn derive_red_glk_stencils() -> Result<ComposedStencil, CoarseError> {
    let laplace_fine = [[0, -1, 0], [-1, 4, -1], [0, -1, 0]];
    let mass_fine = [[0, 0, 0], [0, 1, 0], [0, 0, 0]];
    // Raw scales: transfers carry 1/64 each, the fine Laplacian 1/h^2 =
    // 4/(2h)^2, so raw/4096 * 4 = raw/1024 per (2h)^2; the reference is over
    // 256, hence raw must equal 4x the reference.
    let lap_raw = compose_galerkin_int(&laplace_fine);
    let mass_raw = compose_galerkin_int(&mass_fine);
    let mut laplace = [[0.0; 5]; 5];
    let mut mass = [[0.0; 5]; 5];
    let mut lap_sum = 0i64;
    for i in 0..5 {
        for j in 0..5 {
            if lap_raw[i][j] != 4 * GLK_LAPLACE_REF[i][j] {
                return Err(CoarseError::CompositionMismatch(format!(
                    "laplacian entry ({i},{j}): {} vs 4*{}",
                    lap_raw[i][j], GLK_LAPLACE_REF[i][j]
                )));
            }
            if mass_raw[i][j] != GLK_MASS_REF[i][j] {
                return Err(CoarseError::CompositionMismatch(format!(
                    "mass entry ({i},{j}): {} vs {}",
                    mass_raw[i][j], GLK_MASS_REF[i][j]
                )));
            }
            lap_sum += GLK_LAPLACE_REF[i][j];
            laplace[i][j] = GLK_LAPLACE_REF[i][j] as f64 / 256.0;
            mass[i][j] = GLK_MASS_REF[i][j] as f64 / 4096.0;
        }
    }
    if lap_sum != 0 {
        return Err(CoarseError::CompositionMismatch(format!(
            "laplacian entries sum to {lap_sum}, expected 0"
        )));
    }
    Ok(ComposedStencil { laplace, mass })
}

/// 1D stencil of the product `B A` where `A` acts on the fine grid (taps
/// `a`) and `B` is a fine-to-coarse operator with taps `b` around `2c`.
/// Footprints must be odd; the result is a coarse-row stencil on fine
/// offsets around `2c`.
pub fn stencil_compose(a: &[Complex64], b: &[Complex64]) -> Result<Vec<Complex64>, CoarseError> {
    if a.len() % 2 == 0 || b.len() % 2 == 0 {
        return Err(CoarseError::IncompatibleFootprints(format!(
            "footprints must be odd, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let ra = (a.len() / 2) as isize;
    let rb = (b.len() / 2) as isize;
    let rc = ra + rb;
    let mut c = vec![Complex64::new(0.0, 0.0); (2 * rc + 1) as usize];
    for db in -rb..=rb {
        for da in -ra..=ra {
            c[(db + da + rc) as usize] +=
                b[(db + rb) as usize] * a[(da + ra) as usize];
        }
    }
    Ok(c)
}

/// Eigenvalue-aligned compact 9-point coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NinePointCoeffs {
    pub a0: f64,
    pub a_side: f64,
    pub a_corner: f64,
    pub b0: f64,
    pub b_side: f64,
    pub b_corner: f64,
}

/// Mode `(i, j)` minimizing `|(i^2 + j^2) pi^2 - k^2|` (exhaustive over the
/// range that can contain the minimum), plus the attained value.
pub fn find_min_mode(k: f64) -> (usize, usize, f64) {
    let bound = (k.ceil() as usize + 2).max(3);
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let mut best = (1usize, 1usize, f64::INFINITY);
    for i in 1..=bound {
        for j in i..=bound {
            let v = ((i * i + j * j) as f64) * pi2 - k * k;
            if v.abs() < best.2.abs() {
                best = (i, j, v);
            }
        }
    }
    best
}

/// Solves the three-coefficient system for the compact 9-point scheme: the
/// low-order consistency constraints `a0 + 4 a_s + 4 a_c = 0`,
/// `a_s + 2 a_c = -1`, plus alignment of the analytic coarse eigenvalue at
/// mode `(p, q)` on the reference mesh `h_ref` to `target` (default: the
/// continuum minimum rounded to one decimal). `b` is fixed to (1, 0, 0).
pub fn optimize_9pt_coefficients(
    k: f64,
    h_ref: f64,
    p: usize,
    q: usize,
    target: Option<f64>,
) -> Result<NinePointCoeffs, CoarseError> {
    let pi = std::f64::consts::PI;
    let hh = 2.0 * h_ref; // coarse mesh width
    let cp = (p as f64 * pi * hh).cos();
    let cq = (q as f64 * pi * hh).cos();
    let t = target.unwrap_or_else(|| {
        let cont = ((p * p + q * q) as f64) * pi * pi - k * k;
        (cont * 10.0).round() / 10.0
    });
    let m = nalgebra::Matrix3::new(
        1.0,
        4.0,
        4.0,
        0.0,
        1.0,
        2.0,
        1.0,
        2.0 * (cp + cq),
        4.0 * cp * cq,
    );
    let rhs = nalgebra::Vector3::new(0.0, -1.0, hh * hh * (t + k * k));
    let det = m.determinant();
    if det.abs() < 1e-300 {
        return Err(CoarseError::SingularSystem);
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or(CoarseError::SingularSystem)?;
    // Quantize the corner coefficient to 3 decimals and regenerate the side
    // and center coefficients from the consistency constraints, so the
    // published stencil is reproduced exactly and the constraints still hold
    // to machine precision.
    let a_corner = (sol[2] * 1000.0).round() / 1000.0;
    let a_side = -1.0 - 2.0 * a_corner;
    let a0 = -4.0 * (a_side + a_corner);
    Ok(NinePointCoeffs {
        a0,
        a_side,
        a_corner,
        b0: 1.0,
        b_side: 0.0,
        b_corner: 0.0,
    })
}

/// Analytic eigenvalue of the compact 9-point operator with homogeneous
/// Dirichlet conditions at coarse mesh width `hh`, mode `(p, q)`.
pub fn ninept_eigenvalue(c: &NinePointCoeffs, k: f64, hh: f64, p: usize, q: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let cp = (p as f64 * pi * hh).cos();
    let cq = (q as f64 * pi * hh).cos();
    let k2h2 = k * k * hh * hh;
    ((c.a0 - c.b0 * k2h2)
        + 2.0 * (c.a_side - c.b_side * k2h2) * (cp + cq)
        + 4.0 * (c.a_corner - c.b_corner * k2h2) * cp * cq)
        / (hh * hh)
}

/// Per-application FLOP counts of `y = A_2h x` for each variant, with `m`
/// coarse and `n` fine grid points (2 * nnz-per-row FLOPs per point; the
/// straightforward Galerkin route adds the transfer and fine-operator
/// passes, the per-application stencil composition adds 1740 FLOPs per
/// coarse point).
pub fn flops_estimate(variant: CoarseOpVariant, m: u64, n: u64) -> u64 {
    match variant {
        CoarseOpVariant::StrGlk => 50 * m + 10 * n + 18 * n,
        CoarseOpVariant::StclOpGlk => (50 + 1740) * m,
        CoarseOpVariant::RedO2 => 10 * m,
        CoarseOpVariant::RedO4 | CoarseOpVariant::RedCmpO4 => 18 * m,
        CoarseOpVariant::RedO6 => 26 * m,
        CoarseOpVariant::RedGlk1 | CoarseOpVariant::RedGlk2 => 50 * m,
        CoarseOpVariant::Red9ptO2 => 18 * m,
    }
}

/// Fine-level context for the Galerkin variants.
pub struct FineContext {
    pub fine_op: FivePointOp,
    pub high_order: bool,
}

impl FineContext {
    fn prolong_kind(&self) -> ProlongKind {
        if self.high_order {
            ProlongKind::HighOrder
        } else {
            ProlongKind::Bilinear
        }
    }

    fn restrict_kind(&self) -> RestrictKind {
        if self.high_order {
            RestrictKind::HighOrder
        } else if self.fine_op.bc == BcKind::Dirichlet {
            RestrictKind::FullWeightingDirichletCopy
        } else {
            RestrictKind::FullWeighting
        }
    }
}

/// One coarse-grid operator instance bound to a coarse layout and
/// wavenumber field.
pub struct CoarseOperator {
    pub variant: CoarseOpVariant,
    pub layout: Arc<DistLayout>,
    pub k: Arc<WavenumberField>,
    pub bc: BcKind,
    fine: Option<FineContext>,
    glk: Option<ComposedStencil>,
    ninept: Option<NinePointCoeffs>,
    red_o2: Option<FivePointOp>,
    pub applications: AtomicU64,
}

impl CoarseOperator {
    pub fn build(
        variant: CoarseOpVariant,
        k: Arc<WavenumberField>,
        bc: BcKind,
        fine: Option<FineContext>,
    ) -> Result<Self, CoarseError> {
        let layout = k.layout().clone();
        if matches!(variant, CoarseOpVariant::StrGlk | CoarseOpVariant::StclOpGlk)
            && fine.is_none()
        {
            return Err(CoarseError::MissingFineContext);
        }
        let glk = match variant {
            CoarseOpVariant::RedGlk1 | CoarseOpVariant::RedGlk2 => {
                Some(derive_red_glk_stencils()?)
            }
            _ => None,
        };
        let ninept = match variant {
            // Aligned at the reference wavenumber 80 on the reference mesh;
            // the coefficients are held fixed across runs.
            CoarseOpVariant::Red9ptO2 => Some(optimize_9pt_coefficients(
                80.0, 1e-4, 18, 18, None,
            )?),
            _ => None,
        };
        let red_o2 = match variant {
            CoarseOpVariant::RedO2 => Some(FivePointOp::helmholtz(k.clone(), bc)),
            _ => None,
        };
        Ok(CoarseOperator {
            variant,
            layout,
            k,
            bc,
            fine,
            glk,
            ninept,
            red_o2,
            applications: AtomicU64::new(0),
        })
    }

    pub fn with_ninept_coeffs(mut self, c: NinePointCoeffs) -> Self {
        self.ninept = Some(c);
        self
    }

    pub fn apply_new(&self, x: &DistField) -> DistField {
        let mut out = DistField::zeros(&self.layout);
        self.apply(x, &mut out);
        out
    }

    pub fn apply(&self, x: &DistField, out: &mut DistField) {
        x.assert_fresh();
        self.applications.fetch_add(1, Ordering::Relaxed);
        match self.variant {
            CoarseOpVariant::StrGlk => self.apply_str_glk(x, out),
            CoarseOpVariant::RedO2 => self.red_o2.as_ref().unwrap().apply(x, out),
            _ => self.apply_pointwise(x, out),
        }
    }

    fn apply_str_glk(&self, x: &DistField, out: &mut DistField) {
        let ctx = self.fine.as_ref().unwrap();
        let fine_layout = ctx.fine_op.layout.clone();
        let mut up = prolong(ctx.prolong_kind(), x, &fine_layout);
        up.exchange_halos();
        let mut au = ctx.fine_op.apply_new(&up);
        au.exchange_halos();
        let r = restrict(ctx.restrict_kind(), &au, &self.layout);
        out.copy_from(&r);
    }

    fn apply_pointwise(&self, x: &DistField, out: &mut DistField) {
        let layout = self.layout.clone();
        let this = self;
        out.for_each_block_mut(|w, ob| {
            let v = &layout.views[w];
            let xb = &x.blocks[w];
            let kb = &this.k.field.blocks[w];
            let g = layout.grid;
            for gi in v.i_range.clone() {
                for gj in v.j_range.clone() {
                    let (li, lj) = v.local_of_global(gi, gj);
                    let u_at = |di: isize, dj: isize| -> Complex64 {
                        xb[[
                            (li as isize + di) as usize,
                            (lj as isize + dj) as usize,
                        ]]
                    };
                    // Wavenumber at a coarse offset; out-of-domain (ghost)
                    // positions carry zero.
                    let k_at = |di: isize, dj: isize| -> f64 {
                        let ti = gi as isize + di;
                        let tj = gj as isize + dj;
                        if ti < 0 || tj < 0 || ti >= g.nx as isize || tj >= g.ny as isize {
                            0.0
                        } else {
                            kb[[
                                (li as isize + di) as usize,
                                (lj as isize + dj) as usize,
                            ]]
                        }
                    };
                    ob[[li, lj]] = this.point_value(w, gi, gj, &u_at, &k_at);
                }
            }
        });
    }

    /// Distance to the nearest physical boundary line.
    #[inline]
    fn boundary_distance(&self, gi: usize, gj: usize) -> usize {
        let g = self.layout.grid;
        gi.min(gj).min(g.nx - 1 - gi).min(g.ny - 1 - gj)
    }

    fn point_value(
        &self,
        w: usize,
        gi: usize,
        gj: usize,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let d = self.boundary_distance(gi, gj);
        match self.variant {
            CoarseOpVariant::RedO4 => {
                if d == 0 {
                    self.o2_row(gi, gj, u_at, k_at)
                } else if d == 1 {
                    self.o2_interior_row(u_at, k_at)
                } else {
                    self.cross_row(u_at, k_at, &[60.0, -16.0, 1.0], 12.0)
                }
            }
            CoarseOpVariant::RedO6 => {
                if d == 0 {
                    self.o2_row(gi, gj, u_at, k_at)
                } else if d < 3 {
                    self.o2_interior_row(u_at, k_at)
                } else {
                    self.cross_row(u_at, k_at, &[980.0, -270.0, 27.0, -2.0], 180.0)
                }
            }
            CoarseOpVariant::RedCmpO4 => self.cmp_o4_row(gi, gj, d, u_at, k_at),
            CoarseOpVariant::Red9ptO2 => {
                if d == 0 {
                    self.o2_row(gi, gj, u_at, k_at)
                } else {
                    let c = self.ninept.as_ref().unwrap();
                    let hh = self.layout.grid.h;
                    let inv_h2 = 1.0 / (hh * hh);
                    let k0 = k_at(0, 0);
                    let mut acc = (Complex64::new(c.a0 * inv_h2, 0.0)
                        - Complex64::new(k0 * k0, 0.0))
                        * u_at(0, 0);
                    for (di, dj) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                        acc += c.a_side * inv_h2 * u_at(di, dj);
                    }
                    for (di, dj) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                        acc += c.a_corner * inv_h2 * u_at(di, dj);
                    }
                    acc
                }
            }
            CoarseOpVariant::RedGlk1 => {
                if d == 0 {
                    self.o2_row(gi, gj, u_at, k_at)
                } else if d == 1 {
                    self.o2_interior_row(u_at, k_at)
                } else {
                    self.glk_row(u_at, k_at)
                }
            }
            CoarseOpVariant::RedGlk2 => {
                if d == 0 {
                    self.o2_row(gi, gj, u_at, k_at)
                } else if d == 1 {
                    self.glk_row_with_ghosts(gi, gj, u_at, k_at)
                } else {
                    self.glk_row(u_at, k_at)
                }
            }
            CoarseOpVariant::StclOpGlk => self.composed_row(w, gi, gj, u_at),
            _ => unreachable!("handled before the pointwise path"),
        }
    }

    /// Second-order row including boundary treatment (identity rows for
    /// Dirichlet, ghost-eliminated stencils for Sommerfeld).
    fn o2_row(
        &self,
        gi: usize,
        gj: usize,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let g = self.layout.grid;
        let on_l = gi == 0;
        let on_r = gi == g.nx - 1;
        let on_b = gj == 0;
        let on_t = gj == g.ny - 1;
        if self.bc == BcKind::Dirichlet && (on_l || on_r || on_b || on_t) {
            return u_at(0, 0);
        }
        let inv_h2 = 1.0 / (g.h * g.h);
        let k0 = k_at(0, 0);
        let mut c = Complex64::new(4.0 * inv_h2 - k0 * k0, 0.0);
        let som = Complex64::new(0.0, -2.0 * k0 / g.h);
        let mut acc = Complex64::new(0.0, 0.0);
        if on_l {
            c += som;
            acc += -2.0 * inv_h2 * u_at(1, 0);
        } else if on_r {
            c += som;
            acc += -2.0 * inv_h2 * u_at(-1, 0);
        } else {
            acc += -inv_h2 * (u_at(1, 0) + u_at(-1, 0));
        }
        if on_b {
            c += som;
            acc += -2.0 * inv_h2 * u_at(0, 1);
        } else if on_t {
            c += som;
            acc += -2.0 * inv_h2 * u_at(0, -1);
        } else {
            acc += -inv_h2 * (u_at(0, 1) + u_at(0, -1));
        }
        c * u_at(0, 0) + acc
    }

    #[inline]
    fn o2_interior_row(
        &self,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let g = self.layout.grid;
        let inv_h2 = 1.0 / (g.h * g.h);
        let k0 = k_at(0, 0);
        Complex64::new(4.0 * inv_h2 - k0 * k0, 0.0) * u_at(0, 0)
            - inv_h2 * (u_at(1, 0) + u_at(-1, 0) + u_at(0, 1) + u_at(0, -1))
    }

    /// Central cross stencil: `arms[0]` at the center, `arms[d]` at距 d along
    /// each axis, all over `denom * hh^2`, minus k^2 at the center.
    fn cross_row(
        &self,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
        arms: &[f64],
        denom: f64,
    ) -> Complex64 {
        let hh = self.layout.grid.h;
        let scale = 1.0 / (denom * hh * hh);
        let k0 = k_at(0, 0);
        let mut acc = (Complex64::new(arms[0] * scale - k0 * k0, 0.0)) * u_at(0, 0);
        for (dist, &a) in arms.iter().enumerate().skip(1) {
            let dd = dist as isize;
            acc += a * scale * (u_at(dd, 0) + u_at(-dd, 0) + u_at(0, dd) + u_at(0, -dd));
        }
        acc
    }

    /// Full Galerkin-derived 5x5 row (interior form; every tap in-domain).
    fn glk_row(
        &self,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let st = self.glk.as_ref().unwrap();
        let hh = self.layout.grid.h;
        let inv_h2 = 1.0 / (hh * hh);
        let mut acc = Complex64::new(0.0, 0.0);
        for di in -2isize..=2 {
            for dj in -2isize..=2 {
                let lap = st.laplace[(di + 2) as usize][(dj + 2) as usize] * inv_h2;
                let mass = st.mass[(di + 2) as usize][(dj + 2) as usize];
                let kt = k_at(di, dj);
                acc += Complex64::new(lap - mass * kt * kt, 0.0) * u_at(di, dj);
            }
        }
        acc
    }

    /// Galerkin-derived row on the second boundary layer: out-of-domain taps
    /// are eliminated through ghost relations (per axis, x before y). The
    /// ghost wavenumber is zero, so only the Laplacian part routes through
    /// ghosts.
    fn glk_row_with_ghosts(
        &self,
        gi: usize,
        gj: usize,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let st = self.glk.as_ref().unwrap();
        let g = self.layout.grid;
        let hh = g.h;
        let inv_h2 = 1.0 / (hh * hh);
        let mut acc = Complex64::new(0.0, 0.0);
        for di in -2isize..=2 {
            for dj in -2isize..=2 {
                let lap = st.laplace[(di + 2) as usize][(dj + 2) as usize] * inv_h2;
                let mass = st.mass[(di + 2) as usize][(dj + 2) as usize];
                let ti = gi as isize + di;
                let tj = gj as isize + dj;
                let inside = ti >= 0 && tj >= 0 && ti < g.nx as isize && tj < g.ny as isize;
                if inside {
                    let kt = k_at(di, dj);
                    acc += Complex64::new(lap - mass * kt * kt, 0.0) * u_at(di, dj);
                } else {
                    // Ghost tap: mass part vanishes (zero ghost wavenumber).
                    let coeff = Complex64::new(lap, 0.0);
                    for (edi, edj, w) in self.expand_ghost(gi, gj, di, dj, k_at) {
                        acc += coeff * w * u_at(edi, edj);
                    }
                }
            }
        }
        acc
    }

    /// Expands a ghost position (offset from the current point) into
    /// in-domain taps, eliminating x first, then y. Sommerfeld:
    /// `u_ghost = u_inner + 2i*hh*k_b*u_boundary`; Dirichlet (linear
    /// extrapolation through the boundary value): `u_ghost = 2 u_b - u_in`.
    fn expand_ghost(
        &self,
        gi: usize,
        gj: usize,
        di: isize,
        dj: isize,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Vec<(isize, isize, Complex64)> {
        let g = self.layout.grid;
        let hh = g.h;
        let ti = gi as isize + di;
        let tj = gj as isize + dj;
        let one = Complex64::new(1.0, 0.0);
        if ti >= 0 && tj >= 0 && ti < g.nx as isize && tj < g.ny as isize {
            return vec![(di, dj, one)];
        }
        // Eliminate along x first.
        let (bnd_off, inner_off): ((isize, isize), (isize, isize)) = if ti < 0 {
            ((di + 1, dj), (di + 2, dj))
        } else if ti >= g.nx as isize {
            ((di - 1, dj), (di - 2, dj))
        } else if tj < 0 {
            ((di, dj + 1), (di, dj + 2))
        } else {
            ((di, dj - 1), (di, dj - 2))
        };
        let kb = k_at(bnd_off.0, bnd_off.1);
        let (cb, cin) = match self.bc {
            BcKind::Sommerfeld1 => (Complex64::new(0.0, 2.0 * hh * kb), one),
            BcKind::Dirichlet => (Complex64::new(2.0, 0.0), -one),
        };
        let mut out = Vec::with_capacity(4);
        for (off, w) in [(bnd_off, cb), (inner_off, cin)] {
            for (ei, ej, ew) in self.expand_ghost(gi, gj, off.0, off.1, k_at) {
                out.push((ei, ej, w * ew));
            }
        }
        out
    }

    /// Fourth-order compact 9-point row.
    fn cmp_o4_row(
        &self,
        gi: usize,
        gj: usize,
        d: usize,
        u_at: &dyn Fn(isize, isize) -> Complex64,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Complex64 {
        let g = self.layout.grid;
        if self.bc == BcKind::Dirichlet && d == 0 {
            return u_at(0, 0);
        }
        let hh = g.h;
        let inv_h2 = 1.0 / (hh * hh);
        const A0: f64 = 10.0 / 3.0;
        const AS: f64 = -2.0 / 3.0;
        const AC: f64 = -1.0 / 6.0;
        const B0: f64 = 25.0 / 36.0;
        const BS: f64 = 5.0 / 72.0;
        const BC: f64 = 1.0 / 144.0;
        let aw = |di: isize, dj: isize| -> f64 {
            match di.abs() + dj.abs() {
                0 => A0,
                1 => AS,
                _ => AC,
            }
        };
        let bw = |di: isize, dj: isize| -> f64 {
            match di.abs() + dj.abs() {
                0 => B0,
                1 => BS,
                _ => BC,
            }
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                let ti = gi as isize + di;
                let tj = gj as isize + dj;
                let inside = ti >= 0 && tj >= 0 && ti < g.nx as isize && tj < g.ny as isize;
                // Ghost taps keep the wavenumber of the adjacent boundary
                // point (clamped), then eliminate through the fourth-order
                // ghost relation.
                let kcl = {
                    let ci = ti.clamp(0, g.nx as isize - 1) - gi as isize;
                    let cj = tj.clamp(0, g.ny as isize - 1) - gj as isize;
                    k_at(ci, cj)
                };
                let coeff = Complex64::new(aw(di, dj) * inv_h2 - bw(di, dj) * kcl * kcl, 0.0);
                if inside {
                    acc += coeff * u_at(di, dj);
                } else {
                    for (ei, ej, w) in self.expand_ghost_o4(gi, gj, di, dj, k_at) {
                        acc += coeff * w * u_at(ei, ej);
                    }
                }
            }
        }
        acc
    }

    /// Fourth-order Sommerfeld ghost rule:
    /// `u_ghost = 2i*k*hh*(1 - k^2 hh^2/6) u_b + u_in`; the diagonal corner
    /// ghost averages the two edge ghosts.
    fn expand_ghost_o4(
        &self,
        gi: usize,
        gj: usize,
        di: isize,
        dj: isize,
        k_at: &dyn Fn(isize, isize) -> f64,
    ) -> Vec<(isize, isize, Complex64)> {
        let g = self.layout.grid;
        let hh = g.h;
        let one = Complex64::new(1.0, 0.0);
        let ti = gi as isize + di;
        let tj = gj as isize + dj;
        let out_x = ti < 0 || ti >= g.nx as isize;
        let out_y = tj < 0 || tj >= g.ny as isize;
        if !out_x && !out_y {
            return vec![(di, dj, one)];
        }
        if out_x && out_y {
            // Corner ghost: average of the two edge ghosts.
            let ex = (di - di.signum(), dj); // step back in x
            let ey = (di, dj - dj.signum());
            let mut out = Vec::new();
            for (off, w) in [(ey, 0.5), (ex, 0.5)] {
                for (ei, ej, ew) in self.expand_ghost_o4(gi, gj, off.0, off.1, k_at) {
                    out.push((ei, ej, w * ew));
                }
            }
            return out;
        }
        let (bnd, inner) = if out_x {
            ((di - di.signum(), dj), (di - 2 * di.signum(), dj))
        } else {
            ((di, dj - dj.signum()), (di, dj - 2 * dj.signum()))
        };
        let kb = k_at(bnd.0, bnd.1);
        let sigma = Complex64::new(0.0, 2.0 * kb * hh * (1.0 - kb * kb * hh * hh / 6.0));
        let mut out = Vec::with_capacity(2);
        for (off, w) in [(bnd, sigma), (inner, one)] {
            for (ei, ej, ew) in self.expand_ghost_o4(gi, gj, off.0, off.1, k_at) {
                out.push((ei, ej, w * ew));
            }
        }
        out
    }

    /// Galerkin stencil composition evaluated at one coarse point and
    /// applied immediately (re-executed per application by design; this is
    /// the expensive route the cost model charges 1740 extra FLOPs per
    /// point).
    fn composed_row(
        &self,
        w: usize,
        gi: usize,
        gj: usize,
        u_at: &dyn Fn(isize, isize) -> Complex64,
    ) -> Complex64 {
        let ctx = self.fine.as_ref().unwrap();
        let fine_op = &ctx.fine_op;
        let fg = fine_op.layout.grid;
        let cg = self.layout.grid;
        let high = ctx.high_order;
        let r: isize = if high { 2 } else { 1 };
        let (fi0, fj0) = (2 * gi as isize, 2 * gj as isize);

        // Coincident-copy restriction rows on Dirichlet coarse boundaries
        // (matching the three-pass Galerkin route): the composed row reduces
        // to the fine identity row folded through the interpolation.
        let copy_row = ctx.restrict_kind() == RestrictKind::FullWeightingDirichletCopy
            && (gi == 0 || gj == 0 || gi == cg.nx - 1 || gj == cg.ny - 1);

        // Transfer weights over their shared denominators.
        let rw = |di: isize, dj: isize| -> f64 {
            if copy_row {
                if di == 0 && dj == 0 {
                    1.0
                } else {
                    0.0
                }
            } else if high {
                W5[(di + 2) as usize][(dj + 2) as usize] as f64 / 64.0
            } else {
                crate::oracle::stencils::FW_3X3[(di + 1) as usize][(dj + 1) as usize] / 16.0
            }
        };
        let pw = |di: isize, dj: isize| -> f64 {
            if high {
                W5[(di + 2) as usize][(dj + 2) as usize] as f64 / 64.0
            } else {
                crate::oracle::stencils::FW_3X3[(di + 1) as usize][(dj + 1) as usize] / 4.0
            }
        };

        // Fine wavenumber around the coincident fine point, read through the
        // fine-level halo of the same worker (coarse ownership nests inside
        // fine ownership).
        let fv = &fine_op.layout.views[w];
        let (fli, flj) = fv.local_of_global(fi0 as usize, fj0 as usize);
        let fine_k = |fdi: isize, fdj: isize| -> f64 {
            fine_op.k.field.blocks[w][[
                (fli as isize + fdi) as usize,
                (flj as isize + fdj) as usize,
            ]]
        };

        let mut row = [[Complex64::new(0.0, 0.0); 5]; 5];
        let inv_h2 = 1.0 / (fg.h * fg.h);
        for ti in -r..=r {
            for tj in -r..=r {
                let f1i = fi0 + ti;
                let f1j = fj0 + tj;
                if f1i < 0 || f1j < 0 || f1i >= fg.nx as isize || f1j >= fg.ny as isize {
                    continue;
                }
                let rt = rw(ti, tj);
                // Fine-operator row at f1 in offset coordinates.
                let on_l = f1i == 0;
                let on_r = f1i == fg.nx as isize - 1;
                let on_b = f1j == 0;
                let on_t = f1j == fg.ny as isize - 1;
                let kf = fine_k(ti, tj);
                let mut arow: Vec<(isize, isize, Complex64)> = Vec::with_capacity(5);
                if fine_op.bc == BcKind::Dirichlet && (on_l || on_r || on_b || on_t) {
                    arow.push((0, 0, Complex64::new(1.0, 0.0)));
                } else {
                    let mut c = Complex64::new(4.0 * inv_h2 - kf * kf, 0.0);
                    let som = Complex64::new(0.0, -2.0 * kf / fg.h);
                    if on_l {
                        c += som;
                        arow.push((1, 0, Complex64::new(-2.0 * inv_h2, 0.0)));
                    } else if on_r {
                        c += som;
                        arow.push((-1, 0, Complex64::new(-2.0 * inv_h2, 0.0)));
                    } else {
                        arow.push((1, 0, Complex64::new(-inv_h2, 0.0)));
                        arow.push((-1, 0, Complex64::new(-inv_h2, 0.0)));
                    }
                    if on_b {
                        c += som;
                        arow.push((0, 1, Complex64::new(-2.0 * inv_h2, 0.0)));
                    } else if on_t {
                        c += som;
                        arow.push((0, -1, Complex64::new(-2.0 * inv_h2, 0.0)));
                    } else {
                        arow.push((0, 1, Complex64::new(-inv_h2, 0.0)));
                        arow.push((0, -1, Complex64::new(-inv_h2, 0.0)));
                    }
                    arow.push((0, 0, c));
                }
                for (si, sj, av) in arow {
                    let (d_i, d_j) = (ti + si, tj + sj);
                    for mi in -2isize..=2 {
                        let pi = d_i - 2 * mi;
                        if pi.abs() > r {
                            continue;
                        }
                        let ci = gi as isize + mi;
                        if ci < 0 || ci >= cg.nx as isize {
                            continue;
                        }
                        for mj in -2isize..=2 {
                            let pj = d_j - 2 * mj;
                            if pj.abs() > r {
                                continue;
                            }
                            let cj = gj as isize + mj;
                            if cj < 0 || cj >= cg.ny as isize {
                                continue;
                            }
                            row[(mi + 2) as usize][(mj + 2) as usize] +=
                                rt * av * pw(pi, pj);
                        }
                    }
                }
            }
        }

        let mut acc = Complex64::new(0.0, 0.0);
        for mi in -2isize..=2 {
            for mj in -2isize..=2 {
                let c = row[(mi + 2) as usize][(mj + 2) as usize];
                if c.norm_sqr() != 0.0 {
                    acc += c * u_at(mi, mj);
                }
            }
        }
        acc
    }
}
