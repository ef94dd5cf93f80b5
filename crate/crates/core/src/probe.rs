//! Corner pairings and recovery sweeps.
//!
//! A corner probe pairs prescribed or field-derived jump data on the two
//! edges of a fault corner against an exponentially decaying probe field,
//! then drives the decay parameter to extract corner values. The pairing
//! localizes at the corner: edge integrals beyond the cut radius and the
//! arc term are exponentially small, algebraic remainders carry Hölder
//! rates, and the surviving main terms resolve the jump difference and the
//! traction transport relation.
//!
//! All pairings are bilinear (no conjugation); complex data is handled by
//! probing its real and imaginary parts separately.

use crate::cgo::{ElasticCgo, LameCgo};
use crate::error::{Error, Result};
use crate::geometry::LameParameters;
use crate::la::{c, cr, CMat2, CVec2, Vec2, C64, I};
use crate::quad::{adaptive_gk, arc_quad, sector_quad, QUAD_ABS_TOL, QUAD_REL_TOL};
use crate::sweep::{self, Extrapolated};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// A displacement field smooth enough to evaluate values and gradients
/// pointwise.
pub trait Field2: Send + Sync {
    fn value(&self, x: Vec2) -> CVec2;
    fn gradient(&self, x: Vec2) -> CMat2;
}

/// Traction `lambda (div u) nu + 2 mu sym(grad u) nu` read off a gradient.
pub fn traction_from_gradient(g: CMat2, nu: Vec2, lame: LameParameters) -> CVec2 {
    let div = g.trace();
    let t = g.sym().mul_real_vec(nu);
    CVec2::new(
        cr(lame.lambda) * div * cr(nu.x) + cr(2.0 * lame.mu) * t.x,
        cr(lame.lambda) * div * cr(nu.y) + cr(2.0 * lame.mu) * t.y,
    )
}

/// Traction of a field at a point.
pub fn field_traction(f: &dyn Field2, x: Vec2, nu: Vec2, lame: LameParameters) -> CVec2 {
    traction_from_gradient(f.gradient(x), nu, lame)
}

impl Field2 for ElasticCgo {
    fn value(&self, x: Vec2) -> CVec2 {
        ElasticCgo::value(self, x)
    }
    fn gradient(&self, x: Vec2) -> CMat2 {
        ElasticCgo::gradient(self, x)
    }
}

impl Field2 for LameCgo {
    fn value(&self, x: Vec2) -> CVec2 {
        LameCgo::value(self, x)
    }
    fn gradient(&self, x: Vec2) -> CMat2 {
        LameCgo::gradient(self, x)
    }
}

/// Affine field `u(x) = offset + grad x`, a static solution for any
/// parameters.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub grad: CMat2,
    pub offset: CVec2,
}

impl Field2 for LinearField {
    fn value(&self, x: Vec2) -> CVec2 {
        self.grad.mul_real_vec(x) + self.offset
    }
    fn gradient(&self, _x: Vec2) -> CMat2 {
        self.grad
    }
}

/// Plane wave `q e^{i k . x}`; shear when `q` is perpendicular to `k` with
/// `|k| = omega / mu^(1/2)`, compressional when parallel with
/// `|k| = omega / (lambda + 2 mu)^(1/2)`.
#[derive(Debug, Clone)]
pub struct PlaneWave {
    pub q: CVec2,
    pub k: Vec2,
}

impl PlaneWave {
    pub fn shear(lame: LameParameters, omega: f64, dir: Vec2, amp: C64) -> Self {
        let d = dir.normalized();
        let k = d * (omega / lame.mu.sqrt());
        let q = d.perp_ccw();
        PlaneWave { q: CVec2::new(cr(q.x) * amp, cr(q.y) * amp), k }
    }

    pub fn compressional(lame: LameParameters, omega: f64, dir: Vec2, amp: C64) -> Self {
        let d = dir.normalized();
        let k = d * (omega / (lame.lambda + 2.0 * lame.mu).sqrt());
        PlaneWave { q: CVec2::new(cr(d.x) * amp, cr(d.y) * amp), k }
    }
}

impl Field2 for PlaneWave {
    fn value(&self, x: Vec2) -> CVec2 {
        let e = (I * cr(self.k.dot(x))).exp();
        self.q.scale(e)
    }
    fn gradient(&self, x: Vec2) -> CMat2 {
        let e = (I * cr(self.k.dot(x))).exp();
        let w = CVec2::new(I * cr(self.k.x), I * cr(self.k.y));
        CMat2::outer(self.q, w).scale(e)
    }
}

/// Pointwise sum of fields.
pub struct Superposition(pub Vec<Arc<dyn Field2>>);

impl Field2 for Superposition {
    fn value(&self, x: Vec2) -> CVec2 {
        let mut v = CVec2::zero();
        for f in &self.0 {
            v = v + f.value(x);
        }
        v
    }
    fn gradient(&self, x: Vec2) -> CMat2 {
        let mut g = CMat2::zero();
        for f in &self.0 {
            g = g + f.gradient(x);
        }
        g
    }
}

/// Piece of an integration contour with its unit normal convention.
pub enum ContourPiece {
    Segment { a: Vec2, b: Vec2, nu: Vec2 },
    /// Circular arc; `outward` picks the radial direction of the normal.
    Arc { center: Vec2, radius: f64, t0: f64, t1: f64, outward: bool },
}

/// Closed counterclockwise polygon as contour pieces with outward normals.
pub fn polygon_contour(pts: &[Vec2]) -> Vec<ContourPiece> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            ContourPiece::Segment { a, b, nu: (b - a).normalized().perp_cw() }
        })
        .collect()
}

/// Reciprocity pairing `int (T_nu a . b - a . T_nu b) ds` over a contour.
/// Vanishes on closed contours when both fields solve the same system
/// inside.
pub fn betti_pairing(
    a: &dyn Field2,
    b: &dyn Field2,
    contour: &[ContourPiece],
    lame: LameParameters,
) -> Result<C64> {
    let mut total = cr(0.0);
    for piece in contour {
        let r = match piece {
            ContourPiece::Segment { a: p, b: q, nu } => {
                let len = p.dist(*q);
                let dir = (*q - *p) * (1.0 / len);
                adaptive_gk(
                    |s: f64| {
                        let x = *p + dir * s;
                        let ta = field_traction(a, x, *nu, lame);
                        let tb = field_traction(b, x, *nu, lame);
                        ta.dot(b.value(x)) - a.value(x).dot(tb)
                    },
                    0.0,
                    len,
                    QUAD_ABS_TOL,
                    QUAD_REL_TOL,
                )
            }
            ContourPiece::Arc { center, radius, t0, t1, outward } => {
                let sgn = if *outward { 1.0 } else { -1.0 };
                let ctr = *center;
                arc_quad(
                    |x: Vec2| {
                        let nu = (x - ctr).normalized() * sgn;
                        let ta = field_traction(a, x, nu, lame);
                        let tb = field_traction(b, x, nu, lame);
                        ta.dot(b.value(x)) - a.value(x).dot(tb)
                    },
                    ctr,
                    *radius,
                    *t0,
                    *t1,
                    QUAD_ABS_TOL,
                )
            }
        };
        if !r.converged {
            return Err(Error::Quadrature("contour pairing did not converge".into()));
        }
        total += r.value;
    }
    Ok(total)
}

/// Which real slice of complex jump data a probe pass works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

impl Part {
    fn take(self, v: CVec2) -> Vec2 {
        match self {
            Part::Re => v.re(),
            Part::Im => v.im(),
        }
    }

    pub fn take_scalar(self, v: C64) -> f64 {
        match self {
            Part::Re => v.re,
            Part::Im => v.im,
        }
    }
}

type TraceFn = Box<dyn Fn(f64) -> CVec2 + Send + Sync>;

/// Jump traces along one corner edge as functions of the distance from the
/// corner, together with the frozen corner values the expansions use.
pub struct EdgeTrace {
    f: TraceFn,
    g: TraceFn,
    pub f0: CVec2,
    pub g0: CVec2,
    /// Derivative of `f` in the distance from the corner, at the corner.
    pub df0: CVec2,
}

impl EdgeTrace {
    pub fn new(f: TraceFn, g: TraceFn, f0: CVec2, g0: CVec2, df0: CVec2) -> Self {
        EdgeTrace { f, g, f0, g0, df0 }
    }

    /// Real constant data.
    pub fn constant(f0: Vec2, g0: Vec2) -> Self {
        let fc = f0.to_cvec();
        let gc = g0.to_cvec();
        EdgeTrace {
            f: Box::new(move |_| fc),
            g: Box::new(move |_| gc),
            f0: fc,
            g0: gc,
            df0: CVec2::zero(),
        }
    }

    /// Real data with linear growth away from the corner.
    pub fn affine(f0: Vec2, df: Vec2, g0: Vec2, dg: Vec2) -> Self {
        EdgeTrace {
            f: Box::new(move |r| (f0 + df * r).to_cvec()),
            g: Box::new(move |r| (g0 + dg * r).to_cvec()),
            f0: f0.to_cvec(),
            g0: g0.to_cvec(),
            df0: df.to_cvec(),
        }
    }

    /// Builds the traces of `w - v` along an edge through the corner.
    pub fn from_fields(
        v: Arc<dyn Field2>,
        w: Arc<dyn Field2>,
        apex: Vec2,
        x_hat: Vec2,
        nu: Vec2,
        lame: LameParameters,
    ) -> Self {
        let (va, wa) = (Arc::clone(&v), Arc::clone(&w));
        let f: TraceFn = Box::new(move |r| {
            let x = apex + x_hat * r;
            wa.value(x) - va.value(x)
        });
        let (vb, wb) = (Arc::clone(&v), Arc::clone(&w));
        let g: TraceFn = Box::new(move |r| {
            let x = apex + x_hat * r;
            field_traction(wb.as_ref(), x, nu, lame) - field_traction(vb.as_ref(), x, nu, lame)
        });
        let f0 = w.value(apex) - v.value(apex);
        let g0 = field_traction(w.as_ref(), apex, nu, lame)
            - field_traction(v.as_ref(), apex, nu, lame);
        let dg = w.gradient(apex) - v.gradient(apex);
        let df0 = dg.mul_real_vec(x_hat);
        EdgeTrace { f, g, f0, g0, df0 }
    }

    pub fn f_at(&self, r: f64, part: Part) -> Vec2 {
        part.take((self.f)(r))
    }

    pub fn g_at(&self, r: f64, part: Part) -> Vec2 {
        part.take((self.g)(r))
    }

    /// Remainder of `f` beyond its affine expansion at the corner.
    pub fn delta_f(&self, r: f64, part: Part) -> Vec2 {
        self.f_at(r, part) - part.take(self.f0) - part.take(self.df0) * r
    }

    pub fn delta_g(&self, r: f64, part: Part) -> Vec2 {
        self.g_at(r, part) - part.take(self.g0)
    }

    pub fn data_scale(&self) -> f64 {
        self.f0.norm().max(self.g0.norm()).max(self.df0.norm())
    }
}

/// Sector of a corner: apex, lower edge angle, opening and cut radius.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CornerSector {
    pub apex: Vec2,
    pub theta_min: f64,
    pub opening: f64,
    pub h: f64,
}

impl CornerSector {
    pub fn theta_max(&self) -> f64 {
        self.theta_min + self.opening
    }

    pub fn x_hat_min(&self) -> Vec2 {
        Vec2::from_angle(self.theta_min)
    }

    pub fn x_hat_max(&self) -> Vec2 {
        Vec2::from_angle(self.theta_max())
    }

    /// Exterior normal of the lower edge (pointing out of the sector).
    pub fn nu_min(&self) -> Vec2 {
        self.x_hat_min().perp_cw()
    }

    /// Exterior normal of the upper edge.
    pub fn nu_max(&self) -> Vec2 {
        self.x_hat_max().perp_ccw()
    }

    /// Reversed bisector, the canonical separated probe direction.
    pub fn probe_direction(&self) -> Vec2 {
        Vec2::from_angle(self.theta_min + 0.5 * self.opening + PI)
    }

    /// Largest value of `d . x_hat(theta)` over the sector; admissible probe
    /// directions keep this strictly negative.
    pub fn separation(&self, d: Vec2) -> f64 {
        let rel = (d.angle() - self.theta_min).rem_euclid(2.0 * PI);
        if rel <= self.opening {
            1.0
        } else {
            d.dot(self.x_hat_min()).max(d.dot(self.x_hat_max()))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.opening > 0.0 && self.opening < PI) {
            return Err(Error::Probe(format!(
                "sector opening {} outside (0, pi)",
                self.opening
            )));
        }
        if !(self.h > 0.0) {
            return Err(Error::Probe("cut radius must be positive".into()));
        }
        Ok(())
    }
}

/// A corner with jump data on both edges, ready for probing. Data comes
/// either from prescribed jump traces or from a pair of side fields
/// (`v` inside the sector, `w` outside), in which case the arc term of the
/// pairing identity is computable.
pub struct CornerNeighborhood {
    pub sector: CornerSector,
    pub lame: LameParameters,
    pub omega: f64,
    /// Data on the upper edge.
    pub plus: EdgeTrace,
    /// Data on the lower edge.
    pub minus: EdgeTrace,
    pub sides: Option<(Arc<dyn Field2>, Arc<dyn Field2>)>,
}

impl CornerNeighborhood {
    pub fn from_jumps(
        sector: CornerSector,
        lame: LameParameters,
        omega: f64,
        plus: EdgeTrace,
        minus: EdgeTrace,
    ) -> Result<Self> {
        sector.validate()?;
        crate::geometry::validate_lame(lame, 2)?;
        Ok(CornerNeighborhood { sector, lame, omega, plus, minus, sides: None })
    }

    pub fn from_fields(
        sector: CornerSector,
        lame: LameParameters,
        omega: f64,
        v: Arc<dyn Field2>,
        w: Arc<dyn Field2>,
    ) -> Result<Self> {
        sector.validate()?;
        crate::geometry::validate_lame(lame, 2)?;
        let plus = EdgeTrace::from_fields(
            Arc::clone(&v),
            Arc::clone(&w),
            sector.apex,
            sector.x_hat_max(),
            sector.nu_max(),
            lame,
        );
        let minus = EdgeTrace::from_fields(
            Arc::clone(&v),
            Arc::clone(&w),
            sector.apex,
            sector.x_hat_min(),
            sector.nu_min(),
            lame,
        );
        Ok(CornerNeighborhood { sector, lame, omega, plus, minus, sides: Some((v, w)) })
    }

    fn cgo(&self, tau: f64, d: Vec2) -> Result<ElasticCgo> {
        let sep = self.sector.separation(d);
        if sep >= -1e-3 {
            return Err(Error::NoNegativeSeparation(format!(
                "direction ({}, {}) has separation {sep} over the sector",
                d.x, d.y
            )));
        }
        ElasticCgo::new(self.lame, self.omega, tau, d, self.sector.apex)
    }

    pub fn data_scale(&self) -> f64 {
        self.plus.data_scale().max(self.minus.data_scale()).max(1.0)
    }
}

/// Default decay parameter sweep for a cut radius `h`.
pub fn default_tau_sweep(h: f64) -> Vec<f64> {
    [20.0, 40.0, 80.0, 160.0].iter().map(|t| t / h).collect()
}

/// The full corner pairing `int_edges (g . u0 - T u0 . f) ds` with the
/// given data part.
pub fn corner_pairing(neigh: &CornerNeighborhood, u0: &ElasticCgo, part: Part) -> C64 {
    let s = &neigh.sector;
    let mut total = cr(0.0);
    for (trace, x_hat, nu) in [
        (&neigh.plus, s.x_hat_max(), s.nu_max()),
        (&neigh.minus, s.x_hat_min(), s.nu_min()),
    ] {
        let r = adaptive_gk(
            |r: f64| {
                let x = s.apex + x_hat * r;
                let t = u0.traction(x, nu);
                let uv = u0.value(x);
                uv.dot_real(trace.g_at(r, part)) - t.dot_real(trace.f_at(r, part))
            },
            0.0,
            s.h,
            QUAD_ABS_TOL,
            QUAD_REL_TOL,
        );
        total += r.value;
    }
    total
}

/// One evaluation of the corner pairing identity: main terms on the left,
/// labeled remainder groups on the right. With side fields the arc term is
/// integrated directly and the closure defect `|lhs - sum|` is a true
/// consistency check; otherwise the arc term is inferred from the identity
/// and flagged.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub tau: f64,
    pub lhs: [f64; 2],
    pub terms: Vec<[f64; 2]>,
    pub closure: f64,
    pub quadrature_error: f64,
    pub arc_term_inferred: bool,
}

impl IdentityReport {
    pub fn lhs_c(&self) -> C64 {
        c(self.lhs[0], self.lhs[1])
    }

    /// Remainder group by its 1-based label.
    pub fn term(&self, k: usize) -> C64 {
        c(self.terms[k - 1][0], self.terms[k - 1][1])
    }
}

pub fn probe_identity(
    neigh: &CornerNeighborhood,
    tau: f64,
    d: Vec2,
    part: Part,
) -> Result<IdentityReport> {
    let u0 = neigh.cgo(tau, d)?;
    let s = &neigh.sector;
    let lame = neigh.lame;
    let mu = lame.mu;
    let kappa2 = u0.kappa_s() * u0.kappa_s();
    let xi = u0.xi();
    let eta = u0.eta();

    let x_max = s.x_hat_max();
    let x_min = s.x_hat_min();
    let nu_max = s.nu_max();
    let nu_min = s.nu_min();
    let nup_max = nu_max.perp_ccw();
    let nup_min = nu_min.perp_ccw();

    let xi_xmax = xi.dot_real(x_max);
    let xi_xmin = xi.dot_real(x_min);
    let xi_numax = xi.dot_real(nu_max);
    let xi_numin = xi.dot_real(nu_min);
    // Tail of the phase integral beyond the cut radius.
    let t_max = -(cr(s.h) * xi_xmax).exp() / xi_xmax;
    let t_min = -(cr(s.h) * xi_xmin).exp() / xi_xmin;

    let f1 = part.take(neigh.plus.f0);
    let f2 = part.take(neigh.minus.f0);
    let g1 = part.take(neigh.plus.g0);
    let g2 = part.take(neigh.minus.g0);
    let df1 = part.take(neigh.plus.df0);
    let df2 = part.take(neigh.minus.df0);

    let lhs = eta.dot_real(g1) / -xi_xmax
        + eta.dot_real(g2) / -xi_xmin
        + cr(2.0 * mu)
            * (eta.dot_real(f1) * xi_numax / xi_xmax + eta.dot_real(f2) * xi_numin / xi_xmin);

    let mut quad_err = 0.0;
    let mut edge_int = |x_hat: Vec2, integrand: &dyn Fn(f64, Vec2) -> C64| -> C64 {
        let r = adaptive_gk(
            |r: f64| integrand(r, s.apex + x_hat * r),
            0.0,
            s.h,
            QUAD_ABS_TOL,
            QUAD_REL_TOL,
        );
        quad_err += r.error;
        r.value
    };

    let r1 = -cr(2.0 * mu) * eta.dot_real(f1) * xi_numax * t_max;
    let r2 = eta.dot_real(g1) * t_max;
    let r3 = -cr(2.0 * mu) * eta.dot_real(f2) * xi_numin * t_min;
    let r4 = eta.dot_real(g2) * t_min;
    let r5 = -cr(mu * kappa2 / tau * f1.dot(nup_max)) * t_max;
    let r6 = edge_int(x_max, &|r, x| {
        u0.traction(x, nu_max).dot_real(neigh.plus.delta_f(r, part))
    });
    let r7 = -cr(mu * kappa2 / tau * f2.dot(nup_min)) * t_min;
    let r8 = edge_int(x_min, &|r, x| {
        u0.traction(x, nu_min).dot_real(neigh.minus.delta_f(r, part))
    });
    let r10 = -edge_int(x_min, &|r, x| {
        u0.value(x).dot_real(neigh.minus.delta_g(r, part))
    });
    let r11 = -(cr(mu * kappa2 / tau * f1.dot(nup_max)) / xi_xmax
        + cr(mu * kappa2 / tau * f2.dot(nup_min)) / xi_xmin);
    let r12 = -edge_int(x_max, &|r, x| {
        u0.value(x).dot_real(neigh.plus.delta_g(r, part))
    });
    let r13 = edge_int(x_min, &|r, x| {
        u0.traction(x, nu_min).dot_real(df2 * r)
    });
    let r14 = edge_int(x_max, &|r, x| {
        u0.traction(x, nu_max).dot_real(df1 * r)
    });

    let (r9, inferred) = if let Some((v, w)) = &neigh.sides {
        let apex = s.apex;
        let q = arc_quad(
            |x: Vec2| {
                let nu = (x - apex).normalized();
                let qv = part.take(w.value(x) - v.value(x));
                let gq = w.gradient(x) - v.gradient(x);
                let tq = part.take(traction_from_gradient(gq, nu, lame));
                u0.traction(x, nu).dot_real(qv) - u0.value(x).dot_real(tq)
            },
            apex,
            s.h,
            s.theta_min,
            s.theta_max(),
            QUAD_ABS_TOL,
        );
        quad_err += q.error;
        (q.value, false)
    } else {
        let partial: C64 = [r1, r2, r3, r4, r5, r6, r7, r8, r10, r11, r12, r13, r14]
            .iter()
            .sum();
        (lhs - partial, true)
    };

    let terms = vec![r1, r2, r3, r4, r5, r6, r7, r8, r9, r10, r11, r12, r13, r14];
    let sum: C64 = terms.iter().sum();
    Ok(IdentityReport {
        tau,
        lhs: [lhs.re, lhs.im],
        terms: terms.iter().map(|t| [t.re, t.im]).collect(),
        closure: (lhs - sum).norm(),
        quadrature_error: quad_err,
        arc_term_inferred: inferred,
    })
}

/// Normalized pairing whose limit encodes the corner jump difference:
/// `psi = phi (xi . x_max)(xi . x_min) / (2 mu tau^2)`.
fn normalized_pairing(neigh: &CornerNeighborhood, u0: &ElasticCgo, part: Part) -> C64 {
    let s = &neigh.sector;
    let phi = corner_pairing(neigh, u0, part);
    phi * u0.xi().dot_real(s.x_hat_max()) * u0.xi().dot_real(s.x_hat_min())
        / cr(2.0 * neigh.lame.mu * u0.tau * u0.tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub direction: [f64; 2],
    pub params: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub limit: [f64; 2],
    pub error_estimate: f64,
    pub fitted_rate: f64,
    pub inconclusive: bool,
}

fn run_sweep<E>(
    neigh: &CornerNeighborhood,
    taus: &[f64],
    d: Vec2,
    part: Part,
    eval: E,
) -> Result<(Extrapolated, SweepTable)>
where
    E: Fn(&CornerNeighborhood, &ElasticCgo, Part) -> C64 + Sync,
{
    if taus.len() < 3 {
        return Err(Error::Probe("sweep needs at least three parameter values".into()));
    }
    let values: Result<Vec<C64>> = taus
        .par_iter()
        .map(|&tau| neigh.cgo(tau, d).map(|u0| eval(neigh, &u0, part)))
        .collect();
    let values = values?;
    let ex = sweep::extrapolate(taus, &values, neigh.data_scale())?;
    let table = SweepTable {
        direction: [d.x, d.y],
        params: taus.to_vec(),
        values: values.iter().map(|v| [v.re, v.im]).collect(),
        limit: [ex.limit.re, ex.limit.im],
        error_estimate: ex.error_estimate,
        fitted_rate: ex.fitted_rate,
        inconclusive: ex.inconclusive,
    };
    Ok((ex, table))
}

/// Recovered corner jump difference `f_plus(0) - f_minus(0)`.
#[derive(Debug, Clone, Serialize)]
pub struct JumpRecovery {
    pub delta_f_re: [f64; 2],
    pub delta_f_im: [f64; 2],
    pub error_estimate: f64,
    pub direction_spread: f64,
    pub inconclusive: bool,
    pub sweeps: Vec<SweepTable>,
}

impl JumpRecovery {
    pub fn delta_f(&self) -> CVec2 {
        CVec2::new(
            c(self.delta_f_re[0], self.delta_f_im[0]),
            c(self.delta_f_re[1], self.delta_f_im[1]),
        )
    }
}

/// Drives the normalized pairing to its limit over a geometric sweep and
/// solves for the jump difference from one or more probe directions.
pub fn recover_displacement_jump(
    neigh: &CornerNeighborhood,
    taus: &[f64],
    directions: &[Vec2],
) -> Result<JumpRecovery> {
    if directions.is_empty() {
        return Err(Error::Probe("need at least one probe direction".into()));
    }
    let s = &neigh.sector;
    let mut sweeps = Vec::new();
    let mut err_acc = 0.0f64;
    let mut inconclusive = false;
    let mut per_part: Vec<Vec<Vec2>> = Vec::new();

    for part in [Part::Re, Part::Im] {
        let mut per_dir = Vec::new();
        for &d in directions {
            let d = d.normalized();
            let (ex, table) = run_sweep(neigh, taus, d, part, normalized_pairing)?;
            inconclusive |= ex.inconclusive;
            err_acc = err_acc.max(ex.error_estimate);
            sweeps.push(table);
            // The limit equals e^{i (opening - 2 delta)} (a + i b) with
            // a = d . delta_f, b = d_perp . delta_f and delta the direction
            // angle relative to the lower edge.
            let delta = d.angle() - s.theta_min;
            let ab = (-I * cr(s.opening - 2.0 * delta)).exp() * ex.limit;
            per_dir.push(d * ab.re + d.perp_ccw() * ab.im);
        }
        per_part.push(per_dir);
    }

    let ndir = directions.len() as f64;
    let mean = |v: &[Vec2]| v.iter().fold(Vec2::new(0.0, 0.0), |a, &p| a + p) * (1.0 / ndir);
    let mean_re = mean(&per_part[0]);
    let mean_im = mean(&per_part[1]);
    let spread = per_part[0]
        .iter()
        .map(|p| (*p - mean_re).norm())
        .chain(per_part[1].iter().map(|p| (*p - mean_im).norm()))
        .fold(0.0f64, f64::max);

    Ok(JumpRecovery {
        delta_f_re: [mean_re.x, mean_re.y],
        delta_f_im: [mean_im.x, mean_im.y],
        error_estimate: err_acc + spread,
        direction_spread: spread,
        inconclusive,
        sweeps,
    })
}

/// Residual of the corner traction transport relation.
#[derive(Debug, Clone, Serialize)]
pub struct RotationRecovery {
    /// Magnitude of the pairing limit, which equals the norm of the
    /// transport mismatch.
    pub residual: f64,
    /// Mismatch vector `g_plus(0) - transport(opening) g_minus(0)`.
    pub mismatch_re: [f64; 2],
    pub mismatch_im: [f64; 2],
    pub error_estimate: f64,
    pub inconclusive: bool,
    pub sweeps: Vec<SweepTable>,
}

impl RotationRecovery {
    pub fn mismatch(&self) -> CVec2 {
        CVec2::new(
            c(self.mismatch_re[0], self.mismatch_im[0]),
            c(self.mismatch_re[1], self.mismatch_im[1]),
        )
    }
}

/// Extrapolates `tau phi(tau)`; the limit `S` satisfies
/// `S = i e^{-i theta_max} m` with `m` the complex form of the transport
/// mismatch `g_plus(0) - transport(opening) g_minus(0)`, so `|S|` measures
/// the violation exactly. Requires matching displacement jump values with
/// vanishing tangential derivatives at the corner; refuses otherwise.
pub fn recover_traction_rotation(
    neigh: &CornerNeighborhood,
    taus: &[f64],
) -> Result<RotationRecovery> {
    let scale = neigh.data_scale();
    let tol = 1e-6 * scale;
    let df_gap = (neigh.plus.f0 - neigh.minus.f0).norm();
    if df_gap > tol {
        return Err(Error::Probe(format!(
            "displacement jump values differ at the corner by {df_gap}; the transport relation needs matching values"
        )));
    }
    if neigh.plus.df0.norm() > tol || neigh.minus.df0.norm() > tol {
        return Err(Error::Probe(
            "tangential derivative of the displacement jump does not vanish at the corner".into(),
        ));
    }

    let s = &neigh.sector;
    let d = s.probe_direction();
    let tau_phi = |n: &CornerNeighborhood, u0: &ElasticCgo, part: Part| -> C64 {
        corner_pairing(n, u0, part) * cr(u0.tau)
    };

    let mut sweeps = Vec::new();
    let mut mismatch = [Vec2::new(0.0, 0.0); 2];
    let mut err = 0.0f64;
    let mut inconclusive = false;
    for (slot, part) in [Part::Re, Part::Im].into_iter().enumerate() {
        let (ex, table) = run_sweep(neigh, taus, d, part, &tau_phi)?;
        inconclusive |= ex.inconclusive;
        err = err.max(ex.error_estimate);
        sweeps.push(table);
        // S = i e^{-i theta_max} m, hence m = -i e^{i theta_max} S.
        let m = -I * (I * cr(s.theta_max())).exp() * ex.limit;
        mismatch[slot] = Vec2::new(m.re, m.im);
    }
    let m_re = mismatch[0];
    let m_im = mismatch[1];
    Ok(RotationRecovery {
        residual: (m_re.norm_sq() + m_im.norm_sq()).sqrt(),
        mismatch_re: [m_re.x, m_re.y],
        mismatch_im: [m_im.x, m_im.y],
        error_estimate: err,
        inconclusive,
        sweeps,
    })
}

/// Result of probing an interface corner with the zero-frequency pair.
#[derive(Debug, Clone, Serialize)]
pub struct InterfaceProbe {
    /// Extrapolated limit of `s^2 e^{i theta_min} P(s) / 2`: the measurable
    /// combination `z_plus e^{-i opening} + z_minus` of the per-edge values
    /// `z = t(0) . (1, i)` in frame coordinates.
    pub w_limit: [f64; 2],
    pub w_error: f64,
    /// `t(0) . (1, i)` decoded under the shared corner value model, valid
    /// when both edges carry the same mismatch at the corner.
    pub z: [f64; 2],
    /// Fitted decay exponent of the frequency volume term, when omega > 0.
    pub volume_exponent: Option<f64>,
    pub params: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    pub inconclusive: bool,
}

impl InterfaceProbe {
    /// The decoded corner traction mismatch for real fields.
    pub fn t0_vec(&self) -> Vec2 {
        Vec2::new(self.z[0], self.z[1])
    }
}

/// Pairs the parameter-mismatch traction of a smooth field against the
/// zero-frequency probe on both sector edges and extrapolates in `s`.
/// The mismatch is `t = T(lame_b) u - T(lame_a) u` with each edge's
/// exterior normal.
pub fn interface_corner_probe(
    u: &dyn Field2,
    lame_a: LameParameters,
    lame_b: LameParameters,
    omega: f64,
    sector: &CornerSector,
    svals: &[f64],
) -> Result<InterfaceProbe> {
    sector.validate()?;
    if svals.len() < 3 {
        return Err(Error::Probe("sweep needs at least three parameter values".into()));
    }
    let denom = (-I * cr(sector.opening)).exp() + cr(1.0);
    if denom.norm() < 1e-9 {
        return Err(Error::Probe(
            "degenerate opening: edge probe combination not invertible".into(),
        ));
    }

    let mismatch = |x: Vec2, nu: Vec2| -> CVec2 {
        field_traction(u, x, nu, lame_b) - field_traction(u, x, nu, lame_a)
    };

    let values: Result<Vec<C64>> = svals
        .par_iter()
        .map(|&sv| {
            let probe = LameCgo::new(sv, sector.apex, sector.theta_min)?;
            let mut p = cr(0.0);
            for (x_hat, nu) in [
                (sector.x_hat_max(), sector.nu_max()),
                (sector.x_hat_min(), sector.nu_min()),
            ] {
                let r = adaptive_gk(
                    |r: f64| {
                        let x = sector.apex + x_hat * r;
                        mismatch(x, nu).dot(probe.value(x))
                    },
                    0.0,
                    sector.h,
                    QUAD_ABS_TOL,
                    QUAD_REL_TOL,
                );
                p += r.value;
            }
            Ok(p * cr(0.5 * sv * sv) * (I * cr(sector.theta_min)).exp())
        })
        .collect();
    let values = values?;

    let scale = values.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(1e-12);
    let ex = sweep::extrapolate(svals, &values, scale)?;
    let z = ex.limit / denom;

    let volume_exponent = if omega > 0.0 {
        let mut mags = Vec::new();
        for &sv in svals {
            let probe = LameCgo::new(sv, sector.apex, sector.theta_min)?;
            let vint = sector_quad(
                |x| u.value(x).dot(probe.value(x)),
                sector.apex,
                sector.theta_min,
                sector.theta_max(),
                sector.h,
                1e-12,
            )?;
            mags.push((omega * omega * vint.value).norm().max(1e-300));
        }
        sweep::fit_decay_exponent(svals, &mags).ok()
    } else {
        None
    };

    Ok(InterfaceProbe {
        w_limit: [ex.limit.re, ex.limit.im],
        w_error: ex.error_estimate,
        z: [z.re, z.im],
        volume_exponent,
        params: svals.to_vec(),
        values: values.iter().map(|v| [v.re, v.im]).collect(),
        inconclusive: ex.inconclusive,
    })
}

/// Serializable record of one corner probe run.
#[derive(Debug, Clone, Serialize)]
pub struct CornerProbeReport {
    pub sector: CornerSector,
    pub sweeps: Vec<SweepTable>,
    pub delta_f_re: Option<[f64; 2]>,
    pub delta_f_im: Option<[f64; 2]>,
    pub delta_f_error: Option<f64>,
    pub rotation_residual: Option<f64>,
    pub rotation_error: Option<f64>,
    pub identity: Vec<IdentityReport>,
    pub notes: Vec<String>,
}

impl CornerProbeReport {
    pub fn new(sector: CornerSector) -> Self {
        CornerProbeReport {
            sector,
            sweeps: Vec::new(),
            delta_f_re: None,
            delta_f_im: None,
            delta_f_error: None,
            rotation_residual: None,
            rotation_error: None,
            identity: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// CSV table: one row per sweep point, with remainder magnitudes when
    /// identity evaluations are attached.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,direction_x,direction_y,param,value_re,value_im");
        for k in 1..=14 {
            out.push_str(&format!(",r{k}_mag"));
        }
        out.push('\n');
        for (si, sw) in self.sweeps.iter().enumerate() {
            for (p, v) in sw.params.iter().zip(&sw.values) {
                out.push_str(&format!(
                    "{si},{},{},{p},{},{}",
                    sw.direction[0], sw.direction[1], v[0], v[1]
                ));
                let ident = self
                    .identity
                    .iter()
                    .find(|r| (r.tau - *p).abs() < 1e-12 * p.abs().max(1.0));
                if let Some(r) = ident {
                    for t in &r.terms {
                        out.push_str(&format!(",{}", c(t[0], t[1]).norm()));
                    }
                } else {
                    for _ in 0..14 {
                        out.push(',');
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{theta_matrix, transport_matrix};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    const LAME: LameParameters = LameParameters { lambda: 2.0, mu: 1.0 };

    fn sector(theta_min: f64, opening: f64, h: f64) -> CornerSector {
        CornerSector { apex: Vec2::new(0.0, 0.0), theta_min, opening, h }
    }

    #[test]
    fn betti_pairing_self_is_zero() {
        let u = ElasticCgo::new(LAME, 2.0, 5.0, Vec2::new(1.0, 0.0), Vec2::new(0.2, 0.1)).unwrap();
        let contour = polygon_contour(&[
            Vec2::new(-0.4, -0.4),
            Vec2::new(0.4, -0.4),
            Vec2::new(0.4, 0.4),
            Vec2::new(-0.4, 0.4),
        ]);
        let p = betti_pairing(&u, &u, &contour, LAME).unwrap();
        assert_eq!(p, cr(0.0));
    }

    #[test]
    fn betti_pairing_two_solutions_vanishes() {
        let a = ElasticCgo::new(LAME, 2.0, 5.0, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0)).unwrap();
        let b = ElasticCgo::new(LAME, 2.0, 7.0, Vec2::new(0.0, 1.0), Vec2::new(0.1, -0.2)).unwrap();
        let pts = [
            Vec2::new(-0.5, -0.4),
            Vec2::new(0.5, -0.4),
            Vec2::new(0.5, 0.4),
            Vec2::new(-0.5, 0.4),
        ];
        let contour = polygon_contour(&pts);
        let p = betti_pairing(&a, &b, &contour, LAME).unwrap();
        let mut scale = 0.0f64;
        for piece in &contour {
            if let ContourPiece::Segment { a: pa, b: pb, nu } = piece {
                for k in 0..=8 {
                    let x = *pa + (*pb - *pa) * (k as f64 / 8.0);
                    let s = field_traction(&a, x, *nu, LAME).norm() * b.value(x).norm()
                        + a.value(x).norm() * field_traction(&b, x, *nu, LAME).norm();
                    scale = scale.max(s);
                }
            }
        }
        assert!(p.norm() < 1e-8 * scale, "pairing {} vs scale {scale}", p.norm());
    }

    #[test]
    fn plane_waves_solve_the_system() {
        let omega = 2.0;
        let h = 1e-4;
        for field in [
            PlaneWave::shear(LAME, omega, Vec2::new(0.3, 1.0), cr(1.0)),
            PlaneWave::compressional(LAME, omega, Vec2::new(1.0, -0.4), c(0.5, 0.2)),
        ] {
            for &(px, py) in &[(0.2, -0.1), (-0.3, 0.4)] {
                let x = Vec2::new(px, py);
                let lap = (field.value(x + Vec2::new(h, 0.0))
                    + field.value(x - Vec2::new(h, 0.0))
                    + field.value(x + Vec2::new(0.0, h))
                    + field.value(x - Vec2::new(0.0, h))
                    - field.value(x).scale(cr(4.0)))
                .scale(cr(1.0 / (h * h)));
                let div = |p: Vec2| {
                    let g = field.gradient(p);
                    g.m[0][0] + g.m[1][1]
                };
                let gd = CVec2::new(
                    (div(x + Vec2::new(h, 0.0)) - div(x - Vec2::new(h, 0.0))) / cr(2.0 * h),
                    (div(x + Vec2::new(0.0, h)) - div(x - Vec2::new(0.0, h))) / cr(2.0 * h),
                );
                let resid = lap.scale(cr(LAME.mu))
                    + gd.scale(cr(LAME.lambda + LAME.mu))
                    + field.value(x).scale(cr(omega * omega));
                assert!(resid.norm() < 1e-5, "residual {}", resid.norm());
            }
        }
    }

    fn field_neighborhood(theta_min: f64, opening: f64, h: f64, omega: f64) -> CornerNeighborhood {
        let v: Arc<dyn Field2> =
            Arc::new(PlaneWave::shear(LAME, omega, Vec2::new(1.0, 0.2), cr(1.0)));
        let w: Arc<dyn Field2> = Arc::new(Superposition(vec![
            Arc::new(PlaneWave::compressional(LAME, omega, Vec2::new(-0.3, 1.0), c(0.7, -0.4)))
                as Arc<dyn Field2>,
            Arc::new(PlaneWave::shear(LAME, omega, Vec2::new(0.1, -1.0), c(0.2, 0.9))),
        ]));
        CornerNeighborhood::from_fields(sector(theta_min, opening, h), LAME, omega, v, w).unwrap()
    }

    #[test]
    fn identity_closes_over_the_grid() {
        for &opening in &[FRAC_PI_3, FRAC_PI_2, 2.0 * FRAC_PI_3] {
            let neigh = field_neighborhood(0.3, opening, 0.8, 2.0);
            let d = neigh.sector.probe_direction();
            for &tau in &[20.0, 40.0, 80.0] {
                for part in [Part::Re, Part::Im] {
                    let rep = probe_identity(&neigh, tau, d, part).unwrap();
                    assert!(!rep.arc_term_inferred);
                    let tol = 10.0 * (rep.quadrature_error + 1e-10 * neigh.data_scale());
                    assert!(
                        rep.closure <= tol,
                        "closure {} vs tol {tol} at opening {opening}, tau {tau}",
                        rep.closure
                    );
                }
            }
        }
    }

    #[test]
    fn identity_zero_jumps() {
        let v: Arc<dyn Field2> =
            Arc::new(PlaneWave::shear(LAME, 2.0, Vec2::new(1.0, 0.2), cr(1.0)));
        let w = Arc::clone(&v);
        let neigh =
            CornerNeighborhood::from_fields(sector(0.0, FRAC_PI_2, 1.0), LAME, 2.0, v, w).unwrap();
        let rep = probe_identity(&neigh, 30.0, neigh.sector.probe_direction(), Part::Re).unwrap();
        assert!(rep.lhs_c().norm() < 1e-12);
        for k in 1..=14 {
            assert!(rep.term(k).norm() < 1e-12, "term {k} = {}", rep.term(k).norm());
        }
    }

    #[test]
    fn arc_term_decays_exponentially() {
        let neigh = field_neighborhood(0.0, FRAC_PI_2, 1.0, 2.0);
        let d = neigh.sector.probe_direction();
        let zeta0 = -neigh.sector.separation(d);
        let taus = [20.0f64, 40.0, 80.0, 160.0];
        let mags: Vec<f64> = taus
            .iter()
            .map(|&tau| probe_identity(&neigh, tau, d, Part::Re).unwrap().term(9).norm())
            .collect();
        let rate = sweep::fit_exponential_rate(&taus, &mags).unwrap();
        let expected = zeta0 * neigh.sector.h;
        assert!(
            rate > 0.5 * expected && rate < 1.5 * expected,
            "rate {rate} vs expected about {expected}"
        );
    }

    #[test]
    fn holder_remainder_decay_exponent() {
        // delta f on the plus edge behaves like r^{3/2}; its remainder term
        // decays like tau^{-3/2}.
        let hold = Vec2::new(0.7, -0.3);
        let f0 = Vec2::new(1.0, 2.0);
        let plus = EdgeTrace::new(
            Box::new(move |r: f64| (f0 + hold * r.powf(1.5)).to_cvec()),
            Box::new(|_| Vec2::new(0.4, -0.1).to_cvec()),
            f0.to_cvec(),
            Vec2::new(0.4, -0.1).to_cvec(),
            CVec2::zero(),
        );
        let minus = EdgeTrace::constant(Vec2::new(1.0, 2.0), Vec2::new(-0.2, 0.5));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.0, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        let d = neigh.sector.probe_direction();
        let taus = [20.0f64, 40.0, 80.0, 160.0];
        let mags: Vec<f64> = taus
            .iter()
            .map(|&tau| probe_identity(&neigh, tau, d, Part::Re).unwrap().term(6).norm())
            .collect();
        let p = sweep::fit_decay_exponent(&taus, &mags).unwrap();
        assert!((p - 1.5).abs() < 0.15, "fitted exponent {p}");
    }

    #[test]
    fn recovers_planted_unequal_constants() {
        let plus = EdgeTrace::constant(Vec2::new(1.0, 0.0), Vec2::new(0.3, -0.2));
        let minus = EdgeTrace::constant(Vec2::new(0.0, 0.0), Vec2::new(-0.1, 0.4));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.0, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        let taus = default_tau_sweep(1.0);
        let d0 = neigh.sector.probe_direction();
        let rec = recover_displacement_jump(&neigh, &taus, &[d0]).unwrap();
        let df = rec.delta_f().re();
        assert!(!rec.inconclusive);
        assert!((df - Vec2::new(1.0, 0.0)).norm() < 1e-3, "recovered {:?}", df);
        assert!(rec.delta_f().im().norm() < 1e-3);
    }

    #[test]
    fn recovery_invariant_under_direction_h_and_extensions() {
        let f1 = Vec2::new(0.6, -1.1);
        let f2 = Vec2::new(-0.4, 0.5);
        let build = |h: f64, tail_a: Vec2, tail_b: Vec2| {
            let plus = EdgeTrace::affine(f1, tail_a, Vec2::new(0.2, 0.1), Vec2::new(-0.3, 0.2));
            let minus = EdgeTrace::affine(f2, tail_b, Vec2::new(-0.5, 0.3), Vec2::new(0.1, 0.1));
            CornerNeighborhood::from_jumps(sector(0.4, FRAC_PI_2, h), LAME, 0.0, plus, minus)
                .unwrap()
        };
        let expected = f1 - f2;

        let neigh = build(1.0, Vec2::new(0.5, 0.2), Vec2::new(-0.2, 0.7));
        let base_dir = neigh.sector.probe_direction();
        let dirs = [base_dir, base_dir.rotated(0.25), base_dir.rotated(-0.3)];
        let rec = recover_displacement_jump(&neigh, &default_tau_sweep(1.0), &dirs).unwrap();
        assert!((rec.delta_f().re() - expected).norm() < 1e-3);
        assert!(rec.direction_spread < 1e-3, "spread {}", rec.direction_spread);

        let neigh_half = build(0.5, Vec2::new(0.5, 0.2), Vec2::new(-0.2, 0.7));
        let rec_half =
            recover_displacement_jump(&neigh_half, &default_tau_sweep(0.5), &[base_dir]).unwrap();
        assert!((rec_half.delta_f().re() - rec.delta_f().re()).norm() < 1e-3);

        // Swapping the smooth extensions leaves the corner values alone.
        let neigh_swap = build(1.0, Vec2::new(-0.2, 0.7), Vec2::new(0.5, 0.2));
        let rec_swap =
            recover_displacement_jump(&neigh_swap, &default_tau_sweep(1.0), &[base_dir]).unwrap();
        assert!((rec_swap.delta_f().re() - rec.delta_f().re()).norm() < 1e-3);
    }

    #[test]
    fn equal_corner_values_give_zero_difference() {
        let f0 = Vec2::new(1.0, 2.0);
        let plus =
            EdgeTrace::affine(f0, Vec2::new(0.8, -0.1), Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.0));
        let minus =
            EdgeTrace::affine(f0, Vec2::new(-0.3, 0.4), Vec2::new(0.0, 0.2), Vec2::new(0.0, 0.0));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.1, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        let rec = recover_displacement_jump(
            &neigh,
            &default_tau_sweep(1.0),
            &[neigh.sector.probe_direction()],
        )
        .unwrap();
        assert!(rec.delta_f().re().norm() < 1e-3, "got {:?}", rec.delta_f().re());
    }

    #[test]
    fn detection_grid_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let taus = default_tau_sweep(1.0);
        for trial in 0..20 {
            let f1 = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let f2 = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let g1 = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let g2 = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let opening = rng.gen_range(0.6..2.4);
            let frame = rng.gen_range(0.0..2.0 * PI);
            let plus = EdgeTrace::constant(f1, g1);
            let minus = EdgeTrace::constant(f2, g2);
            let neigh =
                CornerNeighborhood::from_jumps(sector(frame, opening, 1.0), LAME, 0.0, plus, minus)
                    .unwrap();
            let rec =
                recover_displacement_jump(&neigh, &taus, &[neigh.sector.probe_direction()])
                    .unwrap();
            let err = (rec.delta_f().re() - (f1 - f2)).norm();
            assert!(err < 5e-3, "trial {trial}: error {err}");
        }
    }

    #[test]
    fn rejects_direction_inside_sector() {
        let neigh = field_neighborhood(0.0, FRAC_PI_2, 1.0, 2.0);
        let inside = Vec2::from_angle(0.4);
        assert!(matches!(
            probe_identity(&neigh, 30.0, inside, Part::Re),
            Err(Error::NoNegativeSeparation(_))
        ));
    }

    fn rotation_neighborhood(
        theta_min: f64,
        opening: f64,
        g_minus_frame: Vec2,
        g_plus_frame: Vec2,
    ) -> CornerNeighborhood {
        let g2 = g_minus_frame.rotated(theta_min);
        let g1 = g_plus_frame.rotated(theta_min);
        let f0 = Vec2::new(0.7, -0.4);
        let plus = EdgeTrace::constant(f0, g1);
        let minus = EdgeTrace::constant(f0, g2);
        CornerNeighborhood::from_jumps(sector(theta_min, opening, 1.0), LAME, 0.0, plus, minus)
            .unwrap()
    }

    #[test]
    fn rotation_relation_planted_over_grid() {
        for &opening in &[FRAC_PI_3, FRAC_PI_2, 2.0 * FRAC_PI_3] {
            // Reflection and transport agree on data aligned with the lower
            // edge frame.
            let g2f = Vec2::new(1.3, 0.0);
            let g1f = theta_matrix(opening).mul_vec(g2f);
            assert!((g1f - transport_matrix(opening).mul_vec(g2f)).norm() < 1e-15);
            let neigh = rotation_neighborhood(0.35, opening, g2f, g1f);
            let rec = recover_traction_rotation(&neigh, &default_tau_sweep(1.0)).unwrap();
            assert!(rec.residual < 1e-3, "opening {opening}: residual {}", rec.residual);
        }
    }

    #[test]
    fn rotation_violation_detected_with_magnitude() {
        let opening = FRAC_PI_2;
        let g2f = Vec2::new(1.0, 0.8);
        let gap = Vec2::new(0.3, -0.4);
        let transported = transport_matrix(opening).mul_vec(g2f);
        let neigh = rotation_neighborhood(0.0, opening, g2f, transported + gap);
        let rec = recover_traction_rotation(&neigh, &default_tau_sweep(1.0)).unwrap();
        assert!(rec.residual > 0.1);
        assert!((rec.residual - 0.5).abs() < 0.05, "residual {}", rec.residual);
        let m = rec.mismatch().re();
        assert!((m - gap).norm() < 5e-3, "mismatch {:?} vs planted {:?}", m, gap);
    }

    #[test]
    fn rotation_zero_tractions() {
        let neigh =
            rotation_neighborhood(0.2, FRAC_PI_2, Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0));
        let rec = recover_traction_rotation(&neigh, &default_tau_sweep(1.0)).unwrap();
        assert!(rec.residual < 1e-6, "residual {}", rec.residual);
    }

    #[test]
    fn rotation_refuses_broken_hypotheses() {
        let plus = EdgeTrace::constant(Vec2::new(1.0, 0.0), Vec2::new(0.1, 0.0));
        let minus = EdgeTrace::constant(Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.0));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.0, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        assert!(recover_traction_rotation(&neigh, &default_tau_sweep(1.0)).is_err());

        let f0 = Vec2::new(1.0, 0.0);
        let plus =
            EdgeTrace::affine(f0, Vec2::new(0.5, 0.0), Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.0));
        let minus = EdgeTrace::constant(f0, Vec2::new(0.1, 0.0));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.0, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        assert!(recover_traction_rotation(&neigh, &default_tau_sweep(1.0)).is_err());
    }

    #[test]
    fn interface_probe_identical_parameters() {
        let u = LinearField {
            grad: CMat2::new(cr(1.0), cr(0.3), cr(0.5), cr(1.0)),
            offset: CVec2::new(cr(0.2), cr(-0.1)),
        };
        let sec = sector(0.2, FRAC_PI_2, 1.0);
        let rep = interface_corner_probe(&u, LAME, LAME, 0.0, &sec, &[16.0, 64.0, 256.0]).unwrap();
        assert!(rep.t0_vec().norm() < 1e-6);
    }

    #[test]
    fn interface_probe_rigid_motion() {
        // Zero strain: both tractions vanish regardless of the parameters.
        let u = LinearField {
            grad: CMat2::new(cr(0.0), cr(-0.8), cr(0.8), cr(0.0)),
            offset: CVec2::new(cr(0.4), cr(0.1)),
        };
        let other = LameParameters::new(1.6, 1.3);
        let sec = sector(0.2, FRAC_PI_2, 1.0);
        let rep =
            interface_corner_probe(&u, LAME, other, 0.0, &sec, &[16.0, 64.0, 256.0]).unwrap();
        assert!(rep.t0_vec().norm() < 1e-6, "t0 {:?}", rep.t0_vec());
    }

    fn mismatch_apply(dl: f64, dm: f64, s3: f64, nu: Vec2) -> Vec2 {
        // (dl tr(E) I + 2 dm E) nu for the strain E = [[1/2, s3/2], [s3/2, 1/2]].
        Vec2::new(
            (dl + dm) * nu.x + dm * s3 * nu.y,
            dm * s3 * nu.x + (dl + dm) * nu.y,
        )
    }

    #[test]
    fn interface_probe_linear_field_matches_analytic() {
        // Strain engineered so the traction mismatch takes the same value on
        // both sector edges: the mismatch matrix has kernel parallel to
        // nu_max - nu_min.
        let lame_a = LameParameters::new(1.0, 1.0);
        let lame_b = LameParameters::new(1.6, 1.3);
        let dl = lame_b.lambda - lame_a.lambda;
        let dm = lame_b.mu - lame_a.mu;
        let s3 = (dl + dm) / dm;
        let u = LinearField {
            grad: CMat2::new(cr(0.5), cr(0.5 * s3), cr(0.5 * s3), cr(0.5)),
            offset: CVec2::zero(),
        };

        // Sector symmetric about 5 pi / 4 puts nu_max - nu_min parallel to
        // (1, -1).
        let opening = FRAC_PI_2;
        let mean = 5.0 * PI / 4.0;
        let sec = sector(mean - 0.5 * opening, opening, 1.0);
        let kernel_dir = (sec.nu_max() - sec.nu_min()).normalized();
        assert!(kernel_dir.dot(Vec2::new(1.0, 1.0).normalized()).abs() < 1e-12);

        let t_plus = mismatch_apply(dl, dm, s3, sec.nu_max());
        let t_minus = mismatch_apply(dl, dm, s3, sec.nu_min());
        assert!((t_plus - t_minus).norm() < 1e-12);

        let rep =
            interface_corner_probe(&u, lame_a, lame_b, 0.0, &sec, &[16.0, 64.0, 256.0]).unwrap();
        assert!(
            (rep.t0_vec() - t_plus).norm() < 1e-3,
            "recovered {:?} vs analytic {:?}",
            rep.t0_vec(),
            t_plus
        );
    }

    #[test]
    fn interface_probe_volume_term_decay() {
        let u = LinearField {
            grad: CMat2::new(cr(0.5), cr(0.1), cr(1.0), cr(0.2)),
            offset: CVec2::new(cr(0.7), cr(0.4)),
        };
        let sec = sector(0.1, FRAC_PI_2, 1.0);
        let rep = interface_corner_probe(
            &u,
            LAME,
            LameParameters::new(1.6, 1.3),
            1.3,
            &sec,
            &[16.0, 64.0, 256.0],
        )
        .unwrap();
        let p = rep.volume_exponent.expect("volume diagnostic expected at positive frequency");
        assert!((p - 4.0).abs() < 0.5, "volume decay exponent {p}");
    }

    #[test]
    fn report_csv_has_rows() {
        let plus = EdgeTrace::constant(Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0));
        let minus = EdgeTrace::constant(Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0));
        let neigh =
            CornerNeighborhood::from_jumps(sector(0.0, FRAC_PI_2, 1.0), LAME, 0.0, plus, minus)
                .unwrap();
        let taus = default_tau_sweep(1.0);
        let rec =
            recover_displacement_jump(&neigh, &taus, &[neigh.sector.probe_direction()]).unwrap();
        let mut report = CornerProbeReport::new(neigh.sector);
        report.sweeps = rec.sweeps.clone();
        report.delta_f_re = Some(rec.delta_f_re);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("sweep,"));
        assert_eq!(lines.len(), 1 + 2 * taus.len());
    }
}
