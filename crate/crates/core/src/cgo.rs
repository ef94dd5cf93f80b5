//! Complex exponential probe fields.
//!
//! Three families share the role of localizing boundary pairings at a fault
//! corner. `ElasticCgo` solves the time-harmonic system at frequency
//! `omega` and decays along a chosen direction with rate `tau`. `ScalarCgo`
//! is the harmonic prototype `exp(-sqrt(s) sqrt(z))` written in a local
//! corner frame. `LameCgo` is its zero-frequency vector analogue
//! `exp(-s sqrt(z)) (1, i)`, a solution of the static system for every
//! admissible parameter pair, used to probe interface corners.
//!
//! Square roots and powers take the principal branch, so local frames must
//! keep the probed sector away from the negative real axis.

use crate::error::{Error, Result};
use crate::geometry::LameParameters;
use crate::la::{c, cr, CMat2, CVec2, Vec2, C64};
use statrs::function::gamma::gamma;

/// Shear and compressional wavenumbers at frequency `omega`.
pub fn wavenumbers(lame: LameParameters, omega: f64) -> (f64, f64) {
    let kappa_s = omega / lame.mu.sqrt();
    let kappa_p = omega / (lame.lambda + 2.0 * lame.mu).sqrt();
    (kappa_s, kappa_p)
}

/// Divergence-free exponential solution of the time-harmonic system
/// `mu lap(u) + (lambda + mu) grad(div u) + omega^2 u = 0`.
///
/// With a unit direction `d` and its counterclockwise perpendicular `d_perp`,
/// the phase vector is `xi = tau d + i sqrt(kappa_s^2 + tau^2) d_perp` and the
/// amplitude `eta = d_perp - i sqrt(1 + kappa_s^2 / tau^2) d`, which gives
/// `xi . xi = -kappa_s^2` and `xi . eta = 0`.
#[derive(Debug, Clone)]
pub struct ElasticCgo {
    pub lame: LameParameters,
    pub omega: f64,
    pub tau: f64,
    pub d: Vec2,
    pub center: Vec2,
    kappa_s: f64,
    xi: CVec2,
    eta: CVec2,
}

impl ElasticCgo {
    pub fn new(
        lame: LameParameters,
        omega: f64,
        tau: f64,
        d: Vec2,
        center: Vec2,
    ) -> Result<Self> {
        crate::geometry::validate_lame(lame, 2)?;
        if omega < 0.0 || !omega.is_finite() {
            return Err(Error::InvalidArgument(format!("frequency {omega} out of range")));
        }
        if d.norm() < 1e-14 {
            return Err(Error::InvalidArgument("zero probe direction".into()));
        }
        let d = d.normalized();
        let (kappa_s, _) = wavenumbers(lame, omega);
        if !(tau > kappa_s) {
            return Err(Error::InvalidArgument(format!(
                "decay rate tau = {tau} must exceed the shear wavenumber {kappa_s}"
            )));
        }
        let beta = (kappa_s * kappa_s + tau * tau).sqrt();
        let dp = d.perp_ccw();
        let xi = CVec2::new(
            cr(tau * d.x) + c(0.0, beta) * cr(dp.x),
            cr(tau * d.y) + c(0.0, beta) * cr(dp.y),
        );
        let eta = CVec2::new(
            cr(dp.x) - c(0.0, beta / tau) * cr(d.x),
            cr(dp.y) - c(0.0, beta / tau) * cr(d.y),
        );
        Ok(ElasticCgo { lame, omega, tau, d, center, kappa_s, xi, eta })
    }

    pub fn kappa_s(&self) -> f64 {
        self.kappa_s
    }

    pub fn kappa_p(&self) -> f64 {
        wavenumbers(self.lame, self.omega).1
    }

    pub fn xi(&self) -> CVec2 {
        self.xi
    }

    pub fn eta(&self) -> CVec2 {
        self.eta
    }

    /// Scalar factor `exp(xi . (x - center))`.
    pub fn phase(&self, x: Vec2) -> C64 {
        let r = x - self.center;
        (self.xi.x * cr(r.x) + self.xi.y * cr(r.y)).exp()
    }

    pub fn value(&self, x: Vec2) -> CVec2 {
        self.eta.scale(self.phase(x))
    }

    /// Gradient with entries `grad[j][k] = d u_j / d x_k`.
    pub fn gradient(&self, x: Vec2) -> CMat2 {
        CMat2::outer(self.eta, self.xi).scale(self.phase(x))
    }

    pub fn divergence(&self, x: Vec2) -> C64 {
        self.xi.dot(self.eta) * self.phase(x)
    }

    /// Traction `lambda (div u) nu + 2 mu sym(grad u) nu` assembled from the
    /// gradient.
    pub fn traction(&self, x: Vec2, nu: Vec2) -> CVec2 {
        let e = self.phase(x);
        let xi_nu = self.xi.dot_real(nu);
        let eta_nu = self.eta.dot_real(nu);
        let mu = cr(self.lame.mu);
        CVec2::new(
            mu * (self.eta.x * xi_nu + self.xi.x * eta_nu) * e,
            mu * (self.eta.y * xi_nu + self.xi.y * eta_nu) * e,
        )
    }

    /// Traction in the reduced form
    /// `mu (2 (xi . nu) eta + (kappa_s^2 / tau) nu_perp) exp(...)`
    /// with `nu_perp` the counterclockwise perpendicular of `nu`.
    pub fn traction_closed_form(&self, x: Vec2, nu: Vec2) -> CVec2 {
        let e = self.phase(x);
        let xi_nu = self.xi.dot_real(nu);
        let np = nu.perp_ccw();
        let coef = cr(self.kappa_s * self.kappa_s / self.tau);
        let mu = cr(self.lame.mu);
        CVec2::new(
            mu * (cr(2.0) * xi_nu * self.eta.x + coef * cr(np.x)) * e,
            mu * (cr(2.0) * xi_nu * self.eta.y + coef * cr(np.y)) * e,
        )
    }
}

/// Harmonic corner probe `exp(-sqrt(s) sqrt(z))` in a local frame anchored
/// at `apex` with the positive real axis along `frame_angle`.
#[derive(Debug, Clone)]
pub struct ScalarCgo {
    pub s: f64,
    pub apex: Vec2,
    pub frame_angle: f64,
}

impl ScalarCgo {
    pub fn new(s: f64, apex: Vec2, frame_angle: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("probe parameter s = {s} must be positive")));
        }
        Ok(ScalarCgo { s, apex, frame_angle })
    }

    fn local_z(&self, x: Vec2) -> C64 {
        (x - self.apex).rotated(-self.frame_angle).zc()
    }

    pub fn value(&self, x: Vec2) -> C64 {
        (-cr(self.s.sqrt()) * self.local_z(x).sqrt()).exp()
    }

    /// Gradient in global coordinates.
    pub fn gradient(&self, x: Vec2) -> (C64, C64) {
        let z = self.local_z(x);
        let fp = -cr(self.s.sqrt()) / (cr(2.0) * z.sqrt()) * self.value(x);
        // Local gradient (f', i f') rotated back to the global frame.
        let (sn, cs) = self.frame_angle.sin_cos();
        let gx = fp * cr(cs) - fp * c(0.0, 1.0) * cr(sn);
        let gy = fp * cr(sn) + fp * c(0.0, 1.0) * cr(cs);
        (gx, gy)
    }

    pub fn normal_derivative(&self, x: Vec2, nu: Vec2) -> C64 {
        let (gx, gy) = self.gradient(x);
        gx * cr(nu.x) + gy * cr(nu.y)
    }
}

/// Zero-frequency probe `exp(-s sqrt(z)) (1, i)` in a local frame. The
/// components are holomorphic in `z`, so the field is divergence free and
/// solves the static system for every parameter pair.
#[derive(Debug, Clone)]
pub struct LameCgo {
    pub s: f64,
    pub apex: Vec2,
    pub frame_angle: f64,
}

impl LameCgo {
    pub fn new(s: f64, apex: Vec2, frame_angle: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidArgument(format!("probe parameter s = {s} must be positive")));
        }
        Ok(LameCgo { s, apex, frame_angle })
    }

    fn local(&self, x: Vec2) -> Vec2 {
        (x - self.apex).rotated(-self.frame_angle)
    }

    /// Scalar factor `exp(-s sqrt(z))` in the local frame.
    pub fn scalar(&self, x: Vec2) -> C64 {
        (-cr(self.s) * self.local(x).zc().sqrt()).exp()
    }

    fn scalar_prime(&self, x: Vec2) -> C64 {
        let z = self.local(x).zc();
        -cr(self.s) / (cr(2.0) * z.sqrt()) * self.scalar(x)
    }

    /// Field value in global coordinates. Rotating the local pair `(1, i)`
    /// only multiplies it by the phase `exp(-i frame_angle)`.
    pub fn value(&self, x: Vec2) -> CVec2 {
        let amp = self.scalar(x) * (-c(0.0, self.frame_angle)).exp();
        CVec2::new(amp, amp * c(0.0, 1.0))
    }

    pub fn gradient(&self, x: Vec2) -> CMat2 {
        let fp = self.scalar_prime(x);
        let v = CVec2::new(cr(1.0), c(0.0, 1.0));
        let w = CVec2::new(fp, fp * c(0.0, 1.0));
        let local = CMat2::outer(v, w);
        // grad_glob = R grad_loc R^T
        let (sn, cs) = self.frame_angle.sin_cos();
        let r = [[cr(cs), cr(-sn)], [cr(sn), cr(cs)]];
        let mut out = CMat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = cr(0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        acc += r[i][a] * local.m[a][b] * r[j][b];
                    }
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn divergence(&self, x: Vec2) -> C64 {
        let g = self.gradient(x);
        g.m[0][0] + g.m[1][1]
    }

    pub fn traction(&self, x: Vec2, nu: Vec2, lame: LameParameters) -> CVec2 {
        let g = self.gradient(x);
        let div = g.m[0][0] + g.m[1][1];
        let sym = g.sym();
        let t = sym.mul_real_vec(nu);
        CVec2::new(
            cr(lame.lambda) * div * cr(nu.x) + cr(2.0 * lame.mu) * t.x,
            cr(lame.lambda) * div * cr(nu.y) + cr(2.0 * lame.mu) * t.y,
        )
    }
}

/// Exact integral of the harmonic probe along the ray at local angle
/// `theta`, from the apex out to distance `h`:
/// `int_0^h exp(-sqrt(s r) e^{i theta / 2}) dr`.
pub fn scalar_edge_integral(s: f64, theta: f64, h: f64) -> C64 {
    let zeta = cr(s.sqrt()) * c(0.0, 0.5 * theta).exp();
    let sh = h.sqrt();
    let e = (-zeta * cr(sh)).exp();
    cr(2.0) / (zeta * zeta) * (cr(1.0) - e * (cr(1.0) + zeta * cr(sh)))
}

/// Exact integral of the zero-frequency scalar factor along the ray at
/// local angle `theta`: `int_0^h exp(-s sqrt(r) e^{i theta / 2}) dr`.
pub fn lame_edge_integral(s: f64, theta: f64, h: f64) -> C64 {
    let mu_hat = c(0.0, 0.5 * theta).exp();
    let sh = h.sqrt();
    let e = (-cr(s) * cr(sh) * mu_hat).exp();
    let m2 = mu_hat * mu_hat;
    cr(2.0 / (s * s)) / m2 * (cr(1.0) - e) - cr(2.0 / s) / mu_hat * cr(sh) * e
}

/// Integral of the harmonic probe over the full infinite sector
/// `[theta_min, theta_max]`: `6 i (e^{-2 i theta_max} - e^{-2 i theta_min}) / s^2`.
pub fn scalar_sector_integral(s: f64, theta_min: f64, theta_max: f64) -> C64 {
    c(0.0, 6.0) * ((-c(0.0, 2.0 * theta_max)).exp() - (-c(0.0, 2.0 * theta_min)).exp())
        / cr(s * s)
}

/// Sector integral of the zero-frequency scalar factor, decaying like
/// `s^{-4}`.
pub fn lame_sector_integral(s: f64, theta_min: f64, theta_max: f64) -> C64 {
    c(0.0, 6.0) * ((-c(0.0, 2.0 * theta_max)).exp() - (-c(0.0, 2.0 * theta_min)).exp())
        / cr(s * s * s * s)
}

/// Upper bound for `int_sector r^alpha |u0| dA` with the harmonic probe:
/// `2 (theta_max - theta_min) Gamma(2 alpha + 4) delta^-(2 alpha + 4) s^-(alpha + 2)`
/// where `delta` is the worst-case decay factor `cos(theta / 2)` over the
/// sector.
pub fn weighted_sector_bound(s: f64, alpha: f64, theta_min: f64, theta_max: f64) -> Result<f64> {
    if theta_max <= theta_min {
        return Err(Error::InvalidArgument("empty sector".into()));
    }
    let delta = (0.5 * theta_min).cos().min((0.5 * theta_max).cos());
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "sector reaches the branch cut, no uniform decay".into(),
        ));
    }
    let p = 2.0 * alpha + 4.0;
    Ok(2.0 * (theta_max - theta_min) * gamma(p) * delta.powf(-p) * s.powf(-(alpha + 2.0)))
}

/// Split of `int_0^h r^alpha e^{-zeta r} dr` into the full Gamma integral
/// and its tail beyond `h`.
#[derive(Debug, Clone, Copy)]
pub struct GammaTail {
    /// The finite integral over `[0, h]`.
    pub finite: C64,
    /// `Gamma(alpha + 1) / zeta^(alpha + 1)`, the integral over `[0, inf)`.
    pub main: C64,
    /// Tail integral over `[h, inf)`, so `finite = main - tail`.
    pub tail: C64,
    /// Explicit bound on `|tail|` that decays like `e^{-h Re(zeta) / 2}`.
    pub tail_bound: f64,
}

/// Evaluates the truncated Gamma integral `int_0^h r^alpha e^{-zeta r} dr`
/// together with its infinite-range main term and a tail bound.
pub fn gamma_tail(alpha: f64, zeta: C64, h: f64) -> Result<GammaTail> {
    if alpha <= -1.0 {
        return Err(Error::InvalidArgument(format!("exponent alpha = {alpha} not integrable")));
    }
    if zeta.re <= 0.0 {
        return Err(Error::InvalidArgument("Re(zeta) must be positive for a decaying tail".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("cut radius h = {h} must be positive")));
    }
    let main = cr(gamma(alpha + 1.0)) / zeta.powf(alpha + 1.0);
    // The tail integrand decays like e^{-Re(zeta) r}; integrate it over a
    // window long enough that the remainder is below roundoff relative to
    // the tail itself.
    let span = 60.0 / zeta.re;
    let r = crate::quad::adaptive_gk(
        |t: f64| cr(t.powf(alpha)) * (-zeta * cr(t)).exp(),
        h,
        h + span,
        1e-300,
        1e-13,
    );
    let tail = r.value;
    let finite = main - tail;
    // |tail| <= sup_{r >= h} (r^alpha e^{-Re zeta r / 2}) * (2 / Re zeta) e^{-h Re zeta / 2}.
    let s = zeta.re;
    let sup = if alpha <= 0.0 {
        h.powf(alpha) * (-0.5 * s * h).exp()
    } else {
        let r_star = (2.0 * alpha / s).max(h);
        r_star.powf(alpha) * (-0.5 * s * r_star).exp()
    };
    let tail_bound = sup * (2.0 / s) * (-0.5 * s * h).exp();
    Ok(GammaTail { finite, main, tail, tail_bound })
}
