//! Numerical integration kernels.
//!
//! One-dimensional integrals run on an adaptive 7-15 Gauss-Kronrod pair with
//! worst-interval-first bisection. Sector and arc integrals in the probe
//! machinery are built from the 1D kernel in polar coordinates. Integrands are
//! complex valued; real integrands go through the same path.

use crate::error::{Error, Result};
use crate::la::{C64, Vec2};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Absolute tolerance used by default for adaptive quadrature.
pub const QUAD_ABS_TOL: f64 = 1e-12;
/// Relative tolerance used by default for adaptive quadrature.
pub const QUAD_REL_TOL: f64 = 1e-10;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn rescale_error(err: f64, result_abs: f64, result_asc: f64) -> f64 {
    let mut err = err.abs();
    if result_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / result_asc).powf(1.5);
        err = if scale < 1.0 { result_asc * scale } else { result_asc };
    }
    let min_err = 50.0 * f64::EPSILON * result_abs;
    if result_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) && min_err > err {
        err = min_err;
    }
    err
}

/// 15-point Kronrod rule with embedded 7-point Gauss rule on `[a, b]`.
/// Returns `(integral, error_estimate)`.
pub fn qk15<F: FnMut(f64) -> C64>(f: &mut F, a: f64, b: f64) -> (C64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let half_abs = half.abs();

    let fc = f(center);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut resabs = fc.norm() * WGK[7];
    let mut fv = [C64::ZERO; 15];
    fv[7] = fc;

    for j in 0..3 {
        let jtw = 2 * j + 1;
        let absc = half * XGK[jtw];
        let f1 = f(center - absc);
        let f2 = f(center + absc);
        fv[7 - jtw] = f1;
        fv[7 + jtw] = f2;
        let fsum = f1 + f2;
        resg += fsum * WG[j];
        resk += fsum * WGK[jtw];
        resabs += WGK[jtw] * (f1.norm() + f2.norm());
    }
    for j in 0..4 {
        let jtwm1 = 2 * j;
        let absc = half * XGK[jtwm1];
        let f1 = f(center - absc);
        let f2 = f(center + absc);
        fv[7 - jtwm1] = f1;
        fv[7 + jtwm1] = f2;
        resk += (f1 + f2) * WGK[jtwm1];
        resabs += WGK[jtwm1] * (f1.norm() + f2.norm());
    }

    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).norm();
    for j in 0..7 {
        resasc += WGK[j] * ((fv[j] - mean).norm() + (fv[14 - j] - mean).norm());
    }

    let result = resk * half;
    let abserr = rescale_error((resk - resg).norm() * half_abs, resabs * half_abs, resasc * half_abs);
    (result, abserr)
}

#[derive(Debug)]
struct Interval {
    a: f64,
    b: f64,
    value: C64,
    err: f64,
    seq: u64,
}

impl PartialEq for Interval {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err && self.seq == o.seq
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Interval {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err
            .total_cmp(&o.err)
            .then_with(|| o.seq.cmp(&self.seq))
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: C64,
    pub error: f64,
    pub intervals: usize,
    pub converged: bool,
}

/// Adaptive Gauss-Kronrod integration of a complex integrand over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// error drops below `max(abs_tol, rel_tol * |integral|)` or the interval
/// budget is exhausted.
pub fn adaptive_gk<F: FnMut(f64) -> C64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    let max_intervals = 4000usize;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let (v, e) = qk15(&mut f, a, b);
    heap.push(Interval { a, b, value: v, err: e, seq });
    let mut total_value = v;
    let mut total_err = e;

    while heap.len() < max_intervals {
        let tol = abs_tol.max(rel_tol * total_value.norm());
        if total_err <= tol {
            break;
        }
        let worst = heap.pop().expect("heap nonempty");
        if worst.b - worst.a <= f64::EPSILON * (worst.b.abs() + worst.a.abs()).max(1e-300) {
            // Cannot subdivide further; put it back and stop.
            heap.push(worst);
            break;
        }
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = qk15(&mut f, worst.a, mid);
        let (v2, e2) = qk15(&mut f, mid, worst.b);
        total_value = total_value - worst.value + v1 + v2;
        total_err = total_err - worst.err + e1 + e2;
        seq += 1;
        heap.push(Interval { a: worst.a, b: mid, value: v1, err: e1, seq });
        seq += 1;
        heap.push(Interval { a: mid, b: worst.b, value: v2, err: e2, seq });
    }

    let tol = abs_tol.max(rel_tol * total_value.norm());
    QuadResult {
        value: total_value,
        error: total_err,
        intervals: heap.len(),
        converged: total_err <= tol,
    }
}

/// Adaptive integration of a real integrand.
pub fn adaptive_gk_real<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    adaptive_gk(|t| C64::new(f(t), 0.0), a, b, abs_tol, rel_tol)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integral of `f` over the circular sector with apex `apex`, radii
/// `[0, r_max]` and polar angles `[theta_min, theta_max]` measured in the
/// global frame. Uses polar coordinates with the area element `r dr dtheta`.
pub fn sector_quad<F>(f: F, apex: Vec2, theta_min: f64, theta_max: f64, r_max: f64, tol: f64) -> Result<QuadResult>
where
    F: Fn(Vec2) -> C64,
{
    if theta_max <= theta_min {
        return Err(Error::Quadrature(format!(
            "empty angular range [{theta_min}, {theta_max}]"
        )));
    }
    if r_max <= 0.0 {
        return Err(Error::Quadrature(format!("non-positive radius {r_max}")));
    }
    let inner_tol = tol / (theta_max - theta_min) * 0.25;
    let mut inner_err_max = 0.0f64;
    let outer = adaptive_gk(
        |theta| {
            let dir = Vec2::from_angle(theta);
            let inner = adaptive_gk(
                |r| f(apex + dir * r) * r,
                0.0,
                r_max,
                inner_tol,
                QUAD_REL_TOL,
            );
            inner_err_max = inner_err_max.max(inner.error);
            inner.value
        },
        theta_min,
        theta_max,
        tol,
        QUAD_REL_TOL,
    );
    Ok(QuadResult {
        value: outer.value,
        error: outer.error + inner_err_max * (theta_max - theta_min),
        intervals: outer.intervals,
        converged: outer.converged,
    })
}

/// Integral of `f` along the circular arc of radius `r` around `center`
/// between polar angles `theta_min` and `theta_max`, with respect to arc
/// length.
pub fn arc_quad<F>(f: F, center: Vec2, r: f64, theta_min: f64, theta_max: f64, tol: f64) -> QuadResult
where
    F: Fn(Vec2) -> C64,
{
    adaptive_gk(
        |theta| f(center + Vec2::from_angle(theta) * r) * r,
        theta_min,
        theta_max,
        tol,
        QUAD_REL_TOL,
    )
}

/// Composite trapezoid value for uniformly spaced samples with spacing `dx`.
pub fn trapezoid_uniform(samples: &[f64], dx: f64) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let interior: f64 = samples[1..samples.len() - 1].iter().sum();
    dx * (0.5 * (samples[0] + samples[samples.len() - 1]) + interior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::cr;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let r = adaptive_gk_real(|x| x * x, 0.0, 1.0, 1e-14, 1e-14);
        assert!((r.value.re - 1.0 / 3.0).abs() < 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn sine_integral() {
        let r = adaptive_gk_real(|x| x.sin(), 0.0, PI, 1e-13, 1e-12);
        assert!((r.value.re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_complex_exponential() {
        // int_0^1 e^{i k x} dx = (e^{ik} - 1) / (ik)
        let k = 37.0;
        let r = adaptive_gk(|x| (C64::new(0.0, k * x)).exp(), 0.0, 1.0, 1e-13, 1e-12);
        let exact = ((C64::new(0.0, k)).exp() - cr(1.0)) / C64::new(0.0, k);
        assert!((r.value - exact).norm() < 1e-11);
    }

    #[test]
    fn algebraic_endpoint_singularity_in_derivative() {
        // int_0^1 sqrt(x) dx = 2/3
        let r = adaptive_gk_real(|x| x.sqrt(), 0.0, 1.0, 1e-13, 1e-11);
        assert!((r.value.re - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn sharply_decaying_exponential() {
        // int_0^10 e^{-100 r} dr = (1 - e^{-1000}) / 100
        let r = adaptive_gk_real(|x| (-100.0 * x).exp(), 0.0, 10.0, 1e-14, 1e-12);
        assert!((r.value.re - 0.01).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_degree_exactness() {
        let (x, w) = gauss_legendre(8);
        // Exact for polynomials up to degree 15: check x^14 on [-1, 1].
        let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(14)).sum();
        assert!((got - 2.0 / 15.0).abs() < 1e-14);
        let sum_w: f64 = w.iter().sum();
        assert!((sum_w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn quarter_disk_area() {
        let r = sector_quad(|_| cr(1.0), Vec2::new(0.0, 0.0), 0.0, PI / 2.0, 1.0, 1e-11).unwrap();
        assert!((r.value.re - PI / 4.0).abs() < 1e-9, "area {}", r.value.re);
    }

    #[test]
    fn arc_length() {
        let r = arc_quad(|_| cr(1.0), Vec2::new(1.0, 2.0), 0.5, 0.0, PI / 3.0, 1e-12);
        assert!((r.value.re - 0.5 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let v = trapezoid_uniform(&xs, 0.1);
        assert!((v - 0.5).abs() < 1e-14);
    }
}
