//! Single-measurement reconstruction experiments: forward maps from fault
//! parameters to boundary traces, misfit-based distinguishability of nearby
//! geometries, derivative-free-data least-squares recovery of planted
//! faults, and the cyclic relations tying jump differences together around
//! the corners of a closed polygonal fault.

use crate::error::{Error, Result};
use crate::forward::{measure, solve_forward, solve_forward_on, BoundaryMeasurement};
use crate::geometry::{
    check_admissibility, transport_matrix, Fault, JumpData, LayeredDomain, SegmentJump,
};
use crate::la::{CVec2, Mat2, Vec2};
use crate::mesh::{generate_mesh, refine};
use faer::linalg::solvers::Solve;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Arc-length samples recorded on the measurement boundary by the forward
/// map. Fixed so that measurements from different meshes share a grid.
pub const FORWARD_MAP_SAMPLES: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultFamily {
    /// Open polyline with free tips.
    Open,
    /// Closed strictly convex polygon.
    Closed,
}

/// Jump data attached to a fault parameterization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum JumpModel {
    /// Per-segment constant displacement and traction jumps.
    Constant { f: Vec<Vec2>, g: Vec<Vec2> },
    /// Fixed per-segment polynomial jumps.
    Polynomial(JumpData),
}

/// Search space of the reconstruction experiments: a fault family with a
/// fixed vertex count and a jump model. The parameter vector is the
/// flattened vertex coordinates, followed by the per-segment constant
/// displacement jumps when those are estimated too.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultParameterization {
    pub family: FaultFamily,
    pub n_vertices: usize,
    pub jumps: JumpModel,
    /// Treat the constant displacement jumps as unknowns appended to the
    /// parameter vector; the traction jumps stay fixed.
    pub estimate_f: bool,
}

impl FaultParameterization {
    /// Family with the same constant jump on every segment.
    pub fn constant_jumps(family: FaultFamily, n_vertices: usize, f: Vec2, g: Vec2) -> Self {
        let n_seg = match family {
            FaultFamily::Open => n_vertices - 1,
            FaultFamily::Closed => n_vertices,
        };
        FaultParameterization {
            family,
            n_vertices,
            jumps: JumpModel::Constant {
                f: vec![f; n_seg],
                g: vec![g; n_seg],
            },
            estimate_f: false,
        }
    }

    pub fn n_segments(&self) -> usize {
        match self.family {
            FaultFamily::Open => self.n_vertices - 1,
            FaultFamily::Closed => self.n_vertices,
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_vertices + if self.estimate_f { 2 * self.n_segments() } else { 0 }
    }

    /// Vertex block of a parameter vector as a fault, without validation.
    pub fn fault_from(&self, params: &[f64]) -> Fault {
        let vertices = (0..self.n_vertices)
            .map(|i| Vec2::new(params[2 * i], params[2 * i + 1]))
            .collect();
        match self.family {
            FaultFamily::Open => Fault::open(vertices),
            FaultFamily::Closed => Fault::closed(vertices),
        }
    }

    /// Flattens a fault (and the constant jumps, when estimated) into a
    /// parameter vector.
    pub fn encode(&self, fault: &Fault) -> Result<Vec<f64>> {
        if fault.closed != matches!(self.family, FaultFamily::Closed)
            || fault.vertices.len() != self.n_vertices
        {
            return Err(Error::InvalidArgument(format!(
                "fault with {} vertices (closed: {}) does not fit a {:?} family of {} vertices",
                fault.vertices.len(),
                fault.closed,
                self.family,
                self.n_vertices
            )));
        }
        let mut p = Vec::with_capacity(self.n_params());
        for v in &fault.vertices {
            p.push(v.x);
            p.push(v.y);
        }
        if self.estimate_f {
            match &self.jumps {
                JumpModel::Constant { f, .. } => {
                    for fv in f {
                        p.push(fv.x);
                        p.push(fv.y);
                    }
                }
                JumpModel::Polynomial(_) => {
                    return Err(Error::InvalidArgument(
                        "estimated displacement jumps need the constant jump model".into(),
                    ))
                }
            }
        }
        Ok(p)
    }

    /// Decodes a parameter vector, enforcing the family constraints: a
    /// simple fault, strictly convex when closed, strictly inside the
    /// domain.
    pub fn decode(&self, params: &[f64], domain: &LayeredDomain) -> Result<(Fault, JumpData)> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let n_seg = self.n_segments();
        let fault = self.fault_from(params);
        fault.validate()?;
        if matches!(self.family, FaultFamily::Closed) && !polygon_is_convex(&fault.vertices) {
            return Err(Error::InvalidFault(
                "closed fault is not strictly convex".into(),
            ));
        }
        let margin = 1e-6 * domain.diameter();
        for (i, v) in fault.vertices.iter().enumerate() {
            if !domain.contains(*v) || domain.boundary_distance(*v) <= margin {
                return Err(Error::InvalidFault(format!(
                    "vertex {i} at ({}, {}) leaves the domain interior",
                    v.x, v.y
                )));
            }
        }
        let mut ring = domain.outer.clone();
        ring.push(domain.outer[0]);
        let mut path = fault.vertices.clone();
        if fault.closed {
            path.push(fault.vertices[0]);
        }
        if crate::geometry::polyline_min_distance(&path, &ring) <= margin {
            return Err(Error::InvalidFault(
                "fault approaches the outer boundary".into(),
            ));
        }

        let jumps = match &self.jumps {
            JumpModel::Constant { f, g } => {
                if f.len() != n_seg || g.len() != n_seg {
                    return Err(Error::InvalidJump(format!(
                        "{} f and {} g entries for {} segments",
                        f.len(),
                        g.len(),
                        n_seg
                    )));
                }
                let f_values: Vec<Vec2> = if self.estimate_f {
                    params[2 * self.n_vertices..]
                        .chunks(2)
                        .map(|c| Vec2::new(c[0], c[1]))
                        .collect()
                } else {
                    f.clone()
                };
                JumpData {
                    segments: f_values
                        .iter()
                        .zip(g)
                        .map(|(&fv, &gv)| SegmentJump::constant(fv, gv))
                        .collect(),
                }
            }
            JumpModel::Polynomial(jd) => {
                if self.estimate_f {
                    return Err(Error::InvalidArgument(
                        "estimated displacement jumps need the constant jump model".into(),
                    ));
                }
                jd.validate(&fault)?;
                jd.clone()
            }
        };
        Ok((fault, jumps))
    }
}

fn polygon_is_convex(pts: &[Vec2]) -> bool {
    let n = pts.len();
    let scale = pts
        .iter()
        .flat_map(|v| [v.x.abs(), v.y.abs()])
        .fold(1e-12f64, f64::max);
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        let c = pts[(i + 2) % n];
        let cross = (b - a).cross(c - b);
        if cross.abs() <= 1e-12 * scale * scale {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn add_parameter_context(e: Error, params: &[f64]) -> Error {
    let detail = format!("{e}; at parameters {params:?}");
    match e {
        Error::Mesh(_) => Error::Mesh(detail),
        Error::GeometryTooFine(_) => Error::GeometryTooFine(detail),
        Error::Solver(_) => Error::Solver(detail),
        Error::InvalidFault(_) => Error::InvalidFault(detail),
        Error::InvalidJump(_) => Error::InvalidJump(detail),
        other => other,
    }
}

/// Boundary trace of the dislocation field for one point of the parameter
/// space, on the fixed measurement grid.
pub fn forward_map(
    parameterization: &FaultParameterization,
    params: &[f64],
    domain: &LayeredDomain,
    omega: f64,
    h: f64,
) -> Result<BoundaryMeasurement> {
    let (fault, jumps) = parameterization.decode(params, domain)?;
    let field = solve_forward(domain, &fault, &jumps, h, omega)
        .map_err(|e| add_parameter_context(e, params))?;
    measure(&field, domain, FORWARD_MAP_SAMPLES)
}

/// Synthetic data for a planted configuration. By default the data mesh is
/// twice finer than the inversion mesh, so the inversion never sees its own
/// discretization; pass `inverse_crime` to generate on the inversion mesh
/// itself.
pub fn synthetic_measurement(
    parameterization: &FaultParameterization,
    params: &[f64],
    domain: &LayeredDomain,
    omega: f64,
    h: f64,
    inverse_crime: bool,
) -> Result<BoundaryMeasurement> {
    let data_h = if inverse_crime { h } else { 0.5 * h };
    forward_map(parameterization, params, domain, omega, data_h)
}

fn check_same_grid(m1: &BoundaryMeasurement, m2: &BoundaryMeasurement) -> Result<()> {
    if m1.samples.len() != m2.samples.len() {
        return Err(Error::InvalidArgument(format!(
            "sampling grids differ: {} vs {} samples",
            m1.samples.len(),
            m2.samples.len()
        )));
    }
    let total = m1.samples.last().map(|s| s.0).unwrap_or(0.0).max(1e-300);
    for (a, b) in m1.samples.iter().zip(&m2.samples) {
        if (a.0 - b.0).abs() > 1e-9 * total {
            return Err(Error::InvalidArgument(format!(
                "sampling grids differ at arc length {} vs {}",
                a.0, b.0
            )));
        }
    }
    Ok(())
}

fn trapezoid_weights(m: &BoundaryMeasurement) -> Vec<f64> {
    let s: Vec<f64> = m.samples.iter().map(|p| p.0).collect();
    let n = s.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let half = 0.5 * (s[i + 1] - s[i]);
        w[i] += half;
        w[i + 1] += half;
    }
    w
}

/// Trapezoidal L2 distance between two traces on the same grid.
pub fn misfit(m1: &BoundaryMeasurement, m2: &BoundaryMeasurement) -> Result<f64> {
    check_same_grid(m1, m2)?;
    let w = trapezoid_weights(m1);
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        acc += wi * (m1.samples[i].1 - m2.samples[i].1).norm_sq();
    }
    Ok(acc.sqrt())
}

/// One admissible dislocation configuration: the domain, the fault, and
/// its jump data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Configuration {
    pub domain: LayeredDomain,
    pub fault: Fault,
    pub jumps: JumpData,
}

impl Configuration {
    fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.fault.validate()?;
        self.jumps.validate(&self.fault)
    }

    /// Measurements on the requested mesh and on its red refinement; the
    /// second one prices the discretization error at `h`.
    fn measurement_pair(
        &self,
        omega: f64,
        h: f64,
    ) -> Result<(BoundaryMeasurement, BoundaryMeasurement)> {
        let mesh = generate_mesh(&self.domain, &self.fault, h)?;
        let coarse = solve_forward_on(&mesh, &self.domain, &self.fault, &self.jumps, omega, None, None)?;
        let fine_mesh = refine(&mesh);
        let fine =
            solve_forward_on(&fine_mesh, &self.domain, &self.fault, &self.jumps, omega, None, None)?;
        Ok((
            measure(&coarse, &self.domain, FORWARD_MAP_SAMPLES)?,
            measure(&fine, &self.domain, FORWARD_MAP_SAMPLES)?,
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Distinguishability {
    pub misfit: f64,
    /// Ten times the mesh-convergence increment of the trace gap between
    /// the two configurations, measured by re-solving both on half-size
    /// meshes. Gaps above this floor cannot be discretization artifacts.
    pub floor: f64,
    /// False when the two configurations are identical.
    pub applicable: bool,
    pub threshold_pass: bool,
}

fn trace_gap(m1: &BoundaryMeasurement, m2: &BoundaryMeasurement) -> Result<BoundaryMeasurement> {
    check_same_grid(m1, m2)?;
    Ok(BoundaryMeasurement {
        samples: m1
            .samples
            .iter()
            .zip(&m2.samples)
            .map(|(a, b)| (a.0, a.1 - b.1))
            .collect(),
    })
}

/// Measures how far apart the boundary traces of two configurations are,
/// against a floor calibrated from the mesh convergence of that gap at the
/// same resolution. The gap is the thresholded quantity; the absolute
/// traces converge more slowly (fault tips), which would price a shared
/// error against a difference that does not contain it. Corner
/// analyzability is checked up front (degenerate geometry is rejected);
/// the per-corner data verdicts are diagnostics, since distinct geometries
/// separate measurements whether or not each individual corner is
/// probe-visible.
pub fn distinguishability_test(
    a: &Configuration,
    b: &Configuration,
    omega: f64,
    h: f64,
) -> Result<Distinguishability> {
    a.validate()?;
    b.validate()?;
    check_admissibility(&a.fault, &a.jumps, &a.domain)?;
    check_admissibility(&b.fault, &b.jumps, &b.domain)?;

    let identical = serde_json::to_string(a).unwrap() == serde_json::to_string(b).unwrap();
    let (ma, ma_fine) = a.measurement_pair(omega, h)?;
    if identical {
        let (mb, _) = b.measurement_pair(omega, h)?;
        return Ok(Distinguishability {
            misfit: misfit(&ma, &mb)?,
            floor: 0.0,
            applicable: false,
            threshold_pass: false,
        });
    }
    let (mb, mb_fine) = b.measurement_pair(omega, h)?;
    let value = misfit(&ma, &mb)?;
    let conv = misfit(&trace_gap(&ma, &mb)?, &trace_gap(&ma_fine, &mb_fine)?)?;
    let floor = 10.0 * conv;
    Ok(Distinguishability {
        misfit: value,
        floor,
        applicable: true,
        threshold_pass: value > floor,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructOptions {
    pub omega: f64,
    /// Inversion mesh size.
    pub h: f64,
    /// Finite-difference step, relative to the domain diameter.
    pub fd_step_rel: f64,
    /// Stop when the gradient norm falls below this fraction of its
    /// initial value.
    pub grad_tol_rel: f64,
    /// Budget of forward solves (initial evaluation, finite differences
    /// and line search together).
    pub max_solves: usize,
    /// Add the half-mesh refinement increment of the model trace to every
    /// model evaluation. The increment is estimated once at the initial
    /// point (two forward solves) and frozen, so the fit targets half-mesh
    /// accuracy while differencing stays at the working mesh.
    pub defect_correction: bool,
}

impl ReconstructOptions {
    pub fn new(omega: f64, h: f64) -> Self {
        ReconstructOptions {
            omega,
            h,
            fd_step_rel: 1e-4,
            grad_tol_rel: 1e-8,
            max_solves: 200,
            defect_correction: true,
        }
    }
}

/// One accepted optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisfitRecord {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub misfit: f64,
    /// Finite-difference estimate of the gradient of half the squared
    /// misfit. Empty when the iteration stopped before differencing.
    pub gradient: Vec<f64>,
    /// Line search step fraction that produced this state; zero for the
    /// initial record.
    pub step_scale: f64,
    pub solves_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reconstruction {
    pub params: Vec<f64>,
    pub misfit: f64,
    pub history: Vec<MisfitRecord>,
    /// True when a stationarity criterion fired: small gradient, misfit at
    /// the data-noise floor, or no achievable decrease. False when the
    /// solve budget ran out first.
    pub converged: bool,
    pub solves: usize,
}

impl Reconstruction {
    pub fn misfit_csv(&self) -> String {
        let mut out = String::from("iteration,misfit,grad_norm,step_scale,solves\n");
        for r in &self.history {
            let gn = r.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.misfit, gn, r.step_scale, r.solves_used
            ));
        }
        out
    }
}

struct Objective<'a> {
    parameterization: &'a FaultParameterization,
    domain: &'a LayeredDomain,
    data: &'a BoundaryMeasurement,
    weights: Vec<f64>,
    correction: Vec<CVec2>,
    omega: f64,
    h: f64,
    solves: AtomicUsize,
}

enum Eval {
    /// Residual vector and misfit.
    Value(Vec<f64>, f64),
    /// Parameters decode to invalid geometry; no solve spent.
    Invalid,
    /// Valid geometry whose solve failed.
    Failed(Error),
}

impl<'a> Objective<'a> {
    fn residual_of(&self, trace: &BoundaryMeasurement) -> (Vec<f64>, f64) {
        let mut r = Vec::with_capacity(4 * self.weights.len());
        let mut acc = 0.0;
        for (i, wi) in self.weights.iter().enumerate() {
            let d = trace.samples[i].1 + self.correction[i] - self.data.samples[i].1;
            acc += wi * d.norm_sq();
            let sw = wi.sqrt();
            r.push(sw * d.x.re);
            r.push(sw * d.x.im);
            r.push(sw * d.y.re);
            r.push(sw * d.y.im);
        }
        (r, acc.sqrt())
    }

    fn eval(&self, params: &[f64]) -> Eval {
        if self.parameterization.decode(params, self.domain).is_err() {
            return Eval::Invalid;
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        match forward_map(self.parameterization, params, self.domain, self.omega, self.h) {
            Ok(m) => {
                if check_same_grid(&m, self.data).is_err() {
                    return Eval::Failed(Error::InvalidArgument(
                        "model trace grid does not match the data grid".into(),
                    ));
                }
                let (r, m) = self.residual_of(&m);
                Eval::Value(r, m)
            }
            Err(e) => Eval::Failed(e),
        }
    }

    /// Measures the trace increment from one red refinement at `params`
    /// and stores it as the correction; two forward solves. Returns the
    /// working-mesh trace.
    fn estimate_correction(&mut self, params: &[f64]) -> Result<BoundaryMeasurement> {
        let (fault, jumps) = self
            .parameterization
            .decode(params, self.domain)
            .map_err(|e| add_parameter_context(e, params))?;
        let mesh = generate_mesh(self.domain, &fault, self.h)
            .map_err(|e| add_parameter_context(e, params))?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let coarse = solve_forward_on(&mesh, self.domain, &fault, &jumps, self.omega, None, None)
            .map_err(|e| add_parameter_context(e, params))?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let fine =
            solve_forward_on(&refine(&mesh), self.domain, &fault, &jumps, self.omega, None, None)
                .map_err(|e| add_parameter_context(e, params))?;
        let mc = measure(&coarse, self.domain, FORWARD_MAP_SAMPLES)?;
        let mf = measure(&fine, self.domain, FORWARD_MAP_SAMPLES)?;
        check_same_grid(&mc, self.data)?;
        self.correction = mf
            .samples
            .iter()
            .zip(&mc.samples)
            .map(|(f, c)| f.1 - c.1)
            .collect();
        Ok(mc)
    }

    fn used(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }
}

/// Finite-difference Jacobian of the weighted residual, one column per
/// parameter, columns evaluated concurrently. Columns whose one-sided
/// perturbations both leave the valid set come back zero.
fn fd_jacobian(obj: &Objective, params: &[f64], r0: &[f64], step: f64) -> Result<Vec<Vec<f64>>> {
    let n = params.len();
    let cols: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            for sign in [1.0, -1.0] {
                let mut p = params.to_vec();
                p[j] += sign * step;
                match obj.eval(&p) {
                    Eval::Value(r, _) => {
                        let col = r
                            .iter()
                            .zip(r0)
                            .map(|(a, b)| sign * (a - b) / step)
                            .collect();
                        return Ok(col);
                    }
                    Eval::Invalid => continue,
                    Eval::Failed(e) => return Err(e),
                }
            }
            Ok(vec![0.0; r0.len()])
        })
        .collect();
    cols.into_iter().collect()
}

fn grad_of(cols: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    cols.iter()
        .map(|c| c.iter().zip(r).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the damped normal equations for the step; falls back to the
/// steepest-descent step with the exact quadratic-model length when the
/// factorization keeps failing.
fn descent_direction(cols: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let n = cols.len();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum()
    });
    let rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| -grad[i]);
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    let mut damping = 1e-12 * (trace / n as f64).max(1e-300);
    for _ in 0..3 {
        let m = faer::Mat::<f64>::from_fn(n, n, |i, j| {
            a[(i, j)] + if i == j { damping } else { 0.0 }
        });
        if let Ok(llt) = m.llt(faer::Side::Lower) {
            let x = llt.solve(&rhs);
            let d: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
            let descent: f64 = d.iter().zip(grad).map(|(a, b)| a * b).sum();
            if d.iter().all(|v| v.is_finite()) && descent < 0.0 {
                return Some(d);
            }
        }
        damping *= 1e4;
    }
    // Cauchy step along -grad.
    let gg: f64 = grad.iter().map(|g| g * g).sum();
    if gg == 0.0 {
        return None;
    }
    let m = cols[0].len();
    let mut jg = vec![0.0; m];
    for (c, g) in cols.iter().zip(grad) {
        for (out, v) in jg.iter_mut().zip(c) {
            *out += g * v;
        }
    }
    let jg2: f64 = jg.iter().map(|x| x * x).sum();
    if jg2 == 0.0 {
        return None;
    }
    let t = gg / jg2;
    Some(grad.iter().map(|g| -t * g).collect())
}

/// Local least-squares recovery of fault parameters from one boundary
/// trace. Finite-difference Gauss-Newton with backtracking; trial points
/// with invalid geometry shorten the step instead of being evaluated.
pub fn reconstruct(
    measured: &BoundaryMeasurement,
    parameterization: &FaultParameterization,
    init: &[f64],
    domain: &LayeredDomain,
    options: &ReconstructOptions,
) -> Result<Reconstruction> {
    parameterization
        .decode(init, domain)
        .map_err(|e| add_parameter_context(e, init))?;
    if measured.samples.len() != FORWARD_MAP_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "measured trace carries {} samples, the forward map produces {}",
            measured.samples.len(),
            FORWARD_MAP_SAMPLES
        )));
    }

    let mut obj = Objective {
        parameterization,
        domain,
        data: measured,
        weights: trapezoid_weights(measured),
        correction: vec![CVec2::zero(); measured.samples.len()],
        omega: options.omega,
        h: options.h,
        solves: AtomicUsize::new(0),
    };
    let data_scale = {
        let w = &obj.weights;
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += wi * measured.samples[i].1.norm_sq();
        }
        acc.sqrt().max(1e-300)
    };
    let fd_step = options.fd_step_rel * domain.diameter();

    let (mut r, mut m) = if options.defect_correction {
        let trace = obj.estimate_correction(init)?;
        obj.residual_of(&trace)
    } else {
        match obj.eval(init) {
            Eval::Value(r, m) => (r, m),
            Eval::Invalid => unreachable!("init was decoded above"),
            Eval::Failed(e) => return Err(add_parameter_context(e, init)),
        }
    };
    let obj = obj;
    let mut params = init.to_vec();
    let mut history = Vec::new();
    let mut converged = false;
    let mut grad0 = None;
    let mut iteration = 0;
    let mut step_scale = 0.0;

    loop {
        if m <= 1e-13 * data_scale {
            history.push(MisfitRecord {
                iteration,
                params: params.clone(),
                misfit: m,
                gradient: Vec::new(),
                step_scale,
                solves_used: obj.used(),
            });
            converged = true;
            break;
        }
        if obj.used() + params.len() > options.max_solves {
            history.push(MisfitRecord {
                iteration,
                params: params.clone(),
                misfit: m,
                gradient: Vec::new(),
                step_scale,
                solves_used: obj.used(),
            });
            break;
        }

        let cols = fd_jacobian(&obj, &params, &r, fd_step)?;
        let grad = grad_of(&cols, &r);
        let gn = norm(&grad);
        history.push(MisfitRecord {
            iteration,
            params: params.clone(),
            misfit: m,
            gradient: grad.clone(),
            step_scale,
            solves_used: obj.used(),
        });
        let g0 = *grad0.get_or_insert(gn);
        if gn <= options.grad_tol_rel * g0 {
            converged = true;
            break;
        }

        let Some(dir) = descent_direction(&cols, &grad) else {
            converged = true;
            break;
        };
        let dirder: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();

        // Backtracking on half the squared misfit.
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..13 {
            if obj.used() >= options.max_solves {
                break;
            }
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + t * d).collect();
            match obj.eval(&trial) {
                Eval::Value(rt, mt) => {
                    if 0.5 * mt * mt <= 0.5 * m * m + 1e-4 * t * dirder {
                        accepted = Some((trial, rt, mt, t));
                        break;
                    }
                }
                Eval::Invalid => {}
                Eval::Failed(_) => {}
            }
            t *= 0.5;
        }

        match accepted {
            Some((p_new, r_new, m_new, t)) => {
                let rel_drop = (m - m_new) / m.max(1e-300);
                params = p_new;
                r = r_new;
                m = m_new;
                iteration += 1;
                step_scale = t;
                if rel_drop < 1e-6 {
                    history.push(MisfitRecord {
                        iteration,
                        params: params.clone(),
                        misfit: m,
                        gradient: Vec::new(),
                        step_scale,
                        solves_used: obj.used(),
                    });
                    converged = true;
                    break;
                }
            }
            None => {
                // No achievable decrease along the model direction: the
                // iterate is stationary at the working discretization.
                converged = obj.used() < options.max_solves;
                break;
            }
        }
    }

    Ok(Reconstruction {
        params,
        misfit: m,
        history,
        converged,
        solves: obj.used(),
    })
}

/// One corner of the counterclockwise traversal of a closed fault, with
/// the matrix mapping the traction-jump difference on the outgoing segment
/// to the one on the incoming segment.
struct CornerStep {
    vertex: usize,
    seg_in: usize,
    seg_out: usize,
    opening: f64,
    transport: Mat2,
}

fn corner_steps(fault: &Fault) -> Result<Vec<CornerStep>> {
    if !fault.closed {
        return Err(Error::InvalidArgument(
            "cyclic corner relations need a closed fault".into(),
        ));
    }
    fault.validate()?;
    let n = fault.vertices.len();
    let ccw = fault.orientation() > 0.0;
    let verts: Vec<Vec2> = if ccw {
        fault.vertices.clone()
    } else {
        fault.vertices.iter().rev().copied().collect()
    };
    let orig_vertex = |k: usize| if ccw { k } else { n - 1 - k };
    let orig_segment = |j: usize| if ccw { j } else { (2 * n - 2 - j) % n };

    // Traversal order: the corner closing segment 0 comes last.
    let mut steps = Vec::with_capacity(n);
    for k in (1..n).chain([0]) {
        let prev = verts[(k + n - 1) % n];
        let here = verts[k];
        let next = verts[(k + 1) % n];
        let d_in = (here - prev).normalized();
        let d_out = (next - here).normalized();
        let turn = d_in.cross(d_out).atan2(d_in.dot(d_out));
        if std::f64::consts::PI - turn.abs() < 1e-12 {
            return Err(Error::InvalidFault(format!(
                "segments around vertex {} fold back on themselves",
                orig_vertex(k)
            )));
        }
        let opening = std::f64::consts::PI - turn;
        steps.push(CornerStep {
            vertex: orig_vertex(k),
            seg_in: orig_segment((k + n - 1) % n),
            seg_out: orig_segment(k),
            opening,
            transport: transport_matrix(opening),
        });
    }
    Ok(steps)
}

/// Residuals of the two cyclic difference relations at one corner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerRelation {
    pub vertex: usize,
    pub opening: f64,
    /// |df_in - df_out| for the displacement-jump difference.
    pub f_residual: f64,
    /// |dg_in - T dg_out| for the traction-jump difference, T the corner
    /// transport for the opening.
    pub g_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpRelationReport {
    pub corners: Vec<CornerRelation>,
    pub f_violation: f64,
    pub g_violation: f64,
}

/// Checks the cyclic relations that the differences of two piecewise
/// constant jump data sets on the same closed fault must satisfy: the
/// displacement difference repeats from segment to segment, the traction
/// difference transports by the corner opening.
pub fn jump_relation_check(
    fault: &Fault,
    a: &JumpData,
    b: &JumpData,
) -> Result<JumpRelationReport> {
    a.validate(fault)?;
    b.validate(fault)?;
    for (i, seg) in a.segments.iter().chain(b.segments.iter()).enumerate() {
        for p in seg.f.iter().chain(seg.g.iter()) {
            if p[1] != 0.0 || p[2] != 0.0 || p[3] != 0.0 {
                return Err(Error::InvalidJump(format!(
                    "segment {} carries non-constant jump data",
                    i % fault.n_segments()
                )));
            }
        }
    }
    let steps = corner_steps(fault)?;
    let df: Vec<Vec2> = (0..fault.n_segments())
        .map(|i| a.segments[i].f_at(0.0) - b.segments[i].f_at(0.0))
        .collect();
    let dg: Vec<Vec2> = (0..fault.n_segments())
        .map(|i| a.segments[i].g_at(0.0) - b.segments[i].g_at(0.0))
        .collect();

    let mut corners = Vec::with_capacity(steps.len());
    let mut f_violation = 0.0f64;
    let mut g_violation = 0.0f64;
    for s in &steps {
        let f_residual = (df[s.seg_in] - df[s.seg_out]).norm();
        let g_residual = (dg[s.seg_in] - s.transport.mul_vec(dg[s.seg_out])).norm();
        f_violation = f_violation.max(f_residual);
        g_violation = g_violation.max(g_residual);
        corners.push(CornerRelation {
            vertex: s.vertex,
            opening: s.opening,
            f_residual,
            g_residual,
        });
    }
    Ok(JumpRelationReport {
        corners,
        f_violation,
        g_violation,
    })
}

/// Composition of the corner transports around a closed fault, and the
/// solution space of its fixed-point system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CyclicObstruction {
    pub composed: Mat2,
    /// Dimension of the space of traction-jump differences on the starting
    /// segment that stay consistent around the whole cycle.
    pub fixed_space_dim: usize,
    /// Unit spanning direction when that space is one-dimensional.
    pub fixed_direction: Option<Vec2>,
}

pub fn cyclic_obstruction(fault: &Fault) -> Result<CyclicObstruction> {
    let steps = corner_steps(fault)?;
    let mut composed = Mat2::identity();
    for s in &steps {
        composed = s.transport.mul_mat(composed);
    }
    let (fixed_space_dim, fixed_direction) = fixed_points(composed);
    Ok(CyclicObstruction {
        composed,
        fixed_space_dim,
        fixed_direction,
    })
}

/// Solves the fixed-point system `(M - I) x = 0`: returns the dimension of
/// its solution space and a unit spanning vector when that dimension is
/// one.
pub fn fixed_points(m: Mat2) -> (usize, Option<Vec2>) {
    let d = Mat2::new(
        m.m[0][0] - 1.0,
        m.m[0][1],
        m.m[1][0],
        m.m[1][1] - 1.0,
    );
    let scale = m
        .m
        .iter()
        .flatten()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let dmax = d.m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if dmax <= 1e-12 * scale {
        return (2, None);
    }
    if d.det().abs() <= 1e-12 * scale * scale {
        let row = if d.m[0][0].hypot(d.m[0][1]) >= d.m[1][0].hypot(d.m[1][1]) {
            Vec2::new(d.m[0][0], d.m[0][1])
        } else {
            Vec2::new(d.m[1][0], d.m[1][1])
        };
        return (1, Some(Vec2::new(row.y, -row.x).normalized()));
    }
    (0, None)
}
