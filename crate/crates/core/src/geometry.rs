//! Domain, fault and jump-data descriptions.
//!
//! A layered domain is a simple polygon cut into horizontal layers by
//! non-crossing piecewise-linear interfaces, each spanning the domain from
//! side to side as the graph of a function of `x`. A fault is an open or
//! closed polyline compactly contained in one layer. Jump data prescribes the
//! displacement and traction jumps across the fault as per-segment
//! polynomials in arc length.
//!
//! Corner conventions: at every non-collinear fault vertex the two adjacent
//! segments span a sector on the enclosed side of the fault. With the
//! enclosure traversed counterclockwise, the outgoing segment carries the
//! lower polar angle of the sector (the "minus" edge) and the incoming
//! segment the upper one (the "plus" edge). Per-segment normals point away
//! from the enclosure, toward the outer boundary.

use crate::error::{Error, Result};
use crate::la::{Mat2, Vec2};
use crate::quad::{adaptive_gk_real, QUAD_ABS_TOL, QUAD_REL_TOL};
use serde::{Deserialize, Serialize};

/// Tolerance (radians) below which adjacent fault segments count as collinear.
pub const COLLINEAR_TOL: f64 = 1e-9;
/// Relative tolerance for the admissibility equality tests at corners.
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

/// Isotropic material constants of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LameParameters {
    pub lambda: f64,
    pub mu: f64,
}

impl LameParameters {
    pub fn new(lambda: f64, mu: f64) -> Self {
        LameParameters { lambda, mu }
    }
}

/// Checks strong convexity of the stored energy: `mu > 0` and
/// `2 mu + n lambda > 0` in dimension `n`.
pub fn validate_lame(lame: LameParameters, dim: usize) -> Result<()> {
    if !(dim == 2 || dim == 3) {
        return Err(Error::InvalidArgument(format!("dimension {dim} not supported")));
    }
    if !lame.mu.is_finite() || !lame.lambda.is_finite() {
        return Err(Error::InvalidLame("non-finite parameter".into()));
    }
    if lame.mu <= 0.0 {
        return Err(Error::InvalidLame(format!("mu = {} violates mu > 0", lame.mu)));
    }
    let combo = 2.0 * lame.mu + dim as f64 * lame.lambda;
    if combo <= 0.0 {
        return Err(Error::InvalidLame(format!(
            "2 mu + {} lambda = {} violates strong convexity",
            dim, combo
        )));
    }
    Ok(())
}

/// Polygonal domain split into layers by interface graphs, with the outer
/// boundary dissected into a clamped part, a traction-free part and a
/// measurement arc inside the traction-free part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayeredDomain {
    /// Outer boundary vertices, counterclockwise.
    pub outer: Vec<Vec2>,
    /// Interfaces ordered bottom to top; each is the graph of a
    /// piecewise-linear function of `x` spanning the domain.
    pub interfaces: Vec<Vec<Vec2>>,
    /// One parameter set per layer, bottom layer first
    /// (`interfaces.len() + 1` entries).
    pub layer_params: Vec<LameParameters>,
    /// Indices of outer edges with clamped displacement.
    pub dirichlet_edges: Vec<usize>,
    /// Indices of outer edges left traction free.
    pub traction_free_edges: Vec<usize>,
    /// Indices of outer edges forming the measurement arc
    /// (subset of `traction_free_edges`).
    pub measurement_edges: Vec<usize>,
}

impl LayeredDomain {
    pub fn n_layers(&self) -> usize {
        self.interfaces.len() + 1
    }

    pub fn outer_edge(&self, i: usize) -> (Vec2, Vec2) {
        let n = self.outer.len();
        (self.outer[i % n], self.outer[(i + 1) % n])
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.outer.len() {
            for j in i + 1..self.outer.len() {
                d = d.max(self.outer[i].dist(self.outer[j]));
            }
        }
        d
    }

    /// Height of interface `k` at abscissa `x` (clamped to the graph range).
    pub fn interface_height(&self, k: usize, x: f64) -> f64 {
        let pts = &self.interfaces[k];
        if x <= pts[0].x {
            return pts[0].y;
        }
        for w in pts.windows(2) {
            if x <= w[1].x {
                let t = (x - w[0].x) / (w[1].x - w[0].x);
                return w[0].y + t * (w[1].y - w[0].y);
            }
        }
        pts[pts.len() - 1].y
    }

    /// Zero-based layer index of a point (0 = bottom layer).
    pub fn layer_of(&self, p: Vec2) -> usize {
        let mut layer = 0;
        for k in 0..self.interfaces.len() {
            if p.y > self.interface_height(k, p.x) {
                layer = k + 1;
            }
        }
        layer
    }

    pub fn params_of_layer(&self, layer: usize) -> LameParameters {
        self.layer_params[layer]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        point_in_polygon(p, &self.outer)
    }

    /// Distance from a point to the outer boundary.
    pub fn boundary_distance(&self, p: Vec2) -> f64 {
        let n = self.outer.len();
        let mut d = f64::INFINITY;
        for i in 0..n {
            let (a, b) = self.outer_edge(i);
            d = d.min(point_segment_distance(p, a, b));
        }
        d
    }

    /// Validates the layer partition and boundary dissection. Reports the
    /// first violated layer pair for interface contact or crossing.
    pub fn validate(&self) -> Result<()> {
        if self.outer.len() < 3 {
            return Err(Error::InvalidGeometry("outer boundary needs >= 3 vertices".into()));
        }
        if polygon_signed_area(&self.outer) <= 0.0 {
            return Err(Error::InvalidGeometry(
                "outer boundary must be counterclockwise with positive area".into(),
            ));
        }
        if !polygon_is_simple(&self.outer) {
            return Err(Error::InvalidGeometry("outer boundary self-intersects".into()));
        }
        if self.layer_params.len() != self.n_layers() {
            return Err(Error::InvalidGeometry(format!(
                "{} layer parameter sets for {} layers",
                self.layer_params.len(),
                self.n_layers()
            )));
        }
        for (k, lame) in self.layer_params.iter().enumerate() {
            validate_lame(*lame, 2).map_err(|e| {
                Error::InvalidGeometry(format!("layer {k}: {e}"))
            })?;
        }
        for k in 0..self.layer_params.len().saturating_sub(1) {
            if self.layer_params[k] == self.layer_params[k + 1] {
                return Err(Error::PartitionViolation {
                    layer_a: k,
                    layer_b: k + 1,
                    detail: "adjacent layers share identical Lame parameters".into(),
                });
            }
        }

        let diam = self.diameter();
        for (k, itf) in self.interfaces.iter().enumerate() {
            if itf.len() < 2 {
                return Err(Error::InvalidGeometry(format!("interface {k} needs >= 2 vertices")));
            }
            for w in itf.windows(2) {
                if w[1].x <= w[0].x {
                    return Err(Error::InvalidGeometry(format!(
                        "interface {k} is not a graph over x (non-increasing abscissae)"
                    )));
                }
            }
            for p in [itf[0], itf[itf.len() - 1]] {
                if self.boundary_distance(p) > 1e-9 * diam {
                    return Err(Error::InvalidGeometry(format!(
                        "interface {k} endpoint ({}, {}) does not lie on the outer boundary",
                        p.x, p.y
                    )));
                }
            }
            for p in &itf[1..itf.len() - 1] {
                if !self.contains(*p) {
                    return Err(Error::InvalidGeometry(format!(
                        "interface {k} leaves the domain"
                    )));
                }
            }
        }

        // Interfaces of non-adjacent layers may not touch; crossing or
        // contact of any two interfaces breaks the ordered partition.
        for i in 0..self.interfaces.len() {
            for j in i + 1..self.interfaces.len() {
                if polyline_min_distance(&self.interfaces[i], &self.interfaces[j]) < 1e-12 * diam {
                    return Err(Error::PartitionViolation {
                        layer_a: i,
                        layer_b: j + 1,
                        detail: format!("interfaces {i} and {j} touch or cross"),
                    });
                }
            }
        }
        // Ordering: each interface strictly below the next where both sampled.
        for i in 0..self.interfaces.len().saturating_sub(1) {
            let lo = &self.interfaces[i];
            for p in lo {
                if p.y >= self.interface_height(i + 1, p.x) {
                    return Err(Error::PartitionViolation {
                        layer_a: i,
                        layer_b: i + 2,
                        detail: format!("interface {i} rises above interface {}", i + 1),
                    });
                }
            }
        }

        let n = self.outer.len();
        let mut seen = vec![0usize; n];
        for &e in self.dirichlet_edges.iter().chain(&self.traction_free_edges) {
            if e >= n {
                return Err(Error::InvalidGeometry(format!("boundary edge index {e} out of range")));
            }
            seen[e] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(Error::InvalidGeometry(
                "dirichlet and traction-free edges must partition the outer boundary".into(),
            ));
        }
        if self.dirichlet_edges.is_empty() {
            return Err(Error::InvalidGeometry("clamped boundary part is empty".into()));
        }
        if self.measurement_edges.is_empty() {
            return Err(Error::InvalidGeometry("measurement arc is empty".into()));
        }
        for &e in &self.measurement_edges {
            if !self.traction_free_edges.contains(&e) {
                return Err(Error::InvalidGeometry(format!(
                    "measurement edge {e} is not traction free"
                )));
            }
        }
        Ok(())
    }
}

/// Open or closed fault polyline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fault {
    pub vertices: Vec<Vec2>,
    pub closed: bool,
}

impl Fault {
    pub fn open(vertices: Vec<Vec2>) -> Self {
        Fault { vertices, closed: false }
    }

    pub fn closed(vertices: Vec<Vec2>) -> Self {
        Fault { vertices, closed: true }
    }

    pub fn n_segments(&self) -> usize {
        if self.closed {
            self.vertices.len()
        } else {
            self.vertices.len() - 1
        }
    }

    pub fn segment(&self, i: usize) -> (Vec2, Vec2) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        let (a, b) = self.segment(i);
        a.dist(b)
    }

    pub fn total_length(&self) -> f64 {
        (0..self.n_segments()).map(|i| self.segment_length(i)).sum()
    }

    /// Polygon enclosing the fault: the fault itself when closed, otherwise
    /// the polyline closed by the chord between its endpoints.
    pub fn enclosure(&self) -> Vec<Vec2> {
        self.vertices.clone()
    }

    /// +1 when the vertex order runs counterclockwise around the enclosure.
    pub fn orientation(&self) -> f64 {
        polygon_signed_area(&self.enclosure()).signum()
    }

    /// Unit normal of segment `i` pointing away from the enclosed side
    /// (toward the outer boundary).
    pub fn segment_normal(&self, i: usize) -> Vec2 {
        let (a, b) = self.segment(i);
        let dir = (b - a).normalized();
        if self.orientation() > 0.0 {
            dir.perp_cw()
        } else {
            dir.perp_ccw()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = if self.closed { 3 } else { 2 };
        if self.vertices.len() < need {
            return Err(Error::InvalidFault(format!(
                "need at least {need} vertices, got {}",
                self.vertices.len()
            )));
        }
        let scale = self
            .vertices
            .iter()
            .flat_map(|v| [v.x.abs(), v.y.abs()])
            .fold(0.0f64, f64::max)
            .max(1e-12);
        for i in 0..self.n_segments() {
            if self.segment_length(i) < 1e-12 * scale {
                return Err(Error::InvalidFault(format!("segment {i} is degenerate")));
            }
        }
        let enc = self.enclosure();
        if enc.len() >= 3 && !polygon_is_simple(&enc) {
            return Err(Error::InvalidFault(
                "fault (closed by its chord when open) self-intersects".into(),
            ));
        }
        Ok(())
    }

    /// Rigid motion of the fault: rotation by `angle` then translation.
    pub fn transformed(&self, angle: f64, shift: Vec2) -> Fault {
        Fault {
            vertices: self.vertices.iter().map(|v| v.rotated(angle) + shift).collect(),
            closed: self.closed,
        }
    }

    /// Arc-length distance from parameter `s` on segment `seg` to the nearest
    /// fault endpoint, measured along the fault. `None` for closed faults.
    pub fn arc_distance_to_tip(&self, seg: usize, s: f64) -> Option<f64> {
        if self.closed {
            return None;
        }
        let before: f64 = (0..seg).map(|i| self.segment_length(i)).sum();
        let pos = before + s;
        Some(pos.min(self.total_length() - pos))
    }
}

/// Cubic polynomial in arc length, low coefficient first.
pub type Poly3 = [f64; 4];

pub fn poly_eval(p: &Poly3, s: f64) -> f64 {
    ((p[3] * s + p[2]) * s + p[1]) * s + p[0]
}

pub fn poly_derivative(p: &Poly3, s: f64) -> f64 {
    (3.0 * p[3] * s + 2.0 * p[2]) * s + p[1]
}

/// Jump data on one fault segment: displacement jump `f` and traction jump
/// `g`, each with two components polynomial in arc length from the segment
/// start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentJump {
    pub f: [Poly3; 2],
    pub g: [Poly3; 2],
}

impl SegmentJump {
    pub fn constant(f: Vec2, g: Vec2) -> Self {
        SegmentJump {
            f: [[f.x, 0.0, 0.0, 0.0], [f.y, 0.0, 0.0, 0.0]],
            g: [[g.x, 0.0, 0.0, 0.0], [g.y, 0.0, 0.0, 0.0]],
        }
    }

    pub fn f_at(&self, s: f64) -> Vec2 {
        Vec2::new(poly_eval(&self.f[0], s), poly_eval(&self.f[1], s))
    }

    pub fn g_at(&self, s: f64) -> Vec2 {
        Vec2::new(poly_eval(&self.g[0], s), poly_eval(&self.g[1], s))
    }

    pub fn f_prime_at(&self, s: f64) -> Vec2 {
        Vec2::new(poly_derivative(&self.f[0], s), poly_derivative(&self.f[1], s))
    }
}

/// Per-segment jump polynomials for a whole fault.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpData {
    pub segments: Vec<SegmentJump>,
}

impl JumpData {
    pub fn constant(fault: &Fault, f: Vec2, g: Vec2) -> Self {
        JumpData {
            segments: vec![SegmentJump::constant(f, g); fault.n_segments()],
        }
    }

    pub fn validate(&self, fault: &Fault) -> Result<()> {
        if self.segments.len() != fault.n_segments() {
            return Err(Error::InvalidJump(format!(
                "{} segment jump entries for {} fault segments",
                self.segments.len(),
                fault.n_segments()
            )));
        }
        Ok(())
    }
}

/// The symmetric corner reflection matrix
/// `[[-cos t, -sin t], [-sin t, cos t]]` tied to a corner opening `t`.
/// It is involutive with determinant -1 and eigenvalues +-1.
pub fn theta_matrix(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(-c, -s, -s, c)
}

/// Transport matrix carried by the corner pairing identity: the plus-edge
/// traction jump at a corner equals `-R(theta)` applied to the minus-edge
/// one, with `R` the counterclockwise rotation by the opening angle. Agrees
/// with [`theta_matrix`] on vectors whose second frame component vanishes.
pub fn transport_matrix(theta: f64) -> Mat2 {
    Mat2::rotation(theta).scale(-1.0)
}

/// A fault corner with its sector data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Corner {
    pub position: Vec2,
    pub vertex_index: usize,
    /// Segment index carrying the upper (plus) edge of the sector.
    pub seg_plus: usize,
    /// Segment index carrying the lower (minus) edge of the sector.
    pub seg_minus: usize,
    /// Opening angle of the sector on the enclosed side.
    pub opening: f64,
    /// Global polar angle of the minus edge direction.
    pub frame_angle: f64,
    /// Zero-based index of the layer containing the corner.
    pub layer: usize,
}

impl Corner {
    /// Global direction of the minus (lower) sector edge.
    pub fn dir_minus(&self) -> Vec2 {
        Vec2::from_angle(self.frame_angle)
    }

    /// Global direction of the plus (upper) sector edge.
    pub fn dir_plus(&self) -> Vec2 {
        Vec2::from_angle(self.frame_angle + self.opening)
    }

    /// Default probe direction: the inward bisector reversed, which
    /// maximizes the negative separation over the sector.
    pub fn probe_direction(&self) -> Vec2 {
        Vec2::from_angle(self.frame_angle + 0.5 * self.opening + std::f64::consts::PI)
    }
}

/// Finds all non-collinear fault vertices together with their sector frames.
/// Interior vertices only for open faults; every vertex for closed ones.
pub fn detect_corners(fault: &Fault, domain: &LayeredDomain) -> Result<Vec<Corner>> {
    fault.validate()?;
    let nv = fault.vertices.len();
    let ccw = fault.orientation() > 0.0;
    let mut corners = Vec::new();
    let idx_range: Vec<usize> = if fault.closed {
        (0..nv).collect()
    } else {
        (1..nv - 1).collect()
    };
    for k in idx_range {
        let prev = fault.vertices[(k + nv - 1) % nv];
        let here = fault.vertices[k];
        let next = fault.vertices[(k + 1) % nv];
        let d_prev = here - prev;
        let d_next = next - here;
        let turn = d_prev.cross(d_next).atan2(d_prev.dot(d_next));
        if (std::f64::consts::PI - turn.abs()) < 1e-12 {
            return Err(Error::InvalidFault(format!(
                "segments around vertex {k} fold back on themselves"
            )));
        }
        if turn.abs() <= COLLINEAR_TOL {
            continue;
        }
        // Interior angle on the enclosed side, and the edge assignment:
        // traversing the enclosure counterclockwise, the outgoing segment is
        // the minus edge of the sector and the incoming one the plus edge.
        let (opening, ray_min, seg_plus, seg_minus) = if ccw {
            (std::f64::consts::PI - turn, d_next, (k + nv - 1) % nv, k)
        } else {
            (std::f64::consts::PI + turn, -d_prev, k, (k + nv - 1) % nv)
        };
        let frame_angle = ray_min.angle();
        if !(opening > 0.0 && opening < 2.0 * std::f64::consts::PI) {
            return Err(Error::InvalidFault(format!(
                "degenerate opening angle {opening} at vertex {k}"
            )));
        }
        corners.push(Corner {
            position: here,
            vertex_index: k,
            seg_plus,
            seg_minus,
            opening,
            frame_angle,
            layer: domain.layer_of(here),
        });
    }
    Ok(corners)
}

/// Verdict of the corner data admissibility test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CornerVerdict {
    /// One-sided displacement jumps differ at the corner.
    DistinctDisplacement,
    /// Displacement jumps agree with vanishing tangential derivatives and
    /// the traction jumps violate the corner reflection relation.
    DistinctTractionPattern,
    Inadmissible(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerAdmissibility {
    pub vertex_index: usize,
    pub verdict: CornerVerdict,
}

/// One-sided values of the jump polynomials at a corner, as functions of the
/// distance `r` from the corner along each sector edge.
pub struct CornerTrace<'a> {
    fault: &'a Fault,
    jumps: &'a JumpData,
    corner: &'a Corner,
}

impl<'a> CornerTrace<'a> {
    pub fn new(fault: &'a Fault, jumps: &'a JumpData, corner: &'a Corner) -> Self {
        CornerTrace { fault, jumps, corner }
    }

    fn seg_param(&self, seg: usize, r: f64) -> f64 {
        // The corner sits at the start of its minus segment and at the end
        // of its plus segment.
        if seg == self.corner.seg_minus {
            r
        } else {
            self.fault.segment_length(seg) - r
        }
    }

    pub fn f_plus(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_plus;
        self.jumps.segments[seg].f_at(self.seg_param(seg, r))
    }

    pub fn f_minus(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_minus;
        self.jumps.segments[seg].f_at(self.seg_param(seg, r))
    }

    pub fn g_plus(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_plus;
        self.jumps.segments[seg].g_at(self.seg_param(seg, r))
    }

    pub fn g_minus(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_minus;
        self.jumps.segments[seg].g_at(self.seg_param(seg, r))
    }

    /// Derivative of the plus-edge displacement jump in the distance from
    /// the corner.
    pub fn f_plus_prime(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_plus;
        -self.jumps.segments[seg].f_prime_at(self.seg_param(seg, r))
    }

    pub fn f_minus_prime(&self, r: f64) -> Vec2 {
        let seg = self.corner.seg_minus;
        self.jumps.segments[seg].f_prime_at(self.seg_param(seg, r))
    }
}

/// Tests the jump data against the two corner assumptions at every corner.
pub fn check_admissibility(
    fault: &Fault,
    jumps: &JumpData,
    domain: &LayeredDomain,
) -> Result<Vec<CornerAdmissibility>> {
    jumps.validate(fault)?;
    let corners = detect_corners(fault, domain)?;
    let mut scale = 0.0f64;
    for seg in &jumps.segments {
        for p in seg.f.iter().chain(seg.g.iter()) {
            for c in p {
                scale = scale.max(c.abs());
            }
        }
    }
    let tol = ADMISSIBILITY_TOL * scale.max(1.0);

    let mut out = Vec::new();
    for corner in &corners {
        let trace = CornerTrace::new(fault, jumps, corner);
        let df = trace.f_plus(0.0) - trace.f_minus(0.0);
        let verdict = if df.norm() > tol {
            CornerVerdict::DistinctDisplacement
        } else {
            let grad_p = trace.f_plus_prime(0.0);
            let grad_m = trace.f_minus_prime(0.0);
            if grad_p.norm() > tol || grad_m.norm() > tol {
                CornerVerdict::Inadmissible(format!(
                    "equal displacement jumps at vertex {} but nonvanishing tangential derivative",
                    corner.vertex_index
                ))
            } else {
                let theta = theta_matrix(corner.opening);
                let resid = trace.g_plus(0.0) - theta.mul_vec(trace.g_minus(0.0));
                if resid.norm() > tol {
                    CornerVerdict::DistinctTractionPattern
                } else {
                    CornerVerdict::Inadmissible(format!(
                        "jump data at vertex {} is invisible to the corner probe",
                        corner.vertex_index
                    ))
                }
            }
        };
        out.push(CornerAdmissibility {
            vertex_index: corner.vertex_index,
            verdict,
        });
    }
    Ok(out)
}

/// Result of the weighted endpoint-degeneracy check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum WeightedNorm {
    Finite { value: f64, last_increment: f64 },
    Divergent { partial: f64, increment_ratio: f64 },
}

/// Weighted squared norm `int |f|^2 / rho ds` over the fault, with
/// `rho = min(arc distance to the fault tips, L/4)`. Detects via dyadic
/// endpoint refinement whether the integral converges; constant jumps up to
/// an open tip diverge logarithmically and are flagged.
pub fn weighted_jump_norm(fault: &Fault, jumps: &JumpData) -> Result<WeightedNorm> {
    jumps.validate(fault)?;
    let total = fault.total_length();
    let cap = total / 4.0;

    let f_sq = |seg: usize, s: f64| -> f64 {
        let f = jumps.segments[seg].f_at(s);
        f.norm_sq()
    };

    if fault.closed {
        let mut value = 0.0;
        for seg in 0..fault.n_segments() {
            let len = fault.segment_length(seg);
            let r = adaptive_gk_real(|s| f_sq(seg, s) / cap, 0.0, len, QUAD_ABS_TOL, QUAD_REL_TOL);
            value += r.value.re;
        }
        return Ok(WeightedNorm::Finite { value, last_increment: 0.0 });
    }

    // Open fault: integrate over the fault minus shrinking tip
    // neighborhoods and watch the increments.
    let weight = |seg: usize, s: f64| -> f64 {
        let rho = fault.arc_distance_to_tip(seg, s).unwrap().min(cap);
        f_sq(seg, s) / rho
    };
    let integrate_outside = |eps: f64| -> f64 {
        let mut acc = 0.0;
        let mut offset = 0.0;
        for seg in 0..fault.n_segments() {
            let len = fault.segment_length(seg);
            // Clip this segment against the tip neighborhoods
            // [0, eps] and [total - eps, total] in global arc length.
            let lo = (eps - offset).clamp(0.0, len);
            let hi = ((total - eps) - offset).clamp(0.0, len);
            if hi > lo {
                let r = adaptive_gk_real(|s| weight(seg, s), lo, hi, QUAD_ABS_TOL, QUAD_REL_TOL);
                acc += r.value.re;
            }
            offset += len;
        }
        acc
    };

    let eps0 = total / 8.0;
    let levels = 30;
    let mut prev = integrate_outside(eps0);
    let mut increments = Vec::new();
    let mut value = prev;
    for k in 1..=levels {
        let eps = eps0 * 0.5f64.powi(k);
        let cur = integrate_outside(eps);
        increments.push(cur - prev);
        value = cur;
        prev = cur;
        let m = increments.len();
        if m >= 3 {
            let tail = &increments[m - 3..];
            let floor = 1e-13 * value.abs().max(1.0);
            if tail.iter().all(|&d| d.abs() < floor) {
                return Ok(WeightedNorm::Finite { value, last_increment: tail[2].abs() });
            }
            let r1 = tail[1] / tail[0];
            let r2 = tail[2] / tail[1];
            if tail[0].abs() > floor && r1 > 0.9 && r2 > 0.9 {
                return Ok(WeightedNorm::Divergent {
                    partial: value,
                    increment_ratio: 0.5 * (r1 + r2),
                });
            }
            if r1 < 0.9 && r2 < 0.9 && tail[2].abs() < 1e-11 * value.abs().max(1.0) {
                // Geometric tail: fold in its estimated sum.
                let q = r2.clamp(0.0, 0.89);
                return Ok(WeightedNorm::Finite {
                    value: value + tail[2] * q / (1.0 - q),
                    last_increment: tail[2].abs(),
                });
            }
        }
    }
    Ok(WeightedNorm::Finite { value, last_increment: increments.last().map(|d| d.abs()).unwrap_or(0.0) })
}

// ---------------------------------------------------------------------------
// Planar predicates shared with the mesher.

pub fn polygon_signed_area(pts: &[Vec2]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = pts[i];
        let q = pts[(i + 1) % n];
        a += p.cross(q);
    }
    0.5 * a
}

pub fn point_in_polygon(p: Vec2, pts: &[Vec2]) -> bool {
    let n = pts.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = pts[i];
        let b = pts[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Proper or touching intersection test for closed segments.
pub fn segments_intersect(a: Vec2, b: Vec2, c_: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c_ - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c_).cross(a - c_);
    let d4 = (d - c_).cross(b - c_);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| -> bool {
        (q - p).cross(r - p) == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c_) || on(a, b, d) || on(c_, d, a) || on(c_, d, b)
}

pub fn polygon_is_simple(pts: &[Vec2]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 1..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c_, d) = (pts[j], pts[(j + 1) % n]);
            if segments_intersect(a, b, c_, d) {
                return false;
            }
        }
    }
    true
}

pub fn polyline_min_distance(a: &[Vec2], b: &[Vec2]) -> f64 {
    let mut best = f64::INFINITY;
    for sa in a.windows(2) {
        for sb in b.windows(2) {
            if segments_intersect(sa[0], sa[1], sb[0], sb[1]) {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(sa[0], sb[0], sb[1]))
                .min(point_segment_distance(sa[1], sb[0], sb[1]))
                .min(point_segment_distance(sb[0], sa[0], sa[1]))
                .min(point_segment_distance(sb[1], sa[0], sa[1]));
        }
    }
    best
}

/// Unit square domain with one layer, clamped bottom edge, measurement on
/// the top edge. A convenient default for tests and experiments.
pub fn unit_square_domain(lame: LameParameters) -> LayeredDomain {
    LayeredDomain {
        outer: vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ],
        interfaces: vec![],
        layer_params: vec![lame],
        dirichlet_edges: vec![0],
        traction_free_edges: vec![1, 2, 3],
        measurement_edges: vec![2],
    }
}

/// Two-layer unit square split by a flat interface at the given height.
pub fn two_layer_domain(lower: LameParameters, upper: LameParameters, height: f64) -> LayeredDomain {
    LayeredDomain {
        outer: vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ],
        interfaces: vec![vec![Vec2::new(0.0, height), Vec2::new(1.0, height)]],
        layer_params: vec![lower, upper],
        dirichlet_edges: vec![0],
        traction_free_edges: vec![1, 2, 3],
        measurement_edges: vec![2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn square_fault() -> Fault {
        Fault::closed(vec![
            Vec2::new(0.35, 0.35),
            Vec2::new(0.65, 0.35),
            Vec2::new(0.65, 0.65),
            Vec2::new(0.35, 0.65),
        ])
    }

    fn domain() -> LayeredDomain {
        unit_square_domain(LameParameters::new(1.0, 1.0))
    }

    #[test]
    fn lame_validation() {
        assert!(validate_lame(LameParameters::new(1.0, 1.0), 2).is_ok());
        assert!(validate_lame(LameParameters::new(0.5, -0.1), 2).is_err());
        // lambda may be negative as long as 2 mu + n lambda stays positive.
        assert!(validate_lame(LameParameters::new(-0.9, 1.0), 2).is_ok());
        assert!(validate_lame(LameParameters::new(-1.1, 1.0), 2).is_err());
        assert!(validate_lame(LameParameters::new(-0.9, 1.0), 3).is_err());
    }

    #[test]
    fn theta_matrix_pinned_values() {
        let t = theta_matrix(FRAC_PI_2);
        assert!((t.m[0][0] - 0.0).abs() < 1e-15);
        assert!((t.m[0][1] - -1.0).abs() < 1e-15);
        assert!((t.m[1][0] - -1.0).abs() < 1e-15);
        assert!((t.m[1][1] - 0.0).abs() < 1e-15);
        let v = t.mul_vec(Vec2::new(1.0, 0.0));
        assert!((v - Vec2::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn theta_matrix_invariants_over_grid() {
        for k in 1..1000 {
            let theta = PI * k as f64 / 1000.0;
            let t = theta_matrix(theta);
            assert!((t.det() + 1.0).abs() < 1e-12);
            assert!((t.m[0][1] - t.m[1][0]).abs() < 1e-15);
            let sq = t.mul_mat(t);
            assert!((sq.m[0][0] - 1.0).abs() < 1e-12);
            assert!(sq.m[0][1].abs() < 1e-12);
            assert!((sq.m[1][1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transport_agrees_with_theta_on_first_axis() {
        for k in 1..100 {
            let theta = PI * k as f64 / 100.0;
            let v = Vec2::new(1.7, 0.0);
            let a = theta_matrix(theta).mul_vec(v);
            let b = transport_matrix(theta).mul_vec(v);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn transport_straight_line_limit() {
        // A flat "corner" transports tractions unchanged.
        let t = transport_matrix(PI);
        assert!((t.m[0][0] - 1.0).abs() < 1e-12);
        assert!((t.m[1][1] - 1.0).abs() < 1e-12);
        assert!(t.m[0][1].abs() < 1e-12 && t.m[1][0].abs() < 1e-12);
    }

    #[test]
    fn corners_of_a_ccw_square() {
        let corners = detect_corners(&square_fault(), &domain()).unwrap();
        assert_eq!(corners.len(), 4);
        for c in &corners {
            assert!((c.opening - FRAC_PI_2).abs() < 1e-12);
        }
        // At vertex 1 = (0.65, 0.35): interior sector spans from the
        // outgoing direction (up) to the reversed incoming direction (left).
        let c1 = corners.iter().find(|c| c.vertex_index == 1).unwrap();
        assert!((c1.frame_angle - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(c1.seg_minus, 1);
        assert_eq!(c1.seg_plus, 0);
    }

    #[test]
    fn corner_angles_invariant_under_rigid_motion() {
        let fault = Fault::open(vec![
            Vec2::new(0.3, 0.4),
            Vec2::new(0.5, 0.5),
            Vec2::new(0.7, 0.42),
        ]);
        let base = detect_corners(&fault, &domain()).unwrap();
        let moved = fault.transformed(0.6, Vec2::new(0.05, -0.1));
        let got = detect_corners(&moved, &domain()).unwrap();
        assert_eq!(base.len(), got.len());
        for (a, b) in base.iter().zip(&got) {
            assert!((a.opening - b.opening).abs() < 1e-10);
            let expect_frame = a.frame_angle + 0.6;
            let diff = (b.frame_angle - expect_frame).rem_euclid(2.0 * PI);
            assert!(diff < 1e-10 || (2.0 * PI - diff) < 1e-10);
        }
    }

    #[test]
    fn collinear_vertices_are_not_corners() {
        let fault = Fault::open(vec![
            Vec2::new(0.2, 0.5),
            Vec2::new(0.5, 0.5),
            Vec2::new(0.8, 0.5),
        ]);
        let corners = detect_corners(&fault, &domain()).unwrap();
        assert!(corners.is_empty());
    }

    #[test]
    fn admissibility_distinct_constants() {
        let fault = square_fault();
        let mut jumps = JumpData::constant(&fault, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0));
        jumps.segments[1] = SegmentJump::constant(Vec2::new(0.0, 1.0), Vec2::new(0.0, 0.0));
        jumps.segments[3] = SegmentJump::constant(Vec2::new(0.3, 0.7), Vec2::new(0.0, 0.0));
        let report = check_admissibility(&fault, &jumps, &domain()).unwrap();
        assert!(report
            .iter()
            .all(|r| r.verdict == CornerVerdict::DistinctDisplacement));
    }

    #[test]
    fn admissibility_traction_pattern() {
        // Equal constant f on both segments, so the corner falls back to the
        // traction test: g_plus = Theta g_minus is invisible, anything else
        // passes.
        let fault = Fault::open(vec![
            Vec2::new(0.3, 0.3),
            Vec2::new(0.5, 0.5),
            Vec2::new(0.7, 0.3),
        ]);
        let f = Vec2::new(1.0, 2.0);
        let corners = detect_corners(&fault, &domain()).unwrap();
        let corner = &corners[0];
        let g_minus = Vec2::new(1.0, 0.0);
        let g_reflected = theta_matrix(corner.opening).mul_vec(g_minus);

        let mut jumps = JumpData::constant(&fault, f, Vec2::new(0.0, 0.0));
        jumps.segments[corner.seg_minus] = SegmentJump::constant(f, g_minus);
        jumps.segments[corner.seg_plus] = SegmentJump::constant(f, g_reflected);
        let report = check_admissibility(&fault, &jumps, &domain()).unwrap();
        assert!(matches!(report[0].verdict, CornerVerdict::Inadmissible(_)));

        jumps.segments[corner.seg_plus] = SegmentJump::constant(f, g_minus);
        let report = check_admissibility(&fault, &jumps, &domain()).unwrap();
        assert_eq!(report[0].verdict, CornerVerdict::DistinctTractionPattern);
    }

    #[test]
    fn admissibility_symmetric_under_orientation_flip() {
        let fault = Fault::open(vec![
            Vec2::new(0.3, 0.3),
            Vec2::new(0.5, 0.5),
            Vec2::new(0.7, 0.3),
        ]);
        let mut rev = fault.clone();
        rev.vertices.reverse();
        let mut jumps = JumpData::constant(&fault, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0));
        jumps.segments[1] = SegmentJump::constant(Vec2::new(0.0, 1.0), Vec2::new(0.0, 0.0));
        let mut jumps_rev = jumps.clone();
        jumps_rev.segments.reverse();
        let a = check_admissibility(&fault, &jumps, &domain()).unwrap();
        let b = check_admissibility(&rev, &jumps_rev, &domain()).unwrap();
        assert_eq!(a[0].verdict, b[0].verdict);
    }

    #[test]
    fn weighted_norm_zero_jump() {
        let fault = Fault::open(vec![Vec2::new(0.2, 0.5), Vec2::new(0.8, 0.5)]);
        let jumps = JumpData::constant(&fault, Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0));
        match weighted_jump_norm(&fault, &jumps).unwrap() {
            WeightedNorm::Finite { value, .. } => assert!(value.abs() < 1e-14),
            _ => panic!("zero jump must have zero norm"),
        }
    }

    #[test]
    fn weighted_norm_constant_jump_diverges() {
        let fault = Fault::open(vec![Vec2::new(0.2, 0.5), Vec2::new(0.8, 0.5)]);
        let jumps = JumpData::constant(&fault, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0));
        match weighted_jump_norm(&fault, &jumps).unwrap() {
            WeightedNorm::Divergent { increment_ratio, .. } => {
                assert!(increment_ratio > 0.9);
            }
            WeightedNorm::Finite { value, .. } => {
                panic!("constant jump to the tip must be flagged, got {value}")
            }
        }
    }

    #[test]
    fn weighted_norm_linear_vanish_matches_oracle() {
        // Unit-length fault on [0,1], f = (s(1-s), 0): the weighted integral
        // has an integrable weight and a finite value, cross-checked against
        // a direct adaptive quadrature with the same weight.
        let fault = Fault::open(vec![Vec2::new(0.0, 0.5), Vec2::new(1.0, 0.5)]);
        let jumps = JumpData {
            segments: vec![SegmentJump {
                f: [[0.0, 1.0, -1.0, 0.0], [0.0; 4]],
                g: [[0.0; 4], [0.0; 4]],
            }],
        };
        let value = match weighted_jump_norm(&fault, &jumps).unwrap() {
            WeightedNorm::Finite { value, .. } => value,
            _ => panic!("expected finite norm"),
        };
        let direct = adaptive_gk_real(
            |s: f64| {
                let f = s * (1.0 - s);
                let rho = s.min(1.0 - s).min(0.25);
                f * f / rho
            },
            0.0,
            1.0,
            1e-13,
            1e-11,
        );
        assert!(
            (value - direct.value.re).abs() < 1e-7,
            "norm {value} vs oracle {}",
            direct.value.re
        );
    }

    #[test]
    fn weighted_norm_model_half_case() {
        // The 1D model integral int_0^1 t^2 / t dt = 1/2 that calibrates the
        // endpoint treatment.
        let direct = adaptive_gk_real(|t: f64| t * t / t, 0.0, 1.0, 1e-14, 1e-12);
        assert!((direct.value.re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn closed_fault_weighted_norm_is_plain() {
        let fault = square_fault();
        let jumps = JumpData::constant(&fault, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0));
        match weighted_jump_norm(&fault, &jumps).unwrap() {
            WeightedNorm::Finite { value, .. } => {
                // |f|^2 = 1, rho = L/4 = 0.3, length 1.2 -> 1.2/0.3 = 4.
                assert!((value - 4.0).abs() < 1e-10, "value {value}");
            }
            _ => panic!("closed fault has no tips"),
        }
    }

    #[test]
    fn partition_validation_catches_crossing_interfaces() {
        let mut dom = two_layer_domain(
            LameParameters::new(1.0, 1.0),
            LameParameters::new(2.0, 1.5),
            0.5,
        );
        dom.interfaces.push(vec![Vec2::new(0.0, 0.4), Vec2::new(1.0, 0.6)]);
        dom.layer_params.push(LameParameters::new(3.0, 2.0));
        let err = dom.validate().unwrap_err();
        match err {
            Error::PartitionViolation { layer_a, layer_b, .. } => {
                assert_eq!((layer_a, layer_b), (0, 2));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn partition_validation_catches_touching_interfaces() {
        let mut dom = two_layer_domain(
            LameParameters::new(1.0, 1.0),
            LameParameters::new(2.0, 1.5),
            0.4,
        );
        // Second interface touches the first at x = 0.
        dom.interfaces.push(vec![Vec2::new(0.0, 0.4), Vec2::new(1.0, 0.7)]);
        dom.layer_params.push(LameParameters::new(3.0, 2.0));
        assert!(dom.validate().is_err());
    }

    #[test]
    fn partition_validation_identical_adjacent_layers() {
        let dom = two_layer_domain(
            LameParameters::new(1.0, 1.0),
            LameParameters::new(1.0, 1.0),
            0.5,
        );
        assert!(dom.validate().is_err());
    }

    #[test]
    fn layer_lookup() {
        let dom = two_layer_domain(
            LameParameters::new(1.0, 1.0),
            LameParameters::new(2.0, 1.5),
            0.5,
        );
        assert_eq!(dom.layer_of(Vec2::new(0.5, 0.2)), 0);
        assert_eq!(dom.layer_of(Vec2::new(0.5, 0.8)), 1);
    }

    #[test]
    fn default_domains_validate() {
        assert!(domain().validate().is_ok());
        assert!(two_layer_domain(
            LameParameters::new(1.0, 1.0),
            LameParameters::new(2.0, 1.5),
            0.5
        )
        .validate()
        .is_ok());
    }

    #[test]
    fn probe_direction_separates() {
        let corners = detect_corners(&square_fault(), &domain()).unwrap();
        for c in &corners {
            let d = c.probe_direction();
            // Negative separation over the whole sector.
            for k in 0..=20 {
                let t = c.frame_angle + c.opening * k as f64 / 20.0;
                assert!(d.dot(Vec2::from_angle(t)) < 0.0);
            }
        }
    }
}
