//! Fault and interface conforming triangulation.
//!
//! The mesh is built in three stages. First the outer boundary, the layer
//! interfaces and the fault are broken into a segment soup, split at
//! mutual intersections and at the nominal size. Second an incremental
//! Delaunay triangulation absorbs the points; recovery splits keep every
//! constraint piece a mesh edge and circumcenter insertion drives out
//! badly shaped or oversized triangles. Third, triangles outside the
//! domain are dropped, layer tags are assigned, and the nodes along the
//! fault are duplicated so the two sides carry independent unknowns.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, Fault, LayeredDomain};
use crate::la::Vec2;

/// Minimum triangle angle the generator refines toward, in degrees.
pub const MIN_ANGLE_DEG: f64 = 20.0;

/// Triangles whose circumradius exceeds this multiple of the local size
/// target are split.
const SIZE_RADIUS_FACTOR: f64 = 0.75;

const MAX_INSERTIONS: usize = 200_000;

/// Which part of the problem boundary a mesh edge discretizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundaryKind {
    Clamped,
    Free,
    Measurement,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub kind: BoundaryKind,
    /// Outer polygon edge this piece came from.
    pub outer_index: usize,
}

/// One mesh edge lying on the fault, with the duplicated node pairs of
/// its endpoints. Plus-side indices equal minus-side indices exactly at
/// the undulplicated tips of an open fault.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FaultEdge {
    /// Fault segment this edge lies on.
    pub segment: usize,
    /// Endpoint nodes used by plus-side triangles, ordered along the
    /// segment direction.
    pub plus: [usize; 2],
    /// Endpoint nodes used by minus-side triangles.
    pub minus: [usize; 2],
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InterfaceEdge {
    pub interface: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Triangle {
    pub v: [usize; 3],
    pub layer: usize,
}

/// Fault-conforming triangulation of a layered domain. The plus side of
/// the fault is the side its outward segment normals point to; original
/// fault nodes serve that side and the duplicated copies the other.
#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub nodes: Vec<Vec2>,
    pub triangles: Vec<Triangle>,
    pub fault_edges: Vec<FaultEdge>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub interface_edges: Vec<InterfaceEdge>,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeshOptions {
    /// Grade element sizes geometrically toward fault corners.
    pub grade_fault_corners: bool,
}

impl Mesh {
    /// Distinct (plus, minus) node index pairs created by duplication.
    pub fn duplicated_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for fe in &self.fault_edges {
            for k in 0..2 {
                if fe.plus[k] != fe.minus[k] {
                    pairs.push((fe.plus[k], fe.minus[k]));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Smallest triangle angle in degrees.
    pub fn min_angle_deg(&self) -> f64 {
        let mut worst = 180.0f64;
        for t in &self.triangles {
            let [a, b, c] = t.v.map(|i| self.nodes[i]);
            for ang in triangle_angles(a, b, c) {
                worst = worst.min(ang.to_degrees());
            }
        }
        worst
    }

    /// Plain text export: node count and coordinates, triangle count and
    /// connectivity with layer tags, fault pair table. Ordering follows
    /// construction order, so equal meshes print identically.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(out, "{} {}", p.x, p.y);
        }
        let _ = writeln!(out, "{}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {} {}", t.v[0], t.v[1], t.v[2], t.layer);
        }
        let _ = writeln!(out, "{}", self.fault_edges.len());
        for fe in &self.fault_edges {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                fe.segment, fe.plus[0], fe.plus[1], fe.minus[0], fe.minus[1]
            );
        }
        out
    }
}

fn triangle_angles(a: Vec2, b: Vec2, c: Vec2) -> [f64; 3] {
    let ang = |p: Vec2, q: Vec2, r: Vec2| {
        let u = q - p;
        let v = r - p;
        let cosv = (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
        cosv.acos()
    };
    [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn circumcenter(a: Vec2, b: Vec2, c: Vec2) -> Option<Vec2> {
    let d = 2.0 * orient(a, b, c);
    if d.abs() < 1e-300 {
        return None;
    }
    let a2 = a.norm_sq();
    let b2 = b.norm_sq();
    let c2 = c.norm_sq();
    let ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    let uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    let cc = Vec2::new(ux, uy);
    if cc.x.is_finite() && cc.y.is_finite() {
        Some(cc)
    } else {
        None
    }
}

// Positive when d lies inside the circumcircle of the ccw triangle
// (a, b, c). Coordinates are translated by d first, which keeps the
// determinant well conditioned near the query point.
fn in_circle(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let ax = a.x - d.x;
    let ay = a.y - d.y;
    let bx = b.x - d.x;
    let by = b.y - d.y;
    let cx = c.x - d.x;
    let cy = c.y - d.y;
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx) > 0.0
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
struct DTri {
    v: [usize; 3],
    alive: bool,
}

struct Delaunay {
    pts: Vec<Vec2>,
    tris: Vec<DTri>,
    edges: HashMap<(usize, usize), Vec<usize>>,
    last_created: usize,
    orient_eps: f64,
}

impl Delaunay {
    fn new(all_points: &[Vec2]) -> Delaunay {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in all_points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let c = (lo + hi) * 0.5;
        let ext = (hi - lo).norm().max(1.0);
        let r = 50.0 * ext;
        let pts = vec![
            Vec2::new(c.x - 1.8 * r, c.y - r),
            Vec2::new(c.x + 1.8 * r, c.y - r),
            Vec2::new(c.x, c.y + 1.8 * r),
        ];
        let mut dt = Delaunay {
            pts,
            tris: Vec::new(),
            edges: HashMap::new(),
            last_created: 0,
            orient_eps: 1e-12 * r * r,
        };
        dt.create(0, 1, 2);
        dt
    }

    fn create(&mut self, a: usize, b: usize, c: usize) -> usize {
        let idx = self.tris.len();
        let (a, b, c) = if orient(self.pts[a], self.pts[b], self.pts[c]) > 0.0 {
            (a, b, c)
        } else {
            (a, c, b)
        };
        self.tris.push(DTri { v: [a, b, c], alive: true });
        for (p, q) in [(a, b), (b, c), (c, a)] {
            self.edges.entry(edge_key(p, q)).or_default().push(idx);
        }
        self.last_created = idx;
        idx
    }

    fn kill(&mut self, t: usize) {
        let v = self.tris[t].v;
        self.tris[t].alive = false;
        for (p, q) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
            if let Some(list) = self.edges.get_mut(&edge_key(p, q)) {
                list.retain(|&x| x != t);
                if list.is_empty() {
                    self.edges.remove(&edge_key(p, q));
                }
            }
        }
    }

    fn neighbor_across(&self, t: usize, a: usize, b: usize) -> Option<usize> {
        self.edges
            .get(&edge_key(a, b))?
            .iter()
            .copied()
            .find(|&x| x != t && self.tris[x].alive)
    }

    fn is_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&edge_key(a, b))
    }

    fn contains(&self, t: usize, p: Vec2) -> bool {
        let [a, b, c] = self.tris[t].v.map(|i| self.pts[i]);
        orient(a, b, p) >= -self.orient_eps
            && orient(b, c, p) >= -self.orient_eps
            && orient(c, a, p) >= -self.orient_eps
    }

    fn locate(&self, p: Vec2) -> Option<usize> {
        let mut cur = self.last_created;
        if !self.tris.get(cur).map_or(false, |t| t.alive) {
            cur = self.tris.iter().rposition(|t| t.alive)?;
        }
        for _ in 0..4 * self.tris.len().max(16) {
            let v = self.tris[cur].v;
            let mut worst = (0.0, None);
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let o = orient(self.pts[a], self.pts[b], p);
                if o < worst.0 {
                    worst = (o, Some((a, b)));
                }
            }
            match worst.1 {
                None => return Some(cur),
                Some((a, b)) => match self.neighbor_across(cur, a, b) {
                    Some(n) => cur = n,
                    None => break,
                },
            }
        }
        // Walk got stuck on a degenerate configuration; scan instead.
        (0..self.tris.len()).rev().find(|&t| self.tris[t].alive && self.contains(t, p))
    }

    /// Inserts a point, returning its node index. A point coinciding
    /// with an existing node of the containing triangle returns that
    /// node unchanged.
    fn insert(&mut self, p: Vec2, snap_tol: f64) -> Result<usize> {
        let start = self
            .locate(p)
            .ok_or_else(|| Error::Mesh("point location failed".into()))?;
        for &vi in &self.tris[start].v {
            if self.pts[vi].dist(p) < snap_tol {
                return Ok(vi);
            }
        }
        // Cavity of triangles whose circumcircle contains p.
        let mut cavity = vec![start];
        let mut seen: HashSet<usize> = cavity.iter().copied().collect();
        let mut queue = vec![start];
        while let Some(t) = queue.pop() {
            let v = self.tris[t].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                if let Some(n) = self.neighbor_across(t, a, b) {
                    if !seen.contains(&n) {
                        let w = self.tris[n].v;
                        if in_circle(self.pts[w[0]], self.pts[w[1]], self.pts[w[2]], p) {
                            seen.insert(n);
                            cavity.push(n);
                            queue.push(n);
                        }
                    }
                }
            }
        }
        // Directed boundary edges of the cavity.
        let mut boundary = Vec::new();
        for &t in &cavity {
            let v = self.tris[t].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                match self.neighbor_across(t, a, b) {
                    Some(n) if seen.contains(&n) => {}
                    _ => boundary.push((a, b)),
                }
            }
        }
        for &t in &cavity {
            self.kill(t);
        }
        let pi = self.pts.len();
        self.pts.push(p);
        for (a, b) in boundary {
            self.create(pi, a, b);
        }
        Ok(pi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConstraintKind {
    Outer { edge: usize },
    Interface { index: usize },
    FaultSeg { segment: usize },
}

#[derive(Debug, Clone, Copy)]
struct MasterSeg {
    a: Vec2,
    b: Vec2,
    kind: ConstraintKind,
}

struct PointPool {
    pts: Vec<Vec2>,
    tol: f64,
}

impl PointPool {
    fn add(&mut self, p: Vec2) -> usize {
        for (i, q) in self.pts.iter().enumerate() {
            if q.dist(p) < self.tol {
                return i;
            }
        }
        self.pts.push(p);
        self.pts.len() - 1
    }
}

struct Pslg {
    points: Vec<Vec2>,
    /// (pool point a, pool point b, master index)
    subs: Vec<(usize, usize, usize)>,
    masters: Vec<MasterSeg>,
    /// Pool points where two constraints meet at an acute angle,
    /// with the opening in radians.
    sharp_corners: Vec<(usize, f64)>,
}

fn project_param(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    (p - a).dot(b - a) / (b - a).norm_sq()
}

fn segment_point(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    a + (b - a) * t
}

fn build_pslg(domain: &LayeredDomain, fault: &Fault, h: f64) -> Result<Pslg> {
    let diam = domain.diameter();
    let tol = 1e-9 * diam;

    let mut masters = Vec::new();
    for e in 0..domain.outer.len() {
        let (a, b) = domain.outer_edge(e);
        masters.push(MasterSeg { a, b, kind: ConstraintKind::Outer { edge: e } });
    }
    for (k, itf) in domain.interfaces.iter().enumerate() {
        let mut pts = itf.clone();
        // Interface endpoints sit on the outer boundary up to the
        // validation tolerance; snap them onto it exactly.
        for idx in [0, pts.len() - 1] {
            let p = pts[idx];
            let mut best = (f64::INFINITY, p);
            for e in 0..domain.outer.len() {
                let (a, b) = domain.outer_edge(e);
                let t = project_param(p, a, b).clamp(0.0, 1.0);
                let q = segment_point(a, b, t);
                if q.dist(p) < best.0 {
                    best = (q.dist(p), q);
                }
            }
            pts[idx] = best.1;
        }
        for w in pts.windows(2) {
            masters.push(MasterSeg { a: w[0], b: w[1], kind: ConstraintKind::Interface { index: k } });
        }
    }
    for s in 0..fault.n_segments() {
        let (a, b) = fault.segment(s);
        masters.push(MasterSeg { a, b, kind: ConstraintKind::FaultSeg { segment: s } });
    }

    let mut pool = PointPool { pts: Vec::new(), tol };
    let endpoint_ids: Vec<(usize, usize)> = masters
        .iter()
        .map(|m| (pool.add(m.a), pool.add(m.b)))
        .collect();

    // Cut parameters per master: endpoints of other constraints lying on
    // it and proper crossings.
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); masters.len()];
    for (i, m) in masters.iter().enumerate() {
        let len = m.a.dist(m.b);
        for (j, q) in pool.pts.iter().enumerate() {
            if j == endpoint_ids[i].0 || j == endpoint_ids[i].1 {
                continue;
            }
            let t = project_param(*q, m.a, m.b);
            if t > tol / len && t < 1.0 - tol / len && segment_point(m.a, m.b, t).dist(*q) < tol {
                cuts[i].push(t);
            }
        }
    }
    for i in 0..masters.len() {
        for j in i + 1..masters.len() {
            let (p, r) = (masters[i].a, masters[i].b - masters[i].a);
            let (q, s) = (masters[j].a, masters[j].b - masters[j].a);
            let denom = r.cross(s);
            if denom.abs() < 1e-14 * r.norm() * s.norm() {
                continue;
            }
            let t = (q - p).cross(s) / denom;
            let u = (q - p).cross(r) / denom;
            let rt = tol / r.norm();
            let ru = tol / s.norm();
            if t > rt && t < 1.0 - rt && u > ru && u < 1.0 - ru {
                let x = segment_point(p, masters[i].b, t);
                pool.add(x);
                cuts[i].push(t);
                cuts[j].push(u);
            }
        }
    }

    // Emit subsegments, splitting at cuts and then at the nominal size.
    let mut subs = Vec::new();
    for (i, m) in masters.iter().enumerate() {
        let mut ts = cuts[i].clone();
        ts.push(0.0);
        ts.push(1.0);
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let len = m.a.dist(m.b);
        ts.dedup_by(|a, b| (*a - *b).abs() * len < tol);
        for w in ts.windows(2) {
            let pa = segment_point(m.a, m.b, w[0]);
            let pb = segment_point(m.a, m.b, w[1]);
            let piece = pa.dist(pb);
            if piece < 1e-6 * diam {
                return Err(Error::GeometryTooFine(format!(
                    "constraint piece of length {piece:.3e} is below 1e-6 of the domain diameter {diam:.3e}"
                )));
            }
            let n = (piece / h).ceil().max(1.0) as usize;
            let mut prev = pool.add(pa);
            for k in 1..=n {
                let t = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
                let p = if k == n { pb } else { segment_point(m.a, m.b, t) };
                let cur = pool.add(p);
                subs.push((prev, cur, i));
                prev = cur;
            }
        }
    }

    // Constraint pairs meeting at an acute angle need shell splitting to
    // stop encroachment ping-pong.
    let mut sharp = Vec::new();
    for v in 0..pool.pts.len() {
        let mut dirs: Vec<Vec2> = Vec::new();
        for (i, m) in masters.iter().enumerate() {
            if endpoint_ids[i].0 == v {
                dirs.push((m.b - m.a).normalized());
            }
            if endpoint_ids[i].1 == v {
                dirs.push((m.a - m.b).normalized());
            }
        }
        let mut worst = f64::INFINITY;
        for a in 0..dirs.len() {
            for b in a + 1..dirs.len() {
                let ang = dirs[a].dot(dirs[b]).clamp(-1.0, 1.0).acos();
                worst = worst.min(ang);
            }
        }
        if worst < 60.0f64.to_radians() {
            sharp.push((v, worst));
        }
    }

    Ok(Pslg { points: pool.pts, subs, masters, sharp_corners: sharp })
}

struct SubSeg {
    a: usize,
    b: usize,
    master: usize,
}

struct Builder<'a> {
    dt: Delaunay,
    subs: Vec<SubSeg>,
    masters: Vec<MasterSeg>,
    domain: &'a LayeredDomain,
    h: f64,
    snap_tol: f64,
    /// Node indices of sharp input corners (shell centers).
    shell_centers: HashSet<usize>,
    grading_centers: Vec<Vec2>,
    inserted: usize,
}

impl<'a> Builder<'a> {
    fn size_at(&self, p: Vec2) -> f64 {
        let mut s = self.h;
        for c in &self.grading_centers {
            let d = c.dist(p);
            let local = if d < self.h {
                self.h / 8.0
            } else if d < 2.0 * self.h {
                self.h / 4.0
            } else if d < 4.0 * self.h {
                self.h / 2.0
            } else {
                self.h
            };
            s = s.min(local);
        }
        s
    }

    fn bump(&mut self) -> Result<()> {
        self.inserted += 1;
        if self.inserted > MAX_INSERTIONS {
            return Err(Error::Mesh(format!(
                "refinement exceeded {MAX_INSERTIONS} insertions without settling"
            )));
        }
        Ok(())
    }

    fn encroached_by(&self, s: &SubSeg, skip: Option<usize>) -> Option<usize> {
        let a = self.dt.pts[s.a];
        let b = self.dt.pts[s.b];
        let m = (a + b) * 0.5;
        let r2 = a.dist(b).powi(2) * 0.25 * (1.0 - 1e-9);
        for v in 3..self.dt.pts.len() {
            if v == s.a || v == s.b || Some(v) == skip {
                continue;
            }
            if self.dt.pts[v].dist(m).powi(2) < r2 {
                return Some(v);
            }
        }
        None
    }

    fn point_encroaches(&self, s: &SubSeg, p: Vec2) -> bool {
        let a = self.dt.pts[s.a];
        let b = self.dt.pts[s.b];
        let m = (a + b) * 0.5;
        p.dist(m).powi(2) < a.dist(b).powi(2) * 0.25 * (1.0 - 1e-9)
    }

    fn split_sub(&mut self, idx: usize) -> Result<()> {
        self.bump()?;
        let SubSeg { a, b, master } = self.subs[idx];
        let pa = self.dt.pts[a];
        let pb = self.dt.pts[b];
        let len = pa.dist(pb);
        // Split on a power-of-two shell around sharp corners so facing
        // constraints settle on matching radii.
        let p = if self.shell_centers.contains(&a) {
            let r = (len / 2.0).log2().round().exp2().clamp(0.25 * len, 0.75 * len);
            pa + (pb - pa) * (r / len)
        } else if self.shell_centers.contains(&b) {
            let r = (len / 2.0).log2().round().exp2().clamp(0.25 * len, 0.75 * len);
            pb + (pa - pb) * (r / len)
        } else {
            (pa + pb) * 0.5
        };
        let pi = self.dt.insert(p, self.snap_tol)?;
        let old = self.subs.swap_remove(idx);
        self.subs.push(SubSeg { a: old.a, b: pi, master: old.master });
        self.subs.push(SubSeg { a: pi, b: old.b, master });
        Ok(())
    }

    /// Splits subsegments until each is a mesh edge with an empty
    /// diametral circle.
    fn enforce_constraints(&mut self) -> Result<()> {
        loop {
            let mut acted = false;
            let mut i = 0;
            while i < self.subs.len() {
                let missing = !self.dt.is_edge(self.subs[i].a, self.subs[i].b);
                if missing || self.encroached_by(&self.subs[i], None).is_some() {
                    self.split_sub(i)?;
                    acted = true;
                } else {
                    i += 1;
                }
            }
            if !acted {
                return Ok(());
            }
        }
    }

    fn triangle_is_relevant(&self, t: usize) -> Option<(Vec2, [Vec2; 3])> {
        let tri = &self.dt.tris[t];
        if !tri.alive || tri.v.iter().any(|&v| v < 3) {
            return None;
        }
        let p = tri.v.map(|i| self.dt.pts[i]);
        let centroid = (p[0] + p[1] + p[2]) * (1.0 / 3.0);
        if !point_in_polygon(centroid, &self.domain.outer) {
            return None;
        }
        Some((centroid, p))
    }

    fn triangle_is_bad(&self, centroid: Vec2, p: [Vec2; 3]) -> bool {
        let angles = triangle_angles(p[0], p[1], p[2]);
        let min_angle = angles[0].min(angles[1]).min(angles[2]);
        if min_angle < MIN_ANGLE_DEG.to_radians() {
            return true;
        }
        match circumcenter(p[0], p[1], p[2]) {
            Some(cc) => cc.dist(p[0]) > SIZE_RADIUS_FACTOR * self.size_at(centroid),
            None => false,
        }
    }

    /// Sharp-corner fan triangles cannot be improved past the input
    /// angle; leave them alone.
    fn protected(&self, t: usize) -> bool {
        let v = self.dt.tris[t].v;
        for &c in &self.shell_centers {
            if v.contains(&c) {
                let pc = self.dt.pts[c];
                let near = v
                    .iter()
                    .filter(|&&x| x != c && self.dt.pts[x].dist(pc) < 4.0 * self.h)
                    .count();
                if near == 2 {
                    return true;
                }
            }
        }
        false
    }

    fn refine_quality(&mut self) -> Result<()> {
        loop {
            self.enforce_constraints()?;
            let mut acted = false;
            for t in 0..self.dt.tris.len() {
                let Some((centroid, p)) = self.triangle_is_relevant(t) else {
                    continue;
                };
                if !self.triangle_is_bad(centroid, p) || self.protected(t) {
                    continue;
                }
                let Some(cc) = circumcenter(p[0], p[1], p[2]) else {
                    continue;
                };
                // A circumcenter inside some diametral circle splits the
                // offending pieces instead of going in itself.
                let offenders: Vec<usize> = (0..self.subs.len())
                    .filter(|&i| self.point_encroaches(&self.subs[i], cc))
                    .collect();
                if !offenders.is_empty() {
                    // Split the first; indices shift under swap_remove.
                    self.split_sub(offenders[0])?;
                    acted = true;
                    break;
                }
                if !point_in_polygon(cc, &self.domain.outer) {
                    continue;
                }
                self.bump()?;
                self.dt.insert(cc, self.snap_tol)?;
                acted = true;
                break;
            }
            if !acted {
                return Ok(());
            }
        }
    }
}

/// Builds a fault- and interface-conforming mesh of the layered domain
/// with nominal element size `h`.
pub fn generate_mesh(domain: &LayeredDomain, fault: &Fault, h: f64) -> Result<Mesh> {
    generate_mesh_with(domain, fault, h, MeshOptions::default())
}

pub fn generate_mesh_with(
    domain: &LayeredDomain,
    fault: &Fault,
    h: f64,
    options: MeshOptions,
) -> Result<Mesh> {
    domain.validate()?;
    fault.validate()?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("element size h = {h} must be positive")));
    }
    let diam = domain.diameter();

    let mut outer_closed = domain.outer.clone();
    outer_closed.push(domain.outer[0]);
    let mut fault_chain = fault.vertices.clone();
    if fault.closed {
        fault_chain.push(fault.vertices[0]);
    }
    let gap = crate::geometry::polyline_min_distance(&fault_chain, &outer_closed);
    if gap < 1e-6 * diam {
        return Err(Error::InvalidFault(format!(
            "fault touches the outer boundary (distance {gap:.3e})"
        )));
    }
    for v in &fault.vertices {
        if !domain.contains(*v) {
            return Err(Error::InvalidFault(format!(
                "fault vertex ({}, {}) lies outside the domain",
                v.x, v.y
            )));
        }
    }

    let pslg = build_pslg(domain, fault, h)?;
    let snap_tol = 1e-12 * diam;
    let mut dt = Delaunay::new(&pslg.points);
    let mut node_of_pool = Vec::with_capacity(pslg.points.len());
    for p in &pslg.points {
        node_of_pool.push(dt.insert(*p, snap_tol)?);
    }
    let subs: Vec<SubSeg> = pslg
        .subs
        .iter()
        .map(|&(a, b, m)| SubSeg { a: node_of_pool[a], b: node_of_pool[b], master: m })
        .collect();
    let shell_centers: HashSet<usize> =
        pslg.sharp_corners.iter().map(|&(v, _)| node_of_pool[v]).collect();

    let grading_centers = if options.grade_fault_corners {
        match crate::geometry::detect_corners(fault, domain) {
            Ok(corners) => corners.iter().map(|c| c.position).collect(),
            Err(_) => Vec::new(),
        }
    } else {
        Vec::new()
    };

    let mut builder = Builder {
        dt,
        subs,
        masters: pslg.masters,
        domain,
        h,
        snap_tol,
        shell_centers,
        grading_centers,
        inserted: 0,
    };
    builder.refine_quality()?;

    finalize(builder, domain, fault, h)
}

fn finalize(
    builder: Builder<'_>,
    domain: &LayeredDomain,
    fault: &Fault,
    h: f64,
) -> Result<Mesh> {
    let Builder { dt, subs, masters, .. } = builder;

    // Real nodes follow the three frame vertices in insertion order.
    let nodes: Vec<Vec2> = dt.pts[3..].to_vec();
    let remap = |i: usize| i - 3;

    let mut triangles = Vec::new();
    for t in &dt.tris {
        if !t.alive || t.v.iter().any(|&v| v < 3) {
            continue;
        }
        let p = t.v.map(|i| dt.pts[i]);
        let centroid = (p[0] + p[1] + p[2]) * (1.0 / 3.0);
        if !point_in_polygon(centroid, &domain.outer) {
            continue;
        }
        triangles.push(Triangle {
            v: [remap(t.v[0]), remap(t.v[1]), remap(t.v[2])],
            layer: domain.layer_of(centroid),
        });
    }

    // Every constraint piece must have survived as an edge.
    let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let key = edge_key(t.v[k], t.v[(k + 1) % 3]);
            edge_tris.entry(key).or_default().push(i);
        }
    }
    for s in &subs {
        if !edge_tris.contains_key(&edge_key(remap(s.a), remap(s.b))) {
            return Err(Error::Mesh(
                "internal error: a constraint piece is not a mesh edge".into(),
            ));
        }
    }

    let mut boundary_edges = Vec::new();
    let mut interface_subs: Vec<(usize, usize, usize)> = Vec::new();
    let mut fault_subs: Vec<(usize, usize, usize)> = Vec::new();
    for s in &subs {
        let (a, b) = (remap(s.a), remap(s.b));
        match masters[s.master].kind {
            ConstraintKind::Outer { edge } => {
                let kind = if domain.measurement_edges.contains(&edge) {
                    BoundaryKind::Measurement
                } else if domain.traction_free_edges.contains(&edge) {
                    BoundaryKind::Free
                } else {
                    BoundaryKind::Clamped
                };
                boundary_edges.push(BoundaryEdge { a, b, kind, outer_index: edge });
            }
            ConstraintKind::Interface { index } => interface_subs.push((index, a, b)),
            ConstraintKind::FaultSeg { segment } => fault_subs.push((segment, a, b)),
        }
    }
    boundary_edges.sort_by_key(|e| (e.outer_index, e.a.min(e.b), e.a.max(e.b)));

    // Orient fault pieces along their segment and order them by arc
    // length for reproducible output.
    let mut ordered_fault: Vec<(usize, usize, usize, f64)> = fault_subs
        .iter()
        .map(|&(seg, a, b)| {
            let (sa, sb) = fault.segment(seg);
            let ta = project_param(nodes[a], sa, sb);
            let tb = project_param(nodes[b], sa, sb);
            if ta <= tb {
                (seg, a, b, ta)
            } else {
                (seg, b, a, tb)
            }
        })
        .collect();
    ordered_fault.sort_by(|x, y| (x.0, x.3).partial_cmp(&(y.0, y.3)).unwrap());

    let mesh = duplicate_fault_nodes(
        nodes,
        triangles,
        boundary_edges,
        interface_subs,
        ordered_fault,
        fault,
        h,
    )?;
    Ok(mesh)
}

fn duplicate_fault_nodes(
    mut nodes: Vec<Vec2>,
    mut triangles: Vec<Triangle>,
    boundary_edges: Vec<BoundaryEdge>,
    interface_subs: Vec<(usize, usize, usize)>,
    ordered_fault: Vec<(usize, usize, usize, f64)>,
    fault: &Fault,
    h: f64,
) -> Result<Mesh> {
    // Fault-path neighbors of each fault node.
    let mut neighbors: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut seg_normals: HashMap<usize, Vec<Vec2>> = HashMap::new();
    for &(seg, a, b, _) in &ordered_fault {
        neighbors.entry(a).or_default().push(b);
        neighbors.entry(b).or_default().push(a);
        let n = fault.segment_normal(seg);
        seg_normals.entry(a).or_default().push(n);
        seg_normals.entry(b).or_default().push(n);
    }

    let mut fault_nodes: Vec<usize> = neighbors.keys().copied().collect();
    fault_nodes.sort_unstable();

    // Incident triangles per node.
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, t) in triangles.iter().enumerate() {
        for &v in &t.v {
            incident.entry(v).or_default().push(i);
        }
    }

    let mut clone_of: HashMap<usize, usize> = HashMap::new();
    for &v in &fault_nodes {
        let nbrs = &neighbors[&v];
        if nbrs.len() < 2 {
            // Open-fault tip: the node stays shared.
            continue;
        }
        let d1 = (nodes[nbrs[0]] - nodes[v]).normalized();
        let d2 = (nodes[nbrs[1]] - nodes[v]).normalized();
        let mut plus_ref = Vec2::new(0.0, 0.0);
        for n in &seg_normals[&v] {
            plus_ref = plus_ref + *n;
        }
        if plus_ref.norm() < 1e-12 {
            return Err(Error::Mesh(format!(
                "cannot orient fault sides at node ({}, {})",
                nodes[v].x, nodes[v].y
            )));
        }
        // Angular sector between the two fault directions that contains
        // the outward reference normal is the plus side.
        let base = d1.angle();
        let span = (d2.angle() - base).rem_euclid(2.0 * std::f64::consts::PI);
        let rel = |w: Vec2| (w.angle() - base).rem_euclid(2.0 * std::f64::consts::PI);
        let plus_in_first = rel(plus_ref) < span;

        let clone = nodes.len();
        nodes.push(nodes[v]);
        clone_of.insert(v, clone);
        for &ti in &incident[&v] {
            let t = &mut triangles[ti];
            let centroid = (nodes[t.v[0]] + nodes[t.v[1]] + nodes[t.v[2]]) * (1.0 / 3.0);
            let in_first = rel(centroid - nodes[v]) < span;
            let on_plus = in_first == plus_in_first;
            if !on_plus {
                for slot in &mut t.v {
                    if *slot == v {
                        *slot = clone;
                    }
                }
            }
        }
    }

    let side = |v: usize, minus: bool| -> usize {
        if minus {
            clone_of.get(&v).copied().unwrap_or(v)
        } else {
            v
        }
    };
    let fault_edges: Vec<FaultEdge> = ordered_fault
        .iter()
        .map(|&(seg, a, b, _)| FaultEdge {
            segment: seg,
            plus: [side(a, false), side(b, false)],
            minus: [side(a, true), side(b, true)],
        })
        .collect();

    // Interface pieces keep whichever copy their triangles use.
    let mut edge_set: HashSet<(usize, usize)> = HashSet::new();
    for t in &triangles {
        for k in 0..3 {
            edge_set.insert(edge_key(t.v[k], t.v[(k + 1) % 3]));
        }
    }
    let mut interface_edges = Vec::new();
    for (index, a, b) in interface_subs {
        let mut found = false;
        for ca in [side(a, false), side(a, true)] {
            for cb in [side(b, false), side(b, true)] {
                if edge_set.contains(&edge_key(ca, cb)) {
                    interface_edges.push(InterfaceEdge { interface: index, a: ca, b: cb });
                    found = true;
                }
            }
        }
        if !found {
            return Err(Error::Mesh(
                "internal error: interface piece lost during duplication".into(),
            ));
        }
    }
    interface_edges.sort_by_key(|e| (e.interface, e.a.min(e.b), e.a.max(e.b)));
    interface_edges.dedup_by_key(|e| (e.interface, e.a.min(e.b), e.a.max(e.b)));

    Ok(Mesh { nodes, triangles, fault_edges, boundary_edges, interface_edges, h })
}

/// Uniform refinement: each triangle splits into four via edge
/// midpoints. Shapes are preserved exactly, the duplication structure
/// gains one pair per fault edge midpoint.
pub fn refine(mesh: &Mesh) -> Mesh {
    let mut nodes = mesh.nodes.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<Vec2>| -> usize {
        let key = edge_key(a, b);
        if let Some(&m) = midpoint.get(&key) {
            return m;
        }
        let m = nodes.len();
        nodes.push((nodes[a] + nodes[b]) * 0.5);
        midpoint.insert(key, m);
        m
    };

    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for t in &mesh.triangles {
        let [a, b, c] = t.v;
        let ab = mid(a, b, &mut nodes);
        let bc = mid(b, c, &mut nodes);
        let ca = mid(c, a, &mut nodes);
        for v in [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]] {
            triangles.push(Triangle { v, layer: t.layer });
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let m = midpoint[&edge_key(e.a, e.b)];
        boundary_edges.push(BoundaryEdge { a: e.a, b: m, ..*e });
        boundary_edges.push(BoundaryEdge { a: m, b: e.b, ..*e });
    }

    let mut interface_edges = Vec::with_capacity(2 * mesh.interface_edges.len());
    for e in &mesh.interface_edges {
        let m = midpoint[&edge_key(e.a, e.b)];
        interface_edges.push(InterfaceEdge { a: e.a, b: m, ..*e });
        interface_edges.push(InterfaceEdge { a: m, b: e.b, ..*e });
    }

    let mut fault_edges = Vec::with_capacity(2 * mesh.fault_edges.len());
    for fe in &mesh.fault_edges {
        let mp = midpoint[&edge_key(fe.plus[0], fe.plus[1])];
        let mm = midpoint[&edge_key(fe.minus[0], fe.minus[1])];
        fault_edges.push(FaultEdge {
            segment: fe.segment,
            plus: [fe.plus[0], mp],
            minus: [fe.minus[0], mm],
        });
        fault_edges.push(FaultEdge {
            segment: fe.segment,
            plus: [mp, fe.plus[1]],
            minus: [mm, fe.minus[1]],
        });
    }

    Mesh {
        nodes,
        triangles,
        fault_edges,
        boundary_edges,
        interface_edges,
        h: mesh.h * 0.5,
    }
}
