//! Piecewise-linear finite elements for the time-harmonic Lame system on
//! a fault-conforming mesh.
//!
//! The pipeline is assemble, impose data, solve, measure. Dirichlet
//! values and displacement jumps are handled by elimination: clamped
//! degrees of freedom are pinned, each duplicated plus node is tied to
//! its minus partner with the prescribed gap, and both substitutions
//! fold into the right hand side. The reduced real symmetric matrix is
//! factored once by sparse LU and applied to the real and imaginary
//! parts of the load together.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    validate_lame, Fault, JumpData, LameParameters, LayeredDomain,
};
use crate::la::{c, cr, CMat2, CVec2, Vec2, C64};
use crate::mesh::{BoundaryKind, Mesh};
use crate::probe::{traction_from_gradient, Field2};

/// Relative residual the reduced solve must reach.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Condition estimates above this trip the near-resonance warning.
pub const RESONANCE_CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy)]
enum DofStatus {
    Free,
    Fixed(C64),
    /// `dof = master + gap`, the eliminated side of a duplicated pair.
    Tied { master: usize, gap: C64 },
}

/// Assembled weak form `K - omega^2 M` with its load vector and the
/// constraint set produced by boundary conditions and fault ties.
pub struct LinearSystem {
    pub n_dofs: usize,
    pub omega: f64,
    stiffness: Vec<(usize, usize, f64)>,
    mass: Vec<(usize, usize, f64)>,
    rhs: Vec<C64>,
    status: Vec<DofStatus>,
}

fn triangle_geometry(mesh: &Mesh, t: usize) -> ([Vec2; 3], [Vec2; 3], f64) {
    let p = mesh.triangles[t].v.map(|i| mesh.nodes[i]);
    let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
    let grads = [
        (p[2] - p[1]).perp_ccw() * (1.0 / (2.0 * area)),
        (p[0] - p[2]).perp_ccw() * (1.0 / (2.0 * area)),
        (p[1] - p[0]).perp_ccw() * (1.0 / (2.0 * area)),
    ];
    (p, grads, area)
}

/// Builds the stiffness and mass parts of the weak form over the mesh
/// and pins the clamped boundary to zero. Dirichlet values can be
/// overwritten afterwards with [`set_dirichlet`].
pub fn assemble(mesh: &Mesh, domain: &LayeredDomain, omega: f64) -> Result<LinearSystem> {
    for l in 0..domain.n_layers() {
        validate_lame(domain.params_of_layer(l), 2)?;
    }
    if !omega.is_finite() || omega < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "frequency omega = {omega} must be finite and nonnegative"
        )));
    }

    let n_dofs = 2 * mesh.nodes.len();
    let per_element: Vec<(Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>)> = (0..mesh
        .triangles
        .len())
        .into_par_iter()
        .map(|t| {
            let tri = &mesh.triangles[t];
            let lame = domain.params_of_layer(tri.layer);
            let (p, g, area) = triangle_geometry(mesh, t);

            let mut k = Vec::with_capacity(36);
            for i in 0..3 {
                for j in 0..3 {
                    let gi = [g[i].x, g[i].y];
                    let gj = [g[j].x, g[j].y];
                    let dot = g[i].dot(g[j]);
                    for a in 0..2 {
                        for b in 0..2 {
                            let mut v = lame.lambda * gi[a] * gj[b] + lame.mu * gi[b] * gj[a];
                            if a == b {
                                v += lame.mu * dot;
                            }
                            k.push((2 * tri.v[i] + a, 2 * tri.v[j] + b, area * v));
                        }
                    }
                }
            }

            // Edge-midpoint rule, exact for the quadratic products of
            // linear hats.
            let mids = [
                (p[0] + p[1]) * 0.5,
                (p[1] + p[2]) * 0.5,
                (p[2] + p[0]) * 0.5,
            ];
            let hat = |i: usize, x: Vec2| {
                let j = (i + 1) % 3;
                let k2 = (i + 2) % 3;
                (x - p[j]).cross(p[k2] - p[j]) / (p[i] - p[j]).cross(p[k2] - p[j])
            };
            let mut m = Vec::with_capacity(18);
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = 0.0;
                    for q in &mids {
                        v += hat(i, *q) * hat(j, *q);
                    }
                    v *= area / 3.0;
                    for a in 0..2 {
                        m.push((2 * tri.v[i] + a, 2 * tri.v[j] + a, v));
                    }
                }
            }
            (k, m)
        })
        .collect();

    let mut stiffness = Vec::new();
    let mut mass = Vec::new();
    for (k, m) in per_element {
        stiffness.extend(k);
        mass.extend(m);
    }

    let mut status = vec![DofStatus::Free; n_dofs];
    for e in &mesh.boundary_edges {
        if e.kind == BoundaryKind::Clamped {
            for n in [e.a, e.b] {
                status[2 * n] = DofStatus::Fixed(C64::new(0.0, 0.0));
                status[2 * n + 1] = DofStatus::Fixed(C64::new(0.0, 0.0));
            }
        }
    }

    Ok(LinearSystem {
        n_dofs,
        omega,
        stiffness,
        mass,
        rhs: vec![C64::new(0.0, 0.0); n_dofs],
        status,
    })
}

/// Displacement and traction jump traces along the fault, parameterized
/// by segment index and arc length from the segment start.
pub trait FaultTraces {
    fn segments(&self) -> usize;
    fn jump(&self, segment: usize, s: f64) -> CVec2;
    fn traction_jump(&self, segment: usize, s: f64) -> CVec2;
}

impl FaultTraces for JumpData {
    fn segments(&self) -> usize {
        self.segments.len()
    }
    fn jump(&self, segment: usize, s: f64) -> CVec2 {
        CVec2::from_real(self.segments[segment].f_at(s))
    }
    fn traction_jump(&self, segment: usize, s: f64) -> CVec2 {
        CVec2::from_real(self.segments[segment].g_at(s))
    }
}

/// Jump traces of a manufactured piecewise field: `plus` rules on the
/// side the fault normals point to, `minus` on the other. Single-layer
/// material only.
pub struct FieldJump<'a> {
    pub plus: &'a dyn Field2,
    pub minus: &'a dyn Field2,
    pub fault: &'a Fault,
    pub lame: LameParameters,
}

impl FaultTraces for FieldJump<'_> {
    fn segments(&self) -> usize {
        self.fault.n_segments()
    }
    fn jump(&self, segment: usize, s: f64) -> CVec2 {
        let (a, b) = self.fault.segment(segment);
        let x = a + (b - a).normalized() * s;
        self.plus.value(x) - self.minus.value(x)
    }
    fn traction_jump(&self, segment: usize, s: f64) -> CVec2 {
        let (a, b) = self.fault.segment(segment);
        let x = a + (b - a).normalized() * s;
        let nu = self.fault.segment_normal(segment);
        traction_from_gradient(self.plus.gradient(x), nu, self.lame)
            - traction_from_gradient(self.minus.gradient(x), nu, self.lame)
    }
}

/// Ties each duplicated pair to the prescribed displacement jump and
/// adds the traction-jump surface load along the fault.
pub fn apply_jumps(
    system: &mut LinearSystem,
    mesh: &Mesh,
    fault: &Fault,
    traces: &dyn FaultTraces,
) -> Result<()> {
    if traces.segments() != fault.n_segments() {
        return Err(Error::InvalidJump(format!(
            "{} trace entries for {} fault segments",
            traces.segments(),
            fault.n_segments()
        )));
    }
    if mesh.fault_edges.is_empty() {
        return Err(Error::InvalidJump(
            "mesh carries no fault pair table".into(),
        ));
    }

    let arc = |segment: usize, x: Vec2| {
        let (a, _) = fault.segment(segment);
        x.dist(a)
    };

    // First incident edge wins where segments meet at a fault corner.
    let mut tied = vec![false; mesh.nodes.len()];
    for fe in &mesh.fault_edges {
        for k in 0..2 {
            let (plus, minus) = (fe.plus[k], fe.minus[k]);
            if plus == minus || tied[plus] {
                continue;
            }
            tied[plus] = true;
            let gap = traces.jump(fe.segment, arc(fe.segment, mesh.nodes[plus]));
            system.status[2 * plus] = DofStatus::Tied { master: 2 * minus, gap: gap.x };
            system.status[2 * plus + 1] = DofStatus::Tied { master: 2 * minus + 1, gap: gap.y };
        }
    }

    let (nodes, weights) = crate::quad::gauss_legendre(4);
    for fe in &mesh.fault_edges {
        let a = mesh.nodes[fe.minus[0]];
        let b = mesh.nodes[fe.minus[1]];
        let len = a.dist(b);
        for (xq, wq) in nodes.iter().zip(&weights) {
            let t = 0.5 * (xq + 1.0);
            let w = 0.5 * wq * len;
            let x = a + (b - a) * t;
            let g = traces.traction_jump(fe.segment, arc(fe.segment, x));
            for (node, hat) in [(fe.minus[0], 1.0 - t), (fe.minus[1], t)] {
                system.rhs[2 * node] -= cr(w * hat) * g.x;
                system.rhs[2 * node + 1] -= cr(w * hat) * g.y;
            }
        }
    }
    Ok(())
}

/// Overwrites the clamped-boundary values with the given trace.
pub fn set_dirichlet(system: &mut LinearSystem, mesh: &Mesh, data: &dyn Fn(Vec2) -> CVec2) {
    for e in &mesh.boundary_edges {
        if e.kind == BoundaryKind::Clamped {
            for n in [e.a, e.b] {
                let v = data(mesh.nodes[n]);
                system.status[2 * n] = DofStatus::Fixed(v.x);
                system.status[2 * n + 1] = DofStatus::Fixed(v.y);
            }
        }
    }
}

/// Adds a surface traction load on the traction-free part of the
/// boundary, `data(x, outward normal)`. Used by manufactured problems;
/// the physical problem keeps this zero.
pub fn add_traction_load(
    system: &mut LinearSystem,
    mesh: &Mesh,
    domain: &LayeredDomain,
    data: &dyn Fn(Vec2, Vec2) -> CVec2,
) {
    let (nodes, weights) = crate::quad::gauss_legendre(4);
    for e in &mesh.boundary_edges {
        if e.kind == BoundaryKind::Clamped {
            continue;
        }
        let (oa, ob) = domain.outer_edge(e.outer_index);
        let nu = (ob - oa).normalized().perp_cw();
        let a = mesh.nodes[e.a];
        let b = mesh.nodes[e.b];
        let len = a.dist(b);
        for (xq, wq) in nodes.iter().zip(&weights) {
            let t = 0.5 * (xq + 1.0);
            let w = 0.5 * wq * len;
            let x = a + (b - a) * t;
            let tr = data(x, nu);
            for (node, hat) in [(e.a, 1.0 - t), (e.b, t)] {
                system.rhs[2 * node] += cr(w * hat) * tr.x;
                system.rhs[2 * node + 1] += cr(w * hat) * tr.y;
            }
        }
    }
}

/// Nodal solution field on a fault-conforming mesh. Values at duplicated
/// nodes carry the one-sided traces, so interpolation inside any
/// triangle is side-aware automatically.
#[derive(Clone)]
pub struct DisplacementField {
    pub mesh: Mesh,
    pub values: Vec<CVec2>,
    pub condition_estimate: f64,
    pub near_resonance: bool,
}

impl DisplacementField {
    /// Linear interpolation at a point, scanning for a containing
    /// triangle. Points exactly on the fault return the trace of
    /// whichever side's triangle is found first.
    pub fn value_at(&self, x: Vec2) -> Option<CVec2> {
        for t in 0..self.mesh.triangles.len() {
            if let Some(b) = self.barycentric(t, x) {
                let v = self.mesh.triangles[t].v;
                return Some(
                    self.values[v[0]] * b[0] + self.values[v[1]] * b[1] + self.values[v[2]] * b[2],
                );
            }
        }
        None
    }

    fn barycentric(&self, t: usize, x: Vec2) -> Option<[f64; 3]> {
        let p = self.mesh.triangles[t].v.map(|i| self.mesh.nodes[i]);
        let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
        let b = [
            (p[2] - p[1]).cross(x - p[1]) / area2,
            (p[0] - p[2]).cross(x - p[2]) / area2,
            (p[1] - p[0]).cross(x - p[0]) / area2,
        ];
        let tol = -1e-12;
        if b.iter().all(|&w| w >= tol) {
            Some(b)
        } else {
            None
        }
    }

    /// Constant displacement gradient on one triangle.
    pub fn triangle_gradient(&self, t: usize) -> CMat2 {
        let (_, grads, _) = triangle_geometry(&self.mesh, t);
        let mut g = CMat2::zero();
        for (i, gr) in grads.iter().enumerate() {
            let u = self.values[self.mesh.triangles[t].v[i]];
            g = g + CMat2::outer(u, CVec2::from_real(*gr));
        }
        g
    }

    /// Largest imaginary component over all nodes.
    pub fn imag_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.x.im.abs().max(v.y.im.abs()))
            .fold(0.0, f64::max)
    }

    /// Node table for external visualization.
    pub fn nodes_csv(&self) -> String {
        let mut out = String::from("x,y,u1_re,u1_im,u2_re,u2_im\n");
        for (p, v) in self.mesh.nodes.iter().zip(&self.values) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.x, p.y, v.x.re, v.x.im, v.y.re, v.y.im
            ));
        }
        out
    }
}

struct Reduced {
    n_free: usize,
    free_index: Vec<Option<usize>>,
    matrix: SparseColMat<usize, f64>,
    rhs: faer::Mat<f64>,
    /// Max column sum of absolute entry contributions, a cancellation
    /// free scale for residual and condition checks.
    scale_norm: f64,
}

fn reduce(system: &LinearSystem) -> Result<Reduced> {
    let n = system.n_dofs;
    let resolve_row = |i: usize| -> Option<usize> {
        match system.status[i] {
            DofStatus::Free => Some(i),
            DofStatus::Fixed(_) => None,
            DofStatus::Tied { master, .. } => Some(master),
        }
    };

    let mut free_index = vec![None; n];
    let mut n_free = 0;
    for i in 0..n {
        if matches!(system.status[i], DofStatus::Free) {
            free_index[i] = Some(n_free);
            n_free += 1;
        }
    }
    for i in 0..n {
        if let DofStatus::Tied { master, .. } = system.status[i] {
            if !matches!(system.status[master], DofStatus::Free) {
                return Err(Error::Solver(format!(
                    "tied dof {i} has a non-free master {master}"
                )));
            }
        }
    }

    let mut rhs_full = system.rhs.clone();
    for i in 0..n {
        if let DofStatus::Tied { master, .. } = system.status[i] {
            let v = rhs_full[i];
            rhs_full[master] += v;
            rhs_full[i] = C64::new(0.0, 0.0);
        }
    }

    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let streams = [(&system.stiffness, 1.0), (&system.mass, -system.omega * system.omega)];
    for (list, weight) in streams {
        if weight == 0.0 {
            continue;
        }
        for &(i, j, v) in list.iter() {
            let v = v * weight;
            let Some(row) = resolve_row(i) else { continue };
            match system.status[j] {
                DofStatus::Free => entries.push((row, j, v)),
                DofStatus::Fixed(val) => rhs_full[row] -= cr(v) * val,
                DofStatus::Tied { master, gap } => {
                    entries.push((row, master, v));
                    rhs_full[row] -= cr(v) * gap;
                }
            }
        }
    }

    entries.sort_by_key(|&(i, j, _)| (j, i));
    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let mut col_abs = vec![0.0f64; n_free];
    let mut it = entries.into_iter().peekable();
    while let Some((i, j, v)) = it.next() {
        let mut sum = v;
        let mut abs = v.abs();
        while let Some(&(i2, j2, v2)) = it.peek() {
            if i2 == i && j2 == j {
                sum += v2;
                abs += v2.abs();
                it.next();
            } else {
                break;
            }
        }
        let (ri, rj) = (free_index[i].unwrap(), free_index[j].unwrap());
        col_abs[rj] += abs;
        triplets.push(Triplet::new(ri, rj, sum));
    }
    let scale_norm = col_abs.iter().copied().fold(0.0, f64::max);

    let matrix = SparseColMat::try_new_from_triplets(n_free, n_free, &triplets)
        .map_err(|e| Error::Solver(format!("sparse assembly failed: {e:?}")))?;

    let mut rhs = faer::Mat::zeros(n_free, 2);
    for i in 0..n {
        if let Some(r) = free_index[i] {
            rhs[(r, 0)] = rhs_full[i].re;
            rhs[(r, 1)] = rhs_full[i].im;
        }
    }

    Ok(Reduced { n_free, free_index, matrix, rhs, scale_norm })
}

/// Factors the reduced system and returns the full nodal field together
/// with a one-norm condition estimate.
pub fn solve_system(system: &LinearSystem, mesh: &Mesh) -> Result<DisplacementField> {
    faer::set_global_parallelism(faer::Par::Seq);
    let red = reduce(system)?;

    let mut x = faer::Mat::zeros(red.n_free, 2);
    let mut condition = 0.0f64;
    if red.n_free > 0 {
        let lu = red
            .matrix
            .sp_lu()
            .map_err(|e| Error::Solver(format!("sparse factorization failed: {e:?}")))?;
        x = lu.solve(&red.rhs);

        let ax = &red.matrix * &x;
        let mut res = 0.0f64;
        let mut bn = 0.0f64;
        let mut xn = 0.0f64;
        for j in 0..2 {
            for i in 0..red.n_free {
                res += (ax[(i, j)] - red.rhs[(i, j)]).powi(2);
                bn += red.rhs[(i, j)].powi(2);
                xn += x[(i, j)].powi(2);
            }
        }
        let denom = bn.sqrt().max(red.scale_norm * xn.sqrt());
        if denom > 0.0 && res.sqrt() > SOLVE_RESIDUAL_TOL * denom {
            return Err(Error::Solver(format!(
                "relative residual {:.3e} exceeds {SOLVE_RESIDUAL_TOL:.1e}",
                res.sqrt() / denom
            )));
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x1d2c);
        let mut inv_norm = 0.0f64;
        for probe in 0..3 {
            let p = faer::Mat::from_fn(red.n_free, 1, |i, _| match probe {
                0 => 1.0,
                1 => {
                    if i % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => {
                    if rng.gen::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            });
            let y = lu.solve(&p);
            let yn: f64 = (0..red.n_free).map(|i| y[(i, 0)].abs()).sum();
            inv_norm = inv_norm.max(yn / red.n_free as f64);
        }
        condition = red.scale_norm * inv_norm;
    }

    let near_resonance = condition > RESONANCE_CONDITION_LIMIT;
    if near_resonance {
        log::warn!(
            "system is near a discrete resonance: condition estimate {:.3e} at omega = {}",
            condition,
            system.omega
        );
    }

    let mut full = vec![C64::new(0.0, 0.0); system.n_dofs];
    for i in 0..system.n_dofs {
        match system.status[i] {
            DofStatus::Free => {
                let r = red.free_index[i].unwrap();
                full[i] = c(x[(r, 0)], x[(r, 1)]);
            }
            DofStatus::Fixed(v) => full[i] = v,
            DofStatus::Tied { .. } => {}
        }
    }
    for i in 0..system.n_dofs {
        if let DofStatus::Tied { master, gap } = system.status[i] {
            full[i] = full[master] + gap;
        }
    }

    let values = (0..mesh.nodes.len())
        .map(|n| CVec2::new(full[2 * n], full[2 * n + 1]))
        .collect();
    Ok(DisplacementField {
        mesh: mesh.clone(),
        values,
        condition_estimate: condition,
        near_resonance,
    })
}

/// Full forward solve on a premade mesh with explicit boundary data.
pub fn solve_forward_on(
    mesh: &Mesh,
    domain: &LayeredDomain,
    fault: &Fault,
    traces: &dyn FaultTraces,
    omega: f64,
    dirichlet: Option<&dyn Fn(Vec2) -> CVec2>,
    traction: Option<&dyn Fn(Vec2, Vec2) -> CVec2>,
) -> Result<DisplacementField> {
    let mut system = assemble(mesh, domain, omega)?;
    apply_jumps(&mut system, mesh, fault, traces)?;
    if let Some(data) = dirichlet {
        set_dirichlet(&mut system, mesh, data);
    }
    if let Some(data) = traction {
        add_traction_load(&mut system, mesh, domain, data);
    }
    solve_system(&system, mesh)
}

/// Solves the dislocation problem with zero clamped-boundary data.
pub fn solve_forward(
    domain: &LayeredDomain,
    fault: &Fault,
    jumps: &JumpData,
    h: f64,
    omega: f64,
) -> Result<DisplacementField> {
    domain.validate()?;
    fault.validate()?;
    jumps.validate(fault)?;
    let mesh = crate::mesh::generate_mesh(domain, fault, h)?;
    solve_forward_on(&mesh, domain, fault, jumps, omega, None, None)
}

/// Trace samples along the measurement arc, ordered by arc length.
#[derive(Debug, Clone)]
pub struct BoundaryMeasurement {
    pub samples: Vec<(f64, CVec2)>,
}

impl BoundaryMeasurement {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,u1_re,u1_im,u2_re,u2_im\n");
        for (s, u) in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s, u.x.re, u.x.im, u.y.re, u.y.im
            ));
        }
        out
    }

    pub fn rms_distance(&self, other: &BoundaryMeasurement) -> f64 {
        let n = self.samples.len().min(other.samples.len());
        let mut acc = 0.0;
        for i in 0..n {
            acc += (self.samples[i].1 - other.samples[i].1).norm_sq();
        }
        (acc / n as f64).sqrt()
    }
}

/// Samples the solution trace at `n_samples` equispaced arc-length
/// positions along the measurement part of the boundary, endpoints
/// included.
pub fn measure(
    field: &DisplacementField,
    domain: &LayeredDomain,
    n_samples: usize,
) -> Result<BoundaryMeasurement> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two samples, got {n_samples}"
        )));
    }
    let mesh = &field.mesh;
    let measured: Vec<&crate::mesh::BoundaryEdge> = mesh
        .boundary_edges
        .iter()
        .filter(|e| e.kind == BoundaryKind::Measurement)
        .collect();
    if measured.is_empty() {
        return Err(Error::InvalidArgument(
            "mesh has no measurement boundary edges".into(),
        ));
    }

    // Order outer edges cyclically, starting after a gap so a run that
    // wraps past edge zero stays contiguous.
    let n_outer = domain.outer.len();
    let present: std::collections::HashSet<usize> =
        measured.iter().map(|e| e.outer_index).collect();
    let mut run: Vec<usize> = present.iter().copied().collect();
    run.sort_unstable();
    if let Some(&start) = run
        .iter()
        .find(|&&i| !present.contains(&((i + n_outer - 1) % n_outer)))
    {
        let pos = run.iter().position(|&i| i == start).unwrap();
        run.rotate_left(pos);
    }

    let edge_param = |e: &crate::mesh::BoundaryEdge, n: usize| {
        let (oa, ob) = domain.outer_edge(e.outer_index);
        (mesh.nodes[n] - oa).dot(ob - oa)
    };
    let mut chain: Vec<(usize, usize)> = Vec::new();
    for &outer in &run {
        let mut on_edge: Vec<(usize, usize)> = measured
            .iter()
            .filter(|e| e.outer_index == outer)
            .map(|e| {
                if edge_param(e, e.a) <= edge_param(e, e.b) {
                    (e.a, e.b)
                } else {
                    (e.b, e.a)
                }
            })
            .collect();
        on_edge.sort_by(|x, y| {
            let ex = (mesh.nodes[x.0] - domain.outer_edge(outer).0).norm();
            let ey = (mesh.nodes[y.0] - domain.outer_edge(outer).0).norm();
            ex.partial_cmp(&ey).unwrap()
        });
        chain.extend(on_edge);
    }

    let mut cum = vec![0.0];
    for &(a, b) in &chain {
        let l = mesh.nodes[a].dist(mesh.nodes[b]);
        cum.push(cum.last().unwrap() + l);
    }
    let total = *cum.last().unwrap();

    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let s = total * k as f64 / (n_samples - 1) as f64;
        let seg = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(chain.len() - 1),
            Err(i) => i - 1,
        }
        .min(chain.len() - 1);
        let (a, b) = chain[seg];
        let l = mesh.nodes[a].dist(mesh.nodes[b]);
        let t = if l > 0.0 { (s - cum[seg]) / l } else { 0.0 };
        let u = field.values[a] * (1.0 - t) + field.values[b] * t;
        samples.push((s, u));
    }
    Ok(BoundaryMeasurement { samples })
}

/// Discrete Betti pairing of two solved fields over the traction-free
/// boundary, where the exact tractions of both vanish. Decays under
/// refinement as the natural condition is resolved.
pub fn reciprocity_defect(
    u: &DisplacementField,
    v: &DisplacementField,
    domain: &LayeredDomain,
) -> C64 {
    let mesh = &u.mesh;
    let mut edge_owner = std::collections::HashMap::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri.v[k], tri.v[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            edge_owner.entry(key).or_insert(t);
        }
    }

    let (nodes, weights) = crate::quad::gauss_legendre(2);
    let mut acc = C64::new(0.0, 0.0);
    for e in &mesh.boundary_edges {
        if e.kind == BoundaryKind::Clamped {
            continue;
        }
        let Some(&t) = edge_owner.get(&(e.a.min(e.b), e.a.max(e.b))) else {
            continue;
        };
        let lame = domain.params_of_layer(mesh.triangles[t].layer);
        let (oa, ob) = domain.outer_edge(e.outer_index);
        let nu = (ob - oa).normalized().perp_cw();
        let tu = traction_from_gradient(u.triangle_gradient(t), nu, lame);
        let tv = traction_from_gradient(v.triangle_gradient(t), nu, lame);
        let (pa, pb) = (mesh.nodes[e.a], mesh.nodes[e.b]);
        let len = pa.dist(pb);
        for (xq, wq) in nodes.iter().zip(&weights) {
            let tq = 0.5 * (xq + 1.0);
            let w = 0.5 * wq * len;
            let uu = u.values[e.a] * (1.0 - tq) + u.values[e.b] * tq;
            let vv = v.values[e.a] * (1.0 - tq) + v.values[e.b] * tq;
            acc += cr(w) * (tu.dot(vv) - uu.dot(tv));
        }
    }
    acc
}
