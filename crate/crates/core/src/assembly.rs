//! Global matrices and load vectors of the discrete velocity-pressure
//! system.
//!
//! The stiffness and divergence matrices have constant integrands per
//! element and are assembled exactly. Loads consist of an area density, a
//! density concentrated on a vertical line, or both; the line part is
//! integrated per element over the clipped intersection segment. Loads can
//! be tested against the nonconforming velocity basis directly or against
//! the continuous quadratics on the refined mesh, which the smoothing matrix
//! then turns into the modified load vector.

use crate::fespace::{cr_hat_grad, p2_shape, CrSpace, P0Space, P2Space};
use crate::mesh::{BarycentricMesh, Point2, Triangulation};
use crate::quad::{SegmentRule, TriangleRule};
use crate::smoothing::SmootherMatrix;
use crate::sparse::Csr;
use crate::Error;

/// Right-hand side of the momentum equation: an area density, a part
/// concentrated on a vertical line, or both.
pub struct LoadFunctional<'a> {
    volume: Option<&'a dyn Fn(Point2) -> [f64; 2]>,
    line: Option<LinePart<'a>>,
}

/// Load part acting as `v ↦ ∫ g(x2) v(x1, x2) · direction dx2` along the
/// vertical line at abscissa `x1`.
pub struct LinePart<'a> {
    pub x1: f64,
    pub density: &'a dyn Fn(f64) -> f64,
    pub direction: [f64; 2],
}

impl<'a> LoadFunctional<'a> {
    pub fn from_volume(f: &'a dyn Fn(Point2) -> [f64; 2]) -> LoadFunctional<'a> {
        LoadFunctional { volume: Some(f), line: None }
    }

    pub fn from_line(line: LinePart<'a>) -> LoadFunctional<'a> {
        LoadFunctional { volume: None, line: Some(line) }
    }

    pub fn from_parts(
        volume: Option<&'a dyn Fn(Point2) -> [f64; 2]>,
        line: Option<LinePart<'a>>,
    ) -> Result<LoadFunctional<'a>, Error> {
        if volume.is_none() && line.is_none() {
            return Err(Error::InvalidConfig("a load needs at least one part".into()));
        }
        Ok(LoadFunctional { volume, line })
    }

    pub fn volume_part(&self) -> Option<&'a dyn Fn(Point2) -> [f64; 2]> {
        self.volume
    }

    pub fn line_part(&self) -> Option<&LinePart<'a>> {
        self.line.as_ref()
    }
}

/// The discrete Stokes problem: find velocity coefficients `u` and
/// elementwise pressures `p` with `A u - Dᵀ p = b`, `D u = 0` and
/// `mean · p = 0`.
pub struct SaddleSystem {
    /// Velocity stiffness, scaled by the viscosity.
    pub a: Csr,
    /// Elementwise divergence integrals of the velocity basis.
    pub d: Csr,
    /// Element areas; pairs pressures with the zero-mean constraint.
    pub mean: Vec<f64>,
    pub b: Vec<f64>,
}

/// `A[i][j] = ν ∫ ∇v^i : ∇v^j`, exactly: the basis gradients are constant
/// per element.
pub fn assemble_stiffness(t: &Triangulation, cr: &CrSpace, nu: f64) -> Csr {
    assert!(nu > 0.0, "viscosity must be positive");
    assemble_stiffness_ordered(t, cr, nu, 0..t.triangles.len())
}

fn assemble_stiffness_ordered(
    t: &Triangulation,
    cr: &CrSpace,
    nu: f64,
    order: impl Iterator<Item = usize>,
) -> Csr {
    let mut triplets = Vec::new();
    for k in order {
        let edges = t.tri_edges[k];
        let grads = edges.map(|f| cr_hat_grad(t, f, k).expect("edge of its own element"));
        for (i, &fa) in edges.iter().enumerate() {
            let Some(da) = cr.edge_dof[fa] else { continue };
            for (j, &fb) in edges.iter().enumerate() {
                let Some(db) = cr.edge_dof[fb] else { continue };
                let s = nu * t.area[k] * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                for c in 0..2 {
                    triplets.push((da + c, db + c, s));
                }
            }
        }
    }
    Csr::from_triplets(cr.n_dofs, cr.n_dofs, &mut triplets)
}

/// `D[K][i] = ∫_K Div_T v^i`, exactly: by the Gauss theorem this is the
/// outward normal component on the basis field's edge, since the basis has
/// unit integral there and zero integral on the other edges.
pub fn assemble_divergence(t: &Triangulation, cr: &CrSpace, p0: &P0Space) -> Csr {
    let mut triplets = Vec::new();
    for k in 0..t.triangles.len() {
        for (i, &f) in t.tri_edges[k].iter().enumerate() {
            let Some(base) = cr.edge_dof[f] else { continue };
            let n = t.outward_normal(k, i);
            for c in 0..2 {
                triplets.push((k, base + c, n[c]));
            }
        }
    }
    Csr::from_triplets(p0.n_dofs, cr.n_dofs, &mut triplets)
}

/// Assembles the full saddle-point system for a given load vector.
pub fn saddle_system(
    t: &Triangulation,
    cr: &CrSpace,
    p0: &P0Space,
    nu: f64,
    b: Vec<f64>,
) -> SaddleSystem {
    assert_eq!(b.len(), cr.n_dofs);
    SaddleSystem {
        a: assemble_stiffness(t, cr, nu),
        d: assemble_divergence(t, cr, p0),
        mean: t.area.clone(),
        b,
    }
}

/// Intersection of a triangle with a vertical line.
enum LineCut {
    /// The line misses the interior (it may touch a single vertex).
    Miss,
    /// The line crosses the interior; ordinates of the segment endpoints.
    Segment([f64; 2]),
    /// A whole edge lies inside the line: the edge opposite this local
    /// vertex.
    EdgeOnLine(usize),
}

/// Classifies the cut by the exact signs of the vertex abscissa offsets, so
/// vertices on the line are detected reliably.
fn cut_by_line(xy: &[[f64; 2]; 3], x_line: f64) -> LineCut {
    let offset = [xy[0][0] - x_line, xy[1][0] - x_line, xy[2][0] - x_line];
    let on: Vec<usize> = (0..3).filter(|&i| offset[i] == 0.0).collect();
    match on.len() {
        2 => LineCut::EdgeOnLine(3 - on[0] - on[1]),
        1 => {
            let (p, q) = ((on[0] + 1) % 3, (on[0] + 2) % 3);
            if offset[p] * offset[q] < 0.0 {
                let s = offset[p] / (offset[p] - offset[q]);
                LineCut::Segment([xy[on[0]][1], xy[p][1] + s * (xy[q][1] - xy[p][1])])
            } else {
                LineCut::Miss
            }
        }
        0 => {
            let mut ys = [0.0; 2];
            let mut hits = 0;
            for p in 0..3 {
                let q = (p + 1) % 3;
                if offset[p] * offset[q] < 0.0 {
                    let s = offset[p] / (offset[p] - offset[q]);
                    ys[hits] = xy[p][1] + s * (xy[q][1] - xy[p][1]);
                    hits += 1;
                }
            }
            match hits {
                0 => LineCut::Miss,
                2 => LineCut::Segment(ys),
                _ => unreachable!("a line enters and leaves a triangle an even number of times"),
            }
        }
        _ => unreachable!("degenerate triangle"),
    }
}

/// Load vector against the nonconforming velocity basis,
/// `b_i = ⟨f, v^i⟩`. The volume part uses a degree-8 rule; the line part
/// integrates the one-sided trace over each element's intersection segment.
/// Fails when an element edge lies inside the line: the one-sided traces
/// then disagree and the functional has no meaning on discontinuous fields.
pub fn assemble_load_standard(
    t: &Triangulation,
    cr: &CrSpace,
    load: &LoadFunctional,
) -> Result<Vec<f64>, Error> {
    assemble_load_standard_ordered(t, cr, load, 0..t.triangles.len())
}

fn assemble_load_standard_ordered(
    t: &Triangulation,
    cr: &CrSpace,
    load: &LoadFunctional,
    order: impl Iterator<Item = usize> + Clone,
) -> Result<Vec<f64>, Error> {
    // Per-element contributions are reduced locally, and each phase keeps
    // its own accumulator: a dof then receives one value per adjacent
    // element and phase, so no sum has more than two traversal-dependent
    // terms and the result is independent of the element order.
    let mut b = vec![0.0; cr.n_dofs];
    let mut b_line = vec![0.0; cr.n_dofs];
    let mut local = [0.0; 6];
    let scatter = |t: &Triangulation, cr: &CrSpace, k: usize, local: &[f64; 6], b: &mut Vec<f64>| {
        for i in 0..3 {
            if let Some(base) = cr.edge_dof[t.tri_edges[k][i]] {
                for c in 0..2 {
                    b[base + c] += local[2 * i + c];
                }
            }
        }
    };
    if let Some(f) = load.volume_part() {
        let rule = TriangleRule::with_degree(8);
        for k in order.clone() {
            let xy = t.tri_xy(k);
            let lengths = t.tri_edges[k].map(|e| t.edge_length(e));
            local.fill(0.0);
            for (p, &w0) in rule.points.iter().zip(&rule.weights) {
                let x = Point2::new(
                    xy[0][0] + p[0] * (xy[1][0] - xy[0][0]) + p[1] * (xy[2][0] - xy[0][0]),
                    xy[0][1] + p[0] * (xy[1][1] - xy[0][1]) + p[1] * (xy[2][1] - xy[0][1]),
                );
                let w = 2.0 * t.area[k] * w0;
                let fx = f(x);
                let l = [1.0 - p[0] - p[1], p[0], p[1]];
                for i in 0..3 {
                    // Basis value on the edge opposite vertex i.
                    let phi = (1.0 - 2.0 * l[i]) / lengths[i];
                    for c in 0..2 {
                        local[2 * i + c] += w * fx[c] * phi;
                    }
                }
            }
            scatter(t, cr, k, &local, &mut b);
        }
    }
    if let Some(line) = load.line_part() {
        let rule = SegmentRule::with_degree(31);
        for k in order {
            let xy = t.tri_xy(k);
            let ys = match cut_by_line(&xy, line.x1) {
                LineCut::Miss => continue,
                LineCut::EdgeOnLine(_) => {
                    return Err(Error::StandardLoadUndefined { x: line.x1 });
                }
                LineCut::Segment(ys) => ys,
            };
            let lengths = t.tri_edges[k].map(|e| t.edge_length(e));
            local.fill(0.0);
            for (&s, &w0) in rule.nodes.iter().zip(&rule.weights) {
                let y = ys[0] + s * (ys[1] - ys[0]);
                let w = w0 * (ys[1] - ys[0]).abs();
                let g = (line.density)(y);
                let l = t.barycentric(k, Point2::new(line.x1, y));
                for i in 0..3 {
                    let phi = (1.0 - 2.0 * l[i]) / lengths[i];
                    for c in 0..2 {
                        local[2 * i + c] += w * g * phi * line.direction[c];
                    }
                }
            }
            scatter(t, cr, k, &local, &mut b_line);
        }
    }
    for (total, part) in b.iter_mut().zip(&b_line) {
        *total += part;
    }
    Ok(b)
}

/// Load vector against the continuous quadratic basis on the refined mesh,
/// `f⃗_j = ⟨f, w^j⟩`. Line parts are always admissible here: when an edge
/// lies inside the line, the traces from both sides agree, and each side
/// contributes half.
pub fn assemble_load_p2(m: &Triangulation, p2: &P2Space, load: &LoadFunctional) -> Vec<f64> {
    assemble_load_p2_ordered(m, p2, load, 0..m.triangles.len())
}

fn assemble_load_p2_ordered(
    m: &Triangulation,
    p2: &P2Space,
    load: &LoadFunctional,
    order: impl Iterator<Item = usize> + Clone,
) -> Vec<f64> {
    // Quadratic nodes are shared by many elements; contributions are
    // reduced in (dof, element) order so any traversal yields bit-identical
    // sums.
    let nt = m.triangles.len();
    let mut parts: Vec<(usize, usize, f64)> = Vec::new();
    if let Some(f) = load.volume_part() {
        let rule = TriangleRule::with_degree(8);
        let mut local = [0.0; 12];
        for k in order.clone() {
            let xy = m.tri_xy(k);
            local.fill(0.0);
            for (p, &w0) in rule.points.iter().zip(&rule.weights) {
                let x = Point2::new(
                    xy[0][0] + p[0] * (xy[1][0] - xy[0][0]) + p[1] * (xy[2][0] - xy[0][0]),
                    xy[0][1] + p[0] * (xy[1][1] - xy[0][1]) + p[1] * (xy[2][1] - xy[0][1]),
                );
                let w = 2.0 * m.area[k] * w0;
                let fx = f(x);
                let shape = p2_shape([1.0 - p[0] - p[1], p[0], p[1]]);
                for (n, &sh) in shape.iter().enumerate() {
                    for c in 0..2 {
                        local[2 * n + c] += w * fx[c] * sh;
                    }
                }
            }
            push_p2_locals(p2, k, k, &local, &mut parts);
        }
    }
    if let Some(line) = load.line_part() {
        let rule = SegmentRule::with_degree(31);
        let mut local = [0.0; 12];
        for k in order {
            let xy = m.tri_xy(k);
            let (ys, weight) = match cut_by_line(&xy, line.x1) {
                LineCut::Miss => continue,
                LineCut::Segment(ys) => (ys, 1.0),
                LineCut::EdgeOnLine(i) => {
                    let e = m.tri_edges[k][i];
                    let [a, b] = m.edges[e].v;
                    let share = if m.edges[e].boundary { 1.0 } else { 0.5 };
                    ([m.point(a).y, m.point(b).y], share)
                }
            };
            local.fill(0.0);
            for (&s, &w0) in rule.nodes.iter().zip(&rule.weights) {
                let y = ys[0] + s * (ys[1] - ys[0]);
                let w = weight * w0 * (ys[1] - ys[0]).abs();
                let g = (line.density)(y);
                let shape = p2_shape(m.barycentric(k, Point2::new(line.x1, y)));
                for (n, &sh) in shape.iter().enumerate() {
                    for c in 0..2 {
                        local[2 * n + c] += w * g * sh * line.direction[c];
                    }
                }
            }
            push_p2_locals(p2, k, nt + k, &local, &mut parts);
        }
    }
    let mut b = vec![0.0; p2.n_dofs];
    parts.sort_unstable_by_key(|&(dof, tag, _)| (dof, tag));
    for (dof, _, value) in parts {
        b[dof] += value;
    }
    b
}

fn push_p2_locals(
    p2: &P2Space,
    k: usize,
    tag: usize,
    local: &[f64; 12],
    parts: &mut Vec<(usize, usize, f64)>,
) {
    for (n, &node) in p2.tri_nodes[k].iter().enumerate() {
        if let Some(d) = p2.node_dof[node] {
            for c in 0..2 {
                if local[2 * n + c] != 0.0 {
                    parts.push((d + c, tag, local[2 * n + c]));
                }
            }
        }
    }
}

/// Modified load vector: the load tested against the smoothed velocity
/// basis, computed as the smoothing matrix applied to the quadratic load
/// vector.
pub fn assemble_load_modified(
    bary: &BarycentricMesh,
    p2: &P2Space,
    e: &SmootherMatrix,
    load: &LoadFunctional,
) -> Vec<f64> {
    e.apply_to_load(&assemble_load_p2(&bary.mesh, p2, load))
}
