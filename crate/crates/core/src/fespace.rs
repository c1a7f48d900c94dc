//! Discrete spaces: nonconforming affine vectors with edge-midpoint coupling
//! (velocities), continuous piecewise quadratics on a refined mesh (smoothed
//! test fields), and piecewise constants (pressures).
//!
//! Degrees of freedom always come in x/y pairs: a scalar carrier (interior
//! edge or interior quadratic node) with index `pos` owns the two components
//! `2 pos` and `2 pos + 1`. Carriers on the domain boundary carry no degrees
//! of freedom; the represented fields vanish there.

use crate::mesh::{Point2, Triangulation};
use crate::quad::SegmentRule;
use crate::Error;

/// Vector Crouzeix-Raviart space: piecewise affine, coupled through edge mean
/// values, zero mean on boundary edges.
#[derive(Clone, Debug)]
pub struct CrSpace {
    pub n_dofs: usize,
    /// Edge indices that carry degrees of freedom, ascending.
    pub interior_edges: Vec<usize>,
    /// Base (x-component) degree of freedom of each edge, if interior.
    pub edge_dof: Vec<Option<usize>>,
}

impl CrSpace {
    pub fn new(t: &Triangulation) -> CrSpace {
        let mut interior_edges = Vec::new();
        let mut edge_dof = vec![None; t.edges.len()];
        for (e, edge) in t.edges.iter().enumerate() {
            if !edge.boundary {
                edge_dof[e] = Some(2 * interior_edges.len());
                interior_edges.push(e);
            }
        }
        CrSpace { n_dofs: 2 * interior_edges.len(), interior_edges, edge_dof }
    }

    pub fn dof(&self, edge: usize, comp: usize) -> Option<usize> {
        self.edge_dof[edge].map(|base| base + comp)
    }
}

/// Scalar basis function of edge `f` restricted to adjacent triangle `k`:
/// affine with integral 1 over `f` and integral 0 over the other edges of
/// `k`. Its value at the midpoint of `f` is `1 / |f|`.
pub fn cr_hat(t: &Triangulation, f: usize, k: usize, x: Point2) -> Result<f64, Error> {
    let local = local_edge(t, f, k)?;
    let l = t.barycentric(k, x);
    Ok((1.0 - 2.0 * l[local]) / t.edge_length(f))
}

/// Gradient of [`cr_hat`] on `k`: the outward normal over the element area.
pub fn cr_hat_grad(t: &Triangulation, f: usize, k: usize) -> Result<[f64; 2], Error> {
    let local = local_edge(t, f, k)?;
    let n = t.outward_normal(k, local);
    Ok([n[0] / t.area[k], n[1] / t.area[k]])
}

fn local_edge(t: &Triangulation, f: usize, k: usize) -> Result<usize, Error> {
    t.tri_edges
        .get(k)
        .and_then(|edges| edges.iter().position(|&e| e == f))
        .ok_or(Error::NotAdjacent { edge: f, tri: k })
}

/// Value of a coefficient vector on triangle `k`.
pub fn cr_value(t: &Triangulation, sp: &CrSpace, u: &[f64], k: usize, x: Point2) -> [f64; 2] {
    let l = t.barycentric(k, x);
    let mut out = [0.0; 2];
    for (i, &e) in t.tri_edges[k].iter().enumerate() {
        if let Some(base) = sp.edge_dof[e] {
            let hat = (1.0 - 2.0 * l[i]) / t.edge_length(e);
            out[0] += u[base] * hat;
            out[1] += u[base + 1] * hat;
        }
    }
    out
}

/// Jacobian of a coefficient vector on triangle `k`, constant there;
/// `out[c][d]` is the derivative of component `c` along direction `d`.
pub fn cr_gradient(t: &Triangulation, sp: &CrSpace, u: &[f64], k: usize) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (i, &e) in t.tri_edges[k].iter().enumerate() {
        if let Some(base) = sp.edge_dof[e] {
            let n = t.outward_normal(k, i);
            for d in 0..2 {
                out[0][d] += u[base] * n[d] / t.area[k];
                out[1][d] += u[base + 1] * n[d] / t.area[k];
            }
        }
    }
    out
}

pub fn cr_divergence(t: &Triangulation, sp: &CrSpace, u: &[f64], k: usize) -> f64 {
    let g = cr_gradient(t, sp, u, k);
    g[0][0] + g[1][1]
}

/// Integral of one component over an edge. With the integral-normalized
/// basis that is the stored coefficient, or zero on boundary edges.
pub fn cr_face_moment(sp: &CrSpace, u: &[f64], f: usize, comp: usize) -> f64 {
    match sp.edge_dof[f] {
        Some(base) => u[base + comp],
        None => 0.0,
    }
}

/// Vector Lagrange space of continuous piecewise quadratics vanishing on the
/// boundary. Nodes are the mesh vertices followed by the edge midpoints
/// (node `nv + e` sits on edge `e`).
#[derive(Clone, Debug)]
pub struct P2Space {
    pub n_nodes: usize,
    pub n_dofs: usize,
    /// Number of mesh vertices; midpoint nodes start here.
    pub n_vertices: usize,
    pub node_xy: Vec<Point2>,
    pub node_is_boundary: Vec<bool>,
    /// Base (x-component) degree of freedom of each node, if interior.
    pub node_dof: Vec<Option<usize>>,
    /// Nodes of each triangle: three vertices, then the midpoints of the
    /// edges opposite them.
    pub tri_nodes: Vec<[usize; 6]>,
}

impl P2Space {
    pub fn new(m: &Triangulation) -> P2Space {
        let nv = m.vertices.len();
        let n_nodes = nv + m.edges.len();
        let mut node_xy = Vec::with_capacity(n_nodes);
        let mut node_is_boundary = Vec::with_capacity(n_nodes);
        node_xy.extend_from_slice(&m.vertices);
        node_is_boundary.extend_from_slice(&m.vertex_is_boundary);
        for (e, edge) in m.edges.iter().enumerate() {
            node_xy.push(m.edge_midpoint(e));
            node_is_boundary.push(edge.boundary);
        }
        let mut node_dof = vec![None; n_nodes];
        let mut n_dofs = 0;
        for (n, &bdry) in node_is_boundary.iter().enumerate() {
            if !bdry {
                node_dof[n] = Some(n_dofs);
                n_dofs += 2;
            }
        }
        let tri_nodes = (0..m.triangles.len())
            .map(|k| {
                let t = m.triangles[k];
                let e = m.tri_edges[k];
                [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]]
            })
            .collect();
        P2Space { n_nodes, n_dofs, n_vertices: nv, node_xy, node_is_boundary, node_dof, tri_nodes }
    }

    /// Nodal value of one component; zero at boundary nodes.
    pub fn node_value(&self, u: &[f64], node: usize, comp: usize) -> f64 {
        match self.node_dof[node] {
            Some(base) => u[base + comp],
            None => 0.0,
        }
    }
}

/// Quadratic Lagrange shape functions in barycentric coordinates, ordered
/// like `P2Space::tri_nodes`.
pub fn p2_shape(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// Gradients of [`p2_shape`] given the barycentric gradients of the triangle.
pub fn p2_shape_grad(l: [f64; 3], gl: [[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        for d in 0..2 {
            out[i][d] = (4.0 * l[i] - 1.0) * gl[i][d];
            out[3 + i][d] = 4.0 * (l[j] * gl[k][d] + l[k] * gl[j][d]);
        }
    }
    out
}

pub fn p2_value(m: &Triangulation, sp: &P2Space, u: &[f64], k: usize, x: Point2) -> [f64; 2] {
    let shape = p2_shape(m.barycentric(k, x));
    let mut out = [0.0; 2];
    for (i, &node) in sp.tri_nodes[k].iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            *o += sp.node_value(u, node, c) * shape[i];
        }
    }
    out
}

/// Jacobian at a point of triangle `k`; `out[c][d]` as in [`cr_gradient`].
pub fn p2_gradient(
    m: &Triangulation,
    sp: &P2Space,
    u: &[f64],
    k: usize,
    x: Point2,
) -> [[f64; 2]; 2] {
    let grads = p2_shape_grad(m.barycentric(k, x), m.grad_barycentric(k));
    let mut out = [[0.0; 2]; 2];
    for (i, &node) in sp.tri_nodes[k].iter().enumerate() {
        for c in 0..2 {
            let coeff = sp.node_value(u, node, c);
            out[c][0] += coeff * grads[i][0];
            out[c][1] += coeff * grads[i][1];
        }
    }
    out
}

pub fn p2_divergence(m: &Triangulation, sp: &P2Space, u: &[f64], k: usize, x: Point2) -> f64 {
    let g = p2_gradient(m, sp, u, k, x);
    g[0][0] + g[1][1]
}

/// Integral of one component over edge `e` of the quadratic's own mesh.
/// The trace along an edge is a univariate quadratic, so Simpson's rule on
/// the two endpoints and the midpoint node is exact.
pub fn p2_face_moment(m: &Triangulation, sp: &P2Space, u: &[f64], e: usize, comp: usize) -> f64 {
    let [a, b] = m.edges[e].v;
    let va = sp.node_value(u, a, comp);
    let vb = sp.node_value(u, b, comp);
    let vm = sp.node_value(u, sp.n_vertices + e, comp);
    (va + 4.0 * vm + vb) / 6.0 * m.edge_length(e)
}

/// Piecewise constant pressures; one value per triangle, determined up to a
/// constant which solvers fix through the area-weighted mean.
#[derive(Clone, Debug)]
pub struct P0Space {
    pub n_dofs: usize,
}

impl P0Space {
    pub fn new(t: &Triangulation) -> P0Space {
        P0Space { n_dofs: t.triangles.len() }
    }
}

/// Area-weighted mean of a piecewise constant field.
pub fn p0_mean(t: &Triangulation, p: &[f64]) -> f64 {
    let total: f64 = t.area.iter().sum();
    let weighted: f64 = p.iter().zip(&t.area).map(|(&v, &a)| v * a).sum();
    weighted / total
}

/// Shifts a piecewise constant field to area-weighted mean zero.
pub fn p0_remove_mean(t: &Triangulation, p: &mut [f64]) {
    let mean = p0_mean(t, p);
    for v in p.iter_mut() {
        *v -= mean;
    }
}

/// Integral of a vector field over edge `e`, one-sided from the first
/// adjacent triangle, via Gauss quadrature. Used to verify moment identities
/// for fields given by arbitrary evaluators.
pub fn edge_moments_of(
    t: &Triangulation,
    rule: &SegmentRule,
    mut eval: impl FnMut(usize, Point2) -> [f64; 2],
    e: usize,
) -> [f64; 2] {
    let k = t.edges[e].tri[0];
    let (a, b) = (t.vertices[t.edges[e].v[0]], t.vertices[t.edges[e].v[1]]);
    let len = t.edge_length(e);
    let mut out = [0.0; 2];
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let x = Point2::new(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y));
        let v = eval(k, x);
        out[0] += w * len * v[0];
        out[1] += w * len * v[1];
    }
    out
}
