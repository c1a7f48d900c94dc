//! Smoothing of nonconforming velocity fields into conforming quadratics.
//!
//! The operator built here maps a Crouzeix-Raviart field `v` to a globally
//! continuous piecewise quadratic field on the barycentric refinement that
//! vanishes on the boundary, keeps the integral of `v` over every edge, and
//! whose divergence equals the broken divergence of `v`. Replacing the test
//! function by its smoothed image inside the load functional decouples the
//! discrete velocity from the pressure.
//!
//! The construction is local: a vertex-averaging operator produces a
//! continuous affine field, edge bubbles restore the edge integrals, and a
//! small velocity-pressure solve on the three sub-triangles of each element
//! repairs the divergence without touching the element boundary. All three
//! stages write to disjoint or consistently shared nodes, so the operator
//! assembles row by row in time linear in the number of velocity unknowns.

use std::collections::BTreeMap;
use std::io::Write;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::fespace::{
    cr_divergence, cr_face_moment, cr_hat_grad, cr_value, p2_divergence, p2_shape_grad, CrSpace,
    P2Space,
};
use crate::mesh::{BarycentricMesh, Triangulation};
use crate::quad::TriangleRule;
use crate::sparse::Csr;
use crate::Error;

/// How the elementwise divergence corrections are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SkRealization {
    /// Assemble and factorize the local system on every element.
    #[default]
    Direct,
    /// Solve once on a reference element and push the solutions forward
    /// through the contravariant Piola transform of each element's affine
    /// map.
    Piola,
}

/// Velocity unknowns of one local correction: two components at the
/// barycentre and at the three internal edge midpoints.
const NU: usize = 8;
/// Pressure unknowns: affine, discontinuous across the three sub-triangles.
const NP: usize = 9;
/// Bordered local system size: velocities, pressures, one multiplier that
/// pins the pressure mean and absorbs the mean of the divergence load.
const NS: usize = NU + NP + 1;

/// Quadratic nodes of one element in the numbering used throughout this
/// module. `vertex[i]` follows the element's vertex order; `edge_mid[i]` is
/// the midpoint node of the edge from `vertex[i]` to `vertex[i+1]`;
/// `internal_mid[i]` is the midpoint node of the internal edge from
/// `vertex[i]` to the barycentre.
struct MacroNodes {
    vertex: [usize; 3],
    edge_mid: [usize; 3],
    centre: usize,
    internal_mid: [usize; 3],
}

/// Context for applying and assembling the smoothing operator on one mesh.
///
/// Holds the vertex-to-element choices of the averaging stage and, per
/// element, the solved correction operator for divergence loads that are
/// affine on the element. Construction factorizes every local system once;
/// all apply and row operations afterwards are pure.
pub struct Smoother<'a> {
    t: &'a Triangulation,
    bary: &'a BarycentricMesh,
    cr: &'a CrSpace,
    p2: &'a P2Space,
    /// Element whose one-sided value represents each interior vertex: the
    /// adjacent element whose barycentre lies furthest in `x`, with ties
    /// broken by `y` and then by index. Any fixed choice yields a valid
    /// averaging; this one fixes the orientation so results are reproducible
    /// across meshes of the same layout. Boundary vertices carry `None` and
    /// the value zero.
    kz: Vec<Option<usize>>,
    /// Per element: interior velocity coefficients of the divergence
    /// correction, as a map from the load's three vertex values. Row
    /// `2 j + c` is component `c` at `interior_nodes(k)[j]`.
    ops: Vec<[[f64; 3]; 8]>,
    realization: SkRealization,
    rule: TriangleRule,
}

impl<'a> Smoother<'a> {
    pub fn new(
        t: &'a Triangulation,
        bary: &'a BarycentricMesh,
        cr: &'a CrSpace,
        p2: &'a P2Space,
        realization: SkRealization,
    ) -> Result<Smoother<'a>, Error> {
        assert_eq!(bary.macro_count, t.triangles.len(), "refinement of a different mesh");
        assert_eq!(
            p2.n_nodes,
            bary.mesh.vertices.len() + bary.mesh.edges.len(),
            "quadratic space on a different refinement"
        );
        let barycentre = |k: usize| -> (f64, f64) {
            let vs = t.triangles[k];
            let (a, b, c) = (t.point(vs[0]), t.point(vs[1]), t.point(vs[2]));
            ((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
        };
        let kz = (0..t.vertices.len())
            .map(|z| {
                (!t.vertex_is_boundary[z]).then(|| {
                    let mut best = t.vertex_tris[z][0];
                    let mut best_bc = barycentre(best);
                    for &k in &t.vertex_tris[z][1..] {
                        let bc = barycentre(k);
                        if bc.0 > best_bc.0 || (bc.0 == best_bc.0 && bc.1 > best_bc.1) {
                            best = k;
                            best_bc = bc;
                        }
                    }
                    best
                })
            })
            .collect();
        let rule = TriangleRule::with_degree(2);
        let ops = match realization {
            SkRealization::Direct => (0..bary.macro_count)
                .map(|k| ElementSystem::build(bary, k, &rule).hat_solutions())
                .collect::<Result<_, _>>()?,
            SkRealization::Piola => piola_ops(t, bary, &rule)?,
        };
        Ok(Smoother { t, bary, cr, p2, kz, ops, realization, rule })
    }

    pub fn realization(&self) -> SkRealization {
        self.realization
    }

    /// The element representing interior vertex `z` in the averaging stage.
    pub fn vertex_element(&self, z: usize) -> Option<usize> {
        self.kz[z]
    }

    /// Quadratic nodes strictly inside element `k`: the barycentre followed
    /// by the three internal edge midpoints. These carry the unknowns of the
    /// divergence corrections.
    pub fn interior_nodes(&self, k: usize) -> [usize; 4] {
        let n = self.macro_nodes(k);
        [n.centre, n.internal_mid[0], n.internal_mid[1], n.internal_mid[2]]
    }

    fn macro_nodes(&self, k: usize) -> MacroNodes {
        let tn = &self.p2.tri_nodes;
        MacroNodes {
            vertex: self.t.triangles[k],
            // Sub-triangle 3k+i is (v_i, v_{i+1}, barycentre); its node
            // opposite the barycentre is the midpoint of the macro edge, and
            // the node opposite v_{i+1} is the internal midpoint at v_i.
            edge_mid: [tn[3 * k][5], tn[3 * k + 1][5], tn[3 * k + 2][5]],
            centre: self.bary.barycentre[k],
            internal_mid: [tn[3 * k][4], tn[3 * k + 1][4], tn[3 * k + 2][4]],
        }
    }

    /// One-sided vertex values feeding the averaging operator; zero at
    /// boundary vertices.
    fn vertex_values(&self, v: &[f64]) -> Vec<[f64; 2]> {
        (0..self.t.vertices.len())
            .map(|z| match self.kz[z] {
                Some(k) => cr_value(self.t, self.cr, v, k, self.t.point(z)),
                None => [0.0; 2],
            })
            .collect()
    }

    /// Emits the nodal values of the continuous affine interpolant on
    /// element `k` from per-vertex values. Shared nodes receive bitwise
    /// identical values from every adjacent element, so plain assignment is
    /// safe on any traversal order.
    fn averaging_writes(
        &self,
        k: usize,
        val: &impl Fn(usize) -> [f64; 2],
        mut set: impl FnMut(usize, [f64; 2]),
    ) {
        let nodes = self.macro_nodes(k);
        let vv = [val(nodes.vertex[0]), val(nodes.vertex[1]), val(nodes.vertex[2])];
        let centre = [
            (vv[0][0] + vv[1][0] + vv[2][0]) / 3.0,
            (vv[0][1] + vv[1][1] + vv[2][1]) / 3.0,
        ];
        set(nodes.centre, centre);
        for i in 0..3 {
            let j = (i + 1) % 3;
            set(nodes.vertex[i], vv[i]);
            set(nodes.edge_mid[i], [0.5 * (vv[i][0] + vv[j][0]), 0.5 * (vv[i][1] + vv[j][1])]);
            set(
                nodes.internal_mid[i],
                [0.5 * (vv[i][0] + centre[0]), 0.5 * (vv[i][1] + centre[1])],
            );
        }
    }

    /// Continuous affine field interpolating one-sided vertex values of `v`,
    /// zero at boundary vertices, as quadratic coefficients.
    pub fn apply_averaging(&self, v: &[f64]) -> Vec<f64> {
        let vals = self.vertex_values(v);
        let mut out = vec![0.0; self.p2.n_dofs];
        for k in 0..self.bary.macro_count {
            self.averaging_writes(k, &|z| vals[z], |node, val| {
                if let Some(d) = self.p2.node_dof[node] {
                    out[d] = val[0];
                    out[d + 1] = val[1];
                }
            });
        }
        out
    }

    /// Emits the nodal values of the edge bubble of `f` scaled by the vector
    /// moment `c`. The bubble is the quadratic supported on the edge's two
    /// elements with unit integral over `f`, zero integral over every other
    /// edge, and zero values at all their remaining quadratic nodes.
    fn bubble_writes(&self, f: usize, c: [f64; 2], mut add: impl FnMut(usize, [f64; 2])) {
        let len = self.t.edge_length(f);
        let mid = self.p2.n_vertices + self.bary.macro_edge[f];
        add(mid, [1.5 / len * c[0], 1.5 / len * c[1]]);
        let edge = &self.t.edges[f];
        for &k in &edge.tri {
            let nodes = self.macro_nodes(k);
            add(nodes.centre, [2.0 / (3.0 * len) * c[0], 2.0 / (3.0 * len) * c[1]]);
            for i in 0..3 {
                // Internal midpoints towards the edge's endpoints see the
                // bubble four times as strongly as the remaining one.
                let w = if edge.v.contains(&nodes.vertex[i]) { 2.0 / 3.0 } else { 1.0 / 6.0 };
                add(nodes.internal_mid[i], [w / len * c[0], w / len * c[1]]);
            }
        }
    }

    /// Sum of edge bubbles carrying the edge integrals of `v`: the result
    /// has the same integral as `v` over every interior edge and vanishes on
    /// the boundary.
    pub fn apply_bubble(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p2.n_dofs];
        for &f in &self.cr.interior_edges {
            let c = [cr_face_moment(self.cr, v, f, 0), cr_face_moment(self.cr, v, f, 1)];
            self.bubble_writes(f, c, |node, val| {
                if let Some(d) = self.p2.node_dof[node] {
                    out[d] += val[0];
                    out[d + 1] += val[1];
                }
            });
        }
        out
    }

    /// Averaging plus bubbles on the averaging deficit: a continuous
    /// quadratic with the edge integrals of `v` on every edge and zero
    /// boundary values.
    pub fn apply_c(&self, v: &[f64]) -> Vec<f64> {
        let vals = self.vertex_values(v);
        let mut out = vec![0.0; self.p2.n_dofs];
        for k in 0..self.bary.macro_count {
            self.averaging_writes(k, &|z| vals[z], |node, val| {
                if let Some(d) = self.p2.node_dof[node] {
                    out[d] = val[0];
                    out[d + 1] = val[1];
                }
            });
        }
        for &f in &self.cr.interior_edges {
            let [a, b] = self.t.edges[f].v;
            let len = self.t.edge_length(f);
            let deficit = [
                cr_face_moment(self.cr, v, f, 0) - len * 0.5 * (vals[a][0] + vals[b][0]),
                cr_face_moment(self.cr, v, f, 1) - len * 0.5 * (vals[a][1] + vals[b][1]),
            ];
            self.bubble_writes(f, deficit, |node, val| {
                if let Some(d) = self.p2.node_dof[node] {
                    out[d] += val[0];
                    out[d + 1] += val[1];
                }
            });
        }
        out
    }

    /// Solves the local velocity-pressure system on element `k` for a
    /// divergence load given by nodal values on the three sub-triangles:
    /// `r[3 i + l]` is the value at vertex `l` of sub-triangle `3 k + i`.
    /// Returns the velocity at `interior_nodes(k)`, component `c` of node
    /// `j` in entry `2 j + c`; the field vanishes on the element boundary
    /// and its divergence interpolates `r`.
    ///
    /// Loads with nonzero mean are rejected: every admissible velocity has
    /// zero boundary flux.
    pub fn local_stokes_solve(&self, k: usize, r: &[f64; 9]) -> Result<[f64; NU], Error> {
        let sys = ElementSystem::build(self.bary, k, &self.rule);
        let mut integral = 0.0;
        let mut rmax: f64 = 0.0;
        let mut area = 0.0;
        for i in 0..3 {
            area += sys.areas[i];
            for l in 0..3 {
                integral += sys.areas[i] / 3.0 * r[3 * i + l];
                rmax = rmax.max(r[3 * i + l].abs());
            }
        }
        if integral.abs() > 1e-10 * rmax * area {
            return Err(Error::NonzeroLocalMean { tri: k, integral });
        }
        sys.solve(r)
    }

    /// Full smoothing: the moment-preserving quadratic of [`Self::apply_c`]
    /// minus elementwise corrections that equalize its divergence with the
    /// broken divergence of `v`. The corrections live strictly inside their
    /// elements, so edge integrals and boundary values are untouched.
    pub fn apply_e(&self, v: &[f64]) -> Result<Vec<f64>, Error> {
        let mut out = self.apply_c(v);
        let m = &self.bary.mesh;
        for k in 0..self.bary.macro_count {
            let div_t = cr_divergence(self.t, self.cr, v, k);
            // The divergence excess of the smoothed field is affine on the
            // element; its vertex values determine the correction through
            // the cached operator. Sub-triangle `i` owns macro vertex `i`.
            let mut r = [0.0; 3];
            for (i, ri) in r.iter_mut().enumerate() {
                let micro = 3 * k + i;
                let x = m.point(m.triangles[micro][0]);
                *ri = p2_divergence(m, self.p2, &out, micro, x) - div_t;
            }
            if r == [0.0; 3] {
                continue;
            }
            let op = &self.ops[k];
            for (j, &node) in self.interior_nodes(k).iter().enumerate() {
                if let Some(d) = self.p2.node_dof[node] {
                    for c in 0..2 {
                        out[d + c] -=
                            op[2 * j + c][0] * r[0] + op[2 * j + c][1] * r[1] + op[2 * j + c][2] * r[2];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Quadratic coefficients of the smoothed basis field of `(f, comp)` as
    /// a sparse row, sorted by degree of freedom. Uses the per-element
    /// correction operators cached at construction; the cost is bounded by
    /// the patch size around the edge, independent of the mesh.
    pub fn row_of(&self, f: usize, comp: usize) -> Vec<(usize, f64)> {
        debug_assert!(self.cr.edge_dof[f].is_some(), "boundary edges carry no row");
        let edge = &self.t.edges[f];
        let pair = edge.tri;
        let len = self.t.edge_length(f);

        // Vertices whose averaged value sees the basis field: vertices of
        // the edge's two elements represented by one of those elements.
        let mut vals: Vec<(usize, f64)> = Vec::new();
        for &k in &pair {
            for &z in &self.t.triangles[k] {
                if self.kz[z] == Some(k) {
                    let s = if edge.v.contains(&z) { 1.0 } else { -1.0 };
                    vals.push((z, s / len));
                }
            }
        }
        let val = |z: usize| -> [f64; 2] {
            let mut out = [0.0; 2];
            if let Some(&(_, s)) = vals.iter().find(|&&(w, _)| w == z) {
                out[comp] = s;
            }
            out
        };

        // Averaging writes on every element around a contributing vertex.
        let mut amacs: Vec<usize> = vals
            .iter()
            .flat_map(|&(z, _)| self.t.vertex_tris[z].iter().copied())
            .collect();
        amacs.sort_unstable();
        amacs.dedup();
        let mut averaged: BTreeMap<usize, [f64; 2]> = BTreeMap::new();
        for &k in &amacs {
            self.averaging_writes(k, &val, |node, value| {
                averaged.insert(node, value);
            });
        }

        // Bubbles act where the averaged mean misses the basis field's edge
        // integrals: on the edge itself and on edges at contributing
        // vertices.
        let mut active: Vec<usize> = vec![f];
        for &(z, _) in &vals {
            for &k in &self.t.vertex_tris[z] {
                for &e2 in &self.t.tri_edges[k] {
                    if self.cr.edge_dof[e2].is_some() && self.t.edges[e2].v.contains(&z) {
                        active.push(e2);
                    }
                }
            }
        }
        active.sort_unstable();
        active.dedup();

        let mut acc: BTreeMap<usize, [f64; 2]> = averaged;
        let mut add = |node: usize, value: [f64; 2]| {
            let slot = acc.entry(node).or_insert([0.0; 2]);
            slot[0] += value[0];
            slot[1] += value[1];
        };
        let mut deficits: Vec<(usize, [f64; 2])> = Vec::new();
        for &e2 in &active {
            let [a, b] = self.t.edges[e2].v;
            let l2 = self.t.edge_length(e2);
            let (va, vb) = (val(a), val(b));
            let mut deficit = [
                -l2 * 0.5 * (va[0] + vb[0]),
                -l2 * 0.5 * (va[1] + vb[1]),
            ];
            if e2 == f {
                deficit[comp] += 1.0;
            }
            if deficit != [0.0, 0.0] {
                deficits.push((e2, deficit));
                self.bubble_writes(e2, deficit, &mut add);
            }
        }

        // Divergence corrections on every element the two stages touched.
        let mut cmacs = amacs;
        cmacs.extend(pair);
        for &(e2, _) in &deficits {
            cmacs.extend(self.t.edges[e2].tri);
        }
        cmacs.sort_unstable();
        cmacs.dedup();
        for &k in &cmacs {
            let gl = self.t.grad_barycentric(k);
            let tri = self.t.triangles[k];
            let div_t = if pair.contains(&k) {
                cr_hat_grad(self.t, f, k).expect("edge adjacent to its elements")[comp]
            } else {
                0.0
            };
            // Affine divergence of the two stages at the element vertices:
            // a constant from the averaged field plus bubble gradients,
            // which at a vertex only involve edges ending there.
            let mut base = -div_t;
            for i in 0..3 {
                let vz = val(tri[i]);
                base += vz[0] * gl[i][0] + vz[1] * gl[i][1];
            }
            let mut r = [base; 3];
            for &(e2, c) in &deficits {
                if !self.t.edges[e2].tri.contains(&k) {
                    continue;
                }
                let [a, b] = self.t.edges[e2].v;
                let scale = 6.0 / self.t.edge_length(e2);
                let la = tri.iter().position(|&z| z == a).expect("endpoint of an element edge");
                let lb = tri.iter().position(|&z| z == b).expect("endpoint of an element edge");
                r[la] += scale * (c[0] * gl[lb][0] + c[1] * gl[lb][1]);
                r[lb] += scale * (c[0] * gl[la][0] + c[1] * gl[la][1]);
            }
            let op = &self.ops[k];
            for (j, &node) in self.interior_nodes(k).iter().enumerate() {
                for c in 0..2 {
                    let u = op[2 * j + c][0] * r[0] + op[2 * j + c][1] * r[1]
                        + op[2 * j + c][2] * r[2];
                    if u != 0.0 {
                        add(node, if c == 0 { [-u, 0.0] } else { [0.0, -u] });
                    }
                }
            }
        }

        let mut row = Vec::new();
        for (node, value) in acc {
            if let Some(d) = self.p2.node_dof[node] {
                for c in 0..2 {
                    if value[c] != 0.0 {
                        row.push((d + c, value[c]));
                    }
                }
            }
        }
        row
    }

    /// Assembles the operator matrix: one row per velocity unknown, columns
    /// over quadratic unknowns.
    pub fn assemble_matrix(&self) -> SmootherMatrix {
        let mut triplets = Vec::new();
        for &f in &self.cr.interior_edges {
            for comp in 0..2 {
                let dof = self.cr.dof(f, comp).expect("interior edge");
                for (col, value) in self.row_of(f, comp) {
                    triplets.push((dof, col, value));
                }
            }
        }
        SmootherMatrix {
            matrix: Csr::from_triplets(self.cr.n_dofs, self.p2.n_dofs, &mut triplets),
        }
    }

    /// Load vector of the modified scheme from a load assembled against the
    /// quadratic basis, built row by row without storing the matrix.
    pub fn modified_load(&self, load: &[f64]) -> Vec<f64> {
        assert_eq!(load.len(), self.p2.n_dofs);
        let mut b = vec![0.0; self.cr.n_dofs];
        for &f in &self.cr.interior_edges {
            for comp in 0..2 {
                let dof = self.cr.dof(f, comp).expect("interior edge");
                b[dof] = self.row_of(f, comp).iter().map(|&(j, v)| v * load[j]).sum();
            }
        }
        b
    }

    /// Largest gradient norm of the local correction relative to the norm of
    /// its divergence load on element `k`, over all mean-zero loads. Grows
    /// with the element's aspect ratio.
    pub fn sk_stability_constant(&self, k: usize) -> Result<f64, Error> {
        let sys = ElementSystem::build(self.bary, k, &self.rule);
        // Solutions for the nine nodal loads; restricted below to mean-zero
        // combinations, where the multiplier trick solves the exact load.
        let mut s9 = [[0.0; NP]; NU];
        for j in 0..NP {
            let mut r = [0.0; NP];
            r[j] = 1.0;
            let u = sys.solve(&r)?;
            for (i, &ui) in u.iter().enumerate() {
                s9[i][j] = ui;
            }
        }
        // Load mass matrix, block affine per sub-triangle.
        let mut mass = [[0.0; NP]; NP];
        let mut mvec = [0.0; NP];
        for i in 0..3 {
            let s = sys.areas[i] / 12.0;
            for l in 0..3 {
                for l2 in 0..3 {
                    mass[3 * i + l][3 * i + l2] = if l == l2 { 2.0 * s } else { s };
                }
                mvec[3 * i + l] = sys.areas[i] / 3.0;
            }
        }
        // Gradient energy of the solution map: (S r)' A (S r).
        let mut g9 = [[0.0; NP]; NP];
        for a in 0..NP {
            for b in 0..NP {
                let mut sum = 0.0;
                for i in 0..NU {
                    for j in 0..NU {
                        sum += s9[i][a] * *sys.mat.get(i, j) * s9[j][b];
                    }
                }
                g9[a][b] = sum;
            }
        }
        // Basis of the mean-zero load space.
        let mut w = [[0.0; NU]; NP];
        for l in 0..NU {
            w[l + 1][l] = mvec[0];
            w[0][l] = -mvec[l + 1];
        }
        let project = |m9: &[[f64; NP]; NP]| -> Mat<f64> {
            Mat::from_fn(NU, NU, |a, b| {
                let mut sum = 0.0;
                for i in 0..NP {
                    for j in 0..NP {
                        sum += w[i][a] * m9[i][j] * w[j][b];
                    }
                }
                sum
            })
        };
        let gw = project(&g9);
        let hw = project(&mass);
        let lu = hw.partial_piv_lu();
        // Power iteration for the largest generalized eigenvalue; the pair
        // is symmetric with the mass positive definite, so it converges to
        // the squared stability constant.
        let mut x = Mat::from_fn(NU, 1, |i, _| 1.0 + 0.1 * i as f64);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let gx = Mat::from_fn(NU, 1, |i, _| {
                (0..NU).map(|j| *gw.get(i, j) * *x.get(j, 0)).sum::<f64>()
            });
            let hx = Mat::from_fn(NU, 1, |i, _| {
                (0..NU).map(|j| *hw.get(i, j) * *x.get(j, 0)).sum::<f64>()
            });
            let num: f64 = (0..NU).map(|i| *x.get(i, 0) * *gx.get(i, 0)).sum();
            let den: f64 = (0..NU).map(|i| *x.get(i, 0) * *hx.get(i, 0)).sum();
            let next = num / den;
            let y = lu.solve(&gx);
            let norm = (0..NU).map(|i| y.get(i, 0) * y.get(i, 0)).sum::<f64>().sqrt();
            if !(norm > 0.0) || !next.is_finite() {
                return Err(Error::Singular("stability eigenvalue iteration"));
            }
            x = Mat::from_fn(NU, 1, |i, _| y.get(i, 0) / norm);
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        Ok(lambda.sqrt())
    }
}

/// Sparse matrix of the smoothing operator. Row `i` holds the quadratic
/// coefficients of the smoothed `i`-th velocity basis field, so transposed
/// application smooths coefficient vectors and direct application turns
/// quadratic load vectors into modified velocity loads.
pub struct SmootherMatrix {
    pub matrix: Csr,
}

impl SmootherMatrix {
    /// Modified load vector from a load against the quadratic basis.
    pub fn apply_to_load(&self, load: &[f64]) -> Vec<f64> {
        self.matrix.matvec(load)
    }

    /// Quadratic coefficients of the smoothed field of `v`.
    pub fn smooth(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.matvec_transpose(v)
    }

    pub fn max_row_nnz(&self) -> usize {
        self.matrix.max_row_nnz()
    }

    /// Writes `row column value` triples, one entry per line.
    pub fn dump_coo<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.matrix.nrows {
            let (cols, vals) = self.matrix.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(out, "{i} {c} {v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// Dense bordered system of one element: velocity stiffness on the interior
/// quadratic nodes, affine discontinuous pressures on the sub-triangles, and
/// one multiplier row pinning the pressure mean. Because the multiplier also
/// enters the divergence rows, solving with a load of nonzero mean returns
/// the correction for the load minus its mean.
struct ElementSystem {
    lu: PartialPivLu<f64>,
    mat: Mat<f64>,
    mat_norm: f64,
    areas: [f64; 3],
}

impl ElementSystem {
    fn build(bary: &BarycentricMesh, k: usize, rule: &TriangleRule) -> ElementSystem {
        let m = &bary.mesh;
        let mut a = Mat::<f64>::zeros(NS, NS);
        let mut areas = [0.0; 3];
        for i in 0..3 {
            let micro = 3 * k + i;
            areas[i] = m.area[micro];
            let gl = m.grad_barycentric(micro);
            // Interior scalar nodes of this sub-triangle as (shape index,
            // element dof): the barycentre and the two internal midpoints.
            let locals = [(2usize, 0usize), (3, 1 + (i + 1) % 3), (4, 1 + i)];
            for (p, &w0) in rule.points.iter().zip(&rule.weights) {
                let w = 2.0 * areas[i] * w0;
                let l = [1.0 - p[0] - p[1], p[0], p[1]];
                let g = p2_shape_grad(l, gl);
                for &(sa, da) in &locals {
                    for &(sb, db) in &locals {
                        let s = w * (g[sa][0] * g[sb][0] + g[sa][1] * g[sb][1]);
                        for c in 0..2 {
                            *a.get_mut(2 * da + c, 2 * db + c) += s;
                        }
                    }
                    for lp in 0..3 {
                        let row = NU + 3 * i + lp;
                        for c in 0..2 {
                            let b = w * l[lp] * g[sa][c];
                            *a.get_mut(row, 2 * da + c) += b;
                            *a.get_mut(2 * da + c, row) -= b;
                        }
                    }
                }
                for lp in 0..3 {
                    let row = NU + 3 * i + lp;
                    *a.get_mut(row, NS - 1) += w * l[lp];
                    *a.get_mut(NS - 1, row) += w * l[lp];
                }
            }
        }
        let mut mat_norm: f64 = 0.0;
        for i in 0..NS {
            for j in 0..NS {
                mat_norm = mat_norm.max(a.get(i, j).abs());
            }
        }
        let lu = a.partial_piv_lu();
        ElementSystem { lu, mat: a, mat_norm, areas }
    }

    /// Right-hand side of the divergence rows: the load tested against the
    /// affine pressure basis, exactly.
    fn rhs(&self, r: &[f64; NP]) -> Mat<f64> {
        let mut b = Mat::<f64>::zeros(NS, 1);
        for i in 0..3 {
            let s = self.areas[i] / 12.0;
            for l in 0..3 {
                let own = r[3 * i + l];
                let others = r[3 * i + (l + 1) % 3] + r[3 * i + (l + 2) % 3];
                *b.get_mut(NU + 3 * i + l, 0) = s * (2.0 * own + others);
            }
        }
        b
    }

    fn solve(&self, r: &[f64; NP]) -> Result<[f64; NU], Error> {
        let b = self.rhs(r);
        let x = self.lu.solve(&b);
        // A wildly inconsistent solution means the factorization hit a
        // numerically singular system, i.e. a degenerate element.
        let mut residual: f64 = 0.0;
        let mut xmax: f64 = 0.0;
        let mut bmax: f64 = 0.0;
        for i in 0..NS {
            let mut row = 0.0;
            for j in 0..NS {
                row += *self.mat.get(i, j) * *x.get(j, 0);
            }
            residual = residual.max((row - *b.get(i, 0)).abs());
            xmax = xmax.max(x.get(i, 0).abs());
            bmax = bmax.max(b.get(i, 0).abs());
        }
        let scale = bmax + self.mat_norm * xmax;
        if !residual.is_finite() || residual > 1e-8 * scale {
            return Err(Error::Singular("local velocity-pressure system"));
        }
        let mut u = [0.0; NU];
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = *x.get(i, 0);
        }
        Ok(u)
    }

    /// Correction velocities for the three vertex hat loads. Hats have
    /// nonzero mean; the multiplier absorbs it, so affine mean-zero loads
    /// expand exactly in these solutions by their vertex values.
    fn hat_solutions(&self) -> Result<[[f64; 3]; NU], Error> {
        let mut out = [[0.0; 3]; NU];
        for j in 0..3 {
            let mut r = [0.0; NP];
            for i in 0..3 {
                r[3 * i] = if i == j { 1.0 } else { 0.0 };
                r[3 * i + 1] = if (i + 1) % 3 == j { 1.0 } else { 0.0 };
                r[3 * i + 2] = 1.0 / 3.0;
            }
            let u = self.solve(&r)?;
            for (row, &value) in u.iter().enumerate() {
                out[row][j] = value;
            }
        }
        Ok(out)
    }
}

/// Correction operators for all elements from one reference solve: the
/// contravariant Piola transform maps reference solutions to element
/// solutions, with the determinant factors of the velocity transform and the
/// load scaling cancelling each other.
fn piola_ops(
    t: &Triangulation,
    bary: &BarycentricMesh,
    rule: &TriangleRule,
) -> Result<Vec<[[f64; 3]; NU]>, Error> {
    use crate::mesh::Point2;
    let reference = Triangulation::from_cells(
        vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
        vec![[0, 1, 2]],
        None,
    )
    .expect("reference element is a valid mesh");
    let refined = reference.barycentric_refine();
    let base = ElementSystem::build(&refined, 0, rule).hat_solutions()?;
    let mut ops = Vec::with_capacity(bary.macro_count);
    for k in 0..bary.macro_count {
        let c = t.tri_xy(k);
        let b = [[c[1][0] - c[0][0], c[2][0] - c[0][0]], [c[1][1] - c[0][1], c[2][1] - c[0][1]]];
        let mut op = [[0.0; 3]; NU];
        for node in 0..4 {
            for comp in 0..2 {
                for j in 0..3 {
                    op[2 * node + comp][j] = b[comp][0] * base[2 * node][j]
                        + b[comp][1] * base[2 * node + 1][j];
                }
            }
        }
        ops.push(op);
    }
    Ok(ops)
}
