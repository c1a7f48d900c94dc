//! Solution paths for the discrete Stokes systems.
//!
//! Three routes to the same answer, used to cross-validate each other:
//!
//! * [`solve_saddle_point`] factorizes the full velocity-pressure system
//!   with a scalar multiplier pinning the pressure mean,
//! * [`solve_reduced`] works in the elementwise divergence-free subspace
//!   spanned by [`DivFreeBasis`], which decouples the velocity,
//! * [`recover_pressure`] rebuilds the pressure from a known velocity by
//!   integrating jump relations along a breadth-first element sweep.
//!
//! The reduced route pairs a symmetric positive definite system with a
//! linear-time pressure recovery, so it is also the cheapest: the experiment
//! drivers use it for production solves and reserve the saddle-point
//! factorization for coarse-level consistency checks.

use std::collections::VecDeque;

use crate::assembly::{
    assemble_load_p2, assemble_stiffness, LoadFunctional, SaddleSystem,
};
use crate::fespace::{CrSpace, P2Space};
use crate::mesh::{Triangulation, NO_TRI};
use crate::smoothing::SmootherMatrix;
use crate::sparse::{Csr, LuSolver, SpdSolver};
use crate::Error;

/// Discrete velocity and pressure.
///
/// The velocity coefficients are edge moments (two components per interior
/// edge), the pressure is one constant per element. Solutions returned by
/// this module have elementwise-zero discrete divergence and area-weighted
/// pressure mean zero, up to factorization accuracy.
#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

/// Locally supported basis of the elementwise divergence-free velocities.
///
/// On a simply connected domain the subspace is spanned by one tangential
/// field per interior edge and one vortex per interior vertex, so the
/// cardinality equals the velocity dof count minus the rank of the
/// divergence constraint.
pub struct DivFreeBasis {
    /// Velocity dof count of the underlying space.
    pub n_dofs: usize,
    /// Sparse coefficient vectors, one per field, sorted by dof index.
    pub fields: Vec<Vec<(usize, f64)>>,
    /// The first `n_tangential` fields are the edge-tangential ones.
    pub n_tangential: usize,
    /// The remaining `n_vortex` fields circle one interior vertex each.
    pub n_vortex: usize,
}

impl DivFreeBasis {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Materializes field `i` as a dense coefficient vector.
    pub fn field_vector(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_dofs];
        for &(dof, c) in &self.fields[i] {
            v[dof] = c;
        }
        v
    }

    /// Rows are fields, columns are velocity dofs.
    pub fn coefficient_matrix(&self) -> Csr {
        let mut triplets = Vec::new();
        for (i, field) in self.fields.iter().enumerate() {
            for &(dof, c) in field {
                triplets.push((i, dof, c));
            }
        }
        Csr::from_triplets(self.fields.len(), self.n_dofs, &mut triplets)
    }
}

/// Builds the divergence-free basis: for each interior edge the basis
/// function scaled by the unit tangent, and for each interior vertex the
/// vortex combining the unit normals of all edges meeting it, oriented
/// counterclockwise around the vertex.
pub fn build_divfree_basis(t: &Triangulation, cr: &CrSpace) -> DivFreeBasis {
    let mut fields = Vec::with_capacity(cr.interior_edges.len());
    for &e in &cr.interior_edges {
        let tangent = t.edge_tangent(e);
        let dof = cr.dof(e, 0).expect("interior edges carry dofs");
        fields.push(vec![(dof, tangent[0]), (dof + 1, tangent[1])]);
    }
    let n_tangential = fields.len();

    let mut vertex_edges: Vec<Vec<usize>> = vec![Vec::new(); t.vertices.len()];
    for (e, edge) in t.edges.iter().enumerate() {
        vertex_edges[edge.v[0]].push(e);
        vertex_edges[edge.v[1]].push(e);
    }
    for z in 0..t.vertices.len() {
        if t.vertex_is_boundary[z] {
            continue;
        }
        let pz = t.point(z);
        let mut coeffs = Vec::with_capacity(2 * vertex_edges[z].len());
        for &e in &vertex_edges[z] {
            let other = if t.edges[e].v[0] == z { t.edges[e].v[1] } else { t.edges[e].v[0] };
            let po = t.point(other);
            let len = t.edge_length(e);
            // Unit direction away from z, rotated a quarter turn
            // counterclockwise: the normals circle the vertex.
            let d = [(po.x - pz.x) / len, (po.y - pz.y) / len];
            let dof = cr.dof(e, 0).expect("edges at an interior vertex are interior");
            coeffs.push((dof, -d[1]));
            coeffs.push((dof + 1, d[0]));
        }
        coeffs.sort_unstable_by_key(|&(dof, _)| dof);
        fields.push(coeffs);
    }
    let n_vortex = fields.len() - n_tangential;
    DivFreeBasis { n_dofs: cr.n_dofs, fields, n_tangential, n_vortex }
}

/// Sparse LU factorization of the bordered velocity-pressure system,
/// reusable across load vectors on the same mesh.
///
/// The system is augmented with one multiplier column holding the element
/// areas, which pins the area-weighted pressure mean to zero.
pub struct SaddleFactorization<'a> {
    system: &'a SaddleSystem,
    lu: LuSolver,
}

impl<'a> SaddleFactorization<'a> {
    pub fn new(system: &'a SaddleSystem) -> Result<SaddleFactorization<'a>, Error> {
        let n = system.a.nrows;
        let p = system.d.nrows;
        if system.b.len() != n || system.mean.len() != p || system.d.ncols != n {
            return Err(Error::InvalidConfig(format!(
                "saddle system blocks disagree: A is {}x{}, D is {}x{}, b has {}, mean has {}",
                system.a.nrows, system.a.ncols, system.d.nrows, system.d.ncols,
                system.b.len(), system.mean.len()
            )));
        }
        let dim = n + p + 1;
        let mut triplets = Vec::with_capacity(system.a.nnz() + 2 * system.d.nnz() + 2 * p);
        for i in 0..n {
            let (cols, vals) = system.a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((i, j, v));
            }
        }
        for k in 0..p {
            let (cols, vals) = system.d.row(k);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((n + k, j, v));
                triplets.push((j, n + k, -v));
            }
            triplets.push((n + k, n + p, system.mean[k]));
            triplets.push((n + p, n + k, system.mean[k]));
        }
        let mat = Csr::from_triplets(dim, dim, &mut triplets);
        let lu = LuSolver::new(&mat)?;
        Ok(SaddleFactorization { system, lu })
    }

    /// Solves for one momentum load, which may differ from the vector the
    /// factored system was assembled with. Returns an error if the solution
    /// does not reproduce the right-hand side to near machine accuracy.
    pub fn solve(&self, b: &[f64]) -> Result<StokesSolution, Error> {
        let system = self.system;
        let n = system.a.nrows;
        let p = system.d.nrows;
        if b.len() != n {
            return Err(Error::InvalidConfig(format!(
                "saddle solve expects a load of {n}, got {}",
                b.len()
            )));
        }
        let mut rhs = vec![0.0; n + p + 1];
        rhs[..n].copy_from_slice(b);
        let x = self.lu.solve(&rhs);
        let u = x[..n].to_vec();
        let pr = x[n..n + p].to_vec();
        let mu = x[n + p];

        // Momentum, mass and mean equations must be met to within a small
        // multiple of the data scale, else the factorization went astray.
        let au = system.a.matvec(&u);
        let dtp = system.d.matvec_transpose(&pr);
        let du = system.d.matvec(&u);
        let scale = norm_inf(b)
            + norm_inf(&au)
            + norm_inf(&dtp)
            + norm_inf(&du)
            + mu.abs() * norm_inf(&system.mean);
        let tol = 1e-10 * scale;
        let mut resid: f64 = 0.0;
        for i in 0..n {
            resid = resid.max((au[i] - dtp[i] - b[i]).abs());
        }
        for k in 0..p {
            resid = resid.max((du[k] + system.mean[k] * mu).abs());
        }
        let mean_defect: f64 = system.mean.iter().zip(&pr).map(|(a, q)| a * q).sum();
        resid = resid.max(mean_defect.abs());
        if resid > tol {
            return Err(Error::Singular("saddle-point residuals exceed the accuracy gate"));
        }
        Ok(StokesSolution { u, p: pr })
    }
}

/// Factorizes and solves the bordered velocity-pressure system in one go.
pub fn solve_saddle_point(system: &SaddleSystem) -> Result<StokesSolution, Error> {
    SaddleFactorization::new(system)?.solve(&system.b)
}

/// Galerkin matrix of the velocity form restricted to the basis span.
pub fn reduced_matrix(basis: &DivFreeBasis, a: &Csr) -> Csr {
    let z = basis.coefficient_matrix();
    let zt = z.transpose();
    z.matmul(a).matmul(&zt)
}

/// Cholesky factorization of the velocity problem restricted to the
/// divergence-free subspace, reusable across load vectors on the same mesh.
///
/// The reduced matrix is symmetric positive definite; a failed factorization
/// therefore signals a rank-deficient basis. Solutions are mapped back to
/// edge-moment coefficients.
pub struct ReducedFactorization {
    /// Basis coefficients; rows are fields, columns are velocity dofs.
    z: Csr,
    /// The basis-space Galerkin matrix, kept for residual checks.
    g: Csr,
    /// Maximum absolute row sum of `g`; the scale of attainable residuals.
    g_norm: f64,
    chol: SpdSolver,
}

impl ReducedFactorization {
    pub fn new(basis: &DivFreeBasis, a: &Csr) -> Result<ReducedFactorization, Error> {
        if a.nrows != basis.n_dofs || a.ncols != basis.n_dofs {
            return Err(Error::InvalidConfig(format!(
                "reduced solve expects {} dofs, got a {}x{} matrix",
                basis.n_dofs, a.nrows, a.ncols
            )));
        }
        let z = basis.coefficient_matrix();
        let g = z.matmul(a).matmul(&z.transpose());
        let g_norm = (0..g.nrows)
            .map(|i| g.row(i).1.iter().map(|v| v.abs()).sum())
            .fold(0.0_f64, f64::max);
        let chol = SpdSolver::new(&g)?;
        Ok(ReducedFactorization { z, g, g_norm, chol })
    }

    /// Solves for the velocity under one momentum load. Returns an error if
    /// the basis-space residual is not small against the data scale.
    ///
    /// Strong anisotropy inflates the condition number of the reduced
    /// matrix, so a plain triangular solve can leave a residual well above
    /// rounding; up to two refinement sweeps reclaim the lost digits.
    pub fn velocity(&self, load: &[f64]) -> Result<Vec<f64>, Error> {
        if load.len() != self.z.ncols {
            return Err(Error::InvalidConfig(format!(
                "reduced solve expects a load of {}, got {}",
                self.z.ncols,
                load.len()
            )));
        }
        let rhs = self.z.matvec(load);
        let max_diff = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0_f64, f64::max)
        };
        let scale = |y: &[f64]| self.g_norm * norm_inf(y) + norm_inf(&rhs);
        let mut y = self.chol.solve(&rhs);
        let mut gy = self.g.matvec(&y);
        for _ in 0..2 {
            if max_diff(&gy, &rhs) <= 1e-13 * scale(&y) {
                break;
            }
            let r: Vec<f64> = rhs.iter().zip(&gy).map(|(b, a)| b - a).collect();
            let dy = self.chol.solve(&r);
            for (yi, di) in y.iter_mut().zip(&dy) {
                *yi += di;
            }
            gy = self.g.matvec(&y);
        }
        if max_diff(&gy, &rhs) > 1e-10 * scale(&y) {
            return Err(Error::Singular("reduced residual exceeds the accuracy gate"));
        }
        Ok(self.z.matvec_transpose(&y))
    }
}

/// Factorizes and solves the reduced velocity problem in one go.
pub fn solve_reduced(basis: &DivFreeBasis, a: &Csr, load: &[f64]) -> Result<Vec<f64>, Error> {
    if load.len() != basis.n_dofs {
        return Err(Error::InvalidConfig(format!(
            "reduced solve expects a load of {}, got {}",
            basis.n_dofs,
            load.len()
        )));
    }
    ReducedFactorization::new(basis, a)?.velocity(load)
}

/// Recovers the elementwise pressure of the modified scheme from a solved
/// velocity field, assembling the smoothed load and the stiffness itself.
pub fn recover_pressure_modified(
    t: &Triangulation,
    u: &[f64],
    f: &LoadFunctional,
    e: &SmootherMatrix,
    nu: f64,
) -> Result<Vec<f64>, Error> {
    let cr = CrSpace::new(t);
    let bary = t.barycentric_refine();
    let p2 = P2Space::new(&bary.mesh);
    if e.matrix.nrows != cr.n_dofs || e.matrix.ncols != p2.n_dofs {
        return Err(Error::InvalidConfig(format!(
            "smoothing matrix is {}x{}, expected {}x{}",
            e.matrix.nrows, e.matrix.ncols, cr.n_dofs, p2.n_dofs
        )));
    }
    let b = e.apply_to_load(&assemble_load_p2(&bary.mesh, &p2, f));
    let a = assemble_stiffness(t, &cr, nu);
    recover_pressure(t, &cr, &a, u, &b)
}

/// Recovers the elementwise pressure from a velocity field and the load
/// vector it was solved against.
///
/// Testing the momentum equation with the normal-scaled basis function of
/// an interior edge isolates the pressure jump across that edge. A
/// breadth-first sweep over the element adjacency graph accumulates the
/// jumps from element 0 outward, and the area-weighted mean is subtracted
/// at the end, leaving the weighted sum exactly zero. Runtime is linear in
/// the element count; no linear system is solved.
pub fn recover_pressure(
    t: &Triangulation,
    cr: &CrSpace,
    a: &Csr,
    u: &[f64],
    b: &[f64],
) -> Result<Vec<f64>, Error> {
    if u.len() != cr.n_dofs || b.len() != cr.n_dofs || a.nrows != cr.n_dofs {
        return Err(Error::InvalidConfig(format!(
            "pressure recovery expects {} velocity dofs, got u of {}, b of {}, A of {}x{}",
            cr.n_dofs,
            u.len(),
            b.len(),
            a.nrows,
            a.ncols
        )));
    }

    // Momentum residual; pairing it with the normal-scaled edge basis
    // yields the signed pressure jump.
    let au = a.matvec(u);
    let mut jump = vec![0.0; t.edges.len()];
    for &ei in &cr.interior_edges {
        let normal = t.edge_normal(ei);
        let dof = cr.dof(ei, 0).expect("interior edge");
        jump[ei] = normal[0] * (au[dof] - b[dof]) + normal[1] * (au[dof + 1] - b[dof + 1]);
    }

    let nt = t.triangles.len();
    let mut p = vec![0.0; nt];
    let mut seen = vec![false; nt];
    let mut queue = VecDeque::new();
    seen[0] = true;
    queue.push_back(0);
    let mut visited = 1;
    while let Some(k) = queue.pop_front() {
        for &ei in &t.tri_edges[k] {
            let edge = &t.edges[ei];
            if edge.boundary {
                continue;
            }
            let slot = t.edge_slot(ei, k).expect("tri_edges is consistent");
            let other = edge.tri[1 - slot];
            if other == NO_TRI || seen[other] {
                continue;
            }
            // The entering element's outward normal agrees with the edge
            // normal up to this stored sign.
            p[other] = p[k] + edge.sign[1 - slot] * jump[ei];
            seen[other] = true;
            visited += 1;
            queue.push_back(other);
        }
    }
    if visited != nt {
        return Err(Error::MeshFormat(format!(
            "element adjacency graph is disconnected: reached {visited} of {nt}"
        )));
    }
    subtract_weighted_mean_exactly(&t.area, &mut p);
    Ok(p)
}

/// Shifts `p` so that the plainly accumulated weighted sum is exactly zero.
///
/// One subtraction leaves a rounding residue; repeating the shift, and as a
/// last resort absorbing the residue into the largest element, drives the
/// sum to the floating-point zero.
fn subtract_weighted_mean_exactly(weights: &[f64], p: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    for _ in 0..32 {
        let s: f64 = weights.iter().zip(p.iter()).map(|(w, x)| w * x).sum();
        if s == 0.0 {
            return;
        }
        let shift = s / total;
        for x in p.iter_mut() {
            *x -= shift;
        }
    }
    let j = (0..weights.len())
        .max_by(|&i, &j| weights[i].total_cmp(&weights[j]))
        .expect("meshes have elements");
    for _ in 0..32 {
        let s: f64 = weights.iter().zip(p.iter()).map(|(w, x)| w * x).sum();
        if s == 0.0 {
            return;
        }
        p[j] -= s / weights[j];
    }
}

/// Estimates the spectral condition number of a symmetric positive
/// definite matrix by power iteration on the matrix and on its inverse.
pub fn condition_estimate(g: &Csr) -> Result<f64, Error> {
    assert_eq!(g.nrows, g.ncols);
    let lam_max = extreme_eigenvalue(g, |v| g.matvec(v))?;
    let chol = SpdSolver::new(g)?;
    let inv_lam_min = extreme_eigenvalue(g, |v| chol.solve(v))?;
    Ok(lam_max * inv_lam_min)
}

/// Dominant Rayleigh quotient of `apply` against the metric of `g`'s size,
/// from a fixed pseudo-random start. For `apply = g` this is the largest
/// eigenvalue, for `apply = g^{-1}` the reciprocal of the smallest.
fn extreme_eigenvalue(
    g: &Csr,
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
) -> Result<f64, Error> {
    let n = g.nrows;
    let mut state: u64 = 0x9e3779b97f4a7c15;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    normalize(&mut v)?;
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let mut w = apply(&v);
        let rayleigh: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        normalize(&mut w)?;
        v = w;
        if (rayleigh - estimate).abs() <= 1e-13 * rayleigh.abs() {
            return Ok(rayleigh);
        }
        estimate = rayleigh;
    }
    Ok(estimate)
}

fn normalize(v: &mut [f64]) -> Result<(), Error> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Singular("power iteration collapsed"));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_divergence, assemble_load_modified, assemble_load_standard, saddle_system,
    };
    use crate::fespace::{cr_divergence, cr_face_moment, cr_gradient, P0Space};
    use crate::mesh::Point2;
    use crate::quad::TriangleRule;
    use crate::smoothing::{SkRealization, Smoother};

    /// Everything needed to pose one discrete problem on one mesh.
    struct Setup {
        t: Triangulation,
        cr: CrSpace,
        p0: P0Space,
        e: SmootherMatrix,
    }

    impl Setup {
        fn new(t: Triangulation) -> Setup {
            let bary = t.barycentric_refine();
            let cr = CrSpace::new(&t);
            let p2 = P2Space::new(&bary.mesh);
            let sm = Smoother::new(&t, &bary, &cr, &p2, SkRealization::Direct).unwrap();
            let e = sm.assemble_matrix();
            let p0 = P0Space::new(&t);
            Setup { t, cr, p0, e }
        }

        fn modified_load(&self, f: &LoadFunctional) -> Vec<f64> {
            let bary = self.t.barycentric_refine();
            let p2 = P2Space::new(&bary.mesh);
            assemble_load_modified(&bary, &p2, &self.e, f)
        }
    }

    fn broken_h1(t: &Triangulation, cr: &CrSpace, u: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..t.triangles.len() {
            let g = cr_gradient(t, cr, u, k);
            s += t.area[k] * (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]);
        }
        s.sqrt()
    }

    fn pressure_l2(t: &Triangulation, p: &[f64]) -> f64 {
        t.area.iter().zip(p).map(|(a, q)| a * q * q).sum::<f64>().sqrt()
    }

    /// Quartic bubble stream function data: velocity is the curl of
    /// x^2 (x-1)^2 y^2 (y-1)^2, pressure is (x - 1/2)(y - 1/2).
    fn polynomial_volume_load(x: Point2) -> [f64; 2] {
        let g = |s: f64| s * s * (s - 1.0) * (s - 1.0);
        let dg = |s: f64| 2.0 * s * (s - 1.0) * (2.0 * s - 1.0);
        let d2g = |s: f64| 12.0 * s * s - 12.0 * s + 2.0;
        let d3g = |s: f64| 24.0 * s - 12.0;
        [
            -(d2g(x.x) * dg(x.y) + g(x.x) * d3g(x.y)) + (x.y - 0.5),
            (d3g(x.x) * g(x.y) + dg(x.x) * d2g(x.y)) + (x.x - 0.5),
        ]
    }

    #[test]
    fn zero_load_gives_the_zero_solution() {
        let t = Triangulation::uniform(2);
        let cr = CrSpace::new(&t);
        let p0 = P0Space::new(&t);
        let sys = saddle_system(&t, &cr, &p0, 1.0, vec![0.0; cr.n_dofs]);
        let sol = solve_saddle_point(&sys).unwrap();
        assert!(sol.u.iter().all(|&x| x == 0.0));
        assert!(sol.p.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn saddle_solutions_satisfy_the_discrete_invariants() {
        for t in [Triangulation::uniform(2), Triangulation::crossed_coarse().refine_nvb_global(3).unwrap()] {
            let s = Setup::new(t);
            let f = LoadFunctional::from_volume(&polynomial_volume_load);
            let b = s.modified_load(&f);
            let sys = saddle_system(&s.t, &s.cr, &s.p0, 1.0, b);
            let sol = solve_saddle_point(&sys).unwrap();

            let grad = broken_h1(&s.t, &s.cr, &sol.u);
            assert!(grad > 1e-4, "the load should drive a nonzero flow");
            for k in 0..s.t.triangles.len() {
                let div = cr_divergence(&s.t, &s.cr, &sol.u, k);
                assert!(div.abs() <= 1e-9 * grad, "element {k}: divergence {div:.3e}");
            }
            let mean: f64 = s.t.area.iter().zip(&sol.p).map(|(a, q)| a * q).sum();
            assert!(mean.abs() <= 1e-10 * pressure_l2(&s.t, &sol.p));
        }
    }

    #[test]
    fn gradient_loads_produce_pressure_only_solutions() {
        let q = |x: Point2| (x.x - 0.5) * (x.y - 0.5);
        let grad_q = |x: Point2| [x.y - 0.5, x.x - 0.5];

        let s = Setup::new(Triangulation::uniform(2));
        let f = LoadFunctional::from_volume(&grad_q);
        let b = s.modified_load(&f);
        let sys = saddle_system(&s.t, &s.cr, &s.p0, 1.0, b);
        let sol = solve_saddle_point(&sys).unwrap();

        assert!(broken_h1(&s.t, &s.cr, &sol.u) <= 1e-9);
        let rule = TriangleRule::with_degree(2);
        let means: Vec<f64> = (0..s.t.triangles.len())
            .map(|k| {
                rule.integrate(s.t.tri_xy(k), |x, y| q(Point2::new(x, y))) / s.t.area[k]
            })
            .collect();
        for k in 0..s.t.triangles.len() {
            assert!((sol.p[k] - means[k]).abs() <= 1e-9, "element {k}");
        }

        // The recovery route reproduces the same pressure from the velocity.
        let rec = recover_pressure_modified(&s.t, &sol.u, &f, &s.e, 1.0).unwrap();
        for k in 0..s.t.triangles.len() {
            assert!((rec[k] - means[k]).abs() <= 1e-9, "element {k}");
        }

        // The plain edge-moment quadrature of the same gradient field does
        // not vanish on the divergence-free space, so it drives a flow.
        let b_std = assemble_load_standard(&s.t, &s.cr, &f).unwrap();
        let sys_std = saddle_system(&s.t, &s.cr, &s.p0, 1.0, b_std);
        let std = solve_saddle_point(&sys_std).unwrap();
        assert!(broken_h1(&s.t, &s.cr, &std.u) > 1e-4);
    }

    #[test]
    fn divergence_free_basis_counts_match_the_rank_of_the_constraint() {
        let meshes = [
            Triangulation::uniform(0),
            Triangulation::uniform(1),
            Triangulation::uniform(2),
            Triangulation::anisotropic(1, 3),
            Triangulation::crossed_coarse().refine_nvb_global(2).unwrap(),
        ];
        for t in meshes {
            let cr = CrSpace::new(&t);
            let basis = build_divfree_basis(&t, &cr);
            let interior_vertices = t.vertex_is_boundary.iter().filter(|&&b| !b).count();
            assert_eq!(basis.n_tangential, cr.interior_edges.len());
            assert_eq!(basis.n_vortex, interior_vertices);
            // Rank count: the divergence constraint has one dependent row.
            assert_eq!(basis.len(), cr.n_dofs - (t.triangles.len() - 1));

            for i in 0..basis.len() {
                let v = basis.field_vector(i);
                let scale = 1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for k in 0..t.triangles.len() {
                    let div = cr_divergence(&t, &cr, &v, k);
                    assert!(div.abs() <= 1e-12 * scale, "field {i}, element {k}: {div:.3e}");
                }
            }
        }
        let t0 = Triangulation::uniform(0);
        let cr0 = CrSpace::new(&t0);
        assert_eq!(build_divfree_basis(&t0, &cr0).len(), 1);
    }

    #[test]
    fn vortices_vanish_away_from_their_vertex() {
        let t = Triangulation::uniform(1);
        let cr = CrSpace::new(&t);
        let basis = build_divfree_basis(&t, &cr);
        assert_eq!(basis.n_vortex, 1);
        let z = (0..t.vertices.len()).find(|&v| !t.vertex_is_boundary[v]).unwrap();
        let w = basis.field_vector(basis.n_tangential);
        for (e, edge) in t.edges.iter().enumerate() {
            if edge.boundary {
                continue;
            }
            let m0 = cr_face_moment(&cr, &w, e, 0);
            let m1 = cr_face_moment(&cr, &w, e, 1);
            if edge.v.contains(&z) {
                assert!(m0.abs() + m1.abs() > 0.5, "star edge {e} carries the vortex");
            } else {
                assert_eq!((m0, m1), (0.0, 0.0), "edge {e} is outside the star");
            }
        }
    }

    #[test]
    fn reduced_solve_matches_the_saddle_point_velocity() {
        let t = Triangulation::uniform(3);
        let cr = CrSpace::new(&t);
        let p0 = P0Space::new(&t);
        let f = LoadFunctional::from_volume(&polynomial_volume_load);
        let b = assemble_load_standard(&t, &cr, &f).unwrap();
        let sys = saddle_system(&t, &cr, &p0, 1.0, b.clone());
        let saddle = solve_saddle_point(&sys).unwrap();

        let basis = build_divfree_basis(&t, &cr);
        let reduced = solve_reduced(&basis, &sys.a, &b).unwrap();

        let diff: Vec<f64> = reduced.iter().zip(&saddle.u).map(|(a, b)| a - b).collect();
        let err = broken_h1(&t, &cr, &diff);
        let scale = broken_h1(&t, &cr, &saddle.u);
        assert!(err <= 1e-8 * scale, "relative gap {:.3e}", err / scale);

        let zero = solve_reduced(&basis, &sys.a, &vec![0.0; cr.n_dofs]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn recovered_pressure_matches_the_saddle_point_pressure() {
        for t in [Triangulation::uniform(2), Triangulation::crossed_coarse().refine_nvb_global(2).unwrap()] {
            let s = Setup::new(t);
            let f = LoadFunctional::from_volume(&polynomial_volume_load);
            let nu = 1.0;
            let b = s.modified_load(&f);
            let sys = saddle_system(&s.t, &s.cr, &s.p0, nu, b.clone());
            let sol = solve_saddle_point(&sys).unwrap();

            let rec = recover_pressure_modified(&s.t, &sol.u, &f, &s.e, nu).unwrap();
            let scale = pressure_l2(&s.t, &sol.p) + nu * broken_h1(&s.t, &s.cr, &sol.u);
            let diff: Vec<f64> = rec.iter().zip(&sol.p).map(|(a, b)| a - b).collect();
            assert!(pressure_l2(&s.t, &diff) <= 1e-8 * scale);

            // The weighted mean is driven to the exact floating-point zero.
            let mean: f64 = s.t.area.iter().zip(&rec).map(|(a, q)| a * q).sum();
            assert_eq!(mean, 0.0);

            // Every jump relation holds for the recovered field, so any
            // closed element path accumulates to zero: path independence.
            let a = assemble_stiffness(&s.t, &s.cr, nu);
            let au = a.matvec(&sol.u);
            let mut worst: f64 = 0.0;
            for &ei in &s.cr.interior_edges {
                let n = s.t.edge_normal(ei);
                let dof = s.cr.dof(ei, 0).unwrap();
                let jump = n[0] * (au[dof] - b[dof]) + n[1] * (au[dof + 1] - b[dof + 1]);
                let edge = &s.t.edges[ei];
                let defect =
                    edge.sign[0] * rec[edge.tri[0]] + edge.sign[1] * rec[edge.tri[1]] - jump;
                worst = worst.max(defect.abs());
            }
            assert!(worst <= 1e-9, "largest jump defect {worst:.3e}");
        }
    }

    #[test]
    fn pressure_jumps_sum_to_zero_around_closed_paths() {
        let s = Setup::new(Triangulation::uniform(2));
        let f = LoadFunctional::from_volume(&polynomial_volume_load);
        let b = s.modified_load(&f);
        let sys = saddle_system(&s.t, &s.cr, &s.p0, 1.0, b.clone());
        let sol = solve_saddle_point(&sys).unwrap();
        let a = assemble_stiffness(&s.t, &s.cr, 1.0);
        let au = a.matvec(&sol.u);

        let mut checked = 0;
        for z in 0..s.t.vertices.len() {
            if s.t.vertex_is_boundary[z] {
                continue;
            }
            // Walk the element ring around z in angular order; consecutive
            // elements share an edge through z.
            let pz = s.t.point(z);
            let mut ring: Vec<usize> = s.t.vertex_tris[z].clone();
            ring.sort_by(|&k1, &k2| {
                let angle = |k: usize| {
                    let xy = s.t.tri_xy(k);
                    let cx = (xy[0][0] + xy[1][0] + xy[2][0]) / 3.0 - pz.x;
                    let cy = (xy[0][1] + xy[1][1] + xy[2][1]) / 3.0 - pz.y;
                    cy.atan2(cx)
                };
                angle(k1).total_cmp(&angle(k2))
            });
            let mut total = 0.0;
            for i in 0..ring.len() {
                let (from, to) = (ring[i], ring[(i + 1) % ring.len()]);
                let shared = s.t.tri_edges[from]
                    .iter()
                    .find(|&&e| !s.t.edges[e].boundary && s.t.edges[e].v.contains(&z) && s.t.edges[e].tri.contains(&to))
                    .copied()
                    .expect("adjacent ring elements share an edge at z");
                let n = s.t.edge_normal(shared);
                let dof = s.cr.dof(shared, 0).unwrap();
                let jump = n[0] * (au[dof] - b[dof]) + n[1] * (au[dof + 1] - b[dof + 1]);
                let slot = s.t.edge_slot(shared, to).unwrap();
                total += s.t.edges[shared].sign[slot] * jump;
            }
            assert!(total.abs() <= 1e-9, "vertex {z}: closed path sum {total:.3e}");
            checked += 1;
        }
        assert_eq!(checked, 9);
    }

    #[test]
    fn viscosity_scaling_leaves_the_pressure_fixed() {
        let s = Setup::new(Triangulation::uniform(2));
        let f = LoadFunctional::from_volume(&polynomial_volume_load);
        let b = s.modified_load(&f);

        let sol1 = solve_saddle_point(&saddle_system(&s.t, &s.cr, &s.p0, 1.0, b.clone())).unwrap();
        let sol2 = solve_saddle_point(&saddle_system(&s.t, &s.cr, &s.p0, 2.0, b)).unwrap();

        let u_scale = norm_inf(&sol1.u);
        let p_scale = norm_inf(&sol1.p);
        for i in 0..sol1.u.len() {
            assert!((sol2.u[i] - 0.5 * sol1.u[i]).abs() <= 1e-10 * u_scale, "dof {i}");
        }
        for k in 0..sol1.p.len() {
            assert!((sol2.p[k] - sol1.p[k]).abs() <= 1e-10 * p_scale, "element {k}");
        }
    }

    #[test]
    fn reduced_matrix_condition_growth_is_recorded() {
        let mut logs = Vec::new();
        for n in 2..=5u32 {
            let t = Triangulation::uniform(n);
            let cr = CrSpace::new(&t);
            let a = assemble_stiffness(&t, &cr, 1.0);
            let basis = build_divfree_basis(&t, &cr);
            let g = reduced_matrix(&basis, &a);
            let cond = condition_estimate(&g).unwrap();
            assert!(cond.is_finite() && cond > 1.0);
            eprintln!("n = {n}: estimated condition {cond:.3e}");
            logs.push(((n as f64) * 2f64.ln(), cond.ln()));
        }
        for pair in logs.windows(2) {
            assert!(pair[1].1 > pair[0].1, "conditioning should degrade under refinement");
        }
        let slope = least_squares_slope(&logs);
        // Informational: expected near 4 for this basis, recorded not gated.
        eprintln!("reduced-matrix condition growth: log-log slope {slope:.2}");
        assert!(slope > 0.0);
    }

    fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn solver_rejects_mismatched_blocks() {
        let t = Triangulation::uniform(1);
        let cr = CrSpace::new(&t);
        let p0 = P0Space::new(&t);
        let mut sys = saddle_system(&t, &cr, &p0, 1.0, vec![0.0; cr.n_dofs]);
        sys.b.pop();
        assert!(matches!(solve_saddle_point(&sys), Err(Error::InvalidConfig(_))));

        let basis = build_divfree_basis(&t, &cr);
        let a = assemble_divergence(&t, &cr, &p0);
        assert!(matches!(
            solve_reduced(&basis, &a, &vec![0.0; cr.n_dofs]),
            Err(Error::InvalidConfig(_))
        ));
    }
}
