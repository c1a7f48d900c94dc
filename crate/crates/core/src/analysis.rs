//! Error measures for computed solutions: best-approximation benchmarks,
//! discrete errors against analytic data, cross-mesh differences for
//! problems without a closed-form solution, and convergence orders.
//!
//! Pressures with a jump across a vertical line are integrated by splitting
//! each straddling triangle along the line, so quadrature never samples a
//! discontinuity.

use crate::assembly::LoadFunctional;
use crate::fespace::{cr_gradient, CrSpace};
use crate::mesh::{Point2, Triangulation};
use crate::quad::{SegmentRule, TriangleRule};
use crate::Error;

/// Quadrature degree for error integrals. The smooth reference velocity is
/// a polynomial of degree seven, so squared gradient residuals have degree
/// twelve and integrate exactly.
const ERROR_DEGREE: usize = 12;

/// Analytic pressure, possibly with a jump across one vertical line.
pub struct PiecewisePressure<'a> {
    /// Pointwise values; never evaluated on the cut line itself.
    pub value: &'a dyn Fn(Point2) -> f64,
    /// Abscissa of the discontinuity line, if any.
    pub cut: Option<f64>,
}

/// Closed-form data of one test problem. Velocity and pressure are absent
/// when the problem has no known solution.
pub struct AnalyticCase<'a> {
    pub u: Option<&'a dyn Fn(Point2) -> [f64; 2]>,
    pub grad_u: Option<&'a dyn Fn(Point2) -> [[f64; 2]; 2]>,
    pub p: Option<PiecewisePressure<'a>>,
    pub load: LoadFunctional<'a>,
    pub nu: f64,
}

impl<'a> AnalyticCase<'a> {
    /// Largest velocity divergence over an interior sample grid; zero when
    /// no gradient is given. Analytic solutions must be solenoidal.
    pub fn sampled_divergence(&self, n: usize) -> f64 {
        let Some(grad) = self.grad_u else { return 0.0 };
        let mut worst: f64 = 0.0;
        for i in 1..n {
            for j in 1..n {
                let x = Point2::new(i as f64 / n as f64, j as f64 / n as f64);
                let g = grad(x);
                worst = worst.max((g[0][0] + g[1][1]).abs());
            }
        }
        worst
    }
}

/// Discrete errors next to their best-approximation counterparts.
#[derive(Clone, Copy, Debug)]
pub struct ErrorReport {
    pub err_u: f64,
    pub best_u: f64,
    pub gamma_u: f64,
    pub err_p: f64,
    pub best_p: f64,
    pub gamma_p: f64,
}

/// Builds the full report for a computed solution of a case with known
/// velocity gradient and pressure.
pub fn error_report(
    t: &Triangulation,
    cr: &CrSpace,
    u_disc: &[f64],
    p_disc: &[f64],
    case: &AnalyticCase,
) -> Result<ErrorReport, Error> {
    let grad_u = case
        .grad_u
        .ok_or_else(|| Error::InvalidConfig("the case has no analytic velocity gradient".into()))?;
    let p = case
        .p
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("the case has no analytic pressure".into()))?;
    let err_u = broken_h1_error(t, cr, u_disc, grad_u);
    let best_u = best_velocity_error(t, cr, case.u.ok_or_else(|| {
        Error::InvalidConfig("the case has no analytic velocity".into())
    })?, grad_u);
    let err_p = l2_pressure_error(t, p_disc, p);
    let best_p = best_pressure_error(t, p);
    Ok(ErrorReport {
        err_u,
        best_u,
        gamma_u: ratio(err_u, best_u),
        err_p,
        best_p,
        gamma_p: ratio(err_p, best_p),
    })
}

fn ratio(err: f64, best: f64) -> f64 {
    if best == 0.0 {
        if err == 0.0 { 1.0 } else { f64::INFINITY }
    } else {
        err / best
    }
}

/// Interpolates an analytic velocity by matching its edge integrals on all
/// interior edges, with 16-point Gauss quadrature per edge. Boundary edges
/// carry no degrees of freedom; the operator is meant for fields with zero
/// boundary trace, whose boundary moments vanish on their own.
pub fn cr_interpolate(
    t: &Triangulation,
    cr: &CrSpace,
    u: &dyn Fn(Point2) -> [f64; 2],
) -> Vec<f64> {
    let rule = SegmentRule::with_degree(31);
    let mut coeffs = vec![0.0; cr.n_dofs];
    for &e in &cr.interior_edges {
        let [a, b] = t.edges[e].v;
        let (pa, pb) = (t.point(a), t.point(b));
        let dof = cr.dof(e, 0).expect("interior edge");
        for comp in 0..2 {
            coeffs[dof + comp] = rule
                .integrate_segment([pa.x, pa.y], [pb.x, pb.y], |x, y| u(Point2::new(x, y))[comp]);
        }
    }
    coeffs
}

/// Broken H1 distance between an analytic gradient and a discrete field.
pub fn broken_h1_error(
    t: &Triangulation,
    cr: &CrSpace,
    u_disc: &[f64],
    grad_u: &dyn Fn(Point2) -> [[f64; 2]; 2],
) -> f64 {
    let rule = TriangleRule::with_degree(ERROR_DEGREE);
    let mut total = 0.0;
    for k in 0..t.triangles.len() {
        let gd = cr_gradient(t, cr, u_disc, k);
        total += rule.integrate(t.tri_xy(k), |x, y| {
            let g = grad_u(Point2::new(x, y));
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    let d = g[r][c] - gd[r][c];
                    s += d * d;
                }
            }
            s
        });
    }
    total.sqrt()
}

/// Best broken H1 velocity error over the discrete space. The minimizer is
/// the edge-moment interpolant, so the infimum is a single evaluation.
pub fn best_velocity_error(
    t: &Triangulation,
    cr: &CrSpace,
    u: &dyn Fn(Point2) -> [f64; 2],
    grad_u: &dyn Fn(Point2) -> [[f64; 2]; 2],
) -> f64 {
    let interpolant = cr_interpolate(t, cr, u);
    broken_h1_error(t, cr, &interpolant, grad_u)
}

/// Elementwise means of an analytic pressure, the L2 projection onto
/// constants.
pub fn elementwise_means(t: &Triangulation, p: &PiecewisePressure) -> Vec<f64> {
    let rule = TriangleRule::with_degree(ERROR_DEGREE);
    (0..t.triangles.len())
        .map(|k| {
            let mut integral = 0.0;
            for piece in pieces(t.tri_xy(k), p.cut) {
                integral += rule.integrate(piece, |x, y| (p.value)(Point2::new(x, y)));
            }
            integral / t.area[k]
        })
        .collect()
}

/// L2 distance between an analytic pressure and an elementwise-constant
/// field.
pub fn l2_pressure_error(t: &Triangulation, p_disc: &[f64], p: &PiecewisePressure) -> f64 {
    let rule = TriangleRule::with_degree(ERROR_DEGREE);
    let mut total = 0.0;
    for k in 0..t.triangles.len() {
        for piece in pieces(t.tri_xy(k), p.cut) {
            total += rule.integrate(piece, |x, y| {
                let d = (p.value)(Point2::new(x, y)) - p_disc[k];
                d * d
            });
        }
    }
    total.sqrt()
}

/// Best L2 pressure error, attained at the elementwise means.
pub fn best_pressure_error(t: &Triangulation, p: &PiecewisePressure) -> f64 {
    l2_pressure_error(t, &elementwise_means(t, p), p)
}

/// Broken H1 norm of the difference of velocities living on a mesh and on
/// its refinement. Both gradients are elementwise constant, so integrating
/// over the fine mesh with the parent lookup is exact.
pub fn cross_mesh_difference_u(
    fine: &Triangulation,
    cr_fine: &CrSpace,
    u_fine: &[f64],
    coarse: &Triangulation,
    cr_coarse: &CrSpace,
    u_coarse: &[f64],
) -> Result<f64, Error> {
    let parent = genealogy(fine, coarse)?;
    let coarse_grads: Vec<[[f64; 2]; 2]> = (0..coarse.triangles.len())
        .map(|k| cr_gradient(coarse, cr_coarse, u_coarse, k))
        .collect();
    let mut total = 0.0;
    for k in 0..fine.triangles.len() {
        let gf = cr_gradient(fine, cr_fine, u_fine, k);
        let gc = coarse_grads[parent[k]];
        let mut s = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                let d = gf[r][c] - gc[r][c];
                s += d * d;
            }
        }
        total += fine.area[k] * s;
    }
    Ok(total.sqrt())
}

/// L2 distance between elementwise-constant pressures on a mesh and on its
/// refinement, integrated exactly through the parent lookup.
pub fn cross_mesh_difference_p(
    fine: &Triangulation,
    p_fine: &[f64],
    coarse: &Triangulation,
    p_coarse: &[f64],
) -> Result<f64, Error> {
    let parent = genealogy(fine, coarse)?;
    let mut total = 0.0;
    for k in 0..fine.triangles.len() {
        let d = p_fine[k] - p_coarse[parent[k]];
        total += fine.area[k] * d * d;
    }
    Ok(total.sqrt())
}

fn genealogy<'a>(fine: &'a Triangulation, coarse: &Triangulation) -> Result<&'a [usize], Error> {
    let parent = fine
        .parent
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("the fine mesh has no parent map".into()))?;
    if parent.len() != fine.triangles.len()
        || parent.iter().any(|&k| k >= coarse.triangles.len())
    {
        return Err(Error::InvalidConfig(
            "the parent map does not link these two meshes".into(),
        ));
    }
    Ok(parent)
}

/// Experimental orders of convergence of a positive error sequence against
/// growing mesh sizes: decaying errors give positive orders.
pub fn eoc(values: &[f64], sizes: &[usize]) -> Result<Vec<f64>, Error> {
    if values.len() != sizes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} error values against {} mesh sizes",
            values.len(),
            sizes.len()
        )));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidConfig("orders need positive error values".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("orders need strictly growing meshes".into()));
    }
    Ok(values
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(v, s)| (v[0] / v[1]).ln() / (s[1] as f64 / s[0] as f64).ln())
        .collect())
}

/// Splits a triangle along the vertical line x = c into sub-triangles that
/// do not straddle the line. Offsets compare exactly, so vertices sitting
/// on the line never spawn degenerate slivers.
fn pieces(xy: [[f64; 2]; 3], cut: Option<f64>) -> Vec<[[f64; 2]; 3]> {
    let Some(c) = cut else { return vec![xy] };
    let s = [xy[0][0] - c, xy[1][0] - c, xy[2][0] - c];
    let pos = s.iter().filter(|&&v| v > 0.0).count();
    let neg = s.iter().filter(|&&v| v < 0.0).count();
    if pos == 0 || neg == 0 {
        return vec![xy];
    }
    let cross = |a: [f64; 2], sa: f64, b: [f64; 2], sb: f64| {
        let t = sa / (sa - sb);
        [c, a[1] + t * (b[1] - a[1])]
    };
    if pos + neg == 2 {
        // One vertex on the line, the opposite edge crossed once.
        let on = (0..3).find(|&i| s[i] == 0.0).unwrap();
        let (a, b) = ((on + 1) % 3, (on + 2) % 3);
        let x = cross(xy[a], s[a], xy[b], s[b]);
        return vec![[xy[on], xy[a], x], [xy[on], x, xy[b]]];
    }
    // A lone vertex sits across from the other two; both of its edges are
    // crossed, leaving a triangle and a quadrilateral split in two.
    let lone = (0..3).find(|&i| s[i] != 0.0 && (s[i] > 0.0) == (pos == 1)).unwrap();
    let (a, b) = ((lone + 1) % 3, (lone + 2) % 3);
    let xa = cross(xy[lone], s[lone], xy[a], s[a]);
    let xb = cross(xy[lone], s[lone], xy[b], s[b]);
    vec![[xy[lone], xa, xb], [xa, xy[a], xy[b]], [xa, xy[b], xb]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::{cr_divergence, cr_value};
    use crate::solver::build_divfree_basis;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn g(s: f64) -> f64 {
        s * s * (s - 1.0) * (s - 1.0)
    }
    fn dg(s: f64) -> f64 {
        2.0 * s * (s - 1.0) * (2.0 * s - 1.0)
    }
    fn d2g(s: f64) -> f64 {
        12.0 * s * s - 12.0 * s + 2.0
    }

    /// Curl of the product bubble: polynomial, solenoidal, zero trace.
    fn smooth_u(x: Point2) -> [f64; 2] {
        [g(x.x) * dg(x.y), -dg(x.x) * g(x.y)]
    }
    fn smooth_grad_u(x: Point2) -> [[f64; 2]; 2] {
        [
            [dg(x.x) * dg(x.y), g(x.x) * d2g(x.y)],
            [-d2g(x.x) * g(x.y), -dg(x.x) * dg(x.y)],
        ]
    }

    fn smooth_case<'a>(load: LoadFunctional<'a>) -> AnalyticCase<'a> {
        AnalyticCase {
            u: Some(&smooth_u),
            grad_u: Some(&smooth_grad_u),
            p: None,
            load,
            nu: 1.0,
        }
    }

    #[test]
    fn analytic_velocities_are_solenoidal() {
        let f = |_: Point2| [0.0, 0.0];
        let case = smooth_case(LoadFunctional::from_volume(&f));
        assert!(case.sampled_divergence(23) <= 1e-10);
    }

    #[test]
    fn interpolant_matches_edge_moments_and_reproduces_affines() {
        let t = Triangulation::uniform(2);
        let cr = CrSpace::new(&t);
        let affine = |x: Point2| [0.3 - 0.2 * x.x + 0.7 * x.y, -0.5 + 0.1 * x.x - 0.4 * x.y];
        let coeffs = cr_interpolate(&t, &cr, &affine);

        let rule = SegmentRule::with_degree(31);
        for &e in &cr.interior_edges {
            let [a, b] = t.edges[e].v;
            let (pa, pb) = (t.point(a), t.point(b));
            for comp in 0..2 {
                let moment =
                    rule.integrate_segment([pa.x, pa.y], [pb.x, pb.y], |x, y| {
                        affine(Point2::new(x, y))[comp]
                    });
                assert!((coeffs[cr.dof(e, 0).unwrap() + comp] - moment).abs() <= 1e-14);
            }
        }

        // On elements whose edges are all interior the interpolant has the
        // full moment data and reproduces affine fields pointwise.
        let mut checked = 0;
        for k in 0..t.triangles.len() {
            if t.tri_edges[k].iter().any(|&e| t.edges[e].boundary) {
                continue;
            }
            for &v in &t.triangles[k] {
                let x = t.point(v);
                let got = cr_value(&t, &cr, &coeffs, k, x);
                let want = affine(x);
                assert!((got[0] - want[0]).abs() + (got[1] - want[1]).abs() <= 1e-12);
            }
            checked += 1;
        }
        assert!(checked > 0, "the mesh has fully interior elements");
    }

    #[test]
    fn interpolated_solenoidal_fields_stay_solenoidal() {
        let t = Triangulation::crossed_coarse().refine_nvb_global(2).unwrap();
        let cr = CrSpace::new(&t);
        let coeffs = cr_interpolate(&t, &cr, &smooth_u);
        for k in 0..t.triangles.len() {
            let div = cr_divergence(&t, &cr, &coeffs, k);
            assert!(div.abs() <= 1e-10, "element {k}: divergence {div:.3e}");
        }

        // Zero trace makes the skipped boundary moments a true omission.
        let rule = SegmentRule::with_degree(31);
        for (e, edge) in t.edges.iter().enumerate() {
            if !edge.boundary {
                continue;
            }
            let (pa, pb) = (t.point(edge.v[0]), t.point(edge.v[1]));
            for comp in 0..2 {
                let moment = rule.integrate_segment([pa.x, pa.y], [pb.x, pb.y], |x, y| {
                    smooth_u(Point2::new(x, y))[comp]
                });
                assert!(moment.abs() <= 1e-12, "edge {e}");
            }
        }
    }

    #[test]
    fn best_velocity_error_vanishes_only_for_representable_fields() {
        let t = Triangulation::uniform(2);
        let cr = CrSpace::new(&t);
        let zero = |_: Point2| [0.0, 0.0];
        let zero_grad = |_: Point2| [[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(best_velocity_error(&t, &cr, &zero, &zero_grad), 0.0);
        assert!(best_velocity_error(&t, &cr, &smooth_u, &smooth_grad_u) > 1e-4);

        // The best error is by definition the error of the interpolant.
        let coeffs = cr_interpolate(&t, &cr, &smooth_u);
        assert_eq!(
            broken_h1_error(&t, &cr, &coeffs, &smooth_grad_u),
            best_velocity_error(&t, &cr, &smooth_u, &smooth_grad_u)
        );
    }

    #[test]
    fn broken_error_of_the_zero_field_is_the_field_norm() {
        let t = Triangulation::uniform(2);
        let cr = CrSpace::new(&t);
        let err = broken_h1_error(&t, &cr, &vec![0.0; cr.n_dofs], &smooth_grad_u);
        let rule = TriangleRule::with_degree(ERROR_DEGREE);
        let mut want = 0.0;
        for k in 0..t.triangles.len() {
            want += rule.integrate(t.tri_xy(k), |x, y| {
                let g = smooth_grad_u(Point2::new(x, y));
                g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]
            });
        }
        assert!((err - want.sqrt()).abs() <= 1e-13);
    }

    #[test]
    fn best_errors_decay_at_the_expected_rates_for_the_smooth_case() {
        let q = |x: Point2| (x.x - 0.5) * (x.y - 0.5);
        let pressure = PiecewisePressure { value: &q, cut: None };
        let mut us = Vec::new();
        let mut ps = Vec::new();
        let mut sizes = Vec::new();
        for n in 3..=6u32 {
            let t = Triangulation::uniform(n);
            let cr = CrSpace::new(&t);
            us.push(best_velocity_error(&t, &cr, &smooth_u, &smooth_grad_u));
            ps.push(best_pressure_error(&t, &pressure));
            sizes.push(t.triangles.len());
        }
        for pair in us.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!((ratio - 0.5).abs() <= 0.05, "velocity ratio {ratio:.3}");
        }
        for order in eoc(&us, &sizes).unwrap() {
            assert!((order - 0.5).abs() <= 0.03, "velocity order {order:.3}");
        }
        for order in eoc(&ps, &sizes).unwrap() {
            assert!((order - 0.5).abs() <= 0.03, "pressure order {order:.3}");
        }
    }

    #[test]
    fn best_pressure_error_matches_closed_forms() {
        let t = Triangulation::uniform(1);
        let constant = |_: Point2| 3.25;
        let p = PiecewisePressure { value: &constant, cut: None };
        assert!(best_pressure_error(&t, &p) <= 1e-12);

        // One unit right triangle, p = x: mean 1/3, squared distance 1/36.
        let single = Triangulation::from_cells(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let linear = |x: Point2| x.x;
        let p = PiecewisePressure { value: &linear, cut: None };
        assert!((best_pressure_error(&single, &p) - 1.0 / 6.0).abs() <= 1e-12);

        // A unit jump across x = 1/2 on the crossed mesh: the bottom and
        // top elements split into mirror halves of area 1/8 with mean zero
        // and local squared error 1/4 each, the side elements stay
        // one-sided with means of plus and minus one and no error.
        let crossed = Triangulation::crossed_coarse();
        let sign = |x: Point2| if x.x > 0.5 { 1.0 } else { -1.0 };
        let p = PiecewisePressure { value: &sign, cut: Some(0.5) };
        let means = elementwise_means(&crossed, &p);
        for (m, want) in means.iter().zip([0.0, 1.0, 0.0, -1.0]) {
            assert!((m - want).abs() <= 1e-14);
        }
        assert!((best_pressure_error(&crossed, &p) - 0.5f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn discontinuous_pressure_error_lives_on_the_cut_elements() {
        // Piecewise-constant pressure with the jump on an irrational line,
        // so no mesh vertex ever falls on it.
        let cut = 1.0 / std::f64::consts::PI;
        let value = move |x: Point2| {
            if x.x > cut {
                std::f64::consts::PI / (std::f64::consts::PI - 1.0)
            } else {
                -std::f64::consts::PI
            }
        };
        let mut errs = Vec::new();
        let mut sizes = Vec::new();
        for n in 2..=6u32 {
            let t = Triangulation::crossed_coarse().refine_nvb_global(2 * n).unwrap();
            let p = PiecewisePressure { value: &value, cut: Some(cut) };
            let means = elementwise_means(&t, &p);
            let rule = TriangleRule::with_degree(ERROR_DEGREE);
            let mut uncut = 0.0;
            let mut cut_part = 0.0;
            for k in 0..t.triangles.len() {
                let mut local = 0.0;
                for piece in pieces(t.tri_xy(k), Some(cut)) {
                    local += rule.integrate(piece, |x, y| {
                        let d = value(Point2::new(x, y)) - means[k];
                        d * d
                    });
                }
                let xs = t.tri_xy(k).map(|v| v[0]);
                let straddles = xs.iter().any(|&x| x < cut) && xs.iter().any(|&x| x > cut);
                if straddles {
                    cut_part += local;
                } else {
                    // Constant minus its quadrature mean leaves at most a
                    // rounding residue.
                    uncut += local;
                    assert!(local <= 1e-24, "element {k} is one-sided and constant");
                }
            }
            let total = (uncut + cut_part).sqrt();
            let direct = best_pressure_error(&t, &p);
            assert!((total - direct).abs() <= 1e-12 * direct.max(1.0));
            errs.push(direct);
            sizes.push(t.triangles.len());
        }
        // Stepwise orders oscillate with the parity of the bisection
        // pattern around the line; the aggregate order settles at 1/4.
        let span = eoc(
            &[errs[0], *errs.last().unwrap()],
            &[sizes[0], *sizes.last().unwrap()],
        )
        .unwrap();
        assert!((span[0] - 0.25).abs() <= 0.05, "aggregate order {:.3}", span[0]);
    }

    #[test]
    fn interpolation_is_broken_h1_optimal() {
        let t = Triangulation::uniform(2);
        let cr = CrSpace::new(&t);
        let basis = build_divfree_basis(&t, &cr);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..20 {
            let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            // Random solenoidal zero-trace field: curl of the product
            // bubble times a random bilinear factor.
            let q = move |x: f64, y: f64| c[0] + c[1] * x + c[2] * y + c[3] * x * y;
            let u = move |p: Point2| {
                let (x, y) = (p.x, p.y);
                [
                    g(x) * (dg(y) * q(x, y) + g(y) * (c[2] + c[3] * x)),
                    -(dg(x) * q(x, y) + g(x) * (c[1] + c[3] * y)) * g(y),
                ]
            };
            let grad = move |p: Point2| {
                let (x, y) = (p.x, p.y);
                let (qv, qx, qy) = (q(x, y), c[1] + c[3] * y, c[2] + c[3] * x);
                [
                    [
                        dg(x) * (dg(y) * qv + g(y) * qy) + g(x) * (dg(y) * qx + g(y) * c[3]),
                        g(x) * (d2g(y) * qv + 2.0 * dg(y) * qy),
                    ],
                    [
                        -(d2g(x) * qv + 2.0 * dg(x) * qx) * g(y),
                        -(dg(x) * qy + g(x) * c[3]) * g(y) - (dg(x) * qv + g(x) * qx) * dg(y),
                    ],
                ]
            };
            let best = best_velocity_error(&t, &cr, &u, &grad);
            for _ in 0..20 {
                let mut v = vec![0.0; cr.n_dofs];
                for i in 0..basis.len() {
                    let amp = rng.random_range(-0.1..0.1);
                    for &(dof, cv) in &basis.fields[i] {
                        v[dof] += amp * cv;
                    }
                }
                let other = broken_h1_error(&t, &cr, &v, &grad);
                assert!(best <= other + 1e-9, "best {best:.6e} vs candidate {other:.6e}");
            }
        }
    }

    #[test]
    fn elementwise_means_are_l2_optimal() {
        let t = Triangulation::uniform(2);
        let smooth = |x: Point2| (x.x - 0.3) * (x.y * x.y + 0.2) - 0.1 * x.x * x.x;
        let p = PiecewisePressure { value: &smooth, cut: None };
        let best = best_pressure_error(&t, &p);
        let means = elementwise_means(&t, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let q: Vec<f64> = means.iter().map(|&m| m + rng.random_range(-0.05..0.05)).collect();
            let other = l2_pressure_error(&t, &q, &p);
            assert!(best <= other + 1e-10);
        }
    }

    #[test]
    fn cross_mesh_differences_detect_only_real_changes() {
        // Only marked meshes refine, so the chain starts from the crossed
        // coarse mesh.
        let coarse = Triangulation::crossed_coarse();
        let cr_coarse = CrSpace::new(&coarse);
        let fine = coarse.refine_nvb_global(2).unwrap();
        let cr_fine = CrSpace::new(&fine);

        // Identical data on the same mesh, linked by an identity map.
        let mut same = coarse.clone();
        same.parent = Some((0..coarse.triangles.len()).collect());
        let field: Vec<f64> = (0..cr_coarse.n_dofs).map(|i| (i as f64).sin()).collect();
        let zero =
            cross_mesh_difference_u(&same, &cr_coarse, &field, &coarse, &cr_coarse, &field)
                .unwrap();
        assert_eq!(zero, 0.0);

        // The spaces are not nested, but the conforming pyramid of the
        // coarse mesh is piecewise affine on both and has zero trace, so
        // its two interpolants share their gradients.
        let pyramid = |x: Point2| {
            let h = (2.0 * x.x).min(2.0 * (1.0 - x.x)).min(2.0 * x.y).min(2.0 * (1.0 - x.y));
            [h, -0.5 * h]
        };
        let uc = cr_interpolate(&coarse, &cr_coarse, &pyramid);
        let uf = cr_interpolate(&fine, &cr_fine, &pyramid);
        let delta =
            cross_mesh_difference_u(&fine, &cr_fine, &uf, &coarse, &cr_coarse, &uc).unwrap();
        assert!(delta <= 1e-12);

        // Pressures inherited through the genealogy differ by exactly the
        // injected shift; the domain has unit area.
        let pc: Vec<f64> = (0..coarse.triangles.len()).map(|k| k as f64).collect();
        let parent = fine.parent.clone().unwrap();
        let pf: Vec<f64> = parent.iter().map(|&k| pc[k] + 0.25).collect();
        let dp = cross_mesh_difference_p(&fine, &pf, &coarse, &pc).unwrap();
        assert!((dp - 0.25).abs() <= 1e-13);

        let no_parent = Triangulation::uniform(1);
        assert!(matches!(
            cross_mesh_difference_p(&no_parent, &pc, &coarse, &pc),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn convergence_orders_follow_the_log_ratio() {
        let orders = eoc(&[1.0, 0.5], &[100, 400]).unwrap();
        assert!((orders[0] - 0.5).abs() <= 1e-14);
        let flat = eoc(&[1.0, 1.0], &[100, 400]).unwrap();
        assert_eq!(flat[0], 0.0);
        assert!(eoc(&[1.0, -0.5], &[100, 400]).is_err());
        assert!(eoc(&[1.0, 0.5], &[400, 100]).is_err());
        assert!(eoc(&[1.0], &[100, 400]).is_err());
    }
}
