//! Gauss quadrature on the unit segment and the reference triangle.
//!
//! Segment rules are Gauss-Legendre on [0, 1]. Triangle rules on the
//! reference triangle {x >= 0, y >= 0, x + y <= 1} come from the conical
//! product substitution x = s(1 - t), y = t, which folds the Jacobian (1 - t)
//! into the weights of a tensor Gauss-Legendre grid. Both constructions are
//! exact for polynomials up to the requested degree, for any degree.

/// Gauss-Legendre nodes and weights on [0, 1].
///
/// Nodes are the roots of the Legendre polynomial of degree `n`, found by
/// Newton iteration from the Chebyshev initial guess; the rule integrates
/// polynomials up to degree 2n - 1 exactly.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "a Gauss rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Recurrence (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1} and the
            // derivative identity (x^2 - 1) P_n' = n (x P_n - P_{n-1}).
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 1..n {
                let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
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
        // Roots come out in descending order on [-1, 1]; map to [0, 1].
        nodes[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Quadrature on the unit segment [0, 1].
#[derive(Clone, Debug)]
pub struct SegmentRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl SegmentRule {
    /// Smallest Gauss rule exact for polynomials of the given degree.
    pub fn with_degree(degree: usize) -> Self {
        let n = degree / 2 + 1;
        let (nodes, weights) = gauss_legendre(n);
        SegmentRule { nodes, weights, degree: 2 * n - 1 }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }

    /// Integrates along the straight segment from `a` to `b` in the plane,
    /// with respect to arc length.
    pub fn integrate_segment(
        &self,
        a: [f64; 2],
        b: [f64; 2],
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> f64 {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
            .sum();
        s * len
    }
}

/// Quadrature on the reference triangle {x >= 0, y >= 0, x + y <= 1}.
///
/// Weights are positive and sum to the reference area 1/2.
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Smallest conical-product rule exact for bivariate polynomials of the
    /// given total degree.
    pub fn with_degree(degree: usize) -> Self {
        // x = s(1 - t) has degree `degree` in s and, together with the
        // Jacobian factor (1 - t), degree `degree + 1` in t.
        let (sn, sw) = gauss_legendre(degree / 2 + 1);
        let (tn, tw) = gauss_legendre((degree + 1) / 2 + 1);
        let mut points = Vec::with_capacity(sn.len() * tn.len());
        let mut weights = Vec::with_capacity(sn.len() * tn.len());
        for (&t, &wt) in tn.iter().zip(&tw) {
            for (&s, &ws) in sn.iter().zip(&sw) {
                points.push([s * (1.0 - t), t]);
                weights.push(ws * wt * (1.0 - t));
            }
        }
        TriangleRule { points, weights, degree }
    }

    /// Integrates over the triangle with the given vertices. Points map
    /// affinely from the reference triangle; weights scale by twice the area.
    pub fn integrate(&self, v: [[f64; 2]; 3], mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        let jac = ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1])
            - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
            .abs();
        let s: f64 = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&[x, y], &w)| {
                w * f(
                    v[0][0] + x * (v[1][0] - v[0][0]) + y * (v[2][0] - v[0][0]),
                    v[0][1] + x * (v[1][1] - v[0][1]) + y * (v[2][1] - v[0][1]),
                )
            })
            .sum();
        s * jac
    }
}
