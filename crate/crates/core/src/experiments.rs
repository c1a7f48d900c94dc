//! Convergence studies exposed by the `stokes-cr` binary.
//!
//! Four studies compare the classical right-hand side with the modified one:
//!
//! * [`run_smooth`]: a polynomial divergence-free velocity and a bilinear
//!   pressure on uniformly refined diagonal meshes; reports each error next
//!   to the best the spaces allow.
//! * [`run_anisotropic`]: the same fields on tensor meshes stretched by a
//!   factor `m`, probing sensitivity to the shape parameter.
//! * [`run_rough_pressure`]: the same velocity with a pressure jumping across
//!   a vertical line no mesh vertex ever hits; the classical velocity slows
//!   down to the pressure's rate, the modified one does not.
//! * [`run_rough_load`]: a load supported on a line made of mesh edges, where
//!   the classical functional is undefined; tracks differences between
//!   consecutive modified solutions instead of errors.
//!
//! All studies fix unit viscosity, run serially, and assemble their rows in
//! a fixed order, so reruns with the same configuration reproduce the output
//! byte for byte. Before a table is filled, the study's coarsest mesh is
//! solved along independent paths (full saddle-point system, divergence-free
//! reduction and, for the modified load, pressure recovery from jumps) which
//! must agree to eight digits.

use std::f64::consts::{FRAC_1_PI, PI};
use std::path::PathBuf;
use std::str::FromStr;

use crate::analysis::{
    cross_mesh_difference_p, cross_mesh_difference_u, eoc, error_report, AnalyticCase,
    PiecewisePressure,
};
use crate::assembly::{
    assemble_load_modified, assemble_load_standard, assemble_stiffness, saddle_system, LinePart,
    LoadFunctional,
};
use crate::fespace::{CrSpace, P0Space, P2Space};
use crate::mesh::{BarycentricMesh, Point2, Triangulation};
use crate::smoothing::{SkRealization, Smoother, SmootherMatrix};
use crate::solver::{
    build_divfree_basis, recover_pressure, recover_pressure_modified, solve_reduced,
    solve_saddle_point, ReducedFactorization, StokesSolution,
};
use crate::Error;

/// The four convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Smooth benchmark on uniform diagonal meshes.
    Smooth,
    /// Smooth benchmark on stretched tensor meshes.
    Anisotropic,
    /// Pressure with a jump across an unresolved vertical line.
    RoughPressure,
    /// Load concentrated on a resolved vertical line.
    RoughLoad,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Smooth => "smooth",
            Experiment::Anisotropic => "anisotropic",
            Experiment::RoughPressure => "rough-pressure",
            Experiment::RoughLoad => "rough-load",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Experiment, Error> {
        match s {
            "smooth" => Ok(Experiment::Smooth),
            "anisotropic" => Ok(Experiment::Anisotropic),
            "rough-pressure" => Ok(Experiment::RoughPressure),
            "rough-load" => Ok(Experiment::RoughLoad),
            _ => Err(Error::InvalidConfig(format!(
                "unknown experiment {s:?}; expected smooth, anisotropic, \
                 rough-pressure or rough-load"
            ))),
        }
    }
}

/// Which right-hand side a discrete solution used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scheme {
    /// Load tested against the broken velocity basis.
    Standard,
    /// Load tested against the smoothed basis.
    Modified,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Standard => "std",
            Scheme::Modified => "mod",
        }
    }
}

/// Scheme selection in a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Standard,
    Modified,
    Both,
}

impl SchemeChoice {
    pub fn includes(self, s: Scheme) -> bool {
        match self {
            SchemeChoice::Standard => s == Scheme::Standard,
            SchemeChoice::Modified => s == Scheme::Modified,
            SchemeChoice::Both => true,
        }
    }

    /// Selected schemes in table order: standard first.
    pub fn schemes(self) -> &'static [Scheme] {
        match self {
            SchemeChoice::Standard => &[Scheme::Standard],
            SchemeChoice::Modified => &[Scheme::Modified],
            SchemeChoice::Both => &[Scheme::Standard, Scheme::Modified],
        }
    }
}

impl FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<SchemeChoice, Error> {
        match s {
            "std" => Ok(SchemeChoice::Standard),
            "mod" => Ok(SchemeChoice::Modified),
            "both" => Ok(SchemeChoice::Both),
            _ => Err(Error::InvalidConfig(format!(
                "unknown scheme {s:?}; expected std, mod or both"
            ))),
        }
    }
}

impl FromStr for SkRealization {
    type Err = Error;

    fn from_str(s: &str) -> Result<SkRealization, Error> {
        match s {
            "direct" => Ok(SkRealization::Direct),
            "piola" => Ok(SkRealization::Piola),
            _ => Err(Error::InvalidConfig(format!(
                "unknown smoothing realization {s:?}; expected direct or piola"
            ))),
        }
    }
}

/// Settings for one run of a study.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Finest level; tables cover levels `2..=n_max`.
    pub n_max: u32,
    /// Anisotropy factors; only the anisotropic study reads them.
    pub m: Vec<u32>,
    pub scheme: SchemeChoice,
    pub sk: SkRealization,
    /// Destination for the rendered table; `None` means standard output.
    /// The runners only compute; writing is the caller's business.
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults: levels up to 4, anisotropy factor 10, both schemes where
    /// both are defined, per-element smoothing solves, output to stdout.
    pub fn new(experiment: Experiment) -> ExperimentConfig {
        let scheme = match experiment {
            Experiment::RoughLoad => SchemeChoice::Modified,
            _ => SchemeChoice::Both,
        };
        ExperimentConfig {
            experiment,
            n_max: 4,
            m: vec![10],
            scheme,
            sk: SkRealization::Direct,
            out: None,
        }
    }

    /// Rejects settings no study can honor: fewer than two levels, stretch
    /// factors outside `1..=64`, an empty factor list for the anisotropic
    /// study, and any request for the classical scheme on the edge-supported
    /// load, whose classical functional does not exist.
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_max < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_max = {} is below the minimum of 2",
                self.n_max
            )));
        }
        if self.experiment == Experiment::Anisotropic && self.m.is_empty() {
            return Err(Error::InvalidConfig(
                "the anisotropic study needs at least one stretch factor".into(),
            ));
        }
        for &m in &self.m {
            if !(1..=64).contains(&m) {
                return Err(Error::InvalidConfig(format!(
                    "stretch factor m = {m} is outside 1..=64"
                )));
            }
        }
        if self.experiment == Experiment::RoughLoad && self.scheme.includes(Scheme::Standard) {
            return Err(Error::InvalidConfig(
                "the rough-load study supports only the modified scheme: its load \
                 lives on mesh edges, where broken test functions have no trace"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One block of table cells: a single mesh level, stretch factor and scheme.
/// Cells a study does not produce stay `None` and render as empty columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub n: u32,
    pub m: Option<u32>,
    pub scheme: Scheme,
    pub ntri: usize,
    pub err_u: Option<f64>,
    pub best_u: Option<f64>,
    pub gamma_u: Option<f64>,
    pub err_p: Option<f64>,
    pub best_p: Option<f64>,
    pub gamma_p: Option<f64>,
    pub delta_u: Option<f64>,
    pub delta_p: Option<f64>,
    pub eoc_u: Option<f64>,
    pub eoc_p: Option<f64>,
}

impl Row {
    fn new(n: u32, m: Option<u32>, scheme: Scheme, ntri: usize) -> Row {
        Row {
            n,
            m,
            scheme,
            ntri,
            err_u: None,
            best_u: None,
            gamma_u: None,
            err_p: None,
            best_p: None,
            gamma_p: None,
            delta_u: None,
            delta_p: None,
            eoc_u: None,
            eoc_p: None,
        }
    }
}

/// Header of the machine-readable output; one schema serves all studies.
pub const CSV_HEADER: &str = "experiment,n,m,scheme,ntri,err_u_h1,best_u_h1,gamma_u,\
                              err_p_l2,best_p_l2,gamma_p,delta_u,delta_p,eoc_u,eoc_p";

/// Study results, one row per `(m, n, scheme)` in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: Experiment,
    pub rows: Vec<Row>,
}

impl ResultTable {
    /// Looks up the row of one level, stretch factor and scheme.
    pub fn row(&self, n: u32, m: Option<u32>, scheme: Scheme) -> Option<&Row> {
        self.rows.iter().find(|r| r.n == n && r.m == m && r.scheme == scheme)
    }

    /// Renders the fixed-schema CSV, empty cells for absent values.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = r.m.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.experiment.name(),
                r.n,
                m,
                r.scheme.label(),
                r.ntri,
                cell(r.err_u),
                cell(r.best_u),
                cell(r.gamma_u),
                cell(r.err_p),
                cell(r.best_p),
                cell(r.gamma_p),
                cell(r.delta_u),
                cell(r.delta_p),
                cell(r.eoc_u),
                cell(r.eoc_p),
            ));
        }
        out
    }

    /// Renders an aligned text table showing only the columns the study
    /// fills.
    pub fn to_pretty(&self) -> String {
        let sci = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_default();
        let fix = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        let (header, cells): (Vec<&str>, Vec<Vec<String>>) = match self.experiment {
            Experiment::Smooth | Experiment::Anisotropic => {
                let mut header = vec![
                    "n", "#T", "scheme", "err(u)", "best(u)", "gamma(u)", "err(p)", "best(p)",
                    "gamma(p)",
                ];
                if self.experiment == Experiment::Anisotropic {
                    header.insert(0, "m");
                }
                let rows = self
                    .rows
                    .iter()
                    .map(|r| {
                        let mut c = vec![
                            r.n.to_string(),
                            r.ntri.to_string(),
                            r.scheme.label().to_string(),
                            sci(r.err_u),
                            sci(r.best_u),
                            fix(r.gamma_u),
                            sci(r.err_p),
                            sci(r.best_p),
                            fix(r.gamma_p),
                        ];
                        if self.experiment == Experiment::Anisotropic {
                            c.insert(0, r.m.map(|m| m.to_string()).unwrap_or_default());
                        }
                        c
                    })
                    .collect();
                (header, rows)
            }
            Experiment::RoughPressure => (
                vec![
                    "n", "#T", "scheme", "err(u)", "best(u)", "gamma(u)", "EOC(u)", "err(p)",
                    "best(p)", "gamma(p)", "EOC(p)",
                ],
                self.rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.n.to_string(),
                            r.ntri.to_string(),
                            r.scheme.label().to_string(),
                            sci(r.err_u),
                            sci(r.best_u),
                            fix(r.gamma_u),
                            fix(r.eoc_u),
                            sci(r.err_p),
                            sci(r.best_p),
                            fix(r.gamma_p),
                            fix(r.eoc_p),
                        ]
                    })
                    .collect(),
            ),
            Experiment::RoughLoad => (
                vec!["n", "#T", "scheme", "delta(u)", "EOC(u)", "delta(p)", "EOC(p)"],
                self.rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.n.to_string(),
                            r.ntri.to_string(),
                            r.scheme.label().to_string(),
                            sci(r.delta_u),
                            fix(r.eoc_u),
                            sci(r.delta_p),
                            fix(r.eoc_p),
                        ]
                    })
                    .collect(),
            ),
        };

        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (j, c) in row.iter().enumerate() {
                widths[j] = widths[j].max(c.len());
            }
        }
        let render = |row: Vec<String>| -> String {
            row.iter()
                .enumerate()
                .map(|(j, c)| format!("{c:>w$}", w = widths[j]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = render(header.iter().map(|h| h.to_string()).collect());
        out.push('\n');
        for row in cells {
            out.push_str(&render(row));
            out.push('\n');
        }
        out
    }
}

/// Runs the study selected by the configuration.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable, Error> {
    config.validate()?;
    match config.experiment {
        Experiment::Smooth => run_smooth(config),
        Experiment::Anisotropic => run_anisotropic(config),
        Experiment::RoughPressure => run_rough_pressure(config),
        Experiment::RoughLoad => run_rough_load(config),
    }
}

fn g(s: f64) -> f64 {
    s * s * (s - 1.0) * (s - 1.0)
}

fn dg(s: f64) -> f64 {
    2.0 * s * (s - 1.0) * (2.0 * s - 1.0)
}

fn d2g(s: f64) -> f64 {
    12.0 * s * s - 12.0 * s + 2.0
}

fn d3g(s: f64) -> f64 {
    24.0 * s - 12.0
}

/// Velocity of the smooth benchmark: the rotated gradient of the biquartic
/// bubble `g(x1) g(x2)` with `g(s) = s^2 (s-1)^2`. Divergence free with zero
/// boundary trace.
pub fn smooth_velocity(x: Point2) -> [f64; 2] {
    [g(x.x) * dg(x.y), -dg(x.x) * g(x.y)]
}

/// Jacobian of [`smooth_velocity`], rows indexed by component.
pub fn smooth_velocity_gradient(x: Point2) -> [[f64; 2]; 2] {
    [
        [dg(x.x) * dg(x.y), g(x.x) * d2g(x.y)],
        [-d2g(x.x) * g(x.y), -dg(x.x) * dg(x.y)],
    ]
}

/// Pressure of the smooth benchmark, mean zero on the unit square.
pub fn smooth_pressure(x: Point2) -> f64 {
    (x.x - 0.5) * (x.y - 0.5)
}

/// Negative Laplacian of [`smooth_velocity`].
pub fn smooth_velocity_neg_laplacian(x: Point2) -> [f64; 2] {
    [
        -(d2g(x.x) * dg(x.y) + g(x.x) * d3g(x.y)),
        d3g(x.x) * g(x.y) + dg(x.x) * d2g(x.y),
    ]
}

/// Body force of the smooth benchmark at unit viscosity: the negative
/// Laplacian of the velocity plus the pressure gradient.
pub fn smooth_volume_load(x: Point2) -> [f64; 2] {
    let a = smooth_velocity_neg_laplacian(x);
    [a[0] + (x.y - 0.5), a[1] + (x.x - 0.5)]
}

/// The smooth benchmark with its exact body force.
pub fn smooth_case() -> AnalyticCase<'static> {
    AnalyticCase {
        u: Some(&smooth_velocity),
        grad_u: Some(&smooth_velocity_gradient),
        p: Some(PiecewisePressure { value: &smooth_pressure, cut: None }),
        load: LoadFunctional::from_volume(&smooth_volume_load),
        nu: 1.0,
    }
}

/// Abscissa of the pressure jump in the rough-pressure study. Irrational,
/// so no vertex of the bisection meshes ever lands on the line and every
/// mesh edge meets it in at most one point.
pub const JUMP_ABSCISSA: f64 = FRAC_1_PI;

/// Piecewise constant pressure of the rough-pressure study. The two values
/// weight the areas left and right of [`JUMP_ABSCISSA`] to an exact zero
/// mean.
pub fn jump_pressure(x: Point2) -> f64 {
    if x.x > JUMP_ABSCISSA {
        PI / (PI - 1.0)
    } else {
        -PI
    }
}

/// Density of the line part of the rough-pressure load: the distributional
/// gradient of [`jump_pressure`] concentrates the jump on the line.
fn jump_density(_: f64) -> f64 {
    PI / (PI - 1.0) + PI
}

/// The rough-pressure benchmark: the smooth velocity next to the jumping
/// pressure, whose distributional gradient adds a line part to the load.
pub fn rough_pressure_case() -> AnalyticCase<'static> {
    AnalyticCase {
        u: Some(&smooth_velocity),
        grad_u: Some(&smooth_velocity_gradient),
        p: Some(PiecewisePressure { value: &jump_pressure, cut: Some(JUMP_ABSCISSA) }),
        load: LoadFunctional::from_parts(
            Some(&smooth_velocity_neg_laplacian),
            Some(LinePart {
                x1: JUMP_ABSCISSA,
                density: &jump_density,
                direction: [1.0, 0.0],
            }),
        )
        .expect("the load has a volume part"),
        nu: 1.0,
    }
}

/// Abscissa of the rough-load line. The bisection meshes of that study
/// contain edges inside the line, which rules out the classical load.
pub const EDGE_LOAD_ABSCISSA: f64 = 0.5;

fn linear_density(y: f64) -> f64 {
    y
}

/// The rough-load functional: an upward pull along the vertical center
/// line with density growing linearly in the ordinate.
pub fn rough_load_functional() -> LoadFunctional<'static> {
    LoadFunctional::from_line(LinePart {
        x1: EDGE_LOAD_ABSCISSA,
        density: &linear_density,
        direction: [0.0, 1.0],
    })
}

/// Spaces and the smoothing matrix assembled once per mesh.
struct Level<'a> {
    t: &'a Triangulation,
    cr: CrSpace,
    p0: P0Space,
    bary: BarycentricMesh,
    p2: P2Space,
    e: SmootherMatrix,
}

impl<'a> Level<'a> {
    fn new(t: &'a Triangulation, sk: SkRealization) -> Result<Level<'a>, Error> {
        let cr = CrSpace::new(t);
        let p0 = P0Space::new(t);
        let bary = t.barycentric_refine();
        let p2 = P2Space::new(&bary.mesh);
        let e = Smoother::new(t, &bary, &cr, &p2, sk)?.assemble_matrix();
        Ok(Level { t, cr, p0, bary, p2, e })
    }

    fn ntri(&self) -> usize {
        self.t.triangles.len()
    }
}

fn load_vector(level: &Level, load: &LoadFunctional, scheme: Scheme) -> Result<Vec<f64>, Error> {
    match scheme {
        Scheme::Standard => assemble_load_standard(level.t, &level.cr, load),
        Scheme::Modified => Ok(assemble_load_modified(&level.bary, &level.p2, &level.e, load)),
    }
}

/// Solves one load along independent paths and demands eight-digit
/// agreement: the saddle-point velocity against the divergence-free
/// reduction and, for the modified load, the saddle-point pressure against
/// the one recovered from inter-element jumps.
fn cross_validate(level: &Level, load: &LoadFunctional, scheme: Scheme, nu: f64) -> Result<(), Error> {
    let b = load_vector(level, load, scheme)?;
    let system = saddle_system(level.t, &level.cr, &level.p0, nu, b);
    let sol = solve_saddle_point(&system)?;
    let basis = build_divfree_basis(level.t, &level.cr);
    let u_reduced = solve_reduced(&basis, &system.a, &system.b)?;

    let energy = |v: &[f64]| -> f64 {
        let av = system.a.matvec(v);
        v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>().max(0.0).sqrt()
    };
    let diff: Vec<f64> = sol.u.iter().zip(&u_reduced).map(|(a, b)| a - b).collect();
    let u_scale = energy(&sol.u);
    if energy(&diff) > 1e-8 * u_scale {
        return Err(Error::Inconsistent(format!(
            "saddle-point and reduced velocities differ by {:.2e} in the energy \
             norm against a solution of size {:.2e}",
            energy(&diff),
            u_scale
        )));
    }

    if scheme == Scheme::Modified {
        let recovered = recover_pressure_modified(level.t, &sol.u, load, &level.e, nu)?;
        let l2 = |q: &[f64]| -> f64 {
            level.t.area.iter().zip(q).map(|(a, v)| a * v * v).sum::<f64>().sqrt()
        };
        let dp: Vec<f64> = sol.p.iter().zip(&recovered).map(|(a, b)| a - b).collect();
        let p_scale = l2(&sol.p) + nu * u_scale;
        if l2(&dp) > 1e-8 * p_scale {
            return Err(Error::Inconsistent(format!(
                "saddle-point and jump-recovered pressures differ by {:.2e} against \
                 a data size of {:.2e}",
                l2(&dp),
                p_scale
            )));
        }
    }
    Ok(())
}

/// Solves all requested schemes on one mesh and turns the error reports
/// into rows. Production solves go through the divergence-free reduction,
/// whose positive definite factorization is shared across the schemes and
/// stays far leaner than the full indefinite system; pressures follow from
/// the linear-time jump recovery.
fn study_rows(
    level: &Level,
    case: &AnalyticCase,
    schemes: &[Scheme],
    n: u32,
    m: Option<u32>,
) -> Result<Vec<Row>, Error> {
    let a = assemble_stiffness(level.t, &level.cr, case.nu);
    let basis = build_divfree_basis(level.t, &level.cr);
    let factorization = ReducedFactorization::new(&basis, &a)?;
    let mut rows = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let b = load_vector(level, &case.load, scheme)?;
        let u = factorization.velocity(&b)?;
        let p = recover_pressure(level.t, &level.cr, &a, &u, &b)?;
        let report = error_report(level.t, &level.cr, &u, &p, case)?;
        let mut row = Row::new(n, m, scheme, level.ntri());
        row.err_u = Some(report.err_u);
        row.best_u = Some(report.best_u);
        row.gamma_u = Some(report.gamma_u);
        row.err_p = Some(report.err_p);
        row.best_p = Some(report.best_p);
        row.gamma_p = Some(report.gamma_p);
        rows.push(row);
    }
    Ok(rows)
}

/// Fills one decay-rate column within each `(m, scheme)` group of rows. The
/// first row of a group gets no rate; groups with a missing source cell are
/// skipped.
fn fill_rate_column(
    rows: &mut [Row],
    pick: fn(&Row) -> Option<f64>,
    store: fn(&mut Row, f64),
) {
    let mut keys: Vec<(Option<u32>, Scheme)> = Vec::new();
    for r in rows.iter() {
        let key = (r.m, r.scheme);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for key in keys {
        let idx: Vec<usize> =
            (0..rows.len()).filter(|&i| (rows[i].m, rows[i].scheme) == key).collect();
        let values: Option<Vec<f64>> = idx.iter().map(|&i| pick(&rows[i])).collect();
        let sizes: Vec<usize> = idx.iter().map(|&i| rows[i].ntri).collect();
        let Some(values) = values else { continue };
        if let Ok(rates) = eoc(&values, &sizes) {
            for (j, &rate) in rates.iter().enumerate() {
                store(&mut rows[idx[j + 1]], rate);
            }
        }
    }
}

fn fill_error_rates(rows: &mut [Row]) {
    fill_rate_column(rows, |r| r.err_u, |r, v| r.eoc_u = Some(v));
    fill_rate_column(rows, |r| r.err_p, |r, v| r.eoc_p = Some(v));
}

/// Smooth benchmark on the uniform diagonal meshes, levels `2..=n_max`.
pub fn run_smooth(config: &ExperimentConfig) -> Result<ResultTable, Error> {
    config.validate()?;
    let case = smooth_case();
    let schemes = config.scheme.schemes();
    let mut rows = Vec::new();
    for n in 2..=config.n_max {
        let t = Triangulation::uniform(n);
        let level = Level::new(&t, config.sk)?;
        if n == 2 {
            for &s in schemes {
                cross_validate(&level, &case.load, s, case.nu)?;
            }
        }
        rows.extend(study_rows(&level, &case, schemes, n, None)?);
    }
    fill_error_rates(&mut rows);
    Ok(ResultTable { experiment: Experiment::Smooth, rows })
}

/// Smooth benchmark on the stretched meshes, one block per requested factor.
/// A factor of one reproduces the uniform study's numbers exactly.
pub fn run_anisotropic(config: &ExperimentConfig) -> Result<ResultTable, Error> {
    config.validate()?;
    if config.m.is_empty() {
        return Err(Error::InvalidConfig(
            "the anisotropic study needs at least one stretch factor".into(),
        ));
    }
    let case = smooth_case();
    let schemes = config.scheme.schemes();
    let mut rows = Vec::new();
    for &m in &config.m {
        for n in 2..=config.n_max {
            let t = Triangulation::anisotropic(n, m);
            let level = Level::new(&t, config.sk)?;
            if n == 2 {
                for &s in schemes {
                    cross_validate(&level, &case.load, s, case.nu)?;
                }
            }
            rows.extend(study_rows(&level, &case, schemes, n, Some(m))?);
        }
    }
    fill_error_rates(&mut rows);
    Ok(ResultTable { experiment: Experiment::Anisotropic, rows })
}

/// Rough-pressure benchmark on the bisection mesh hierarchy grown from the
/// crossed initial mesh by two bisection rounds per level.
pub fn run_rough_pressure(config: &ExperimentConfig) -> Result<ResultTable, Error> {
    config.validate()?;
    let case = rough_pressure_case();
    let schemes = config.scheme.schemes();
    let mut meshes = vec![Triangulation::crossed_coarse()];
    for _ in 1..=config.n_max {
        meshes.push(meshes.last().unwrap().refine_nvb_global(2)?);
    }
    let mut rows = Vec::new();
    for n in 2..=config.n_max {
        let level = Level::new(&meshes[n as usize], config.sk)?;
        if n == 2 {
            for &s in schemes {
                cross_validate(&level, &case.load, s, case.nu)?;
            }
        }
        rows.extend(study_rows(&level, &case, schemes, n, None)?);
    }
    fill_error_rates(&mut rows);
    Ok(ResultTable { experiment: Experiment::RoughPressure, rows })
}

/// Rough-load study: modified solutions on the once-more bisected hierarchy,
/// reporting the broken gradient and pressure distance between consecutive
/// levels in place of unavailable errors.
pub fn run_rough_load(config: &ExperimentConfig) -> Result<ResultTable, Error> {
    config.validate()?;
    let load = rough_load_functional();
    let nu = 1.0;
    let mut meshes = vec![Triangulation::crossed_coarse().refine_nvb_global(1)?];
    for _ in 1..=config.n_max {
        meshes.push(meshes.last().unwrap().refine_nvb_global(2)?);
    }
    let mut rows = Vec::new();
    let mut prev: Option<(Level, StokesSolution)> = None;
    for n in 1..=config.n_max {
        let level = Level::new(&meshes[n as usize], config.sk)?;
        if n == 1 {
            cross_validate(&level, &load, Scheme::Modified, nu)?;
        }
        let a = assemble_stiffness(level.t, &level.cr, nu);
        let basis = build_divfree_basis(level.t, &level.cr);
        let b = load_vector(&level, &load, Scheme::Modified)?;
        let u = solve_reduced(&basis, &a, &b)?;
        let p = recover_pressure(level.t, &level.cr, &a, &u, &b)?;
        let sol = StokesSolution { u, p };
        if let Some((coarse, coarse_sol)) = &prev {
            let du = cross_mesh_difference_u(
                level.t,
                &level.cr,
                &sol.u,
                coarse.t,
                &coarse.cr,
                &coarse_sol.u,
            )?;
            let dp = cross_mesh_difference_p(level.t, &sol.p, coarse.t, &coarse_sol.p)?;
            let mut row = Row::new(n, None, Scheme::Modified, level.ntri());
            row.delta_u = Some(du);
            row.delta_p = Some(dp);
            rows.push(row);
        }
        prev = Some((level, sol));
    }
    fill_rate_column(&mut rows, |r| r.delta_u, |r, v| r.eoc_u = Some(v));
    fill_rate_column(&mut rows, |r| r.delta_p, |r, v| r.eoc_p = Some(v));
    Ok(ResultTable { experiment: Experiment::RoughLoad, rows })
}
