//! End-to-end convergence study: cell problems, macro solve, an ε-sweep of
//! micro solves, and weak-convergence metrics comparing `w^ε` with
//! `U = u + G`.
//!
//! Weak convergence is probed two ways: the L² distance between ε-cell
//! averages, and a few fixed smooth test functionals.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cell::{solve_cell_problems, CellSolution, HomogenizedData};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fem::integrate::{barycentric_point, TRI_DEG4};
use crate::fem::{l2_norm, FieldSolution};
use crate::geometry::Point;
use crate::macroscale::{build_macro_mesh, compose_limit_pressure, solve_macro, MacroField, MacroProblem};
use crate::mesh::{Mesh, Region, Subdomain};
use crate::micro::{combined_pressure, energy_report, solve_micro, EnergyReport, MicroProblem, MicroSolution};

/// Smooth test functions for the functional metrics.
pub const TEST_FUNCTIONS: [fn(Point) -> f64; 3] = [
    |_| 1.0,
    |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
    |x| x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]),
];

/// Means over the `m × m` ε-cells of `integrand`, where `integrand(t)` is
/// the integral over triangle `t` of the ε-mesh. Cells are numbered
/// row-major from the origin.
fn cell_means(mesh: &Mesh, integrand: impl Fn(usize) -> f64) -> Vec<f64> {
    let m = mesh.cells_per_side;
    let mut sums = vec![0.0; m * m];
    for t in 0..mesh.triangles.len() {
        sums[mesh.triangle_cell[t]] += integrand(t);
    }
    let cell_area = mesh.eps() * mesh.eps();
    sums.iter().map(|s| s / cell_area).collect()
}

/// ε-cell averages of a nodal P1 field on the ε-mesh (both subdomains).
pub fn cell_average(mesh: &Mesh, values: &[f64]) -> Vec<f64> {
    cell_means(mesh, |t| {
        let [a, b, c] = mesh.triangles[t].nodes;
        mesh.area(t) * (values[a] + values[b] + values[c]) / 3.0
    })
}

/// ε-cell averages of a function, by the degree-4 rule on the ε-mesh.
pub fn cell_average_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    cell_means(mesh, |t| {
        let v = mesh.vertices(t);
        mesh.area(t) * TRI_DEG4.iter().map(|&(l, w)| w * f(barycentric_point(&v, l))).sum::<f64>()
    })
}

/// L²(Ω) distance between two piecewise-constant ε-cell fields.
pub fn cell_l2_distance(a: &[f64], b: &[f64], eps: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| eps * eps * (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Relative `L²(Ω2^ε)` distance between `v^ε` and the two-scale predictor
/// `u(x) + α(x/ε) f2(x)`; `u` may be any point-evaluable field.
pub fn corrector_error(
    micro: &MicroSolution,
    mesh: &Mesh,
    cell: &CellSolution,
    u: impl Fn(Point) -> f64,
    f2: &Expr,
) -> Result<f64> {
    if mesh.geometry_fingerprint != cell.geometry_fingerprint {
        return Err(Error::Argument(
            "micro mesh and cell solution come from different geometries".into(),
        ));
    }
    let Some(alpha) = &cell.alpha else {
        return Ok(0.0);
    };
    let block = mesh.node_mask(Region::Only(Subdomain::Block));
    let diff: Vec<f64> = (0..mesh.num_nodes())
        .map(|k| {
            if !block[k] {
                return 0.0;
            }
            let x = mesh.nodes[k];
            let predictor = u(x) + alpha.values[mesh.node_origin[k]] * f2.eval(x);
            micro.v_eps.values[k] - predictor
        })
        .collect();
    let region = Region::Only(Subdomain::Block);
    let err = l2_norm(mesh, &diff, region);
    let scale = l2_norm(mesh, &micro.v_eps.values, region);
    Ok(if scale > 0.0 { err / scale } else { err })
}

/// `|∫_Ω (w - U) φ|` for each test function, by the degree-4 rule on the
/// ε-mesh.
pub fn functional_metrics(mesh: &Mesh, w: &[f64], limit: impl Fn(Point) -> f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let v = mesh.vertices(t);
        let nodal = tri.nodes.map(|k| w[k]);
        let area = mesh.area(t);
        for &(l, wq) in &TRI_DEG4 {
            let x = barycentric_point(&v, l);
            let d = l[0] * nodal[0] + l[1] * nodal[1] + l[2] * nodal[2] - limit(x);
            for (k, phi) in TEST_FUNCTIONS.iter().enumerate() {
                out[k] += area * wq * d * phi(x);
            }
        }
    }
    out.map(f64::abs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub eps: f64,
    pub m: usize,
    /// `‖P_ε w^ε - P_ε U‖_{L²(Ω)}`.
    pub weak_metric: f64,
    /// Same against `u` alone (no boundary lift).
    pub weak_metric_u: f64,
    pub corrector_metric: f64,
    pub functionals: [f64; 3],
    pub energy: EnergyReport,
    /// Rates against the previous (coarser) row.
    pub weak_rate: Option<f64>,
    pub corrector_rate: Option<f64>,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub checks: Vec<CheckOutcome>,
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "eps",
    "m",
    "weak_metric",
    "weak_metric_u",
    "corrector_metric",
    "functional_1",
    "functional_2",
    "functional_3",
    "h_eps_norm",
    "grad_u_sq",
    "eps2_grad_v_sq",
    "jump_sq",
    "weak_rate",
    "corrector_rate",
    "fingerprint",
];

fn sci(v: f64) -> String {
    format!("{v:.12e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                sci(r.eps),
                r.m.to_string(),
                sci(r.weak_metric),
                sci(r.weak_metric_u),
                sci(r.corrector_metric),
                sci(r.functionals[0]),
                sci(r.functionals[1]),
                sci(r.functionals[2]),
                sci(r.energy.h_eps_norm),
                sci(r.energy.grad_u_sq),
                sci(r.energy.eps2_grad_v_sq),
                sci(r.energy.jump_sq),
                opt_sci(r.weak_rate),
                opt_sci(r.corrector_rate),
                r.fingerprint.clone(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated columns for log-log plots.
    pub fn to_dat(&self) -> String {
        let mut out = String::from("# eps weak_metric weak_metric_u corrector_metric functional_1 functional_2 functional_3 h_eps_norm\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                sci(r.eps),
                sci(r.weak_metric),
                sci(r.weak_metric_u),
                sci(r.corrector_metric),
                sci(r.functionals[0]),
                sci(r.functionals[1]),
                sci(r.functionals[2]),
                sci(r.energy.h_eps_norm)
            );
        }
        out
    }
}

fn rate(coarse: f64, fine: f64, eps_coarse: f64, eps_fine: f64) -> Option<f64> {
    (coarse > 0.0 && fine > 0.0).then(|| (coarse / fine).ln() / (eps_coarse / eps_fine).ln())
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", items.join(", "))
}

fn evaluate_checks(rows: &[ReportRow]) -> Vec<CheckOutcome> {
    let column = |f: &dyn Fn(&ReportRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let all_zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    let mut checks = Vec::new();
    let mut monotone = |name: &'static str, values: Vec<f64>| {
        let passed = all_zero(&values) || strictly_decreasing(&values);
        checks.push(CheckOutcome {
            name,
            passed,
            detail: fmt_list(&values),
        });
    };
    monotone("weak_metric decreasing", column(&|r| r.weak_metric));
    monotone("corrector_metric decreasing", column(&|r| r.corrector_metric));
    monotone("functional_1 decreasing", column(&|r| r.functionals[0]));
    monotone("functional_2 decreasing", column(&|r| r.functionals[1]));
    monotone("functional_3 decreasing", column(&|r| r.functionals[2]));
    let norms = column(&|r| r.energy.h_eps_norm);
    let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
    checks.push(CheckOutcome {
        name: "h_eps_norm bounded",
        passed: hi == 0.0 || hi < 2.0 * lo,
        detail: fmt_list(&norms),
    });
    checks
}

/// Fingerprint of the cell data and macro resolution shared by every row.
pub fn study_fingerprint(data: &HomogenizedData, macro_resolution: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.provenance.fingerprint.as_bytes());
    hasher.update(macro_resolution.to_le_bytes());
    hex::encode(hasher.finalize())
}

/// Macro-side state shared by all ε instances.
pub struct MacroState {
    pub problem: MacroProblem,
    pub mesh: Mesh,
    pub u: FieldSolution,
    pub big_u: FieldSolution,
}

impl MacroState {
    pub fn solve(config: &RunConfig, data: &HomogenizedData) -> Result<Self> {
        let problem = MacroProblem::from_homogenized(data, config.sources.f1.clone(), config.sources.f2.clone());
        let mesh = build_macro_mesh(config.macro_resolution)?;
        let u = solve_macro(&problem, &mesh, &config.solver)?;
        let big_u = compose_limit_pressure(&u, &problem, &mesh);
        Ok(MacroState { problem, mesh, u, big_u })
    }

    /// `u(x)` by interpolation on the macro mesh.
    pub fn u_at(&self) -> Result<impl Fn(Point) -> f64 + '_> {
        let field = MacroField::new(&self.mesh, &self.u.values)?;
        Ok(move |x| field.eval(x))
    }

    /// `U(x) = u(x) + G(x)` with `G` evaluated exactly.
    pub fn limit_at(&self) -> Result<impl Fn(Point) -> f64 + '_> {
        let u = self.u_at()?;
        Ok(move |x| u(x) + self.problem.lift(x))
    }
}

fn study_row(
    config: &RunConfig,
    eps: f64,
    cell: &CellSolution,
    macro_state: &MacroState,
    fingerprint: &str,
) -> Result<ReportRow> {
    let problem = MicroProblem::new(
        &config.geometry,
        eps,
        config.coefficients.clone(),
        config.sources.f1.clone(),
        config.sources.f2.clone(),
    )?;
    let m = problem.mesh.cells_per_side;
    let sol = solve_micro(&problem, &config.solver).map_err(Error::stage("micro", Some(m)))?;
    let mesh = &problem.mesh;
    let metrics = || -> Result<ReportRow> {
        let u = macro_state.u_at()?;
        let limit = macro_state.limit_at()?;
        let w = combined_pressure(&sol).values;
        let w_avg = cell_average(mesh, &w);
        let weak_metric = cell_l2_distance(&w_avg, &cell_average_fn(mesh, &limit), eps);
        let weak_metric_u = cell_l2_distance(&w_avg, &cell_average_fn(mesh, &u), eps);
        let corrector_metric = corrector_error(&sol, mesh, cell, &u, &config.sources.f2)?;
        Ok(ReportRow {
            eps,
            m,
            weak_metric,
            weak_metric_u,
            corrector_metric,
            functionals: functional_metrics(mesh, &w, &limit),
            energy: energy_report(&sol, mesh),
            weak_rate: None,
            corrector_rate: None,
            fingerprint: fingerprint.to_string(),
        })
    };
    metrics().map_err(Error::stage("metrics", Some(m)))
}

#[derive(Clone, Debug)]
pub struct StudyOutcome {
    pub homogenized: HomogenizedData,
    pub report: ConvergenceReport,
}

/// Runs the whole pipeline; ε instances are solved in parallel and the
/// report is assembled in list order.
pub fn run_study(config: &RunConfig) -> Result<StudyOutcome> {
    let (_, cell, data) = solve_cell_problems(&config.geometry, &config.coefficients, &config.solver)
        .map_err(Error::stage("cell", None))?;
    let macro_state = MacroState::solve(config, &data).map_err(Error::stage("macro", None))?;
    let fingerprint = study_fingerprint(&data, config.macro_resolution);
    let mut rows = config
        .eps_list
        .par_iter()
        .map(|&eps| study_row(config, eps, &cell, &macro_state, &fingerprint))
        .collect::<Result<Vec<_>>>()?;
    for k in 1..rows.len() {
        let (prev, cur) = (&rows[k - 1], &rows[k]);
        let weak = rate(prev.weak_metric, cur.weak_metric, prev.eps, cur.eps);
        let corr = rate(prev.corrector_metric, cur.corrector_metric, prev.eps, cur.eps);
        rows[k].weak_rate = weak;
        rows[k].corrector_rate = corr;
    }
    let checks = evaluate_checks(&rows);
    for c in &checks {
        log::info!("check {}: {} {}", c.name, if c.passed { "ok" } else { "FAILED" }, c.detail);
    }
    Ok(StudyOutcome {
        homogenized: data,
        report: ConvergenceReport { rows, checks },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellCoefficients;
    use crate::config::Sources;
    use crate::expr::Variables;
    use crate::geometry::CellGeometry;
    use crate::mesh::build_epsilon_mesh;

    fn small_config() -> RunConfig {
        RunConfig {
            geometry: CellGeometry::disk([0.5, 0.5], 0.25, 8),
            macro_resolution: 16,
            eps_list: vec![0.5, 0.25],
            ..RunConfig::standard()
        }
    }

    #[test]
    fn cell_averages_of_simple_fields() {
        let mesh = build_epsilon_mesh(&CellGeometry::disk([0.5, 0.5], 0.25, 8), 0.5).unwrap();
        let c = vec![3.0; mesh.num_nodes()];
        for a in cell_average(&mesh, &c) {
            assert!((a - 3.0).abs() < 1e-13);
        }
        let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let avg = cell_average(&mesh, &x);
        for (k, expected) in [0.25, 0.75, 0.25, 0.75].iter().enumerate() {
            assert!((avg[k] - expected).abs() < 1e-13, "cell {k}: {}", avg[k]);
        }
        let f = |p: Point| (3.0 * p[0]).sin() + p[1] * p[1];
        let avg = cell_average_fn(&mesh, f);
        let mean: f64 = avg.iter().sum::<f64>() / avg.len() as f64;
        let exact = (1.0 - 3.0_f64.cos()) / 3.0 + 1.0 / 3.0;
        assert!((mean - exact).abs() < 1e-6);
    }

    #[test]
    fn injected_predictor_has_zero_corrector_error() {
        let geom = CellGeometry::disk([0.5, 0.5], 0.25, 8);
        let (_, cell, _) = solve_cell_problems(&geom, &CellCoefficients::default(), &Default::default()).unwrap();
        let mesh = build_epsilon_mesh(&geom, 0.25).unwrap();
        let f2 = Expr::parse("1 + x1", Variables::Macro).unwrap();
        let u = |x: Point| x[0] * (1.0 - x[0]);
        let alpha = cell.alpha.as_ref().unwrap();
        let block = mesh.node_mask(Region::Only(Subdomain::Block));
        let v: Vec<f64> = (0..mesh.num_nodes())
            .map(|k| {
                let x = mesh.nodes[k];
                if block[k] { u(x) + alpha.values[mesh.node_origin[k]] * f2.eval(x) } else { 0.0 }
            })
            .collect();
        let synthetic = MicroSolution {
            eps: 0.25,
            m: 4,
            u_eps: FieldSolution::zeros(mesh.num_nodes()),
            v_eps: FieldSolution::from_values(v),
            stats: None,
        };
        assert_eq!(corrector_error(&synthetic, &mesh, &cell, u, &f2).unwrap(), 0.0);

        let other = build_epsilon_mesh(&CellGeometry::disk([0.5, 0.5], 0.2, 8), 0.25).unwrap();
        assert!(matches!(
            corrector_error(&synthetic, &other, &cell, u, &f2),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn zero_sources_give_zero_metrics() {
        let zero = Expr::constant(0.0);
        let config = RunConfig {
            sources: Sources { f1: zero.clone(), f2: zero },
            ..small_config()
        };
        let report = run_study(&config).unwrap().report;
        for r in &report.rows {
            assert_eq!(r.weak_metric, 0.0);
            assert_eq!(r.corrector_metric, 0.0);
            assert_eq!(r.functionals, [0.0; 3]);
            assert_eq!(r.energy.h_eps_norm, 0.0);
            assert_eq!(r.weak_rate, None);
        }
    }

    #[test]
    fn single_eps_has_no_rates_and_report_is_deterministic() {
        let config = RunConfig {
            eps_list: vec![0.25],
            ..small_config()
        };
        let a = run_study(&config).unwrap().report;
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a.rows[0].weak_rate, None);
        let b = run_study(&config).unwrap().report;
        assert_eq!(a.to_csv(), b.to_csv());
        let csv = a.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, REPORT_COLUMNS.join(","));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), REPORT_COLUMNS.len());
    }

    #[test]
    fn constant_test_function_obeys_cauchy_schwarz() {
        let report = run_study(&small_config()).unwrap().report;
        for r in &report.rows {
            // the φ = 1 functional only sees cell means
            assert!(r.functionals[0] <= r.weak_metric * (1.0 + 1e-9) + 1e-14);
        }
        assert!(report.rows[1].weak_rate.is_some());
    }
}
