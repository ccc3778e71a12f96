//! Command dispatch and output files.
//!
//! | command | reads                 | writes                                            |
//! |---------|-----------------------|---------------------------------------------------|
//! | `cell`  | config                | `homogenized.json`, `cell.vtk`                    |
//! | `macro` | `homogenized.json`    | `macro.vtk`, `macro_summary.csv`                  |
//! | `micro` | config                | `micro_m<M>.vtk`, `energy.csv` (one row per eps)  |
//! | `study` | config                | `homogenized.json`, `report.csv`, `report.dat`    |

use std::path::{Path, PathBuf};

use crate::cell::{provenance_fingerprint, solve_cell_problems};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fem::{assemble_stiffness, integrate_field, CoefficientField, SparseSystem};
use crate::io::{read_homogenized, upsert_csv_row, write_homogenized, write_text, write_vtk};
use crate::mesh::{reciprocal_integer, Mesh, Region};
use crate::micro::{combined_pressure, energy_report, resolved_pressure, solve_micro, MicroProblem};
use crate::study::{run_study, MacroState};

pub const HOMOGENIZED_FILE: &str = "homogenized.json";
pub const CELL_VTK: &str = "cell.vtk";
pub const MACRO_VTK: &str = "macro.vtk";
pub const MACRO_SUMMARY: &str = "macro_summary.csv";
pub const ENERGY_CSV: &str = "energy.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_DAT: &str = "report.dat";

pub const MACRO_SUMMARY_HEADER: &str = "field,min,max,mean,energy";
pub const ENERGY_HEADER: &str = "eps,m,grad_u_sq,eps2_grad_v_sq,jump_sq,h_eps_norm";

pub fn micro_vtk_name(m: usize) -> String {
    format!("micro_m{m}.vtk")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Cell,
    Macro,
    /// A single eps, or every eps of the config when `None`.
    Micro { eps: Option<f64> },
    Study,
}

/// Accepts `1/m` or a decimal.
pub fn parse_eps(text: &str) -> Result<f64> {
    let text = text.trim();
    let eps = match text.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| Error::Argument(format!("bad eps `{text}`")))?;
            let den: f64 = den.trim().parse().map_err(|_| Error::Argument(format!("bad eps `{text}`")))?;
            num / den
        }
        None => text.parse().map_err(|_| Error::Argument(format!("bad eps `{text}`")))?,
    };
    let m = reciprocal_integer(eps)?;
    Ok(1.0 / m as f64)
}

/// Caps the global worker pool at `HOMOGFLOW_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("HOMOGFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("HOMOGFLOW_THREADS must be a positive integer, got `{value}`")))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command, writing into `config.output_dir`. Returns the files
/// written.
pub fn dispatch(command: Command, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = config.output_dir.as_path();
    match command {
        Command::Cell => run_cell(config, out),
        Command::Macro => run_macro(config, out),
        Command::Micro { eps } => run_micro(config, out, eps),
        Command::Study => run_study_command(config, out),
    }
}

fn run_cell(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (cell, solution, data) = solve_cell_problems(&config.geometry, &config.coefficients, &config.solver)?;
    let json = out.join(HOMOGENIZED_FILE);
    write_homogenized(&json, &data)?;
    let alpha = solution
        .alpha
        .as_ref()
        .map(|a| a.values.clone())
        .unwrap_or_else(|| vec![0.0; cell.mesh.num_nodes()]);
    let vtk = out.join(CELL_VTK);
    write_vtk(
        &vtk,
        &cell.mesh,
        "unit cell correctors and block response",
        &[
            ("omega_1", &solution.omega[0].values),
            ("omega_2", &solution.omega[1].values),
            ("alpha", &alpha),
        ],
    )?;
    Ok(vec![json, vtk])
}

fn summary_row(name: &str, mesh: &Mesh, a: &CoefficientField, values: &[f64]) -> String {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let mean = integrate_field(mesh, values, Region::All);
    let mut system = SparseSystem::new(mesh.num_nodes());
    assemble_stiffness(&mut system, mesh, a, Region::All, 1.0);
    let energy = system.matrix().quad_form(values);
    format!("{name},{lo:.12e},{hi:.12e},{mean:.12e},{energy:.12e}")
}

fn run_macro(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = read_homogenized(out.join(HOMOGENIZED_FILE))?;
    if data.provenance.fingerprint != provenance_fingerprint(&config.geometry, &config.coefficients) {
        return Err(Error::validation(
            HOMOGENIZED_FILE,
            "was computed for a different geometry or coefficients; rerun `cell`",
        ));
    }
    let state = MacroState::solve(config, &data)?;
    let g: Vec<f64> = state.mesh.nodes.iter().map(|&x| state.problem.lift(x)).collect();
    let vtk = out.join(MACRO_VTK);
    write_vtk(
        &vtk,
        &state.mesh,
        "homogenized pressure",
        &[("u", &state.u.values), ("U", &state.big_u.values), ("G", &g)],
    )?;
    let a = CoefficientField::ConstantMatrix { value: data.a_h };
    let mut csv = String::from(MACRO_SUMMARY_HEADER);
    csv.push('\n');
    for (name, values) in [("u", &state.u.values), ("G", &g), ("U", &state.big_u.values)] {
        csv.push_str(&summary_row(name, &state.mesh, &a, values));
        csv.push('\n');
    }
    let summary = out.join(MACRO_SUMMARY);
    write_text(&summary, &csv)?;
    Ok(vec![vtk, summary])
}

fn run_micro(config: &RunConfig, out: &Path, eps: Option<f64>) -> Result<Vec<PathBuf>> {
    let eps_list = match eps {
        Some(e) => vec![1.0 / reciprocal_integer(e)? as f64],
        None => config.eps_list.clone(),
    };
    let mut written = Vec::new();
    let energy_path = out.join(ENERGY_CSV);
    for eps in eps_list {
        let problem = MicroProblem::new(
            &config.geometry,
            eps,
            config.coefficients.clone(),
            config.sources.f1.clone(),
            config.sources.f2.clone(),
        )?;
        let m = problem.mesh.cells_per_side;
        let sol = solve_micro(&problem, &config.solver).map_err(Error::stage("micro", Some(m)))?;
        let w = combined_pressure(&sol);
        let resolved = resolved_pressure(&sol, &problem.mesh)?;
        let vtk = out.join(micro_vtk_name(m));
        write_vtk(
            &vtk,
            &problem.mesh,
            &format!("micro solution eps = 1/{m}"),
            &[
                ("u_eps", &sol.u_eps.values),
                ("v_eps", &sol.v_eps.values),
                ("w_eps", &w.values),
                ("w_eps_resolved", &resolved),
            ],
        )?;
        let e = energy_report(&sol, &problem.mesh);
        let row = format!(
            "{eps:.12e},{m},{:.12e},{:.12e},{:.12e},{:.12e}",
            e.grad_u_sq, e.eps2_grad_v_sq, e.jump_sq, e.h_eps_norm
        );
        upsert_csv_row(&energy_path, ENERGY_HEADER, &row)?;
        written.push(vtk);
    }
    written.push(energy_path);
    Ok(written)
}

fn run_study_command(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = run_study(config)?;
    let json = out.join(HOMOGENIZED_FILE);
    write_homogenized(&json, &outcome.homogenized)?;
    let csv = out.join(REPORT_CSV);
    write_text(&csv, &outcome.report.to_csv())?;
    let dat = out.join(REPORT_DAT);
    write_text(&dat, &outcome.report.to_dat())?;
    let failed: Vec<String> = outcome
        .report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} {}", c.name, c.detail))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Check(failed.join("; ")));
    }
    Ok(vec![json, csv, dat])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellGeometry;

    fn config(dir: &Path) -> RunConfig {
        RunConfig {
            geometry: CellGeometry::disk([0.5, 0.5], 0.25, 8),
            macro_resolution: 8,
            eps_list: vec![0.5, 0.25],
            output_dir: dir.to_path_buf(),
            ..RunConfig::standard()
        }
    }

    #[test]
    fn eps_parsing() {
        assert_eq!(parse_eps("1/8").unwrap(), 0.125);
        assert_eq!(parse_eps("0.25").unwrap(), 0.25);
        assert!(parse_eps("0.3").is_err());
        assert!(parse_eps("1/x").is_err());
    }

    #[test]
    fn macro_needs_cell_output() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        assert!(matches!(dispatch(Command::Macro, &c), Err(Error::Dependency(_))));
        dispatch(Command::Cell, &c).unwrap();
        let files = dispatch(Command::Macro, &c).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let summary = std::fs::read_to_string(dir.path().join(MACRO_SUMMARY)).unwrap();
        assert_eq!(summary.lines().count(), 4);

        let other = RunConfig {
            geometry: CellGeometry::disk([0.5, 0.5], 0.2, 8),
            ..c
        };
        assert!(matches!(dispatch(Command::Macro, &other), Err(Error::Validation { .. })));
    }

    #[test]
    fn micro_reruns_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        dispatch(Command::Micro { eps: Some(0.25) }, &c).unwrap();
        let first = std::fs::read(dir.path().join(ENERGY_CSV)).unwrap();
        let vtk = std::fs::read(dir.path().join(micro_vtk_name(4))).unwrap();
        dispatch(Command::Micro { eps: Some(0.25) }, &c).unwrap();
        assert_eq!(std::fs::read(dir.path().join(ENERGY_CSV)).unwrap(), first);
        assert_eq!(std::fs::read(dir.path().join(micro_vtk_name(4))).unwrap(), vtk);
        dispatch(Command::Micro { eps: None }, &c).unwrap();
        let text = std::fs::read_to_string(dir.path().join(ENERGY_CSV)).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
