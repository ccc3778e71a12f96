//! Elimination of Dirichlet, periodic and mean-zero constraints, and the
//! SPD solve on the reduced system.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assembly::SparseSystem;
use crate::fem::sparse::{pcg, CsrMatrix, Preconditioner, SolveStats};
use crate::mesh::PeriodicMap;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Dof {
    Free(usize),
    Fixed(f64),
    Inactive,
}

/// Constraint set for one solve.
///
/// `active` restricts the unknowns to a node subset (e.g. the matrix part);
/// inactive nodes are reported as zero. `mean_zero` carries nodal integration
/// weights: the solution is made unique by pinning one DOF and then shifted
/// to exact zero weighted mean (the quotient by constants).
#[derive(Clone, Debug, Default)]
pub struct Constraints {
    pub active: Option<Vec<bool>>,
    pub dirichlet: Vec<(usize, f64)>,
    pub periodic: Vec<(usize, usize)>,
    pub mean_zero: Option<Vec<f64>>,
}

impl Constraints {
    pub fn with_periodic(mut self, map: &PeriodicMap) -> Self {
        self.periodic.extend(map.identifications());
        self
    }
}

#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    map: Vec<Dof>,
    periodic_master: Vec<usize>,
    mean_zero: Option<(Vec<f64>, Vec<bool>)>,
}

impl ReducedSystem {
    pub fn num_free(&self) -> usize {
        self.rhs.len()
    }

    /// Full nodal vector from reduced unknowns: back-substitutes fixed and
    /// slave values and applies the mean shift.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let value = |k: usize| match self.map[k] {
            Dof::Free(r) => reduced[r],
            Dof::Fixed(v) => v,
            Dof::Inactive => 0.0,
        };
        let mut out: Vec<f64> = (0..self.map.len()).map(|k| value(self.periodic_master[k])).collect();
        if let Some((weights, active)) = &self.mean_zero {
            let (num, den) = out
                .iter()
                .zip(weights)
                .fold((0.0, 0.0), |(n, d), (x, w)| (n + w * x, d + w));
            let shift = num / den;
            for (x, &a) in out.iter_mut().zip(active) {
                if a {
                    *x -= shift;
                }
            }
        }
        out
    }

    /// Restriction of a full nodal vector to the reduced unknowns.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_free()];
        for (k, d) in self.map.iter().enumerate() {
            if let Dof::Free(r) = d {
                out[*r] = full[k];
            }
        }
        out
    }
}

pub fn apply_constraints(system: &SparseSystem, c: &Constraints) -> Result<ReducedSystem> {
    let n = system.n;
    let active = c.active.clone().unwrap_or_else(|| vec![true; n]);
    if active.len() != n {
        return Err(Error::Constraint("active mask has wrong length".into()));
    }

    // periodic masters, following chains
    let mut slave_of: BTreeMap<usize, usize> = BTreeMap::new();
    for &(s, m) in &c.periodic {
        if s == m {
            continue;
        }
        if let Some(prev) = slave_of.insert(s, m) {
            if prev != m {
                return Err(Error::Constraint(format!(
                    "node {s} is a periodic slave of both {prev} and {m}"
                )));
            }
        }
    }
    let mut master = vec![0usize; n];
    for k in 0..n {
        let mut cur = k;
        let mut hops = 0;
        while let Some(&m) = slave_of.get(&cur) {
            cur = m;
            hops += 1;
            if hops > n {
                return Err(Error::Constraint(format!("periodic cycle through node {k}")));
            }
        }
        master[k] = cur;
        if active[k] != active[cur] {
            return Err(Error::Constraint(format!(
                "periodic pair ({k}, {cur}) mixes active and inactive nodes"
            )));
        }
    }

    let mut fixed: BTreeMap<usize, f64> = BTreeMap::new();
    for &(k, v) in &c.dirichlet {
        if k >= n || !active[k] {
            return Err(Error::Constraint(format!("Dirichlet value on inactive node {k}")));
        }
        if slave_of.contains_key(&k) {
            return Err(Error::Constraint(format!(
                "node {k} is both a periodic slave and a Dirichlet node"
            )));
        }
        if let Some(prev) = fixed.insert(k, v) {
            if prev != v {
                return Err(Error::Constraint(format!(
                    "conflicting Dirichlet values {prev} and {v} on node {k}"
                )));
            }
        }
    }

    let mut map = vec![Dof::Inactive; n];
    let mut pinned = c.mean_zero.is_none();
    let mut next = 0;
    for k in 0..n {
        if !active[k] || master[k] != k {
            continue;
        }
        map[k] = if let Some(&v) = fixed.get(&k) {
            Dof::Fixed(v)
        } else if !pinned {
            pinned = true;
            Dof::Fixed(0.0)
        } else {
            next += 1;
            Dof::Free(next - 1)
        };
    }
    let dof = |k: usize| map[master[k]];

    let mut rhs = vec![0.0; next];
    for k in 0..n {
        match dof(k) {
            Dof::Free(r) => rhs[r] += system.rhs[k],
            Dof::Inactive if system.rhs[k] != 0.0 => {
                return Err(Error::Constraint(format!("load on inactive node {k}")));
            }
            _ => {}
        }
    }
    let mut triplets = Vec::with_capacity(system.triplets.len());
    for &(i, j, v) in &system.triplets {
        match (dof(i), dof(j)) {
            (Dof::Free(ri), Dof::Free(rj)) => triplets.push((ri, rj, v)),
            (Dof::Free(ri), Dof::Fixed(x)) => rhs[ri] -= v * x,
            (Dof::Fixed(_), Dof::Free(_) | Dof::Fixed(_)) => {}
            (Dof::Inactive, _) | (_, Dof::Inactive) => {
                return Err(Error::Constraint(format!(
                    "matrix entry ({i}, {j}) touches an inactive node"
                )));
            }
        }
    }
    let mean_zero = c.mean_zero.as_ref().map(|w| (w.clone(), active.clone()));
    Ok(ReducedSystem {
        matrix: CsrMatrix::from_triplets(next, &triplets),
        rhs,
        map,
        periodic_master: master,
        mean_zero,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the number of unknowns.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-10,
            max_iter_factor: 20,
        }
    }
}

/// Nodal field on a mesh (one value per node; duplicated interface copies
/// carry their own values).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSolution {
    pub values: Vec<f64>,
    pub stats: Option<SolveStats>,
}

impl FieldSolution {
    pub fn from_values(values: Vec<f64>) -> Self {
        FieldSolution { values, stats: None }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_values(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn solve_spd(reduced: &ReducedSystem, opts: &SolverOptions) -> Result<FieldSolution> {
    let max_iter = (opts.max_iter_factor * reduced.num_free()).max(1);
    if reduced.rhs.iter().all(|&v| v == 0.0) {
        return Ok(FieldSolution {
            values: reduced.expand(&vec![0.0; reduced.num_free()]),
            stats: Some(SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            }),
        });
    }
    let precond = Preconditioner::incomplete_cholesky(&reduced.matrix)?;
    let (x, stats) = pcg(&reduced.matrix, &reduced.rhs, opts.rel_tol, max_iter, &precond)?;
    log::debug!(
        "cg: {} unknowns, {} iterations, residual {:.2e}",
        reduced.num_free(),
        stats.iterations,
        stats.relative_residual
    );
    Ok(FieldSolution {
        values: reduced.expand(&x),
        stats: Some(stats),
    })
}
