//! P1 finite-element kernel.

pub mod assembly;
pub mod coefficient;
pub mod constraints;
pub mod integrate;
pub mod sparse;

pub use assembly::{
    assemble_interface_mass, assemble_load, assemble_stiffness, InterfaceCoupling, SparseSystem,
};
pub use coefficient::{CoefficientField, Mat2, IDENTITY};
pub use constraints::{
    apply_constraints, solve_spd, Constraints, FieldSolution, ReducedSystem, SolverOptions,
};
pub use integrate::{
    grad_sq, integrate_field, integrate_fn, integrate_interface, l2_error, l2_norm, nodal_weights,
    InterfaceSide,
};
pub use sparse::{pcg, pcg_jacobi, CsrMatrix, Preconditioner, SolveStats};
