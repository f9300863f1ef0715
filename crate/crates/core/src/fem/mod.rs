//! P1 Lagrange finite elements on a uniform triangulation of the unit square.

mod assembly;
mod field;
mod mesh;
mod solver;
mod sparse;

pub use assembly::{assemble_load, assemble_mass, assemble_stiffness, lumped_mass_sqrt, reference_gradients};
pub(crate) use assembly::local_stiffness;
pub use field::{Field, FIELD_MAGIC};
pub use mesh::Mesh;
pub use solver::{solve_dirichlet, BandCholesky, DirichletSolver, DIRECT_SOLVE_LIMIT};
pub use sparse::SparseSymOperator;
