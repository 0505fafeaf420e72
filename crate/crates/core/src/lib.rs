//! Node-based uniform strain virtual elements (NVEM) for small-strain
//! elastoplasticity on polygonal meshes, with a standard virtual element
//! mode for comparison.

pub mod bench;
pub mod constitutive;
pub mod io;
pub mod mesh;
pub mod nodal_assembly;
pub mod par;
pub mod problem;
pub mod solver;
pub mod vem_element;

pub use constitutive::{Material, PlasticState};
pub use mesh::{Mesh, Point};
pub use par::Execution;
pub use problem::{BoundaryConditions, Problem};
pub use solver::{run_analysis, AnalysisConfig, AnalysisResult, Method};
