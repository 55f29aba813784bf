//! Ultraweak DPG solver on axis-aligned hexahedral meshes with the two-grid
//! anisotropic hp-refinement driver.
//!
//! Module map:
//! - `geom`: boxes, rectangles, segments, refinement flags
//! - `basis`: 1D Gauss rules and Legendre/Lobatto families
//! - `mesh`: refinement forest, closure, skeleton constraint table
//! - `spaces`: element spaces, trace layouts, dof maps, L2 projection
//! - `dpg`: element Gram/stiffness assembly, condensation, residual
//! - `solve`: global sparse SPD assembly and solvers
//! - `engine`: one-mesh solve pipeline shared by the drivers
//! - `adapt`: Dörfler marking, refinement competition, adaptation loop
//! - `problems`: benchmark problem definitions

pub mod basis;
pub mod dpg;
pub mod geom;
pub mod mesh;
pub mod spaces;

pub use geom::{Axis, Box3, Placement, RefFlag};
pub use mesh::{ElemId, Mesh, MeshError, RefineReport, UnwantedPolicy};
