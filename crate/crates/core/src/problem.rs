//! Boundary-value problem definitions.
//!
//! Boundary conditions reference mesh boundary tags, never coordinates, so a
//! problem can be re-run on any mesh carrying the same tags. A `BoundaryConditions`
//! value is also the JSON schema of the CLI `--bc` file.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{Material, MaterialError};
use crate::mesh::{Mesh, MeshError, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("dof {dof} prescribed twice with conflicting values {first} and {second}")]
    ConflictingPrescription { dof: usize, first: f64, second: f64 },
    #[error("boundary tag {0} does not appear in the mesh")]
    UnknownTag(i32),
    #[error("invalid boundary condition: {0}")]
    Invalid(String),
    #[error("boundary condition file: {0}")]
    Format(String),
}

/// Prescribes component `component` (0 = x, 1 = y) on all nodes of `tag`,
/// reaching `value` at full load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub tag: i32,
    pub component: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeumannSpec {
    /// Constant traction vector at full load.
    Traction { tag: i32, traction: [f64; 2] },
    /// Normal pressure at full load, positive compressive (`t = -p n`).
    Pressure { tag: i32, pressure: f64 },
}

impl NeumannSpec {
    pub fn tag(&self) -> i32 {
        match *self {
            NeumannSpec::Traction { tag, .. } | NeumannSpec::Pressure { tag, .. } => tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub label: String,
    pub point: [f64; 2],
}

/// Everything except the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub material: Material,
    #[serde(default)]
    pub dirichlet: Vec<DirichletSpec>,
    #[serde(default)]
    pub neumann: Vec<NeumannSpec>,
    /// Constant body force at full load.
    #[serde(default)]
    pub body_force: Option<[f64; 2]>,
    #[serde(default)]
    pub monitors: Vec<MonitorSpec>,
    /// Tag whose constrained DOFs are summed into the reported reaction;
    /// all constrained DOFs when absent.
    #[serde(default)]
    pub reaction_tag: Option<i32>,
    #[serde(default = "default_steps")]
    pub num_steps: usize,
}

fn default_steps() -> usize {
    10
}

impl BoundaryConditions {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        serde_json::from_str(text).map_err(|e| ProblemError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub label: String,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub mesh: Mesh,
    pub bc: BoundaryConditions,
    pub monitors: Vec<Monitor>,
}

/// Prescribed DOFs and their full-load values, sorted by DOF.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Constraints {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl Constraints {
    /// Merges `(dof, value)` pairs; equal duplicates collapse, conflicting ones fail.
    pub fn from_prescriptions(prescribed: &[(usize, f64)]) -> Result<Self, ProblemError> {
        let mut sorted = prescribed.to_vec();
        sorted.sort_by_key(|a| a.0);
        let mut out = Constraints::default();
        for (dof, value) in sorted {
            if out.dofs.last() == Some(&dof) {
                let first = *out.values.last().unwrap();
                if first != value {
                    return Err(ProblemError::ConflictingPrescription { dof, first, second: value });
                }
                continue;
            }
            out.dofs.push(dof);
            out.values.push(value);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Map from global DOF to free index (`None` when constrained).
    pub fn free_map(&self, num_dofs: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; num_dofs];
        let mut next = 0;
        let mut c = self.dofs.iter().peekable();
        for (dof, slot) in map.iter_mut().enumerate() {
            if c.peek() == Some(&&dof) {
                c.next();
            } else {
                *slot = Some(next);
                next += 1;
            }
        }
        map
    }
}

/// A boundary segment with its traction at full load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractionEdge {
    pub nodes: [usize; 2],
    pub length: f64,
    pub traction: Vector2<f64>,
}

impl Problem {
    pub fn new(name: impl Into<String>, mesh: Mesh, bc: BoundaryConditions) -> Result<Self, ProblemError> {
        bc.material.validate()?;
        if bc.num_steps == 0 {
            return Err(ProblemError::Invalid("num_steps must be at least 1".into()));
        }
        let tags: Vec<i32> = mesh.boundary_edges().iter().map(|e| e.tag).collect();
        let referenced = bc
            .dirichlet
            .iter()
            .map(|d| d.tag)
            .chain(bc.neumann.iter().map(|n| n.tag()))
            .chain(bc.reaction_tag);
        for tag in referenced {
            if !tags.contains(&tag) {
                return Err(ProblemError::UnknownTag(tag));
            }
        }
        if let Some(d) = bc.dirichlet.iter().find(|d| d.component > 1) {
            return Err(ProblemError::Invalid(format!("component {} on tag {}", d.component, d.tag)));
        }
        let monitors = bc
            .monitors
            .iter()
            .map(|m| {
                Ok(Monitor {
                    label: m.label.clone(),
                    node: mesh.snap_to_node(Point::new(m.point[0], m.point[1]))?,
                })
            })
            .collect::<Result<Vec<_>, MeshError>>()?;
        let problem = Problem {
            name: name.into(),
            mesh,
            bc,
            monitors,
        };
        problem.constraints()?;
        Ok(problem)
    }

    pub fn material(&self) -> &Material {
        &self.bc.material
    }

    pub fn constraints(&self) -> Result<Constraints, ProblemError> {
        let prescribed: Vec<(usize, f64)> = self
            .bc
            .dirichlet
            .iter()
            .flat_map(|d| {
                self.mesh
                    .nodes_with_tag(d.tag)
                    .into_iter()
                    .map(move |n| (2 * n + d.component, d.value))
            })
            .collect();
        Constraints::from_prescriptions(&prescribed)
    }

    /// Loaded boundary edges at full load, in mesh boundary order.
    pub fn traction_edges(&self) -> Vec<TractionEdge> {
        let mut out = Vec::new();
        for spec in &self.bc.neumann {
            for edge in self.mesh.edges_with_tag(spec.tag()) {
                let [i, j] = edge.nodes;
                let length = (self.mesh.nodes()[j] - self.mesh.nodes()[i]).norm();
                let traction = match *spec {
                    NeumannSpec::Traction { traction, .. } => Vector2::new(traction[0], traction[1]),
                    NeumannSpec::Pressure { pressure, .. } => {
                        let (_, normal) = self.mesh.boundary_edge_owner(i, j).expect("validated boundary edge");
                        -pressure * normal
                    }
                };
                out.push(TractionEdge { nodes: [i, j], length, traction });
            }
        }
        out
    }

    pub fn body_force(&self) -> Option<Vector2<f64>> {
        self.bc.body_force.map(|b| Vector2::new(b[0], b[1]))
    }

    /// Global DOFs whose reactions are summed for reporting.
    pub fn reaction_dofs(&self) -> Result<Vec<usize>, ProblemError> {
        let constraints = self.constraints()?;
        Ok(match self.bc.reaction_tag {
            Some(tag) => {
                let nodes = self.mesh.nodes_with_tag(tag);
                constraints
                    .dofs
                    .into_iter()
                    .filter(|d| nodes.binary_search(&(d / 2)).is_ok())
                    .collect()
            }
            None => constraints.dofs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_quads;

    fn bc() -> BoundaryConditions {
        BoundaryConditions {
            material: Material::new(100.0, 0.3, 1.0, 0.0, 0.0).unwrap(),
            dirichlet: vec![
                DirichletSpec { tag: 1, component: 1, value: 0.0 },
                DirichletSpec { tag: 4, component: 0, value: 0.0 },
            ],
            neumann: vec![NeumannSpec::Pressure { tag: 2, pressure: 2.0 }],
            body_force: None,
            monitors: vec![MonitorSpec { label: "A".into(), point: [1.0, 1.0] }],
            reaction_tag: None,
            num_steps: 3,
        }
    }

    #[test]
    fn conflicting_prescriptions() {
        assert_eq!(
            Constraints::from_prescriptions(&[(3, 1.0), (1, 0.0), (3, 1.0)]).unwrap(),
            Constraints { dofs: vec![1, 3], values: vec![0.0, 1.0] }
        );
        assert_eq!(
            Constraints::from_prescriptions(&[(3, 1.0), (3, 2.0)]),
            Err(ProblemError::ConflictingPrescription { dof: 3, first: 1.0, second: 2.0 })
        );
    }

    #[test]
    fn free_map_skips_constrained() {
        let c = Constraints { dofs: vec![0, 3], values: vec![0.0, 0.0] };
        assert_eq!(c.free_map(5), vec![None, Some(0), Some(1), None, Some(2)]);
    }

    #[test]
    fn pressure_points_into_the_body() {
        let mesh = structured_quads(2, 2, |s, t| Point::new(s, t)).unwrap();
        let p = Problem::new("t", mesh, bc()).unwrap();
        let edges = p.traction_edges();
        assert_eq!(edges.len(), 2);
        for e in edges {
            // right edge, outward normal +x, compressive pressure pushes -x
            assert_eq!(e.traction, Vector2::new(-2.0, 0.0));
            assert_eq!(e.length, 0.5);
        }
        assert_eq!(p.monitors[0].node, 8);
        assert_eq!(p.constraints().unwrap().len(), 6);
    }

    #[test]
    fn unknown_tags_and_bad_monitors() {
        let mesh = structured_quads(2, 2, |s, t| Point::new(s, t)).unwrap();
        let mut b = bc();
        b.reaction_tag = Some(9);
        assert_eq!(Problem::new("t", mesh.clone(), b), Err(ProblemError::UnknownTag(9)));
        let mut b = bc();
        b.monitors[0].point = [0.3, 0.3];
        assert!(matches!(Problem::new("t", mesh, b), Err(ProblemError::Mesh(_))));
    }

    #[test]
    fn json_schema() {
        let text = r#"{
            "material": {"youngs_modulus": 100.0, "poissons_ratio": 0.3, "initial_yield": 1.0},
            "dirichlet": [{"tag": 1, "component": 1, "value": 0.0}],
            "neumann": [{"kind": "traction", "tag": 3, "traction": [0.0, 1.0]}],
            "reaction_tag": 1
        }"#;
        let b = BoundaryConditions::from_json(text).unwrap();
        assert_eq!(b.num_steps, 10);
        assert_eq!(b.neumann[0], NeumannSpec::Traction { tag: 3, traction: [0.0, 1.0] });
        assert!(BoundaryConditions::from_json("{").is_err());
    }
}
