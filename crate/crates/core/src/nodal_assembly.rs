//! Node-based operators: the averaged strain operator `B_I`, the averaged
//! stability projector `pi_I[I - P]`, the diagonal stability matrix, and the
//! nodal load vectors.
//!
//! Averaging scatters each element quantity of a patch into patch-local DOF
//! coordinates and sums it with weight `|E| / (N_E |I|)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2};
use thiserror::Error;

use crate::constitutive::{reduce_matrix, Material};
use crate::mesh::{Mesh, NodalPatch};
use crate::par::Execution;
use crate::vem_element::ProjectionSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("node {0} has an empty patch")]
    EmptyPatch(usize),
    #[error("node {0} has zero nodal area")]
    ZeroArea(usize),
    #[error("node {0} is not on the Neumann boundary")]
    NotOnNeumannBoundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodalOperator {
    pub node: usize,
    pub nodal_area: f64,
    pub patch_nodes: Vec<usize>,
    /// `3 x 2m` averaged strain operator.
    pub b: DMatrix<f64>,
    /// `2m x 2m` averaged stability projector.
    pub ip: DMatrix<f64>,
    /// Diagonal of the stability matrix.
    pub stab: DVector<f64>,
}

impl NodalOperator {
    pub fn global_dofs(&self) -> Vec<usize> {
        self.patch_nodes.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect()
    }

    /// `IP^T S IP`.
    pub fn stability_stiffness(&self) -> DMatrix<f64> {
        let s_ip = DMatrix::from_fn(self.ip.nrows(), self.ip.ncols(), |i, j| self.stab[i] * self.ip[(i, j)]);
        self.ip.transpose() * s_ip
    }
}

/// Element vertex `a` of `e` maps to patch-local node `map[a]`.
fn local_map(patch: &NodalPatch, mesh: &Mesh, e: usize) -> Vec<usize> {
    mesh.elements()[e]
        .iter()
        .map(|&v| patch.local_node(v).expect("element vertex outside its own patch"))
        .collect()
}

fn averaging_weights(patch: &NodalPatch, mesh: &Mesh, projections: &[ProjectionSet]) -> Result<Vec<f64>, AssemblyError> {
    if patch.elements.is_empty() {
        return Err(AssemblyError::EmptyPatch(patch.node));
    }
    if patch.nodal_area <= 0.0 {
        return Err(AssemblyError::ZeroArea(patch.node));
    }
    Ok(patch
        .elements
        .iter()
        .map(|&e| projections[e].area / (mesh.elements()[e].len() as f64 * patch.nodal_area))
        .collect())
}

/// `B_I = (1/|I|) sum_E (|E|/N_E) scatter(B_E)`.
pub fn nodal_strain_operator(patch: &NodalPatch, mesh: &Mesh, projections: &[ProjectionSet]) -> Result<DMatrix<f64>, AssemblyError> {
    let weights = averaging_weights(patch, mesh, projections)?;
    let mut b = DMatrix::zeros(3, patch.num_dofs());
    for (&e, w) in patch.elements.iter().zip(weights) {
        let be = &projections[e].b;
        for (a, &la) in local_map(patch, mesh, e).iter().enumerate() {
            for c in 0..2 {
                for row in 0..3 {
                    b[(row, 2 * la + c)] += w * be[(row, 2 * a + c)];
                }
            }
        }
    }
    Ok(b)
}

/// `(I - P)_I = (1/|I|) sum_E (|E|/N_E) scatter(I - P_E)`.
pub fn nodal_stability_projector(patch: &NodalPatch, mesh: &Mesh, projections: &[ProjectionSet]) -> Result<DMatrix<f64>, AssemblyError> {
    let weights = averaging_weights(patch, mesh, projections)?;
    let m = patch.num_dofs();
    let mut ip = DMatrix::zeros(m, m);
    for (&e, w) in patch.elements.iter().zip(weights) {
        let ipe = projections[e].stability_projector();
        let map: Vec<usize> = local_map(patch, mesh, e)
            .iter()
            .flat_map(|&l| [2 * l, 2 * l + 1])
            .collect();
        for (i, &gi) in map.iter().enumerate() {
            for (j, &gj) in map.iter().enumerate() {
                ip[(gi, gj)] += w * ipe[(i, j)];
            }
        }
    }
    Ok(ip)
}

/// Plane-strain (11, 22, 12) block of the deviatoric elastic moduli `2G I_d`.
pub fn deviatoric_moduli(material: &Material) -> Matrix3<f64> {
    reduce_matrix(&material.deviatoric_elastic_tangent())
}

/// `S_ii = max(floor, [area B^T D B]_ii)`.
pub fn nodal_stability_matrix(b: &DMatrix<f64>, area: f64, moduli: &Matrix3<f64>, floor: f64) -> DVector<f64> {
    DVector::from_fn(b.ncols(), |i, _| {
        let col = b.fixed_view::<3, 1>(0, i);
        let v = area * (col.transpose() * moduli * col)[(0, 0)];
        v.max(floor)
    })
}

pub fn build_nodal_operator(
    patch: &NodalPatch,
    mesh: &Mesh,
    projections: &[ProjectionSet],
    stab_moduli: &Matrix3<f64>,
    stab_floor: f64,
) -> Result<NodalOperator, AssemblyError> {
    let b = nodal_strain_operator(patch, mesh, projections)?;
    let ip = nodal_stability_projector(patch, mesh, projections)?;
    let stab = nodal_stability_matrix(&b, patch.nodal_area, stab_moduli, stab_floor);
    Ok(NodalOperator {
        node: patch.node,
        nodal_area: patch.nodal_area,
        patch_nodes: patch.patch_nodes.clone(),
        b,
        ip,
        stab,
    })
}

pub fn build_nodal_operators(
    patches: &[NodalPatch],
    mesh: &Mesh,
    projections: &[ProjectionSet],
    material: &Material,
    stab_floor: f64,
    exec: Execution,
) -> Result<Vec<NodalOperator>, AssemblyError> {
    let moduli = deviatoric_moduli(material);
    exec.try_map(patches.len(), |i| build_nodal_operator(&patches[i], mesh, projections, &moduli, stab_floor))
}

/// `f_I = |I| Nbar_I^T bhat_I` over the patch DOFs, for element-average body forces.
pub fn nodal_body_force(patch: &NodalPatch, mesh: &Mesh, projections: &[ProjectionSet], body: &[Vector2<f64>]) -> Result<DVector<f64>, AssemblyError> {
    let weights = averaging_weights(patch, mesh, projections)?;
    let b_avg = patch
        .elements
        .iter()
        .zip(&weights)
        .fold(Vector2::zeros(), |acc, (&e, w)| acc + *w * body[e]);
    let mut f = DVector::zeros(patch.num_dofs());
    for (&e, w) in patch.elements.iter().zip(&weights) {
        let n_e = mesh.elements()[e].len() as f64;
        for l in local_map(patch, mesh, e) {
            for c in 0..2 {
                f[2 * l + c] += patch.nodal_area * w / n_e * b_avg[c];
            }
        }
    }
    Ok(f)
}

/// A boundary segment on the Neumann set with its edge-average traction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadedEdge {
    pub nodes: [usize; 2],
    pub length: f64,
    pub traction: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannPatch {
    pub node: usize,
    pub edges: Vec<LoadedEdge>,
    /// `|I_Gamma| = sum |e| / 2`.
    pub length: f64,
    pub averaged_traction: Vector2<f64>,
}

pub fn neumann_patch(node: usize, loaded: &[LoadedEdge]) -> Result<NeumannPatch, AssemblyError> {
    let edges: Vec<LoadedEdge> = loaded.iter().filter(|e| e.nodes.contains(&node)).copied().collect();
    if edges.is_empty() {
        return Err(AssemblyError::NotOnNeumannBoundary(node));
    }
    let length: f64 = edges.iter().map(|e| 0.5 * e.length).sum();
    let averaged_traction = edges
        .iter()
        .fold(Vector2::zeros(), |acc, e| acc + 0.5 * e.length / length * e.traction);
    Ok(NeumannPatch {
        node,
        edges,
        length,
        averaged_traction,
    })
}

/// `f_I = |I_Gamma| Nbar_{Gamma,I}^T that_{N,I}` as `(node, force)` contributions.
///
/// Each incident edge hands half of its share to each of its two end nodes.
pub fn nodal_traction_force(patch: &NeumannPatch) -> Vec<(usize, Vector2<f64>)> {
    let mut out: Vec<(usize, Vector2<f64>)> = Vec::new();
    for e in &patch.edges {
        let share = 0.5 * e.length * 0.5 * patch.averaged_traction;
        for n in e.nodes {
            match out.iter_mut().find(|(k, _)| *k == n) {
                Some((_, f)) => *f += share,
                None => out.push((n, share)),
            }
        }
    }
    out.sort_by_key(|(n, _)| *n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_patches, structured_quads, Point};
    use crate::vem_element::element_projection;

    fn setup(mesh: &Mesh) -> (Vec<NodalPatch>, Vec<ProjectionSet>) {
        let projections = (0..mesh.num_elements())
            .map(|e| element_projection(&mesh.element_geometry(e).unwrap()))
            .collect();
        (build_patches(mesh).unwrap(), projections)
    }

    fn linear_patch_field(patch: &NodalPatch, mesh: &Mesh, f: impl Fn(Point) -> Vector2<f64>) -> DVector<f64> {
        DVector::from_iterator(
            patch.num_dofs(),
            patch.patch_nodes.iter().flat_map(|&n| {
                let u = f(mesh.nodes()[n]);
                [u.x, u.y]
            }),
        )
    }

    #[test]
    fn single_element_patch_reduces_to_element_operators() {
        let mesh = structured_quads(1, 1, Point::new).unwrap();
        let (patches, proj) = setup(&mesh);
        let b = nodal_strain_operator(&patches[0], &mesh, &proj).unwrap();
        let ip = nodal_stability_projector(&patches[0], &mesh, &proj).unwrap();
        // element vertex order is [0, 1, 3, 2], patch order is sorted
        let verts = &mesh.elements()[0];
        let dof = |l: usize| {
            let a = verts.iter().position(|&v| v == patches[0].patch_nodes[l / 2]).unwrap();
            2 * a + l % 2
        };
        let ip_e = proj[0].stability_projector();
        for i in 0..8 {
            for r in 0..3 {
                assert!((b[(r, i)] - proj[0].b[(r, dof(i))]).abs() < 1e-15);
            }
            for j in 0..8 {
                assert!((ip[(i, j)] - ip_e[(dof(i), dof(j))]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn center_node_of_two_by_two_grid_is_equal_weight_average() {
        let mesh = structured_quads(2, 2, Point::new).unwrap();
        let (patches, proj) = setup(&mesh);
        let center = &patches[4];
        let b = nodal_strain_operator(center, &mesh, &proj).unwrap();
        let mut expected = DMatrix::zeros(3, 18);
        for e in 0..4 {
            for (a, &v) in mesh.elements()[e].iter().enumerate() {
                for c in 0..2 {
                    for r in 0..3 {
                        expected[(r, 2 * v + c)] += 0.25 * proj[e].b[(r, 2 * a + c)];
                    }
                }
            }
        }
        assert!((b - expected).amax() < 1e-15);
    }

    #[test]
    fn averaged_operators_keep_linear_consistency() {
        let mesh = structured_quads(3, 3, |s, t| Point::new(s + 0.2 * t * t, t + 0.1 * s)).unwrap();
        let (patches, proj) = setup(&mesh);
        for patch in &patches {
            let b = nodal_strain_operator(patch, &mesh, &proj).unwrap();
            let d = linear_patch_field(patch, &mesh, |x| Vector2::new(0.0, x.y));
            assert!((&b * &d - nalgebra::Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
            let ip = nodal_stability_projector(patch, &mesh, &proj).unwrap();
            let d = linear_patch_field(patch, &mesh, |x| Vector2::new(0.3 * x.x - x.y + 1.0, 2.0 * x.x + 0.5 * x.y));
            assert!((&ip * &d).amax() < 1e-10);
            let t = linear_patch_field(patch, &mesh, |_| Vector2::new(1.0, 0.0));
            assert!((&ip * &t).amax() < 1e-10);
        }
    }

    #[test]
    fn stability_matrix_floor() {
        let mesh = structured_quads(1, 1, Point::new).unwrap();
        let (patches, proj) = setup(&mesh);
        let b = nodal_strain_operator(&patches[0], &mesh, &proj).unwrap();
        let s = nodal_stability_matrix(&b, 0.25, &Matrix3::zeros(), 1.0);
        assert!(s.iter().all(|&v| v == 1.0));

        // G = 1: D_d = diag-block of 2 I_d restricted to (11, 22, 12)
        let dd = Matrix3::new(4.0 / 3.0, -2.0 / 3.0, 0.0, -2.0 / 3.0, 4.0 / 3.0, 0.0, 0.0, 0.0, 1.0);
        let m = Material::new(2.0 * (1.0 + 0.3), 0.3, 1.0, 0.0, 0.0).unwrap();
        assert!((deviatoric_moduli(&m) - dd).amax() < 1e-14);
        let s = nodal_stability_matrix(&b, 0.25, &dd, 1.0);
        // column u1 of node 0: B column (-1/2, 0, -1/2) -> 0.25 * (4/3 * 1/4 + 1/4) = 7/48
        assert!((s[0] - 1.0).abs() < 1e-15);
        let s = nodal_stability_matrix(&b, 0.25, &dd, 0.0);
        assert!((s[0] - 7.0 / 48.0).abs() < 1e-15);
        assert!(s.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn body_force_single_element_and_total() {
        let mesh = structured_quads(1, 1, Point::new).unwrap();
        let (patches, proj) = setup(&mesh);
        let body = vec![Vector2::new(2.0, -4.0)];
        let f = nodal_body_force(&patches[0], &mesh, &proj, &body).unwrap();
        for a in 0..4 {
            assert!((f[2 * a] - 0.25 * 0.25 * 2.0).abs() < 1e-15);
            assert!((f[2 * a + 1] + 0.25 * 0.25 * 4.0).abs() < 1e-15);
        }
        let zero = nodal_body_force(&patches[0], &mesh, &proj, &[Vector2::zeros()]).unwrap();
        assert_eq!(zero.norm(), 0.0);

        let mesh = structured_quads(4, 3, |s, t| Point::new(2.0 * s + 0.3 * t, 1.5 * t)).unwrap();
        let (patches, proj) = setup(&mesh);
        let body = vec![Vector2::new(1.0, 3.0); mesh.num_elements()];
        let mut total = Vector2::zeros();
        for p in &patches {
            let f = nodal_body_force(p, &mesh, &proj, &body).unwrap();
            for k in 0..p.patch_nodes.len() {
                total += Vector2::new(f[2 * k], f[2 * k + 1]);
            }
        }
        let area = mesh.total_area();
        assert!((total - Vector2::new(area, 3.0 * area)).norm() < 1e-12 * area);
    }

    #[test]
    fn traction_single_edge_and_straight_boundary() {
        let t = Vector2::new(0.0, 3.0);
        let edge = LoadedEdge { nodes: [4, 7], length: 2.0, traction: t };
        let patch = neumann_patch(4, &[edge]).unwrap();
        assert_eq!(patch.length, 1.0);
        let f = nodal_traction_force(&patch);
        assert_eq!(f, vec![(4, 0.5 * t), (7, 0.5 * t)]);
        assert_eq!(neumann_patch(5, &[edge]), Err(AssemblyError::NotOnNeumannBoundary(5)));

        let n = 8;
        let edges: Vec<LoadedEdge> = (0..n)
            .map(|i| LoadedEdge { nodes: [i, i + 1], length: 0.5, traction: t })
            .collect();
        let total = (0..=n)
            .flat_map(|i| nodal_traction_force(&neumann_patch(i, &edges).unwrap()))
            .fold(Vector2::zeros(), |acc, (_, f)| acc + f);
        assert!((total - 4.0 * t).norm() < 1e-12);
    }
}
