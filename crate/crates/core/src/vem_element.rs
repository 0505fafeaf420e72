//! Linearly-precise virtual element operators.
//!
//! Strain vectors use Voigt order `(e11, e22, 2 e12)`. The element DOF vector
//! interleaves components: `(u1_0, u2_0, u1_1, u2_1, ...)`.

use nalgebra::DMatrix;

use crate::mesh::{ElementGeometry, Point};

/// Element matrices `B`, `H`, `G`, `R` and the projector `P = H B + G R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub area: f64,
    pub centroid_of_vertices: Point,
}

impl ProjectionSet {
    pub fn num_vertices(&self) -> usize {
        self.b.ncols() / 2
    }

    /// `I - P`.
    pub fn stability_projector(&self) -> DMatrix<f64> {
        let n = self.p.nrows();
        DMatrix::identity(n, n) - &self.p
    }
}

/// Boundary integrals of the basis functions times the normal, divided by
/// the element area (trapezoidal rule, exact for piecewise-linear traces).
/// Returns one `(q1, q2)` pair per vertex.
fn boundary_moments(geom: &ElementGeometry) -> Vec<Point> {
    let k = geom.num_vertices();
    (0..k)
        .map(|a| {
            let prev = (a + k - 1) % k;
            (geom.edge_lengths[prev] * geom.edge_normals[prev] + geom.edge_lengths[a] * geom.edge_normals[a])
                / (2.0 * geom.area)
        })
        .collect()
}

/// Element-average strain operator, `3 x 2N`.
pub fn compute_strain_matrix(geom: &ElementGeometry) -> DMatrix<f64> {
    let q = boundary_moments(geom);
    let mut b = DMatrix::zeros(3, 2 * q.len());
    for (a, qa) in q.iter().enumerate() {
        b[(0, 2 * a)] = qa.x;
        b[(1, 2 * a + 1)] = qa.y;
        b[(2, 2 * a)] = qa.y;
        b[(2, 2 * a + 1)] = qa.x;
    }
    b
}

pub fn compute_projection(geom: &ElementGeometry, b: DMatrix<f64>) -> ProjectionSet {
    let k = geom.num_vertices();
    let q = boundary_moments(geom);
    let xbar = geom.centroid_of_vertices;
    let inv_n = 1.0 / k as f64;

    let mut h = DMatrix::zeros(2 * k, 3);
    let mut g = DMatrix::zeros(2 * k, 3);
    let mut r = DMatrix::zeros(3, 2 * k);
    for a in 0..k {
        let dx = geom.vertices[a] - xbar;
        let (u, v) = (2 * a, 2 * a + 1);

        h[(u, 0)] = dx.x;
        h[(u, 2)] = 0.5 * dx.y;
        h[(v, 1)] = dx.y;
        h[(v, 2)] = 0.5 * dx.x;

        g[(u, 0)] = 1.0;
        g[(u, 2)] = 0.5 * dx.y;
        g[(v, 1)] = 1.0;
        g[(v, 2)] = -0.5 * dx.x;

        r[(0, u)] = inv_n;
        r[(1, v)] = inv_n;
        r[(2, u)] = q[a].y;
        r[(2, v)] = -q[a].x;
    }
    let p = &h * &b + &g * &r;
    ProjectionSet {
        b,
        h,
        g,
        r,
        p,
        area: geom.area,
        centroid_of_vertices: xbar,
    }
}

pub fn element_projection(geom: &ElementGeometry) -> ProjectionSet {
    compute_projection(geom, compute_strain_matrix(geom))
}
