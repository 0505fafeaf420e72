//! Benchmark problems, their mesh generators, and closed-form oracles.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::constitutive::Material;
use crate::mesh::{structured_quads, BoundaryEdge, Mesh, MeshError, Point};
use crate::problem::{BoundaryConditions, DirichletSpec, MonitorSpec, NeumannSpec, Problem, ProblemError};
use crate::solver::Method;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("inelastic regime: p = {pressure} exceeds first yield {first_yield}")]
    Inelastic { pressure: f64, first_yield: f64 },
    #[error("invalid oracle input: {0}")]
    Invalid(String),
}

pub const CYLINDER_INNER: f64 = 100.0;
pub const CYLINDER_OUTER: f64 = 200.0;
pub const CYLINDER_PRESSURE: f64 = 180.0;
pub const TENSION_WIDTH: f64 = 100.0;
pub const PUNCH_A: f64 = 500.0;
pub const PUNCH_HALF_WIDTH: f64 = 250.0;

/// Names accepted by [`by_name`].
pub const PROBLEM_NAMES: [&str; 6] = ["cylinder", "cylinder-incompressible", "cook", "tension", "perforated-plate", "prandtl"];

pub fn cylinder_material(nu: f64) -> Material {
    Material::perfectly_plastic(210000.0, nu, 240.0).expect("valid cylinder material")
}

pub fn cook_material() -> Material {
    Material::new(1500.0, 0.4999, 7.5, 3.25, 0.0).expect("valid Cook material")
}

pub fn tension_material() -> Material {
    Material::perfectly_plastic(200000.0, 0.4999, 150.0).expect("valid tension material")
}

pub fn plate_material() -> Material {
    Material::perfectly_plastic(68646.55, 0.3, 238.301595).expect("valid plate material")
}

pub fn punch_material() -> Material {
    Material::perfectly_plastic(1e5, 0.499, 100.0).expect("valid punch material")
}

fn bc(material: Material, num_steps: usize) -> BoundaryConditions {
    BoundaryConditions {
        material,
        dirichlet: Vec::new(),
        neumann: Vec::new(),
        body_force: None,
        monitors: Vec::new(),
        reaction_tag: None,
        num_steps,
    }
}

fn fix(tag: i32, component: usize, value: f64) -> DirichletSpec {
    DirichletSpec { tag, component, value }
}

fn monitor(label: &str, x: f64, y: f64) -> MonitorSpec {
    MonitorSpec { label: label.into(), point: [x, y] }
}

/// Builds a mesh from polygons, tagging every boundary edge (edges used by one
/// element) with `classify(midpoint)`. Nodes closer than `1e-9` times the
/// bounding size are merged.
pub fn mesh_from_polygons(
    points: &[Point],
    polygons: &[Vec<usize>],
    classify: impl Fn(Point) -> i32,
) -> Result<Mesh, MeshError> {
    let (mut lo, mut hi) = (Point::repeat(f64::INFINITY), Point::repeat(f64::NEG_INFINITY));
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let scale = 1e-9 * (hi - lo).norm().max(f64::MIN_POSITIVE);
    let mut key_to_node: HashMap<(i64, i64), usize> = HashMap::new();
    let mut nodes = Vec::new();
    let remap: Vec<usize> = points
        .iter()
        .map(|p| {
            let key = ((p.x / scale).round() as i64, (p.y / scale).round() as i64);
            *key_to_node.entry(key).or_insert_with(|| {
                nodes.push(*p);
                nodes.len() - 1
            })
        })
        .collect();
    let elements: Vec<Vec<usize>> = polygons.iter().map(|poly| poly.iter().map(|&i| remap[i]).collect()).collect();

    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for verts in &elements {
        for a in 0..verts.len() {
            let (i, j) = (verts[a], verts[(a + 1) % verts.len()]);
            *count.entry((i.min(j), i.max(j))).or_default() += 1;
        }
    }
    let mut boundary = Vec::new();
    for verts in &elements {
        for a in 0..verts.len() {
            let (i, j) = (verts[a], verts[(a + 1) % verts.len()]);
            if count[&(i.min(j), i.max(j))] == 1 {
                let mid = 0.5 * (nodes[i] + nodes[j]);
                boundary.push(BoundaryEdge { nodes: [i, j], tag: classify(mid) });
            }
        }
    }
    Mesh::new(nodes, elements, boundary)
}

/// Structured quadrilateral block as raw points and polygons.
fn quad_block(nx: usize, ny: usize, map: impl Fn(f64, f64) -> Point) -> (Vec<Point>, Vec<Vec<usize>>) {
    let mut points = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            points.push(map(i as f64 / nx as f64, j as f64 / ny as f64));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut polys = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            polys.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (points, polys)
}

/// Quarter annulus `r_i <= r <= r_o`, `0 <= theta <= pi/2`.
///
/// Tags: `y = 0` edge 1, outer arc 2, `x = 0` edge 3, inner arc 4.
pub fn cylinder_mesh(n_r: usize, n_theta: usize, r_i: f64, r_o: f64) -> Result<Mesh, MeshError> {
    structured_quads(n_r, n_theta, |s, t| {
        let r = r_i + s * (r_o - r_i);
        let th = t * FRAC_PI_2;
        Point::new(r * th.cos(), r * th.sin())
    })
}

/// Thick cylinder under internal pressure `pressure`.
pub fn cylinder_problem(n_r: usize, n_theta: usize, material: Material, pressure: f64, num_steps: usize) -> Result<Problem, ProblemError> {
    let mesh = cylinder_mesh(n_r, n_theta, CYLINDER_INNER, CYLINDER_OUTER)?;
    let mut b = bc(material, num_steps);
    b.dirichlet = vec![fix(1, 1, 0.0), fix(3, 0, 0.0)];
    b.neumann = vec![NeumannSpec::Pressure { tag: 4, pressure }];
    b.monitors = vec![monitor("A", CYLINDER_INNER, 0.0), monitor("B", CYLINDER_OUTER, 0.0)];
    b.reaction_tag = Some(1);
    Problem::new("cylinder", mesh, b)
}

pub fn make_cylinder(n_r: usize, n_theta: usize, nu: f64) -> Result<Problem, ProblemError> {
    if n_r < 2 || n_theta < 2 {
        return Err(ProblemError::Invalid("cylinder needs n_r, n_theta >= 2".into()));
    }
    cylinder_problem(n_r, n_theta, cylinder_material(nu), CYLINDER_PRESSURE, 20)
}

/// Cook's membrane: left edge clamped, shear traction 3.6 on the right edge.
///
/// Tags: bottom 1, right 2, top 3, left 4.
pub fn make_cook(n: usize) -> Result<Problem, ProblemError> {
    if n < 2 {
        return Err(ProblemError::Invalid("cook needs n >= 2".into()));
    }
    let mesh = structured_quads(n, n, |s, t| {
        let y_bottom = 44.0 * s;
        let y_top = 44.0 + 16.0 * s;
        Point::new(48.0 * s, y_bottom + t * (y_top - y_bottom))
    })?;
    let mut b = bc(cook_material(), 20);
    b.dirichlet = vec![fix(4, 0, 0.0), fix(4, 1, 0.0)];
    b.neumann = vec![NeumannSpec::Traction { tag: 2, traction: [0.0, 3.6] }];
    b.monitors = vec![monitor("A", 48.0, 60.0)];
    b.reaction_tag = Some(4);
    Problem::new("cook", mesh, b)
}

/// Constrained tension of a 100 x 100 square: bottom clamped, top pulled up
/// 0.5 with lateral motion restrained.
///
/// Tags: bottom 1, right 2, top 3, left 4.
pub fn make_tension(n: usize) -> Result<Problem, ProblemError> {
    if n < 1 {
        return Err(ProblemError::Invalid("tension needs n >= 1".into()));
    }
    let mesh = structured_quads(n, n, |s, t| Point::new(TENSION_WIDTH * s, TENSION_WIDTH * t))?;
    let mut b = bc(tension_material(), 25);
    b.dirichlet = vec![fix(1, 0, 0.0), fix(1, 1, 0.0), fix(3, 0, 0.0), fix(3, 1, 0.5)];
    b.monitors = vec![monitor("top", 0.0, TENSION_WIDTH)];
    b.reaction_tag = Some(3);
    Problem::new("tension", mesh, b)
}

/// Quarter of a perforated plate, hole centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateGeometry {
    pub width: f64,
    pub height: f64,
    pub radius: f64,
}

impl Default for PlateGeometry {
    fn default() -> Self {
        PlateGeometry { width: 100.0, height: 180.0, radius: 50.0 }
    }
}

/// Two-block mapped mesh: an O-block around the hole up to `y = width`, then a
/// rectangular block to the top. `n` divisions per half arc.
///
/// Tags: hole 1, bottom 2, left 3, right 4, top 5.
pub fn perforated_plate_mesh(n: usize, geom: PlateGeometry) -> Result<Mesh, MeshError> {
    let PlateGeometry { width: w, height: h, radius: r } = geom;
    if !(r < w && w < h) || n < 1 {
        return Err(MeshError::Parse { line: 0, msg: "plate needs radius < width < height".into() });
    }
    let n_radial = n.max(2);
    // radial index first keeps the quads counter-clockwise
    let (mut points, mut polys) = quad_block(n_radial, 2 * n, |t, s| {
        let th = FRAC_PI_2 * s;
        let inner = Point::new(r * th.cos(), r * th.sin());
        let outer = if s <= 0.5 { Point::new(w, 2.0 * w * s) } else { Point::new(w * (2.0 - 2.0 * s), w) };
        // finer rings near the hole
        let g = t * t * 0.5 + t * 0.5;
        inner + g * (outer - inner)
    });
    let n_top = ((h - w) / w * n as f64).ceil().max(1.0) as usize;
    let (top_points, top_polys) = quad_block(n, n_top, |s, t| Point::new(w * s, w + (h - w) * t));
    let offset = points.len();
    points.extend(top_points);
    polys.extend(top_polys.into_iter().map(|p| p.into_iter().map(|i| i + offset).collect()));
    let tol = 1e-9 * h;
    mesh_from_polygons(&points, &polys, |m| {
        if m.y.abs() < tol {
            2
        } else if m.x.abs() < tol {
            3
        } else if (m.x - w).abs() < tol {
            4
        } else if (m.y - h).abs() < tol {
            5
        } else {
            1
        }
    })
}

/// Perforated plate on a given mesh carrying the plate tags.
pub fn perforated_plate_problem(mesh: Mesh, geom: PlateGeometry) -> Result<Problem, ProblemError> {
    let mut b = bc(plate_material(), 40);
    b.dirichlet = vec![fix(2, 1, 0.0), fix(3, 0, 0.0), fix(4, 0, 0.0), fix(5, 1, 2.0)];
    b.monitors = vec![monitor("A", geom.radius, 0.0), monitor("B", 0.0, geom.radius)];
    b.reaction_tag = Some(5);
    Problem::new("perforated-plate", mesh, b)
}

pub fn make_perforated_plate(n: usize) -> Result<Problem, ProblemError> {
    let geom = PlateGeometry::default();
    perforated_plate_problem(perforated_plate_mesh(n, geom)?, geom)
}

/// Half domain `[0, 2a] x [0, a]` of the punch test with `m` columns under the
/// punch and `m` beyond it, `m` rows graded toward the top.
///
/// Tags: bottom 1, right 2, free top 3, left 4, punch footprint 5.
pub fn prandtl_mesh(m: usize) -> Result<Mesh, MeshError> {
    let (a, b) = (PUNCH_A, PUNCH_HALF_WIDTH);
    let (points, polys) = quad_block(2 * m, m, |s, t| {
        let x = if s <= 0.5 { 2.0 * s * b } else { b + (2.0 * s - 1.0) * (2.0 * a - b) };
        let u = 1.0 - t;
        Point::new(x, a * (1.0 - 0.4 * u - 0.6 * u * u))
    });
    let tol = 1e-9 * a;
    mesh_from_polygons(&points, &polys, |p| {
        if p.y.abs() < tol {
            1
        } else if (p.x - 2.0 * a).abs() < tol {
            2
        } else if p.x.abs() < tol {
            4
        } else if p.x < b {
            5
        } else {
            3
        }
    })
}

/// Rough rigid punch pressed 50 mm into a perfectly plastic block.
pub fn make_prandtl(m: usize) -> Result<Problem, ProblemError> {
    if m < 2 {
        return Err(ProblemError::Invalid("prandtl needs m >= 2".into()));
    }
    prandtl_problem(prandtl_mesh(m)?)
}

/// Punch loading on any mesh of `[0, 2a] x [0, a]` tagged like [`prandtl_mesh`].
pub fn prandtl_problem(mesh: Mesh) -> Result<Problem, ProblemError> {
    let mut b = bc(punch_material(), 500);
    b.dirichlet = vec![fix(1, 0, 0.0), fix(1, 1, 0.0), fix(2, 0, 0.0), fix(4, 0, 0.0), fix(5, 0, 0.0), fix(5, 1, -50.0)];
    b.monitors = vec![monitor("punch", 0.0, PUNCH_A)];
    b.reaction_tag = Some(5);
    Problem::new("prandtl", mesh, b)
}

/// Default-resolution problem by CLI name.
pub fn by_name(name: &str) -> Result<Problem, ProblemError> {
    by_name_sized(name, None)
}

/// Problem by CLI name at resolution `size` (elements per generator direction).
pub fn by_name_sized(name: &str, size: Option<usize>) -> Result<Problem, ProblemError> {
    match name {
        "cylinder" => {
            let n = size.unwrap_or(16);
            make_cylinder(n, n, 0.3)
        }
        "cylinder-incompressible" => {
            let n = size.unwrap_or(16);
            make_cylinder(n, n, 0.4999)
        }
        "cook" => make_cook(size.unwrap_or(16)),
        "tension" => make_tension(size.unwrap_or(10)),
        "perforated-plate" => make_perforated_plate(size.unwrap_or(12)),
        "prandtl" => make_prandtl(size.unwrap_or(31)),
        other => Err(ProblemError::Invalid(format!(
            "unknown problem '{other}', expected one of {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

/// Pressure at which the inner wall of a plane-strain cylinder first yields.
pub fn first_yield_pressure(material: &Material, r_i: f64, r_o: f64) -> f64 {
    let nu = material.poissons_ratio;
    let a = r_i * r_i / (r_o * r_o - r_i * r_i);
    let b = a * r_o * r_o / (r_i * r_i);
    // unit-pressure stresses at r_i
    let (sr, st, sz) = (-1.0, a + b, 2.0 * nu * a);
    let q = (0.5 * ((sr - st).powi(2) + (st - sz).powi(2) + (sz - sr).powi(2))).sqrt();
    material.initial_yield / q
}

/// Lamé plane-strain radial displacement at radius `r`.
pub fn lame_solution(material: &Material, r_i: f64, r_o: f64, p: f64, r: f64) -> Result<f64, OracleError> {
    if !(0.0 < r_i && r_i < r_o) {
        return Err(OracleError::Invalid(format!("radii {r_i}, {r_o}")));
    }
    let first_yield = first_yield_pressure(material, r_i, r_o);
    if p.abs() > first_yield {
        return Err(OracleError::Inelastic { pressure: p, first_yield });
    }
    let g = material.shear_modulus();
    let nu = material.poissons_ratio;
    Ok(p * r_i * r_i / (2.0 * g * (r_o * r_o - r_i * r_i)) * ((1.0 - 2.0 * nu) * r + r_o * r_o / r))
}

/// Collapse pressure of a perfectly plastic thick cylinder, `2 sy / sqrt(3) ln(r_o / r_i)`.
pub fn cylinder_limit_pressure(sigma_y: f64, r_i: f64, r_o: f64) -> f64 {
    2.0 * sigma_y / 3f64.sqrt() * (r_o / r_i).ln()
}

/// Prandtl slip-line limit pressure `(2 + pi) sy / sqrt(3)`.
pub fn punch_limit_pressure(sigma_y: f64) -> f64 {
    (2.0 + PI) * sigma_y / 3f64.sqrt()
}

/// Laterally constrained plane-strain tension limit `2 sy / sqrt(3) * width`.
pub fn tension_limit_reaction(sigma_y: f64, width: f64) -> f64 {
    2.0 * sigma_y / 3f64.sqrt() * width
}

/// Three-level Richardson extrapolation with an observed order; `None` when
/// the sequence is not monotonically converging.
pub fn richardson(coarse: f64, medium: f64, fine: f64, ratio: f64) -> Option<f64> {
    let (d1, d2) = (medium - coarse, fine - medium);
    if d1 == 0.0 || d2 / d1 <= 0.0 || d2.abs() >= d1.abs() {
        return None;
    }
    let order = (d1 / d2).ln() / ratio.ln();
    Some(fine + d2 / (ratio.powf(order) - 1.0))
}

/// Neighbour pairs of the method's stress samples: mesh edges between nodes
/// for the nodal method, shared edges between elements otherwise.
pub fn sample_neighbours(mesh: &Mesh, method: Method) -> Vec<(usize, usize)> {
    match method {
        Method::Nvem => mesh.unique_edges(),
        Method::Vem => mesh.element_adjacency(),
    }
}

/// Mean absolute neighbour jump divided by the mean absolute value.
pub fn checkerboard_indicator(values: &[f64], pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() || values.is_empty() {
        return 0.0;
    }
    let jump = pairs.iter().map(|&(i, j)| (values[i] - values[j]).abs()).sum::<f64>() / pairs.len() as f64;
    let mean = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        0.0
    } else {
        jump / mean
    }
}
