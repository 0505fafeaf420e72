//! Polygonal meshes, element geometry and nodal patches.
//!
//! Elements are stored as counter-clockwise vertex lists. Edge `a` of an
//! element runs from vertex `a` to vertex `a + 1` (cyclic), so the two edges
//! incident to vertex `a` are `a - 1` and `a`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector2;
use thiserror::Error;

pub type Point = Vector2<f64>;

/// Relative tolerance (times the mesh diameter) below which an edge is degenerate.
pub const DEGENERATE_EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("element {element}: {msg}")]
    InvalidElement { element: usize, msg: String },
    #[error("element {element}: negative area ({area:e}), vertices must be counter-clockwise")]
    NegativeArea { element: usize, area: f64 },
    #[error("element {element}: degenerate edge {edge} (length {length:e})")]
    DegenerateEdge { element: usize, edge: usize, length: f64 },
    #[error("boundary edge {index} ({i}, {j}): {msg}")]
    InvalidBoundaryEdge { index: usize, i: usize, j: usize, msg: String },
    #[error("node {0} is not attached to any element")]
    IsolatedNode(usize),
    #[error("no node within snapping tolerance of ({x}, {y})")]
    NoNodeNear { x: f64, y: f64 },
}

/// A tagged boundary segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point>,
    elements: Vec<Vec<usize>>,
    boundary_edges: Vec<BoundaryEdge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub vertices: Vec<Point>,
    pub area: f64,
    /// Mean of the vertex positions (not the area centroid).
    pub centroid_of_vertices: Point,
    pub edge_lengths: Vec<f64>,
    /// Outward unit normals, one per edge.
    pub edge_normals: Vec<Point>,
}

impl ElementGeometry {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
}

/// Elements incident to one node together with its representative area.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalPatch {
    pub node: usize,
    pub elements: Vec<usize>,
    pub nodal_area: f64,
    /// Sorted, distinct nodes of all patch elements. Patch-local DOF `2k + c`
    /// is global DOF `2 * patch_nodes[k] + c`.
    pub patch_nodes: Vec<usize>,
}

impl NodalPatch {
    pub fn num_dofs(&self) -> usize {
        2 * self.patch_nodes.len()
    }

    pub fn local_node(&self, global: usize) -> Option<usize> {
        self.patch_nodes.binary_search(&global).ok()
    }

    pub fn global_dofs(&self) -> Vec<usize> {
        self.patch_nodes
            .iter()
            .flat_map(|&n| [2 * n, 2 * n + 1])
            .collect()
    }
}

pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for a in 0..n {
        let p = vertices[a];
        let q = vertices[(a + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    0.5 * twice
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    fn orient(a: Point, b: Point, c: Point) -> f64 {
        (b - a).perp(&(c - a))
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn edge_key(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl Mesh {
    /// Builds and validates a mesh.
    pub fn new(
        nodes: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self, MeshError> {
        let mesh = Mesh {
            nodes,
            elements,
            boundary_edges,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<(), MeshError> {
        let n = self.nodes.len();
        let diameter = self.diameter();
        for (e, verts) in self.elements.iter().enumerate() {
            if verts.len() < 3 {
                return Err(MeshError::InvalidElement {
                    element: e,
                    msg: format!("{} vertices, at least 3 required", verts.len()),
                });
            }
            for &v in verts {
                if v >= n {
                    return Err(MeshError::InvalidElement {
                        element: e,
                        msg: format!("vertex index {v} out of range (nnodes = {n})"),
                    });
                }
            }
            let mut sorted = verts.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(MeshError::InvalidElement {
                    element: e,
                    msg: "repeated vertex".into(),
                });
            }
            let pts: Vec<Point> = verts.iter().map(|&v| self.nodes[v]).collect();
            let k = pts.len();
            for a in 0..k {
                let length = (pts[(a + 1) % k] - pts[a]).norm();
                if length < DEGENERATE_EDGE_TOL * diameter {
                    return Err(MeshError::DegenerateEdge {
                        element: e,
                        edge: a,
                        length,
                    });
                }
            }
            let area = signed_area(&pts);
            if area <= 0.0 {
                return Err(MeshError::NegativeArea { element: e, area });
            }
            for a in 0..k {
                for b in (a + 2)..k {
                    if a == 0 && b == k - 1 {
                        continue;
                    }
                    if segments_intersect(pts[a], pts[(a + 1) % k], pts[b], pts[(b + 1) % k]) {
                        return Err(MeshError::InvalidElement {
                            element: e,
                            msg: format!("edges {a} and {b} intersect, polygon is not simple"),
                        });
                    }
                }
            }
        }

        let counts = self.edge_counts();
        for (index, be) in self.boundary_edges.iter().enumerate() {
            let [i, j] = be.nodes;
            let err = |msg: &str| MeshError::InvalidBoundaryEdge {
                index,
                i,
                j,
                msg: msg.to_string(),
            };
            if i >= n || j >= n {
                return Err(err("node index out of range"));
            }
            match counts.get(&edge_key(i, j)) {
                Some(1) => {}
                Some(_) => return Err(err("edge is shared by two elements")),
                None => return Err(err("not an element edge")),
            }
        }
        Ok(())
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for verts in &self.elements {
            let k = verts.len();
            for a in 0..k {
                *counts.entry(edge_key(verts[a], verts[(a + 1) % k])).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Diagonal of the bounding box.
    pub fn diameter(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let mut lo = self.nodes[0];
        let mut hi = self.nodes[0];
        for p in &self.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }

    pub fn element_geometry(&self, e: usize) -> Result<ElementGeometry, MeshError> {
        let verts = self.elements.get(e).ok_or_else(|| MeshError::InvalidElement {
            element: e,
            msg: "element index out of range".into(),
        })?;
        let vertices: Vec<Point> = verts.iter().map(|&v| self.nodes[v]).collect();
        let tol = DEGENERATE_EDGE_TOL * self.diameter();
        element_geometry_of(&vertices, tol).map_err(|(edge, length)| MeshError::DegenerateEdge {
            element: e,
            edge,
            length,
        })
    }

    pub fn total_area(&self) -> f64 {
        self.elements
            .iter()
            .map(|v| {
                let pts: Vec<Point> = v.iter().map(|&i| self.nodes[i]).collect();
                signed_area(&pts)
            })
            .sum()
    }

    /// Boundary edges carrying `tag`.
    pub fn edges_with_tag(&self, tag: i32) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(move |e| e.tag == tag)
    }

    /// Sorted distinct nodes lying on edges with `tag`.
    pub fn nodes_with_tag(&self, tag: i32) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.edges_with_tag(tag).flat_map(|e| e.nodes).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Element owning the boundary edge `(i, j)` and the edge's outward unit normal.
    pub fn boundary_edge_owner(&self, i: usize, j: usize) -> Option<(usize, Point)> {
        for (e, verts) in self.elements.iter().enumerate() {
            let k = verts.len();
            for a in 0..k {
                let (p, q) = (verts[a], verts[(a + 1) % k]);
                if edge_key(p, q) == edge_key(i, j) {
                    let t = self.nodes[q] - self.nodes[p];
                    return Some((e, Point::new(t.y, -t.x) / t.norm()));
                }
            }
        }
        None
    }

    /// Index of the node at `point`, within `1e-9 * diameter`.
    pub fn snap_to_node(&self, point: Point) -> Result<usize, MeshError> {
        let tol = 1e-9 * self.diameter();
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.nodes.iter().enumerate() {
            let d = (p - point).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, d)) if d <= tol => Ok(i),
            _ => Err(MeshError::NoNodeNear {
                x: point.x,
                y: point.y,
            }),
        }
    }

    /// Unique undirected element edges, sorted.
    pub fn unique_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self.edge_counts().into_keys().collect();
        edges.sort_unstable();
        edges
    }

    /// Pairs of elements sharing an edge, sorted.
    pub fn element_adjacency(&self) -> Vec<(usize, usize)> {
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, verts) in self.elements.iter().enumerate() {
            let k = verts.len();
            for a in 0..k {
                owners
                    .entry(edge_key(verts[a], verts[(a + 1) % k]))
                    .or_default()
                    .push(e);
            }
        }
        let mut pairs: Vec<(usize, usize)> = owners
            .into_values()
            .filter(|v| v.len() == 2)
            .map(|v| (v[0].min(v[1]), v[0].max(v[1])))
            .collect();
        pairs.sort_unstable();
        pairs
    }

    /// Parses the `nvem-mesh 1` text format.
    pub fn parse(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let mut next = |what: &str| {
            lines.next().ok_or_else(|| MeshError::Parse {
                line: text.lines().count() + 1,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };

        let (line, header) = next("header")?;
        if header.split_whitespace().collect::<Vec<_>>() != ["nvem-mesh", "1"] {
            return Err(MeshError::Parse {
                line,
                msg: format!("expected header `nvem-mesh 1`, found `{header}`"),
            });
        }
        let (line, counts) = next("counts")?;
        let counts = parse_fields::<usize>(line, counts)?;
        if counts.len() != 3 {
            return Err(MeshError::Parse {
                line,
                msg: "expected `<nnodes> <nelems> <nbedges>`".into(),
            });
        }
        let (nn, ne, nb) = (counts[0], counts[1], counts[2]);

        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let (line, l) = next("node coordinates")?;
            let xy = parse_fields::<f64>(line, l)?;
            if xy.len() != 2 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected 2 coordinates, found {}", xy.len()),
                });
            }
            nodes.push(Point::new(xy[0], xy[1]));
        }
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let (line, l) = next("element")?;
            let f = parse_fields::<usize>(line, l)?;
            if f.is_empty() || f.len() != f[0] + 1 {
                return Err(MeshError::Parse {
                    line,
                    msg: "expected `k v1 ... vk`".into(),
                });
            }
            elements.push(f[1..].to_vec());
        }
        let mut boundary_edges = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (line, l) = next("boundary edge")?;
            let f: Vec<&str> = l.split_whitespace().collect();
            let parsed = (f.len() == 3)
                .then(|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?)))
                .flatten();
            let Some((i, j, tag)) = parsed else {
                return Err(MeshError::Parse {
                    line,
                    msg: "expected `i j tag`".into(),
                });
            };
            boundary_edges.push(BoundaryEdge { nodes: [i, j], tag });
        }
        if let Some((line, _)) = lines.next() {
            return Err(MeshError::Parse {
                line,
                msg: "trailing content".into(),
            });
        }
        Mesh::new(nodes, elements, boundary_edges)
    }

    /// Serializes to the `nvem-mesh 1` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nvem-mesh 1");
        let _ = writeln!(
            s,
            "{} {} {}",
            self.nodes.len(),
            self.elements.len(),
            self.boundary_edges.len()
        );
        for p in &self.nodes {
            let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
        }
        for e in &self.elements {
            let _ = write!(s, "{}", e.len());
            for v in e {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        for b in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", b.nodes[0], b.nodes[1], b.tag);
        }
        s
    }
}

fn parse_fields<T: std::str::FromStr>(line: usize, l: &str) -> Result<Vec<T>, MeshError> {
    l.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| MeshError::Parse {
                line,
                msg: format!("cannot parse `{tok}`"),
            })
        })
        .collect()
}

/// Geometry of a polygon given by counter-clockwise vertices. On a degenerate
/// edge returns `(edge, length)`.
pub fn element_geometry_of(vertices: &[Point], tol: f64) -> Result<ElementGeometry, (usize, f64)> {
    let k = vertices.len();
    let mut edge_lengths = Vec::with_capacity(k);
    let mut edge_normals = Vec::with_capacity(k);
    for a in 0..k {
        let t = vertices[(a + 1) % k] - vertices[a];
        let len = t.norm();
        if len <= tol {
            return Err((a, len));
        }
        edge_lengths.push(len);
        edge_normals.push(Point::new(t.y, -t.x) / len);
    }
    let centroid_of_vertices = vertices.iter().fold(Point::zeros(), |acc, p| acc + p) / k as f64;
    Ok(ElementGeometry {
        vertices: vertices.to_vec(),
        area: signed_area(vertices),
        centroid_of_vertices,
        edge_lengths,
        edge_normals,
    })
}

/// One patch per node with `|I| = sum over incident E of |E| / N_E`.
pub fn build_patches(mesh: &Mesh) -> Result<Vec<NodalPatch>, MeshError> {
    let n = mesh.num_nodes();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, verts) in mesh.elements().iter().enumerate() {
        for &v in verts {
            incident[v].push(e);
        }
    }
    let areas: Vec<f64> = mesh
        .elements()
        .iter()
        .map(|v| {
            let pts: Vec<Point> = v.iter().map(|&i| mesh.nodes()[i]).collect();
            signed_area(&pts)
        })
        .collect();

    incident
        .into_iter()
        .enumerate()
        .map(|(node, elements)| {
            if elements.is_empty() {
                return Err(MeshError::IsolatedNode(node));
            }
            let nodal_area = elements
                .iter()
                .map(|&e| areas[e] / mesh.elements()[e].len() as f64)
                .sum();
            let mut patch_nodes: Vec<usize> = elements
                .iter()
                .flat_map(|&e| mesh.elements()[e].iter().copied())
                .collect();
            patch_nodes.sort_unstable();
            patch_nodes.dedup();
            Ok(NodalPatch {
                node,
                elements,
                nodal_area,
                patch_nodes,
            })
        })
        .collect()
}

/// Structured `nx` x `ny` quadrilateral grid on `[x0, x1] x [y0, y1]`, mapped through `map`.
///
/// Boundary tags: bottom 1, right 2, top 3, left 4.
pub fn structured_quads(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point,
) -> Result<Mesh, MeshError> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(map(i as f64 / nx as f64, j as f64 / ny as f64));
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut boundary = Vec::new();
    for i in 0..nx {
        boundary.push(BoundaryEdge { nodes: [id(i, 0), id(i + 1, 0)], tag: 1 });
    }
    for j in 0..ny {
        boundary.push(BoundaryEdge { nodes: [id(nx, j), id(nx, j + 1)], tag: 2 });
    }
    for i in (0..nx).rev() {
        boundary.push(BoundaryEdge { nodes: [id(i + 1, ny), id(i, ny)], tag: 3 });
    }
    for j in (0..ny).rev() {
        boundary.push(BoundaryEdge { nodes: [id(0, j + 1), id(0, j)], tag: 4 });
    }
    Mesh::new(nodes, elements, boundary)
}
