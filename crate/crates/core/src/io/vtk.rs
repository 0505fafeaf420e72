use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use crate::io::{write_text, IoError};
use crate::mesh::Mesh;
use crate::solver::LoadStepResult;

/// Per-node output arrays; `displacement` is interleaved `(u1, u2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalFields<'a> {
    pub displacement: &'a [f64],
    pub pressure: &'a [f64],
    pub von_mises: &'a [f64],
    pub acc_plastic_strain: &'a [f64],
}

impl<'a> NodalFields<'a> {
    pub fn from_step(step: &'a LoadStepResult) -> Self {
        NodalFields {
            displacement: &step.displacement,
            pressure: &step.nodal_pressure,
            von_mises: &step.nodal_von_mises,
            acc_plastic_strain: &step.nodal_eps_bar_p,
        }
    }
}

/// Legacy ASCII unstructured grid with polygon cells.
pub fn vtk_string(mesh: &Mesh, fields: &NodalFields, title: &str) -> String {
    let n = mesh.num_nodes();
    assert_eq!(fields.displacement.len(), 2 * n);
    for a in [fields.pressure, fields.von_mises, fields.acc_plastic_strain] {
        assert_eq!(a.len(), n);
    }
    let mut s = String::new();
    let title = title.replace('\n', " ");
    writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {n} double").unwrap();
    for p in mesh.nodes() {
        writeln!(s, "{:?} {:?} 0.0", p.x, p.y).unwrap();
    }
    let size: usize = mesh.elements().iter().map(|e| e.len() + 1).sum();
    writeln!(s, "CELLS {} {size}", mesh.num_elements()).unwrap();
    for e in mesh.elements() {
        write!(s, "{}", e.len()).unwrap();
        for v in e {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
    }
    writeln!(s, "CELL_TYPES {}", mesh.num_elements()).unwrap();
    for _ in mesh.elements() {
        s.push_str("7\n");
    }
    writeln!(s, "POINT_DATA {n}\nVECTORS displacement double").unwrap();
    for u in fields.displacement.chunks(2) {
        writeln!(s, "{:?} {:?} 0.0", u[0], u[1]).unwrap();
    }
    for (name, a) in [
        ("pressure", fields.pressure),
        ("von_mises", fields.von_mises),
        ("acc_plastic_strain", fields.acc_plastic_strain),
    ] {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for v in a {
            writeln!(s, "{v:?}").unwrap();
        }
    }
    s
}

pub fn write_vtk(mesh: &Mesh, fields: &NodalFields, path: &Path) -> Result<(), IoError> {
    write_text(path, &vtk_string(mesh, fields, "nvem result"))
}

/// Contents of a file written by [`write_vtk`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VtkData {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u32>,
    /// Point arrays by name; vectors are flattened with three components.
    pub point_data: BTreeMap<String, Vec<f64>>,
}

/// Parses the subset of legacy VTK produced by [`write_vtk`].
pub fn parse_vtk(text: &str) -> Result<VtkData, IoError> {
    let lines: Vec<&str> = text.lines().collect();
    let err = |line: usize, msg: &str| IoError::Parse { line: line + 1, msg: msg.to_string() };
    let num = |line: usize, tok: &str| tok.parse::<f64>().map_err(|_| err(line, &format!("bad number '{tok}'")));
    let count = |line: usize, tok: Option<&str>| {
        tok.and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| err(line, "bad count"))
    };
    let mut out = VtkData::default();
    let mut i = 0;
    let mut n_points = 0;
    while i < lines.len() {
        let mut words = lines[i].split_whitespace();
        match words.next() {
            Some("POINTS") => {
                n_points = count(i, words.next())?;
                for k in 0..n_points {
                    let l = i + 1 + k;
                    let t: Vec<&str> = lines.get(l).ok_or_else(|| err(l, "missing point"))?.split_whitespace().collect();
                    if t.len() != 3 {
                        return Err(err(l, "point needs 3 coordinates"));
                    }
                    out.points.push([num(l, t[0])?, num(l, t[1])?, num(l, t[2])?]);
                }
                i += n_points;
            }
            Some("CELLS") => {
                let n = count(i, words.next())?;
                for k in 0..n {
                    let l = i + 1 + k;
                    let t: Vec<usize> = lines
                        .get(l)
                        .ok_or_else(|| err(l, "missing cell"))?
                        .split_whitespace()
                        .map(|w| w.parse().map_err(|_| err(l, "bad index")))
                        .collect::<Result<_, _>>()?;
                    if t.is_empty() || t[0] + 1 != t.len() {
                        return Err(err(l, "cell size mismatch"));
                    }
                    out.cells.push(t[1..].to_vec());
                }
                i += n;
            }
            Some("CELL_TYPES") => {
                let n = count(i, words.next())?;
                for k in 0..n {
                    let l = i + 1 + k;
                    let t = lines.get(l).ok_or_else(|| err(l, "missing cell type"))?.trim();
                    out.cell_types.push(t.parse().map_err(|_| err(l, "bad cell type"))?);
                }
                i += n;
            }
            Some(kind @ ("VECTORS" | "SCALARS")) => {
                let name = words.next().ok_or_else(|| err(i, "missing array name"))?.to_string();
                let mut start = i + 1;
                if kind == "SCALARS" {
                    start += 1;
                }
                let mut values = Vec::new();
                for k in 0..n_points {
                    let l = start + k;
                    for t in lines.get(l).ok_or_else(|| err(l, "missing value"))?.split_whitespace() {
                        values.push(num(l, t)?);
                    }
                }
                out.point_data.insert(name, values);
                i = start + n_points - 1;
            }
            _ => {}
        }
        i += 1;
    }
    Ok(out)
}
