use std::fmt::Write;
use std::path::Path;

use crate::io::{write_text, IoError};
use crate::problem::Problem;
use crate::solver::LoadStepResult;

pub fn curves_header(problem: &Problem) -> String {
    let mut cols = vec!["step".to_string(), "load_factor".to_string()];
    for m in &problem.monitors {
        cols.push(format!("monitor_{}_u1", m.label));
        cols.push(format!("monitor_{}_u2", m.label));
    }
    cols.extend(["reaction_sum_1", "reaction_sum_2", "newton_iters"].map(String::from));
    cols.join(",")
}

/// One row per converged step, numbers in shortest round-trip form.
pub fn curves_string(problem: &Problem, steps: &[LoadStepResult]) -> String {
    let mut s = curves_header(problem);
    s.push('\n');
    for r in steps {
        write!(s, "{},{:?}", r.step, r.load_factor).unwrap();
        for m in &problem.monitors {
            let u = r.nodal_displacement(m.node);
            write!(s, ",{:?},{:?}", u.x, u.y).unwrap();
        }
        writeln!(s, ",{:?},{:?},{}", r.reaction_sum[0], r.reaction_sum[1], r.newton_iters).unwrap();
    }
    s
}

pub fn write_curves(problem: &Problem, steps: &[LoadStepResult], path: &Path) -> Result<(), IoError> {
    write_text(path, &curves_string(problem, steps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Curves {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn parse_curves(text: &str) -> Result<Curves, IoError> {
    let mut lines = text.lines().enumerate();
    let header: Vec<String> = match lines.next() {
        Some((_, h)) => h.split(',').map(String::from).collect(),
        None => return Err(IoError::Parse { line: 1, msg: "empty file".into() }),
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.parse().map_err(|_| IoError::Parse { line: i + 1, msg: format!("bad number '{t}'") }))
            .collect::<Result<_, _>>()?;
        if row.len() != header.len() {
            return Err(IoError::Parse { line: i + 1, msg: "column count mismatch".into() });
        }
        rows.push(row);
    }
    Ok(Curves { header, rows })
}
