//! Global assembly and Newton-Raphson load stepping.
//!
//! Both methods are assembled through the same machinery: a list of sample
//! points, each carrying global DOFs, an integration weight, a `3 x m`
//! strain operator and a constant `m x m` stability stiffness. For the nodal
//! method the samples are the mesh nodes (weight `|I|`, operator `B_I`); for
//! the standard element method they are the elements (weight `|E|`, `B_E`).
//! Plastic history lives on the samples.

use std::fmt;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{mean_stress, reduce_matrix, return_map, von_mises, Material, MaterialError, PlasticState, StressReturn};
use crate::mesh::{build_patches, Mesh, MeshError, NodalPatch};
use crate::nodal_assembly::{
    build_nodal_operators, deviatoric_moduli, neumann_patch, nodal_body_force, nodal_stability_matrix, nodal_traction_force,
    AssemblyError, LoadedEdge,
};
use crate::par::Execution;
use crate::problem::{Constraints, Problem, ProblemError};
use crate::vem_element::{element_projection, ProjectionSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("linear solver: {0}")]
    Linear(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Node-based uniform strain virtual elements.
    Nvem,
    /// Standard linearly-precise virtual elements.
    Vem,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nvem => "nvem",
            Method::Vem => "vem",
        })
    }
}

/// Moduli feeding the diagonal stability matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StabilizationModuli {
    /// Deviatoric elastic moduli `2G I_d`.
    Deviatoric,
    /// Full elastic moduli `2G I_d + K m m^T`.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub method: Method,
    pub num_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub stab_floor: f64,
    /// Moduli of the element-method stability matrix; the nodal method always
    /// uses the deviatoric part.
    pub vem_stabilization: StabilizationModuli,
    /// Retry a failed step once as two half steps.
    pub step_halving: bool,
    pub execution: Execution,
}

impl AnalysisConfig {
    pub fn new(method: Method, num_steps: usize) -> Self {
        AnalysisConfig {
            method,
            num_steps,
            newton_tol: 1e-8,
            newton_max_iter: 30,
            stab_floor: 1.0,
            vem_stabilization: StabilizationModuli::Full,
            step_halving: true,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.num_steps == 0 {
            return Err(SolverError::Config("num_steps must be at least 1".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::Config("newton_tol must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(SolverError::Config("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// One integration sample: a node (nodal method) or an element (element method).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub dofs: Vec<usize>,
    pub weight: f64,
    pub b: DMatrix<f64>,
    /// `IP^T S IP`, frozen at its elastic value.
    pub stab_stiffness: DMatrix<f64>,
}

impl SamplePoint {
    pub fn gather(&self, d: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dofs.len(), self.dofs.iter().map(|&g| d[g]))
    }

    pub fn strain(&self, d: &[f64]) -> Vector3<f64> {
        let s = &self.b * self.gather(d);
        Vector3::new(s[0], s[1], s[2])
    }
}

#[derive(Debug, Clone)]
pub struct Discretization {
    pub method: Method,
    pub num_dofs: usize,
    pub patches: Vec<NodalPatch>,
    pub projections: Vec<ProjectionSet>,
    pub points: Vec<SamplePoint>,
}

impl Discretization {
    pub fn new(mesh: &Mesh, material: &Material, config: &AnalysisConfig) -> Result<Self, SolverError> {
        let exec = config.execution;
        let projections = exec.try_map(mesh.num_elements(), |e| mesh.element_geometry(e).map(|g| element_projection(&g)))?;
        let patches = build_patches(mesh)?;
        let points = match config.method {
            Method::Nvem => {
                let ops = build_nodal_operators(&patches, mesh, &projections, material, config.stab_floor, exec)?;
                exec.map(ops.len(), |i| {
                    let op = &ops[i];
                    SamplePoint {
                        dofs: op.global_dofs(),
                        weight: op.nodal_area,
                        stab_stiffness: op.stability_stiffness(),
                        b: op.b.clone(),
                    }
                })
            }
            Method::Vem => {
                let moduli = match config.vem_stabilization {
                    StabilizationModuli::Deviatoric => deviatoric_moduli(material),
                    StabilizationModuli::Full => reduce_matrix(&material.elastic_tangent()),
                };
                exec.map(projections.len(), |e| element_sample(&mesh.elements()[e], &projections[e], &moduli, config.stab_floor))
            }
        };
        Ok(Discretization {
            method: config.method,
            num_dofs: mesh.num_dofs(),
            patches,
            projections,
            points,
        })
    }

    /// External force vector at full load.
    pub fn external_force(&self, problem: &Problem) -> Result<DVector<f64>, SolverError> {
        let mesh = &problem.mesh;
        let mut f = DVector::zeros(self.num_dofs);
        let edges: Vec<LoadedEdge> = problem
            .traction_edges()
            .into_iter()
            .map(|e| LoadedEdge { nodes: e.nodes, length: e.length, traction: e.traction })
            .collect();
        match self.method {
            Method::Nvem => {
                let mut loaded: Vec<usize> = edges.iter().flat_map(|e| e.nodes).collect();
                loaded.sort_unstable();
                loaded.dedup();
                for node in loaded {
                    for (n, force) in nodal_traction_force(&neumann_patch(node, &edges)?) {
                        f[2 * n] += force.x;
                        f[2 * n + 1] += force.y;
                    }
                }
                if let Some(b) = problem.body_force() {
                    let body = vec![b; mesh.num_elements()];
                    for patch in &self.patches {
                        let fb = nodal_body_force(patch, mesh, &self.projections, &body)?;
                        for (k, g) in patch.global_dofs().into_iter().enumerate() {
                            f[g] += fb[k];
                        }
                    }
                }
            }
            Method::Vem => {
                for e in &edges {
                    for n in e.nodes {
                        f[2 * n] += 0.5 * e.length * e.traction.x;
                        f[2 * n + 1] += 0.5 * e.length * e.traction.y;
                    }
                }
                if let Some(b) = problem.body_force() {
                    for (verts, proj) in mesh.elements().iter().zip(&self.projections) {
                        let share = proj.area / verts.len() as f64;
                        for &n in verts {
                            f[2 * n] += share * b.x;
                            f[2 * n + 1] += share * b.y;
                        }
                    }
                }
            }
        }
        Ok(f)
    }

    /// Averages per-sample scalars onto nodes. Nodal samples pass through;
    /// element samples use the nodal averaging weights `|E| / (N_E |I|)`.
    pub fn to_nodes(&self, mesh: &Mesh, values: &[f64]) -> Vec<f64> {
        match self.method {
            Method::Nvem => values.to_vec(),
            Method::Vem => self
                .patches
                .iter()
                .map(|p| {
                    p.elements
                        .iter()
                        .map(|&e| self.projections[e].area / mesh.elements()[e].len() as f64 * values[e])
                        .sum::<f64>()
                        / p.nodal_area
                })
                .collect(),
        }
    }
}

fn element_sample(verts: &[usize], proj: &ProjectionSet, moduli: &Matrix3<f64>, floor: f64) -> SamplePoint {
    let stab = nodal_stability_matrix(&proj.b, proj.area, moduli, floor);
    let ip = proj.stability_projector();
    let s_ip = DMatrix::from_fn(ip.nrows(), ip.ncols(), |i, j| stab[i] * ip[(i, j)]);
    SamplePoint {
        dofs: verts.iter().flat_map(|&n| [2 * n, 2 * n + 1]).collect(),
        weight: proj.area,
        b: proj.b.clone(),
        stab_stiffness: ip.transpose() * s_ip,
    }
}

/// Lower-triangular CSC pattern over the free DOFs plus, for every sample,
/// the value slot of each local `(i, j)` pair.
#[derive(Debug, Clone)]
pub struct SparseLayout {
    pub n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    slots: Vec<Vec<u32>>,
}

const SKIP: u32 = u32::MAX;

impl SparseLayout {
    pub fn new(points: &[SamplePoint], free: &[Option<usize>]) -> Self {
        let n = free.iter().flatten().count();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for p in points {
            let fr: Vec<usize> = p.dofs.iter().filter_map(|&g| free[g]).collect();
            for &i in &fr {
                for &j in &fr {
                    if i >= j {
                        cols[j].push(i);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in &mut cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        assert!(row_idx.len() < SKIP as usize, "sparse pattern too large");
        let slots = points
            .iter()
            .map(|p| {
                let m = p.dofs.len();
                let mut s = vec![SKIP; m * m];
                for (a, &ga) in p.dofs.iter().enumerate() {
                    for (b, &gb) in p.dofs.iter().enumerate() {
                        if let (Some(i), Some(j)) = (free[ga], free[gb]) {
                            if i >= j {
                                let range = &row_idx[col_ptr[j]..col_ptr[j + 1]];
                                let pos = range.binary_search(&i).expect("pattern covers sample");
                                s[a * m + b] = (col_ptr[j] + pos) as u32;
                            }
                        }
                    }
                }
                s
            })
            .collect();
        SparseLayout { n, col_ptr, row_idx, slots }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    fn symbolic(&self) -> SymbolicSparseColMat<usize> {
        SymbolicSparseColMat::new_checked(self.n, self.n, self.col_ptr.clone(), None, self.row_idx.clone())
    }

    /// Expands lower-triangular values into a dense symmetric matrix.
    pub fn to_dense(&self, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                m[(i, j)] = values[k];
                m[(j, i)] = values[k];
            }
        }
        m
    }
}

/// Assembled tangent (free-DOF lower-triangular values), internal force
/// over all DOFs, and the constitutive returns of every sample.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub tangent: Vec<f64>,
    pub internal: DVector<f64>,
    pub returns: Vec<StressReturn>,
}

/// Evaluates every sample against its committed history `states` at
/// displacement `d`, then scatters serially in sample order.
pub fn assemble(
    disc: &Discretization,
    layout: &SparseLayout,
    material: &Material,
    states: &[PlasticState],
    d: &[f64],
    exec: Execution,
) -> Result<Assembly, SolverError> {
    assemble_with_moduli(disc, layout, material, states, d, None, exec)
}

/// [`assemble`] with the tangent built from the given per-sample moduli
/// instead of the consistent ones; forces are unaffected.
pub fn assemble_with_moduli(
    disc: &Discretization,
    layout: &SparseLayout,
    material: &Material,
    states: &[PlasticState],
    d: &[f64],
    moduli: Option<&[Matrix3<f64>]>,
    exec: Execution,
) -> Result<Assembly, SolverError> {
    let locals = exec.try_map(disc.points.len(), |i| {
        let p = &disc.points[i];
        let dl = p.gather(d);
        let eps = &p.b * &dl;
        let ret = return_map(material, &states[i], &Vector3::new(eps[0], eps[1], eps[2]))?;
        let m = moduli.map_or(&ret.tangent3, |m| &m[i]);
        let dt = DMatrix::from_fn(3, 3, |r, c| m[(r, c)]);
        let bt = p.b.transpose();
        let k = p.weight * &bt * dt * &p.b + &p.stab_stiffness;
        let s3 = ret.sigma3();
        let f = p.weight * &bt * DVector::from_column_slice(s3.as_slice()) + &p.stab_stiffness * dl;
        Ok::<_, SolverError>((k, f, ret))
    })?;

    let mut tangent = vec![0.0; layout.nnz()];
    let mut internal = DVector::zeros(disc.num_dofs);
    let mut returns = Vec::with_capacity(locals.len());
    for (i, (k, f, ret)) in locals.into_iter().enumerate() {
        let p = &disc.points[i];
        let m = p.dofs.len();
        let slots = &layout.slots[i];
        for a in 0..m {
            internal[p.dofs[a]] += f[a];
            for b in 0..m {
                let s = slots[a * m + b];
                if s != SKIP {
                    tangent[s as usize] += k[(a, b)];
                }
            }
        }
        returns.push(ret);
    }
    Ok(Assembly { tangent, internal, returns })
}

/// Element-method assembly: the same machinery over element samples.
pub fn assemble_standard_vem(
    disc: &Discretization,
    layout: &SparseLayout,
    material: &Material,
    states: &[PlasticState],
    d: &[f64],
    exec: Execution,
) -> Result<Assembly, SolverError> {
    if disc.method != Method::Vem {
        return Err(SolverError::Config("discretization is not in element mode".into()));
    }
    assemble(disc, layout, material, states, d, exec)
}

/// `K v` over all DOFs for per-sample moduli `moduli`.
pub fn tangent_product(disc: &Discretization, moduli: &[Matrix3<f64>], v: &[f64], exec: Execution) -> DVector<f64> {
    let locals = exec.map(disc.points.len(), |i| {
        let p = &disc.points[i];
        let vl = p.gather(v);
        let eps = &p.b * &vl;
        let s = moduli[i] * Vector3::new(eps[0], eps[1], eps[2]);
        p.weight * p.b.transpose() * DVector::from_column_slice(s.as_slice()) + &p.stab_stiffness * vl
    });
    let mut out = DVector::zeros(disc.num_dofs);
    for (p, f) in disc.points.iter().zip(locals) {
        for (a, &g) in p.dofs.iter().enumerate() {
            out[g] += f[a];
        }
    }
    out
}

/// Symmetric sparse direct solver with a reusable symbolic factorization.
pub struct LinearSolver {
    layout_symbolic: SymbolicSparseColMat<usize>,
    llt: SymbolicLlt<usize>,
    full: Option<(SymbolicSparseColMat<usize>, SymbolicLu<usize>, Vec<usize>)>,
}

impl LinearSolver {
    pub fn new(layout: &SparseLayout) -> Result<Self, SolverError> {
        faer::set_global_parallelism(faer::Par::Seq);
        let layout_symbolic = layout.symbolic();
        let llt = SymbolicLlt::try_new(layout_symbolic.as_ref(), Side::Lower).map_err(|e| SolverError::Linear(format!("{e:?}")))?;
        Ok(LinearSolver { layout_symbolic, llt, full: None })
    }

    /// Solves `K x = rhs`; Cholesky first, LU when the tangent is not positive definite.
    pub fn solve(&mut self, values: &[f64], rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = rhs.len();
        let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
        let mat = SparseColMatRef::new(self.layout_symbolic.as_ref(), values);
        let x = match Llt::try_new_with_symbolic(self.llt.clone(), mat, Side::Lower) {
            Ok(llt) => llt.solve(&b),
            Err(_) => {
                let (sym, lu_sym, vals) = self.full_pattern(values)?;
                let full = SparseColMatRef::new(sym.as_ref(), &vals);
                let lu = Lu::try_new_with_symbolic(lu_sym, full).map_err(|e| SolverError::Linear(format!("{e:?}")))?;
                lu.solve(&b)
            }
        };
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Linear("singular tangent".into()));
        }
        Ok(out)
    }

    fn full_pattern(&mut self, values: &[f64]) -> Result<(SymbolicSparseColMat<usize>, SymbolicLu<usize>, Vec<f64>), SolverError> {
        let s = self.layout_symbolic.as_ref();
        let n = s.ncols();
        let (cp, ri) = (s.col_ptr(), s.row_idx());
        if self.full.is_none() {
            // mirror the lower triangle; `source` maps full slots to lower slots
            let mut entries: Vec<(usize, usize, usize)> = Vec::new();
            for j in 0..n {
                for k in cp[j]..cp[j + 1] {
                    let i = ri[k];
                    entries.push((j, i, k));
                    if i != j {
                        entries.push((i, j, k));
                    }
                }
            }
            entries.sort_unstable();
            let mut col_ptr = vec![0usize; n + 1];
            for &(c, _, _) in &entries {
                col_ptr[c + 1] += 1;
            }
            for c in 0..n {
                col_ptr[c + 1] += col_ptr[c];
            }
            let row_idx: Vec<usize> = entries.iter().map(|e| e.1).collect();
            let source: Vec<usize> = entries.iter().map(|e| e.2).collect();
            let sym = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
            let lu = SymbolicLu::try_new(sym.as_ref()).map_err(|e| SolverError::Linear(format!("{e:?}")))?;
            self.full = Some((sym, lu, source));
        }
        let (sym, lu, source) = self.full.as_ref().unwrap();
        let vals = source.iter().map(|&k| values[k]).collect();
        Ok((sym.clone(), lu.clone(), vals))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadStepResult {
    pub step: usize,
    pub load_factor: f64,
    pub displacement: Vec<f64>,
    /// Stress at each sample (nodes or elements).
    pub sample_stress: Vec<Vector6<f64>>,
    pub sample_states: Vec<PlasticState>,
    pub sample_strain: Vec<Vector3<f64>>,
    pub nodal_pressure: Vec<f64>,
    pub nodal_von_mises: Vec<f64>,
    pub nodal_eps_bar_p: Vec<f64>,
    /// Sum of reactions over the problem's reaction DOFs.
    pub reaction_sum: [f64; 2],
    /// Sum of reactions over every constrained DOF.
    pub total_reaction: [f64; 2],
    /// Sum of applied external forces.
    pub applied_force: [f64; 2],
    pub newton_iters: usize,
    pub residual_history: Vec<f64>,
}

impl LoadStepResult {
    pub fn nodal_displacement(&self, node: usize) -> Vector2<f64> {
        Vector2::new(self.displacement[2 * node], self.displacement[2 * node + 1])
    }

    /// Pressure `(s11 + s22 + s33) / 3` at each sample.
    pub fn sample_pressure(&self) -> Vec<f64> {
        self.sample_stress.iter().map(mean_stress).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub load_factor: f64,
    pub residual_history: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub method: Method,
    pub steps: Vec<LoadStepResult>,
    /// Set when the load ramp stopped early, typically at a limit load.
    pub failure: Option<StepFailure>,
    pub halvings: usize,
}

impl AnalysisResult {
    pub fn last(&self) -> Option<&LoadStepResult> {
        self.steps.last()
    }

    pub fn last_converged_load(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.load_factor)
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Incremental solver state for one problem and configuration.
pub struct Analysis<'a> {
    pub problem: &'a Problem,
    pub config: AnalysisConfig,
    pub disc: Discretization,
    pub layout: SparseLayout,
    pub constraints: Constraints,
    free: Vec<Option<usize>>,
    f_ext: DVector<f64>,
    reaction_dofs: Vec<usize>,
    linear: LinearSolver,
    pub states: Vec<PlasticState>,
    pub d: DVector<f64>,
    pub load_factor: f64,
    last_moduli: Option<Vec<Matrix3<f64>>>,
}

impl<'a> Analysis<'a> {
    pub fn new(problem: &'a Problem, config: AnalysisConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let disc = Discretization::new(&problem.mesh, problem.material(), &config)?;
        let constraints = problem.constraints()?;
        let free = constraints.free_map(disc.num_dofs);
        let layout = SparseLayout::new(&disc.points, &free);
        let linear = LinearSolver::new(&layout)?;
        let f_ext = disc.external_force(problem)?;
        let reaction_dofs = problem.reaction_dofs()?;
        let n = disc.num_dofs;
        Ok(Analysis {
            problem,
            states: vec![PlasticState::default(); disc.points.len()],
            config,
            disc,
            layout,
            constraints,
            free,
            f_ext,
            reaction_dofs,
            linear,
            d: DVector::zeros(n),
            load_factor: 0.0,
            last_moduli: None,
        })
    }

    /// External force vector at full load.
    pub fn external_force(&self) -> &DVector<f64> {
        &self.f_ext
    }

    pub fn free_map(&self) -> &[Option<usize>] {
        &self.free
    }

    /// Newton iterations to equilibrium at `load_factor`, starting from the
    /// committed state. Commits displacement and history only on convergence.
    pub fn solve_load_step(&mut self, load_factor: f64, step: usize) -> Result<LoadStepResult, StepFailure> {
        let material = *self.problem.material();
        let exec = self.config.execution;
        let mut d = self.d.clone();
        // increment of the prescribed values, fed through the tangent on the
        // first iteration so the whole body shares it
        let mut prescribed = DVector::zeros(d.len());
        for (&dof, &v) in self.constraints.dofs.iter().zip(&self.constraints.values) {
            prescribed[dof] = load_factor * v - d[dof];
        }
        let mut predictor = prescribed.iter().any(|v| *v != 0.0);
        let f_ext = load_factor * &self.f_ext;
        let fail = |reason: String, history: &[f64]| StepFailure {
            load_factor,
            residual_history: history.to_vec(),
            reason,
        };

        let mut history = Vec::new();
        let mut solves = 0;
        loop {
            // the first iteration reuses the last converged tangent, which
            // is a far better predictor than the elastic one once flow starts
            let moduli = if solves == 0 { self.last_moduli.as_deref() } else { None };
            let asm = assemble_with_moduli(&self.disc, &self.layout, &material, &self.states, d.as_slice(), moduli, exec)
                .map_err(|e| fail(e.to_string(), &history))?;
            let residual = &asm.internal - &f_ext;
            let mut free_res = vec![0.0; self.layout.n];
            let mut constrained_sq = 0.0;
            for (g, slot) in self.free.iter().enumerate() {
                match slot {
                    Some(i) => free_res[*i] = residual[g],
                    None => constrained_sq += residual[g] * residual[g],
                }
            }
            if predictor {
                let current: Vec<Matrix3<f64>>;
                let m = match moduli {
                    Some(m) => m,
                    None => {
                        current = asm.returns.iter().map(|r| r.tangent3).collect();
                        &current
                    }
                };
                let kd = tangent_product(&self.disc, m, prescribed.as_slice(), exec);
                for (g, slot) in self.free.iter().enumerate() {
                    if let Some(i) = slot {
                        free_res[*i] += kd[g];
                    }
                }
            } else {
                let norm = free_res.iter().map(|v| v * v).sum::<f64>().sqrt();
                history.push(norm);
                if !norm.is_finite() {
                    return Err(fail("non-finite residual".into(), &history));
                }
                let reference = f_ext.norm().max(constrained_sq.sqrt()).max(1.0);
                if norm <= self.config.newton_tol * reference && self.balanced(&residual, &f_ext) {
                    return Ok(self.commit(step, load_factor, d, asm, &residual, &f_ext, solves, history));
                }
                if solves == self.config.newton_max_iter {
                    break;
                }
            }
            let rhs: Vec<f64> = free_res.iter().map(|v| -v).collect();
            let delta = self.linear.solve(&asm.tangent, &rhs).map_err(|e| fail(e.to_string(), &history))?;
            solves += 1;
            for (g, slot) in self.free.iter().enumerate() {
                match slot {
                    Some(i) => d[g] += delta[*i],
                    None if predictor => d[g] += prescribed[g],
                    None => {}
                }
            }
            predictor = false;
        }
        Err(fail(
            format!("no convergence in {} iterations", self.config.newton_max_iter),
            &history,
        ))
    }

    /// Net force left on the free DOFs is within tolerance of the largest
    /// load or reaction resultant. The norm test alone lets free residuals
    /// add up past that on large meshes.
    fn balanced(&self, residual: &DVector<f64>, f_ext: &DVector<f64>) -> bool {
        let free = (0..residual.len()).filter(|&g| self.free[g].is_some());
        let net = resultant(free, residual);
        let scale = resultant(0..f_ext.len(), f_ext)
            .max(resultant(self.reaction_dofs.iter().copied(), residual))
            .max(resultant(self.constraints.dofs.iter().copied(), residual))
            .max(1.0);
        net <= self.config.newton_tol * scale
    }

    #[allow(clippy::too_many_arguments)]
    fn commit(
        &mut self,
        step: usize,
        load_factor: f64,
        d: DVector<f64>,
        asm: Assembly,
        residual: &DVector<f64>,
        f_ext: &DVector<f64>,
        iters: usize,
        history: Vec<f64>,
    ) -> LoadStepResult {
        let mesh = &self.problem.mesh;
        let sum2 = |dofs: &mut dyn Iterator<Item = usize>, v: &DVector<f64>| {
            let mut s = [0.0; 2];
            for g in dofs {
                s[g % 2] += v[g];
            }
            s
        };
        let reaction_sum = sum2(&mut self.reaction_dofs.iter().copied(), residual);
        let total_reaction = sum2(&mut self.constraints.dofs.iter().copied(), residual);
        let applied_force = sum2(&mut (0..f_ext.len()), f_ext);

        let sample_stress: Vec<Vector6<f64>> = asm.returns.iter().map(|r| r.sigma).collect();
        let sample_states: Vec<PlasticState> = asm.returns.iter().map(|r| r.new_state).collect();
        let sample_strain = self.disc.points.iter().map(|p| p.strain(d.as_slice())).collect();
        let pressure: Vec<f64> = sample_stress.iter().map(mean_stress).collect();
        let vm: Vec<f64> = sample_stress.iter().map(von_mises).collect();
        let ebp: Vec<f64> = sample_states.iter().map(|s| s.eps_bar_p).collect();

        let result = LoadStepResult {
            step,
            load_factor,
            displacement: d.as_slice().to_vec(),
            nodal_pressure: self.disc.to_nodes(mesh, &pressure),
            nodal_von_mises: self.disc.to_nodes(mesh, &vm),
            nodal_eps_bar_p: self.disc.to_nodes(mesh, &ebp),
            sample_stress,
            sample_states: sample_states.clone(),
            sample_strain,
            reaction_sum,
            total_reaction,
            applied_force,
            newton_iters: iters,
            residual_history: history,
        };
        self.last_moduli = Some(asm.returns.iter().map(|r| r.tangent3).collect());
        self.states = sample_states;
        self.d = d;
        self.load_factor = load_factor;
        result
    }
}

/// Ramps the loads uniformly over `config.num_steps` steps. A failed step is
/// retried once as two half steps; a second failure ends the ramp and is
/// reported in [`AnalysisResult::failure`] with all converged steps kept.
pub fn run_analysis(problem: &Problem, config: &AnalysisConfig) -> Result<AnalysisResult, SolverError> {
    let mut analysis = Analysis::new(problem, config.clone())?;
    let n = config.num_steps;
    let mut steps = Vec::new();
    let mut halvings = 0;
    let mut failure = None;
    let mut counter = 0;
    for k in 1..=n {
        let target = k as f64 / n as f64;
        counter += 1;
        match analysis.solve_load_step(target, counter) {
            Ok(r) => steps.push(r),
            Err(first) => {
                if !config.step_halving {
                    failure = Some(first);
                    break;
                }
                halvings += 1;
                let mid = 0.5 * (analysis.load_factor + target);
                match analysis.solve_load_step(mid, counter) {
                    Ok(r) => steps.push(r),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
                counter += 1;
                match analysis.solve_load_step(target, counter) {
                    Ok(r) => steps.push(r),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
        }
    }
    Ok(AnalysisResult {
        method: config.method,
        steps,
        failure,
        halvings,
    })
}

/// Length of the x/y resultant of `v` over `dofs`.
fn resultant(dofs: impl Iterator<Item = usize>, v: &DVector<f64>) -> f64 {
    let mut s = Vector2::<f64>::zeros();
    for g in dofs {
        s[g % 2] += v[g];
    }
    s.norm()
}
