use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use nvem::bench::{self, cylinder_material, cylinder_problem, make_perforated_plate, make_tension};
use nvem::mesh::Mesh;
use nvem::solver::{
    assemble, assemble_standard_vem, tangent_product, Analysis, AnalysisConfig, Discretization, SparseLayout,
    StabilizationModuli,
};
use nvem::{run_analysis, Execution, Material, Method, PlasticState};

const UNIT_SQUARE: &str = "nvem-mesh 1\n4 1 4\n0 0\n1 0\n1 1\n0 1\n4 0 1 2 3\n0 1 1\n1 2 2\n2 3 3\n3 0 4\n";

fn voronoi() -> Mesh {
    Mesh::parse(&std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/voronoi30.mesh")).unwrap()).unwrap()
}

fn all_free(n: usize) -> Vec<Option<usize>> {
    (0..n).map(Some).collect()
}

fn plane_strain_d(m: &Material) -> Matrix3<f64> {
    let (e, nu) = (m.youngs_modulus, m.poissons_ratio);
    let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Matrix3::new(c * (1.0 - nu), c * nu, 0.0, c * nu, c * (1.0 - nu), 0.0, 0.0, 0.0, c * (1.0 - 2.0 * nu) / 2.0)
}

#[test]
fn unit_square_element_stiffness_matches_hand_built_matrix() {
    let mesh = Mesh::parse(UNIT_SQUARE).unwrap();
    let material = Material::new(1000.0, 0.25, 1e9, 0.0, 0.0).unwrap();
    let config = AnalysisConfig::new(Method::Vem, 1);
    let disc = Discretization::new(&mesh, &material, &config).unwrap();
    let layout = SparseLayout::new(&disc.points, &all_free(8));
    let asm = assemble(&disc, &layout, &material, &[PlasticState::default()], &[0.0; 8], Execution::Serial).unwrap();
    let k = layout.to_dense(&asm.tangent);

    // gradient weights of the four corners and the linear-interpolant projector
    let q = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
    let x = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
    let mut b = DMatrix::zeros(3, 8);
    for a in 0..4 {
        b[(0, 2 * a)] = q[a].0;
        b[(1, 2 * a + 1)] = q[a].1;
        b[(2, 2 * a)] = q[a].1;
        b[(2, 2 * a + 1)] = q[a].0;
    }
    let mut p = DMatrix::zeros(8, 8);
    for a in 0..4 {
        for bb in 0..4 {
            let w = 0.25 + q[bb].0 * x[a].0 + q[bb].1 * x[a].1;
            p[(2 * a, 2 * bb)] = w;
            p[(2 * a + 1, 2 * bb + 1)] = w;
        }
    }
    let d = plane_strain_d(&material);
    let dd = DMatrix::from_fn(3, 3, |i, j| d[(i, j)]);
    let consistency = b.transpose() * dd * &b;
    let s = DMatrix::from_diagonal(&DVector::from_fn(8, |i, _| consistency[(i, i)].max(1.0)));
    let ip = DMatrix::identity(8, 8) - p;
    let expected = &consistency + ip.transpose() * s * &ip;
    assert!((&k - &expected).amax() < 1e-10 * expected.amax(), "{k}\n{expected}");
}

#[test]
fn one_element_nodal_and_element_strains_agree() {
    // on a single element every nodal patch is the element itself
    let mesh = Mesh::parse(UNIT_SQUARE).unwrap();
    let material = Material::new(1000.0, 0.25, 1e9, 0.0, 0.0).unwrap();
    let nvem = Discretization::new(&mesh, &material, &AnalysisConfig::new(Method::Nvem, 1)).unwrap();
    let vem = Discretization::new(&mesh, &material, &AnalysisConfig::new(Method::Vem, 1)).unwrap();
    let d = [0.0, 0.0, 0.1, 0.0, 0.3, 0.2, -0.1, 0.4];
    for p in &nvem.points {
        assert_eq!(p.weight, 0.25);
        assert!((p.strain(&d) - vem.points[0].strain(&d)).amax() < 1e-14);
    }
}

fn unconstrained_spectrum(mesh: &Mesh, method: Method) -> Vec<f64> {
    let material = Material::new(1000.0, 0.3, 1e9, 0.0, 0.0).unwrap();
    let disc = Discretization::new(mesh, &material, &AnalysisConfig::new(method, 1)).unwrap();
    let n = mesh.num_dofs();
    let layout = SparseLayout::new(&disc.points, &all_free(n));
    let states = vec![PlasticState::default(); disc.points.len()];
    let asm = assemble(&disc, &layout, &material, &states, &vec![0.0; n], Execution::Serial).unwrap();
    let k = layout.to_dense(&asm.tangent);
    assert!((&k - k.transpose()).amax() == 0.0);
    let mut ev: Vec<f64> = SymmetricEigen::new(k).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn free_stiffness_is_psd_with_rigid_body_nullity_three() {
    let mesh = voronoi();
    for method in [Method::Nvem, Method::Vem] {
        let ev = unconstrained_spectrum(&mesh, method);
        let top = *ev.last().unwrap();
        assert!(ev.iter().all(|&v| v > -1e-10 * top), "{method}: negative eigenvalue {:?}", &ev[..4]);
        assert!(ev[..3].iter().all(|&v| v.abs() < 1e-10 * top), "{method}: {:?}", &ev[..4]);
        assert!(ev[3] > 1e-6 * top, "{method}: extra zero energy mode {:?}", &ev[..5]);
    }
}

#[test]
fn linear_elastic_problem_converges_in_one_solve() {
    let material = cylinder_material(0.3);
    let p = cylinder_problem(6, 6, material, 50.0, 1).unwrap();
    for method in [Method::Nvem, Method::Vem] {
        let r = run_analysis(&p, &AnalysisConfig::new(method, 1)).unwrap();
        let step = r.last().unwrap();
        assert_eq!(step.newton_iters, 1, "{method}: {:?}", step.residual_history);
        assert!(step.sample_states.iter().all(|s| s.eps_bar_p == 0.0));
    }
}

#[test]
fn elastic_response_is_path_independent() {
    let material = cylinder_material(0.3);
    let one = cylinder_problem(6, 6, material, 50.0, 1).unwrap();
    let five = cylinder_problem(6, 6, material, 50.0, 5).unwrap();
    for method in [Method::Nvem, Method::Vem] {
        let a = run_analysis(&one, &AnalysisConfig::new(method, 1)).unwrap();
        let b = run_analysis(&five, &AnalysisConfig::new(method, 5)).unwrap();
        assert_eq!(b.steps.len(), 5);
        let (ua, ub) = (&a.last().unwrap().displacement, &b.last().unwrap().displacement);
        let scale = ua.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(ua.iter().zip(ub).all(|(x, y)| (x - y).abs() < 1e-10 * scale));
    }
}

#[test]
fn global_tangent_matches_finite_differences_of_internal_force() {
    let p = make_tension(6).unwrap();
    let material = *p.material();
    for method in [Method::Nvem, Method::Vem] {
        let mut a = Analysis::new(&p, AnalysisConfig::new(method, 25)).unwrap();
        for k in 1..=6 {
            a.solve_load_step(k as f64 / 25.0, k).unwrap();
        }
        assert!(a.states.iter().any(|s| s.eps_bar_p > 0.0), "{method}: no plastic samples yet");
        let d: Vec<f64> = a.d.iter().enumerate().map(|(i, v)| 1.3 * v + 1e-4 * ((i * 7 % 11) as f64 - 5.0)).collect();
        let asm = assemble(&a.disc, &a.layout, &material, &a.states, &d, Execution::Serial).unwrap();
        let moduli: Vec<Matrix3<f64>> = asm.returns.iter().map(|r| r.tangent3).collect();
        let v: Vec<f64> = (0..d.len()).map(|i| ((i * 13 % 17) as f64 - 8.0) / 8.0).collect();
        let kv = tangent_product(&a.disc, &moduli, &v, Execution::Serial);

        let h = 1e-7;
        let shifted = |s: f64| -> DVector<f64> {
            let x: Vec<f64> = d.iter().zip(&v).map(|(a, b)| a + s * h * b).collect();
            assemble(&a.disc, &a.layout, &material, &a.states, &x, Execution::Serial).unwrap().internal
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        assert!((&fd - &kv).norm() < 1e-6 * kv.norm(), "{method}: {}", (&fd - &kv).norm() / kv.norm());

        // the sparse free-free block agrees with the matrix-free product
        let free = a.free_map().to_vec();
        let vz: Vec<f64> = (0..d.len()).map(|g| if free[g].is_some() { v[g] } else { 0.0 }).collect();
        let kvz = tangent_product(&a.disc, &moduli, &vz, Execution::Serial);
        let vf = DVector::from_iterator(a.layout.n, (0..d.len()).filter(|&g| free[g].is_some()).map(|g| v[g]));
        let sparse = a.layout.to_dense(&asm.tangent) * vf;
        let product = DVector::from_iterator(a.layout.n, (0..d.len()).filter(|&g| free[g].is_some()).map(|g| kvz[g]));
        assert!((sparse - &product).amax() < 1e-9 * product.amax());
    }
}

#[test]
fn serial_and_parallel_runs_are_bitwise_identical() {
    let p = make_perforated_plate(4).unwrap();
    for method in [Method::Nvem, Method::Vem] {
        let mut serial = AnalysisConfig::new(method, 8);
        serial.execution = Execution::Serial;
        let mut parallel = serial.clone();
        parallel.execution = Execution::Parallel;
        let a = run_analysis(&p, &serial).unwrap();
        let b = run_analysis(&p, &parallel).unwrap();
        assert_eq!(a.steps, b.steps);
    }
}

#[test]
fn element_mode_assembly_rejects_nodal_discretization() {
    let mesh = Mesh::parse(UNIT_SQUARE).unwrap();
    let material = Material::new(1000.0, 0.25, 1e9, 0.0, 0.0).unwrap();
    let disc = Discretization::new(&mesh, &material, &AnalysisConfig::new(Method::Nvem, 1)).unwrap();
    let layout = SparseLayout::new(&disc.points, &all_free(8));
    let states = vec![PlasticState::default(); 4];
    assert!(assemble_standard_vem(&disc, &layout, &material, &states, &[0.0; 8], Execution::Serial).is_err());
}

#[test]
fn deviatoric_stabilization_option_is_softer_under_near_incompressibility() {
    let material = cylinder_material(0.4999);
    let p = cylinder_problem(6, 6, material, 50.0, 1).unwrap();
    let ua = |stab| {
        let mut c = AnalysisConfig::new(Method::Vem, 1);
        c.vem_stabilization = stab;
        run_analysis(&p, &c).unwrap().last().unwrap().nodal_displacement(p.monitors[0].node).x
    };
    assert!(ua(StabilizationModuli::Deviatoric) > ua(StabilizationModuli::Full));
}

#[test]
fn limit_is_reported_without_losing_converged_steps() {
    // with compressible elasticity the frozen stabilization finds equilibria
    // far past collapse, so the failure path is exercised near incompressibility
    let material = cylinder_material(0.4999);
    let limit = bench::cylinder_limit_pressure(material.initial_yield, 100.0, 200.0);
    let p = cylinder_problem(16, 16, material, 1.5 * limit, 6).unwrap();
    let r = run_analysis(&p, &AnalysisConfig::new(Method::Nvem, 6)).unwrap();
    let failure = r.failure.as_ref().expect("ramp past the collapse load must fail");
    assert!(!r.steps.is_empty());
    assert!(r.last_converged_load() < failure.load_factor);
    assert!(r.halvings >= 1);
}

#[test]
fn invalid_configuration_is_rejected() {
    let p = cylinder_problem(2, 2, cylinder_material(0.3), 1.0, 1).unwrap();
    let mut c = AnalysisConfig::new(Method::Nvem, 0);
    assert!(run_analysis(&p, &c).is_err());
    c.num_steps = 1;
    c.newton_tol = -1.0;
    assert!(run_analysis(&p, &c).is_err());
}
