//! Von Mises plasticity with mixed linear hardening.
//!
//! Six-component Voigt order is `(11, 22, 33, 12, 23, 13)`. Strains (total and
//! plastic) store engineering shears `2 e_ij`; stresses and backstresses store
//! tensor shear components. With this split `N^T de` is the tensor contraction
//! `N : de`, and `tensor_norm` below counts the shear entries twice.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SQRT_3_2: f64 = 1.224_744_871_391_589;
const SQRT_2_3: f64 = 0.816_496_580_927_726;

/// Indices of the in-plane components `(11, 22, 12)` within a 6-vector.
pub const PLANE: [usize; 3] = [0, 1, 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("invalid material: {0}")]
    Invalid(String),
    #[error("plastic corrector reached with zero relative stress")]
    ZeroRelativeStress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
    pub initial_yield: f64,
    #[serde(default)]
    pub iso_hardening: f64,
    #[serde(default)]
    pub kin_hardening: f64,
}

impl Material {
    pub fn new(
        youngs_modulus: f64,
        poissons_ratio: f64,
        initial_yield: f64,
        iso_hardening: f64,
        kin_hardening: f64,
    ) -> Result<Self, MaterialError> {
        let m = Material {
            youngs_modulus,
            poissons_ratio,
            initial_yield,
            iso_hardening,
            kin_hardening,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn perfectly_plastic(youngs_modulus: f64, poissons_ratio: f64, initial_yield: f64) -> Result<Self, MaterialError> {
        Self::new(youngs_modulus, poissons_ratio, initial_yield, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        let bad = |m: &str| Err(MaterialError::Invalid(m.to_string()));
        if !(self.youngs_modulus > 0.0) {
            return bad("Young's modulus must be positive");
        }
        if !(self.poissons_ratio > 0.0 && self.poissons_ratio < 0.5) {
            return bad("Poisson's ratio must lie in (0, 0.5)");
        }
        if !(self.initial_yield > 0.0) {
            return bad("initial yield stress must be positive");
        }
        if !(self.iso_hardening >= 0.0 && self.kin_hardening >= 0.0) {
            return bad("hardening moduli must be non-negative");
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poissons_ratio))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.youngs_modulus / (3.0 * (1.0 - 2.0 * self.poissons_ratio))
    }

    pub fn yield_stress(&self, eps_bar_p: f64) -> f64 {
        self.initial_yield + self.iso_hardening * eps_bar_p
    }

    /// `2G I_d + K m m^T`.
    pub fn elastic_tangent(&self) -> Matrix6<f64> {
        2.0 * self.shear_modulus() * deviatoric_projector() + self.bulk_modulus() * volumetric()
    }

    /// `2G I_d`.
    pub fn deviatoric_elastic_tangent(&self) -> Matrix6<f64> {
        2.0 * self.shear_modulus() * deviatoric_projector()
    }
}

/// `I_d` with the 1/2 shear weights that map engineering strain to tensor components.
pub fn deviatoric_projector() -> Matrix6<f64> {
    let mut id = Matrix6::zeros();
    for i in 0..3 {
        id[(i, i)] = 1.0;
    }
    for i in 3..6 {
        id[(i, i)] = 0.5;
    }
    id - volumetric() / 3.0
}

/// `m m^T` with `m = (1, 1, 1, 0, 0, 0)`.
fn volumetric() -> Matrix6<f64> {
    let mut mm = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            mm[(i, j)] = 1.0;
        }
    }
    mm
}

pub fn trace(v: &Vector6<f64>) -> f64 {
    v[0] + v[1] + v[2]
}

/// Deviatoric part of a stress-like vector with tensor shear components.
pub fn deviator(v: &Vector6<f64>) -> Vector6<f64> {
    let p = trace(v) / 3.0;
    let mut s = *v;
    for i in 0..3 {
        s[i] -= p;
    }
    s
}

/// Frobenius norm of a symmetric tensor stored with tensor shear components.
pub fn tensor_norm(v: &Vector6<f64>) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + 2.0 * (v[3] * v[3] + v[4] * v[4] + v[5] * v[5])).sqrt()
}

pub fn von_mises(sigma: &Vector6<f64>) -> f64 {
    SQRT_3_2 * tensor_norm(&deviator(sigma))
}

pub fn mean_stress(sigma: &Vector6<f64>) -> f64 {
    trace(sigma) / 3.0
}

/// Promotes `(e11, e22, 2 e12)` to a plane-strain 6-vector.
pub fn plane_strain(strain3: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(strain3[0], strain3[1], 0.0, strain3[2], 0.0, 0.0)
}

pub fn reduce_vector(v: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(v[PLANE[0]], v[PLANE[1]], v[PLANE[2]])
}

pub fn reduce_matrix(m: &Matrix6<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(PLANE[i], PLANE[j])])
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    /// Plastic strain, engineering shears.
    pub eps_p: Vector6<f64>,
    /// Backstress, tensor shears.
    pub beta: Vector6<f64>,
    /// Accumulated plastic strain.
    pub eps_bar_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReturn {
    pub sigma: Vector6<f64>,
    pub tangent6: Matrix6<f64>,
    pub tangent3: Matrix3<f64>,
    pub new_state: PlasticState,
    pub plastic: bool,
}

impl StressReturn {
    pub fn sigma3(&self) -> Vector3<f64> {
        reduce_vector(&self.sigma)
    }
}

/// `sqrt(3/2) |dev(sigma) - beta| - sigma_y(eps_bar_p)`.
pub fn yield_value(material: &Material, sigma: &Vector6<f64>, beta: &Vector6<f64>, eps_bar_p: f64) -> f64 {
    SQRT_3_2 * tensor_norm(&(deviator(sigma) - beta)) - material.yield_stress(eps_bar_p)
}

/// Implicit elastic predictor / radial return for plane strain.
///
/// Pure in `state_n`; the caller decides when to commit `new_state`.
pub fn return_map(material: &Material, state_n: &PlasticState, strain3: &Vector3<f64>) -> Result<StressReturn, MaterialError> {
    let g = material.shear_modulus();
    let k = material.bulk_modulus();
    let eps = plane_strain(strain3);
    let eps_e = eps - state_n.eps_p;
    let tr = trace(&eps_e);
    let id = deviatoric_projector();
    let s_trial = 2.0 * g * id * eps_e;
    let eta = s_trial - state_n.beta;
    let eta_norm = tensor_norm(&eta);
    let q_trial = SQRT_3_2 * eta_norm;
    let phi_trial = q_trial - material.yield_stress(state_n.eps_bar_p);
    let m = Vector6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);

    if phi_trial <= 0.0 {
        let tangent6 = material.elastic_tangent();
        return Ok(StressReturn {
            sigma: s_trial + k * tr * m,
            tangent3: reduce_matrix(&tangent6),
            tangent6,
            new_state: *state_n,
            plastic: false,
        });
    }
    if eta_norm == 0.0 {
        return Err(MaterialError::ZeroRelativeStress);
    }

    let hardening = 3.0 * g + material.kin_hardening + material.iso_hardening;
    let dgamma = phi_trial / hardening;
    let n = eta / eta_norm;
    // plastic strain is stored with engineering shears
    let mut flow = SQRT_3_2 * n;
    for i in 3..6 {
        flow[i] *= 2.0;
    }
    let new_state = PlasticState {
        eps_p: state_n.eps_p + dgamma * flow,
        beta: state_n.beta + dgamma * SQRT_2_3 * material.kin_hardening * n,
        eps_bar_p: state_n.eps_bar_p + dgamma,
    };
    let s = s_trial - 2.0 * g * dgamma * SQRT_3_2 * n;
    let tangent6 = 2.0 * g * (1.0 - dgamma * 3.0 * g / q_trial) * id
        + 6.0 * g * g * (dgamma / q_trial - 1.0 / hardening) * n * n.transpose()
        + k * volumetric();
    Ok(StressReturn {
        sigma: s + k * tr * m,
        tangent3: reduce_matrix(&tangent6),
        tangent6,
        new_state,
        plastic: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TangentCheck {
    /// Largest entrywise discrepancy relative to the largest tangent entry.
    Checked(f64),
    /// A perturbed evaluation switched between elastic and plastic branches.
    NonSmooth,
}

/// Central finite differences of the returned in-plane stress against `tangent3`.
pub fn consistent_tangent_check(
    material: &Material,
    state_n: &PlasticState,
    strain3: &Vector3<f64>,
    h: Option<f64>,
) -> Result<TangentCheck, MaterialError> {
    let h = h.unwrap_or(1e-6 * strain3.norm().max(1.0));
    let center = return_map(material, state_n, strain3)?;
    let mut fd = Matrix3::zeros();
    for j in 0..3 {
        let mut plus = *strain3;
        let mut minus = *strain3;
        plus[j] += h;
        minus[j] -= h;
        let rp = return_map(material, state_n, &plus)?;
        let rm = return_map(material, state_n, &minus)?;
        if rp.plastic != center.plastic || rm.plastic != center.plastic {
            return Ok(TangentCheck::NonSmooth);
        }
        fd.set_column(j, &((rp.sigma3() - rm.sigma3()) / (2.0 * h)));
    }
    let scale = center.tangent3.amax();
    Ok(TangentCheck::Checked((fd - center.tangent3).amax() / scale))
}
