//! Constitutive laws and the quantum (Bohm) operator.
//!
//! Pressure `p = n^gamma`. The cold pressure is fixed by its derivative,
//! `p_c'(n) = c n^(-4k-1)` for `n <= 1` and `n^(gamma-1)` above, with the
//! lower branch `p_c = -(c/4k) n^(-4k)` and the upper branch shifted so the
//! two meet at `n = 1`. Enthalpies solve `H'' = p'/n`, `H_c'' = p_c'/n`,
//! with `H_c(1) = H_c'(1) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::fields::{ensure_positive, PhysParams};
use crate::grid::{ScalarField, TensorField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdPressureLaw {
    pub c: f64,
    pub k: f64,
    pub gamma: f64,
    /// Affine term `slope * (n - 1) + offset` added to `H_c`. Zero by default;
    /// it never changes a dissipation balance because mass is conserved.
    pub h_slope: f64,
    pub h_offset: f64,
}

impl ColdPressureLaw {
    pub fn new(c: f64, k: f64, gamma: f64) -> Self {
        ColdPressureLaw {
            c,
            k,
            gamma,
            h_slope: 0.0,
            h_offset: 0.0,
        }
    }

    pub fn from_params(p: &PhysParams) -> Self {
        Self::new(p.cold_c, p.cold_k, p.gamma)
    }

    pub fn with_enthalpy_shift(mut self, slope: f64, offset: f64) -> Self {
        self.h_slope = slope;
        self.h_offset = offset;
        self
    }

    /// Additive constant of the upper branch, chosen for continuity at 1.
    pub fn upper_constant(&self) -> f64 {
        -self.c / (4.0 * self.k) - 1.0 / self.gamma
    }

    pub fn p(&self, n: f64) -> f64 {
        if n <= 1.0 {
            -(self.c / (4.0 * self.k)) * n.powf(-4.0 * self.k)
        } else {
            n.powf(self.gamma) / self.gamma + self.upper_constant()
        }
    }

    pub fn dp(&self, n: f64) -> f64 {
        if n <= 1.0 {
            self.c * n.powf(-4.0 * self.k - 1.0)
        } else {
            n.powf(self.gamma - 1.0)
        }
    }

    pub fn h(&self, n: f64) -> f64 {
        let (c, k, g) = (self.c, self.k, self.gamma);
        let base = if n <= 1.0 {
            c / (4.0 * k * (4.0 * k + 1.0)) * (n.powf(-4.0 * k) - 1.0) + c / (4.0 * k + 1.0) * (n - 1.0)
        } else {
            (n.powf(g) - 1.0) / (g * (g - 1.0)) - (n - 1.0) / (g - 1.0)
        };
        base + self.h_slope * (n - 1.0) + self.h_offset
    }

    pub fn dh(&self, n: f64) -> f64 {
        let (c, k, g) = (self.c, self.k, self.gamma);
        let base = if n <= 1.0 {
            c / (4.0 * k + 1.0) * (1.0 - n.powf(-4.0 * k - 1.0))
        } else {
            (n.powf(g - 1.0) - 1.0) / (g - 1.0)
        };
        base + self.h_slope
    }

    pub fn d2h(&self, n: f64) -> f64 {
        self.dp(n) / n
    }
}

pub fn pressure_scalar(n: f64, gamma: f64) -> f64 {
    n.powf(gamma)
}

pub fn pressure_derivative_scalar(n: f64, gamma: f64) -> f64 {
    gamma * n.powf(gamma - 1.0)
}

pub fn enthalpy_scalar(n: f64, gamma: f64) -> f64 {
    n.powf(gamma) / (gamma - 1.0)
}

pub fn enthalpy_derivative_scalar(n: f64, gamma: f64) -> f64 {
    gamma / (gamma - 1.0) * n.powf(gamma - 1.0)
}

pub fn enthalpy_second_derivative_scalar(n: f64, gamma: f64) -> f64 {
    gamma * n.powf(gamma - 2.0)
}

/// Squared sound speed `p'(n) + p_c'(n)`.
pub fn sound_speed_squared(n: f64, params: &PhysParams) -> f64 {
    pressure_derivative_scalar(n, params.gamma) + ColdPressureLaw::from_params(params).dp(n)
}

fn checked(n: &ScalarField) -> Result<()> {
    ensure_positive(n, f64::NAN)
}

pub fn pressure(n: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    checked(n)?;
    Ok(n.map(|v| pressure_scalar(v, params.gamma)))
}

pub fn cold_pressure(n: &ScalarField, law: &ColdPressureLaw) -> Result<ScalarField> {
    checked(n)?;
    Ok(n.map(|v| law.p(v)))
}

pub fn cold_pressure_derivative(n: &ScalarField, law: &ColdPressureLaw) -> Result<ScalarField> {
    checked(n)?;
    Ok(n.map(|v| law.dp(v)))
}

pub fn enthalpy(n: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    checked(n)?;
    Ok(n.map(|v| enthalpy_scalar(v, params.gamma)))
}

pub fn enthalpy_cold(n: &ScalarField, law: &ColdPressureLaw) -> Result<ScalarField> {
    checked(n)?;
    Ok(n.map(|v| law.h(v)))
}

/// Total pressure `p + p_c`.
pub fn total_pressure(n: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    checked(n)?;
    let law = ColdPressureLaw::from_params(params);
    Ok(n.map(|v| pressure_scalar(v, params.gamma) + law.p(v)))
}

/// Bohm potential kernel `lap(sqrt n) / sqrt n`.
pub fn bohm_quotient(n: &ScalarField) -> Result<ScalarField> {
    checked(n)?;
    let r = n.map(f64::sqrt);
    Ok(r.laplacian().zip_map(&r, |a, b| a / b))
}

/// `2 q n grad(lap(sqrt n)/sqrt n)` for a given coefficient `q`.
pub fn bohm_force_with_coefficient(n: &ScalarField, q: f64) -> Result<VectorField> {
    let quotient = bohm_quotient(n)?;
    Ok(quotient.gradient().mul_scalar(n).scale(2.0 * q))
}

/// `2 eps^2 n grad(lap(sqrt n)/sqrt n)`.
pub fn bohm_force_direct(n: &ScalarField, params: &PhysParams) -> Result<VectorField> {
    bohm_force_with_coefficient(n, params.eps * params.eps)
}

fn hessian_log(n: &ScalarField) -> Result<TensorField> {
    checked(n)?;
    Ok(n.map(f64::ln).hessian())
}

/// `eps^2 div(n hess(log n))`.
pub fn bohm_force_divergence_form(n: &ScalarField, params: &PhysParams) -> Result<VectorField> {
    let h = hessian_log(n)?;
    Ok(h.scale_by(n).divergence().scale(params.eps * params.eps))
}

/// `max|div(n hess log n) - 2 n grad(lap sqrt n / sqrt n)| / max|2 n grad(...)|`;
/// absolute when the reference vanishes.
pub fn check_bohm_identity(n: &ScalarField) -> Result<f64> {
    let unit = PhysParams::default().with_eps(1.0);
    let direct = bohm_force_direct(n, &unit)?;
    let div_form = bohm_force_divergence_form(n, &unit)?;
    let residual = (&div_form - &direct).max_abs();
    let reference = direct.max_abs();
    Ok(if reference > 0.0 { residual / reference } else { residual })
}

fn check_pair(n: &ScalarField, phi: &VectorField) -> Result<()> {
    if phi.check_grid(n).is_err() {
        return Err(QnsError::GridMismatch);
    }
    checked(n)
}

/// `int sqrt(n) grad sqrt(n) . grad div phi + 2 (grad sqrt n (x) grad sqrt n) : grad phi`.
pub fn quantum_weak_form(n: &ScalarField, phi: &VectorField) -> Result<f64> {
    check_pair(n, phi)?;
    let r = n.map(f64::sqrt);
    let gr = r.gradient();
    let grad_div = phi.divergence().gradient();
    let first = gr.mul_scalar(&r).dot(&grad_div).integrate();
    let gphi = phi.gradient();
    let d = n.grid().dim();
    let mut second = 0.0;
    for i in 0..d {
        for j in 0..d {
            // (grad phi)_{ij} = d_j phi_i
            let term = &(&gr.component(i) * &gr.component(j)) * gphi.get(i, j);
            second += term.integrate();
        }
    }
    Ok(first + 2.0 * second)
}

/// `int n grad(lap sqrt n / sqrt n) . phi`.
pub fn quantum_strong_pairing(n: &ScalarField, phi: &VectorField) -> Result<f64> {
    check_pair(n, phi)?;
    let q = bohm_quotient(n)?;
    Ok(q.gradient().mul_scalar(n).dot(phi).integrate())
}
