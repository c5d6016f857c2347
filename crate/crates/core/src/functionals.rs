//! Energy, BD entropy, dissipation integrals, the norm dashboard, time
//! (Bochner) norms, trajectory distances and the weak-form residual.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::fields::{ensure_positive, PhysParams, SimState};
use crate::grid::{Grid, ScalarField, TensorField, VectorField};
use crate::integrator::Trajectory;
use crate::par::{self, Execution};
use crate::physics::{self, ColdPressureLaw};

fn physical(state: &SimState, params: &PhysParams) -> Result<SimState> {
    ensure_positive(&state.n, state.time)?;
    state.to_physical(params)
}

/// `E = int n|u|^2/2 + H(n) + H_c(n) + 2 eps^2 |grad sqrt n|^2`.
pub fn energy(state: &SimState, params: &PhysParams) -> Result<f64> {
    energy_with_law(state, params, &ColdPressureLaw::from_params(params))
}

/// Energy with an explicit cold-pressure law (used to vary the `H_c` normalisation).
pub fn energy_with_law(state: &SimState, params: &PhysParams, law: &ColdPressureLaw) -> Result<f64> {
    let s = physical(state, params)?;
    let n = &s.n;
    let kinetic = s.vel.norm_squared().zip_map(n, |u2, n| 0.5 * n * u2);
    let internal = n.map(|v| physics::enthalpy_scalar(v, params.gamma) + law.h(v));
    let grad_r = n.map(f64::sqrt).gradient().norm_squared();
    let quantum = 2.0 * params.eps * params.eps * grad_r.integrate();
    Ok(kinetic.integrate() + internal.integrate() + quantum)
}

/// `int n |D(u)|^2` with the weighted candidates `nu * int` and `2 nu * int`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDissipation {
    pub integral: f64,
    pub kappa_nu: f64,
    pub kappa_two_nu: f64,
}

pub fn strain_rate(u: &VectorField) -> TensorField {
    u.gradient().symmetric_part()
}

pub fn energy_dissipation(state: &SimState, params: &PhysParams) -> Result<EnergyDissipation> {
    let s = physical(state, params)?;
    let d2 = strain_rate(&s.vel).frobenius_squared();
    let integral = (&d2 * &s.n).integrate();
    Ok(EnergyDissipation {
        integral,
        kappa_nu: params.nu * integral,
        kappa_two_nu: 2.0 * params.nu * integral,
    })
}

/// Coefficient set for the BD entropy and its dissipation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdForm {
    /// `(2 eps^2 + 4 nu^2) |grad sqrt n|^2` and `2 n |grad u|^2`, as usually quoted.
    AsStated,
    /// `(2 eps^2 + 2 nu^2) |grad sqrt n|^2` and `n |grad u|^2`; these close the
    /// balance exactly for smooth solutions.
    #[default]
    Balanced,
}

impl BdForm {
    pub fn gradient_coefficient(self, params: &PhysParams) -> f64 {
        let nu2 = params.nu * params.nu;
        let eps2 = params.eps * params.eps;
        match self {
            BdForm::AsStated => 2.0 * eps2 + 4.0 * nu2,
            BdForm::Balanced => 2.0 * eps2 + 2.0 * nu2,
        }
    }

    pub fn velocity_gradient_weight(self) -> f64 {
        match self {
            BdForm::AsStated => 2.0,
            BdForm::Balanced => 1.0,
        }
    }
}

/// `B = int n/2 |u + nu grad log n|^2 + H + H_c + c_B |grad sqrt n|^2`.
pub fn bd_entropy(state: &SimState, params: &PhysParams, form: BdForm) -> Result<f64> {
    let s = physical(state, params)?;
    let n = &s.n;
    let law = ColdPressureLaw::from_params(params);
    let w = crate::fields::to_effective_velocity(&s.vel, n, params)?;
    let kinetic = w.norm_squared().zip_map(n, |w2, n| 0.5 * n * w2);
    let internal = n.map(|v| physics::enthalpy_scalar(v, params.gamma) + law.h(v));
    let grad_r = n.map(f64::sqrt).gradient().norm_squared();
    Ok(kinetic.integrate() + internal.integrate() + form.gradient_coefficient(params) * grad_r.integrate())
}

/// `D_B = nu int (H'' + H_c'') |grad n|^2 + eps^2 n |hess log n|^2 + c_u n |grad u|^2`.
pub fn bd_dissipation(state: &SimState, params: &PhysParams, form: BdForm) -> Result<f64> {
    let s = physical(state, params)?;
    let n = &s.n;
    let law = ColdPressureLaw::from_params(params);
    let grad_n2 = n.gradient().norm_squared();
    let h2 = n.map(|v| physics::enthalpy_second_derivative_scalar(v, params.gamma) + law.d2h(v));
    let pressure_part = (&h2 * &grad_n2).integrate();
    let hess = n.map(f64::ln).hessian().frobenius_squared();
    let quantum_part = params.eps * params.eps * (&hess * n).integrate();
    let grad_u = s.vel.gradient().frobenius_squared();
    let viscous_part = form.velocity_gradient_weight() * (&grad_u * n).integrate();
    Ok(params.nu * (pressure_part + quantum_part + viscous_part))
}

/// Right-hand side of the algebraic identity
/// `B - E = int n/2 (|u + nu grad log n|^2 - |u|^2) + (c_B - 2 eps^2) int |grad sqrt n|^2`,
/// assembled term by term.
pub fn bd_minus_energy_terms(state: &SimState, params: &PhysParams, form: BdForm) -> Result<f64> {
    let s = physical(state, params)?;
    let n = &s.n;
    let w = crate::fields::to_effective_velocity(&s.vel, n, params)?;
    let diff = w.norm_squared().zip_map(&s.vel.norm_squared(), |a, b| a - b);
    let kinetic = (&diff * n).integrate() * 0.5;
    let grad_r = n.map(f64::sqrt).gradient().norm_squared().integrate();
    let extra = form.gradient_coefficient(params) - 2.0 * params.eps * params.eps;
    Ok(kinetic + extra * grad_r)
}

/// Bohm potential `-2 eps^2 lap(sqrt n)/sqrt n`, the variation of the quantum energy.
pub fn quantum_potential(n: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    Ok(physics::bohm_quotient(n)?.scale(-2.0 * params.eps * params.eps))
}

/// First variation of `E` with respect to `n` at zero momentum:
/// `H'(n) + H_c'(n) - 2 eps^2 lap(sqrt n)/sqrt n`.
pub fn energy_first_variation(n: &ScalarField, params: &PhysParams) -> Result<ScalarField> {
    let law = ColdPressureLaw::from_params(params);
    let local = n.map(|v| physics::enthalpy_derivative_scalar(v, params.gamma) + law.dh(v));
    Ok(&local + &quantum_potential(n, params)?)
}

/// Smooth cutoff with `zeta(y) = y` on `y <= 1/2`, `zeta = 0` on `y >= 1` and,
/// with `s = 2 (y - 1/2)`, the quintic blend `0.5 (1-s)^3 (1 + 4 s + 9 s^2)` between.
/// The blend matches value, slope and curvature at both ends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec;

impl CutoffSpec {
    pub fn zeta(&self, y: f64) -> f64 {
        if y <= 0.5 {
            y
        } else if y >= 1.0 {
            0.0
        } else {
            let s = 2.0 * (y - 0.5);
            0.5 * (1.0 - s).powi(3) * (1.0 + 4.0 * s + 9.0 * s * s)
        }
    }

    pub fn zeta_prime(&self, y: f64) -> f64 {
        if y <= 0.5 {
            1.0
        } else if y >= 1.0 {
            0.0
        } else {
            let s = 2.0 * (y - 0.5);
            let f = (1.0 - s).powi(3);
            let g = 1.0 + 4.0 * s + 9.0 * s * s;
            // d/dy = 2 d/ds
            2.0 * 0.5 * (-3.0 * (1.0 - s).powi(2) * g + f * (4.0 + 18.0 * s))
        }
    }

    /// Monitored near-vacuum quantity `(zeta(n)/n) n^(-2k)`: equal to `n^(-2k)`
    /// where `n <= 1/2` and zero where `n >= 1`.
    pub fn vacuum_weight(&self, n: f64, k: f64) -> f64 {
        self.zeta(n) / n * n.powf(-2.0 * k)
    }
}

/// Exponents of the monitored norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormExponents {
    pub k: f64,
    /// `8k / (4k + 1)`
    pub p: f64,
    /// `24k / (12k + 1)`
    pub q: f64,
    /// Same value as `q`.
    pub q_star: f64,
    /// `3q / (3 - q)`, the three-dimensional Sobolev exponent of `W^{1,q}`.
    pub q_sobolev: f64,
    /// Small excess `s` of the `L^{2+s}` momentum-type norm.
    pub s: f64,
    pub p_prime: f64,
    pub q_prime: f64,
    /// `8k`, time integrability of `1/sqrt n`.
    pub inv_sqrt_time: f64,
    /// `24k`, space integrability of `1/sqrt n`.
    pub inv_sqrt_space: f64,
}

impl NormExponents {
    pub fn from_k(k: f64) -> Self {
        Self::with_excess(k, 0.25)
    }

    pub fn with_excess(k: f64, s: f64) -> Self {
        let p = 8.0 * k / (4.0 * k + 1.0);
        let q = 24.0 * k / (12.0 * k + 1.0);
        NormExponents {
            k,
            p,
            q,
            q_star: q,
            q_sobolev: 3.0 * q / (3.0 - q),
            s,
            p_prime: 2.0 + s,
            q_prime: 2.0 + s,
            inv_sqrt_time: 8.0 * k,
            inv_sqrt_space: 24.0 * k,
        }
    }
}

pub const NORM_COUNT: usize = 18;

/// Dashboard column names, in output order.
pub const NORM_NAMES: [&str; NORM_COUNT] = [
    "sqrt_n_u_L2",
    "n_gamma_L1",
    "sqrt_n_Du_L2",
    "sqrt_n_w_L2",
    "grad_sqrt_n_L2",
    "grad_n_half_gamma_L2",
    "sqrt_n_grad_u_L2",
    "eps_sqrt_n_hess_log_n_L2",
    "eps_hess_sqrt_n_L2",
    "n_gamma_L5_3",
    "p_c_L5_3",
    "inv_sqrt_n_L24k",
    "grad_inv_sqrt_n_L2",
    "vacuum_cutoff_L6",
    "grad_u_Lq",
    "u_Lqstar",
    "u_Lsobolev",
    "sqrt_n_u_L2ps",
];

/// Norms carrying an explicit `eps` factor; all others are expected to stay
/// bounded uniformly in `eps`.
pub const EPS_WEIGHTED: [usize; 2] = [7, 8];

/// Time exponent used for the Bochner norm of each dashboard entry.
pub fn time_exponents(exps: &NormExponents) -> [f64; NORM_COUNT] {
    let inf = f64::INFINITY;
    [
        inf,
        inf,
        2.0,
        inf,
        inf,
        2.0,
        2.0,
        2.0,
        2.0,
        5.0 / 3.0,
        5.0 / 3.0,
        exps.inv_sqrt_time,
        2.0,
        2.0,
        exps.p,
        exps.p,
        exps.p,
        exps.p_prime,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    /// Raw `int n |D(u)|^2`, without a viscosity prefactor.
    pub energy_dissipation: f64,
    pub energy_residual: f64,
    pub bd_entropy: f64,
    pub bd_dissipation: f64,
    pub bd_residual: f64,
    pub min_n: f64,
    pub max_n: f64,
    pub norms: [f64; NORM_COUNT],
}

impl DiagnosticsRecord {
    pub fn norm(&self, name: &str) -> Option<f64> {
        NORM_NAMES.iter().position(|&n| n == name).map(|i| self.norms[i])
    }
}

fn frob_l_p(t: &TensorField, p: f64) -> f64 {
    t.frobenius_squared().map(f64::sqrt).lp_norm(p)
}

/// Evaluate every monitored quantity at one state. Residual columns are left
/// at zero; they need neighbouring records (see [`fill_residuals`]).
pub fn norm_dashboard(
    state: &SimState,
    params: &PhysParams,
    exps: &NormExponents,
    cutoff: &CutoffSpec,
) -> Result<DiagnosticsRecord> {
    let s = physical(state, params)?;
    let n = &s.n;
    let u = &s.vel;
    let law = ColdPressureLaw::from_params(params);
    let g = params.gamma;
    let r = n.map(f64::sqrt);
    let grad_r = r.gradient();
    let grad_u = u.gradient();
    let sqrt_n_u = u.mul_scalar(&r);
    let w = crate::fields::to_effective_velocity(u, n, params)?;
    let log_hess = n.map(f64::ln).hessian();
    let hess_r = r.hessian();

    let mut norms = [0.0; NORM_COUNT];
    norms[0] = sqrt_n_u.lp_norm(2.0);
    norms[1] = n.map(|v| v.powf(g)).lp_norm(1.0);
    norms[2] = strain_rate(u).scale_by(&r).frobenius_squared().integrate().sqrt();
    norms[3] = w.mul_scalar(&r).lp_norm(2.0);
    norms[4] = grad_r.lp_norm(2.0);
    norms[5] = n.map(|v| v.powf(0.5 * g)).gradient().lp_norm(2.0);
    norms[6] = grad_u.scale_by(&r).frobenius_squared().integrate().sqrt();
    norms[7] = params.eps * log_hess.scale_by(&r).frobenius_squared().integrate().sqrt();
    norms[8] = params.eps * hess_r.frobenius_squared().integrate().sqrt();
    norms[9] = n.map(|v| v.powf(g)).lp_norm(5.0 / 3.0);
    norms[10] = n.map(|v| law.p(v)).lp_norm(5.0 / 3.0);
    norms[11] = r.map(|v| 1.0 / v).lp_norm(exps.inv_sqrt_space);
    norms[12] = r.map(|v| 1.0 / v).gradient().lp_norm(2.0);
    norms[13] = n.map(|v| cutoff.vacuum_weight(v, exps.k)).lp_norm(6.0);
    norms[14] = frob_l_p(&grad_u, exps.q);
    norms[15] = u.lp_norm(exps.q_star);
    norms[16] = u.lp_norm(exps.q_sobolev);
    norms[17] = sqrt_n_u.lp_norm(2.0 + exps.s);

    Ok(DiagnosticsRecord {
        t: state.time,
        mass: n.integrate(),
        energy: energy(&s, params)?,
        energy_dissipation: energy_dissipation(&s, params)?.integral,
        energy_residual: 0.0,
        bd_entropy: bd_entropy(&s, params, BdForm::Balanced)?,
        bd_dissipation: bd_dissipation(&s, params, BdForm::Balanced)?,
        bd_residual: 0.0,
        min_n: n.min(),
        max_n: n.max(),
        norms,
    })
}

/// Diagnostics for many snapshots, evaluated independently.
pub fn dashboard_series(
    states: &[SimState],
    params: &PhysParams,
    exps: &NormExponents,
    exec: Execution,
) -> Result<Vec<DiagnosticsRecord>> {
    let cutoff = CutoffSpec;
    let mut records = par::map(exec, states, |s| norm_dashboard(s, params, exps, &cutoff))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    fill_residuals(&mut records, 2.0 * params.nu);
    Ok(records)
}

/// Discrete balance residuals between consecutive records:
/// `(E_i - E_{i-1}) / dt + kappa * mean(D)` and `(B_i - B_{i-1}) / dt + mean(D_B)`.
/// The first row keeps zero.
pub fn fill_residuals(records: &mut [DiagnosticsRecord], kappa: f64) {
    for i in 1..records.len() {
        let (a, b) = (&records[i - 1], &records[i]);
        let dt = b.t - a.t;
        if dt <= 0.0 {
            continue;
        }
        let er = (b.energy - a.energy) / dt + kappa * 0.5 * (a.energy_dissipation + b.energy_dissipation);
        let br = (b.bd_entropy - a.bd_entropy) / dt + 0.5 * (a.bd_dissipation + b.bd_dissipation);
        records[i].energy_residual = er;
        records[i].bd_residual = br;
    }
}

/// Trapezoid weights for the sample times.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { times[i] - times[i - 1] } else { 0.0 };
            let right = if i + 1 < n { times[i + 1] - times[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Discrete `L^p(0, T)` norm of sampled spatial norms: `(sum w_i v_i^p)^(1/p)`,
/// or the maximum for `p = inf`. A single sample returns its value.
pub fn bochner_norm(times: &[f64], values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if p.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    if values.len() == 1 {
        return values[0].abs();
    }
    let w = trapezoid_weights(times);
    w.iter()
        .zip(values)
        .map(|(w, v)| w * v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Trapezoid integral of a sampled scalar.
pub fn time_integral(times: &[f64], values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    trapezoid_weights(times).iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Bochner norms of every dashboard entry over a record series.
pub fn bochner_dashboard(records: &[DiagnosticsRecord], exps: &NormExponents) -> [f64; NORM_COUNT] {
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let te = time_exponents(exps);
    let mut out = [0.0; NORM_COUNT];
    for (i, o) in out.iter_mut().enumerate() {
        let v: Vec<f64> = records.iter().map(|r| r.norms[i]).collect();
        *o = bochner_norm(&times, &v, te[i]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `|| n_a - n_b ||_{L^2(0,T; L^inf)}`
    DensityL2Linf,
    /// `|| n_a - n_b ||_{L^2(0,T; L^2)}`
    DensityL2L2,
    /// `|| sqrt n_a - sqrt n_b ||_{L^2(0,T; H^1)}`
    SqrtDensityL2H1,
    /// `|| sqrt n_a u_a - sqrt n_b u_b ||_{L^2(0,T; L^2)}` in physical velocity.
    SqrtMomentumL2L2,
}

fn check_aligned(a: &[SimState], b: &[SimState]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(QnsError::IncompatibleTrajectories(format!(
            "{} vs {} snapshots",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b) {
        if (x.time - y.time).abs() > 1e-9 * (1.0 + x.time.abs()) {
            return Err(QnsError::IncompatibleTrajectories(format!(
                "snapshot times {} and {} differ",
                x.time, y.time
            )));
        }
        x.n.check_same_grid(&y.n)?;
    }
    Ok(())
}

fn spatial_distance(a: &SimState, b: &SimState, metric: DistanceMetric, params: &PhysParams) -> Result<f64> {
    Ok(match metric {
        DistanceMetric::DensityL2Linf => (&a.n - &b.n).max_abs(),
        DistanceMetric::DensityL2L2 => (&a.n - &b.n).l2_norm(),
        DistanceMetric::SqrtDensityL2H1 => {
            let d = &a.n.map(f64::sqrt) - &b.n.map(f64::sqrt);
            let l2 = d.l2_norm();
            let h = d.gradient().lp_norm(2.0);
            (l2 * l2 + h * h).sqrt()
        }
        DistanceMetric::SqrtMomentumL2L2 => {
            let pa = physical(a, params)?;
            let pb = physical(b, params)?;
            let ma = pa.vel.mul_scalar(&pa.n.map(f64::sqrt));
            let mb = pb.vel.mul_scalar(&pb.n.map(f64::sqrt));
            (&ma - &mb).lp_norm(2.0)
        }
    })
}

/// Distance between two trajectories sampled at the same times, composed as
/// an `L^2` norm in time of the spatial metric.
pub fn trajectory_distance(
    a: &[SimState],
    b: &[SimState],
    metric: DistanceMetric,
    params: &PhysParams,
) -> Result<f64> {
    check_aligned(a, b)?;
    let times: Vec<f64> = a.iter().map(|s| s.time).collect();
    let values = a
        .iter()
        .zip(b)
        .map(|(x, y)| spatial_distance(x, y, metric, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(bochner_norm(&times, &values, 2.0))
}

/// Space-time test function `phi(t, x) = (1 - t/T) psi(x)` for the momentum
/// equation and `(1 - t/T) theta(x)` for the continuity equation.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub spatial: VectorField,
    pub scalar: ScalarField,
    pub horizon: f64,
}

impl TestFunction {
    /// Lowest nontrivial mode with unit amplitude: `psi_a = sin(2 pi x_a / L)`,
    /// `theta = sum_a cos(2 pi x_a / L)`.
    pub fn lowest_mode(grid: &Arc<Grid>, horizon: f64) -> Self {
        let l = grid.length();
        TestFunction {
            spatial: VectorField::from_fn(grid, |a, x| (2.0 * PI * x[a] / l).sin()),
            scalar: ScalarField::from_fn(grid, |x| x.iter().map(|&xa| (2.0 * PI * xa / l).cos()).sum()),
            horizon,
        }
    }

    pub fn zero(grid: &Arc<Grid>, horizon: f64) -> Self {
        TestFunction {
            spatial: VectorField::zeros(grid),
            scalar: ScalarField::zeros(grid),
            horizon,
        }
    }

    pub fn profile(&self, t: f64) -> f64 {
        1.0 - t / self.horizon
    }

    pub fn profile_rate(&self) -> f64 {
        -1.0 / self.horizon
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakSystem {
    /// The `eps > 0` system with the quantum term in weak form.
    EpsSystem,
    /// The `eps = 0` limit system.
    LimitSystem,
}

/// Per-snapshot spatial integrals entering the weak form.
struct WeakIntegrands {
    momentum_dt: f64,
    momentum_rest: f64,
    continuity_dt: f64,
    continuity_rest: f64,
}

fn weak_integrands(
    s: &SimState,
    params: &PhysParams,
    phi: &TestFunction,
    quantum: f64,
) -> Result<WeakIntegrands> {
    let s = physical(s, params)?;
    let n = &s.n;
    let u = &s.vel;
    let psi = &phi.spatial;
    let m = u.mul_scalar(n);
    let grad_psi = psi.gradient();
    let div_psi = psi.divergence();
    let d = n.grid().dim();

    let momentum_dt = m.dot(psi).integrate();
    let mut convective = 0.0;
    for i in 0..d {
        for j in 0..d {
            let t = &(&m.component(i) * &u.component(j)) * grad_psi.get(i, j);
            convective += t.integrate();
        }
    }
    let pressure = (&physics::total_pressure(n, params)? * &div_psi).integrate();
    let q = if quantum != 0.0 {
        2.0 * quantum * physics::quantum_weak_form(n, psi)?
    } else {
        0.0
    };
    let viscous = 2.0 * params.nu * strain_rate(u).scale_by(n).contract(&grad_psi).integrate();
    let continuity_dt = (n * &phi.scalar).integrate();
    let continuity_rest = m.dot(&phi.scalar.gradient()).integrate();
    Ok(WeakIntegrands {
        momentum_dt,
        momentum_rest: convective + pressure + q - viscous,
        continuity_dt,
        continuity_rest,
    })
}

/// `|momentum residual| + |continuity residual|` of the weak formulation,
/// with time integrals by the trapezoid rule over the stored snapshots.
///
/// Momentum: `int n0 u0 . phi(0) + int int (n u . d_t phi + n u (x) u : grad phi)
/// + int int (p + p_c) div phi + 2 eps^2 int int (sqrt n grad sqrt n . grad div phi
/// + 2 grad sqrt n (x) grad sqrt n : grad phi) - 2 nu int int n D(u) : grad phi`.
pub fn weak_residual(
    trajectory: &Trajectory,
    phi: &TestFunction,
    system: WeakSystem,
    exec: Execution,
) -> Result<f64> {
    let snaps = &trajectory.snapshots;
    let params = &trajectory.params;
    let last = snaps
        .last()
        .ok_or_else(|| QnsError::SparseTrajectory("no snapshots".into()))?;
    let end_value = phi.profile(last.time);
    if end_value.abs() > 1e-9 {
        return Err(QnsError::TestFunctionNotVanishing {
            time: last.time,
            value: end_value.abs() * phi.spatial.max_abs().max(phi.scalar.max_abs()),
        });
    }
    let quantum = match system {
        WeakSystem::EpsSystem => params.eps * params.eps,
        WeakSystem::LimitSystem => 0.0,
    };
    let rows = par::map(exec, snaps, |s| weak_integrands(s, params, phi, quantum))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
    let rate = phi.profile_rate();
    let mom: Vec<f64> = rows
        .iter()
        .zip(&times)
        .map(|(r, &t)| rate * r.momentum_dt + phi.profile(t) * r.momentum_rest)
        .collect();
    let cont: Vec<f64> = rows
        .iter()
        .zip(&times)
        .map(|(r, &t)| rate * r.continuity_dt + phi.profile(t) * r.continuity_rest)
        .collect();
    let t0 = times[0];
    let momentum = phi.profile(t0) * rows[0].momentum_dt + time_integral(&times, &mom);
    let continuity = phi.profile(t0) * rows[0].continuity_dt + time_integral(&times, &cont);
    Ok(momentum.abs() + continuity.abs())
}

/// `int int (1 - t/T) [sqrt n grad sqrt n . grad div psi + 2 grad sqrt n (x) grad sqrt n : grad psi]`,
/// the quantum weak integral without its `2 eps^2` prefactor.
pub fn quantum_weak_integral(snapshots: &[SimState], phi: &TestFunction, exec: Execution) -> Result<f64> {
    let vals = par::map(exec, snapshots, |s| {
        physics::quantum_weak_form(&s.n, &phi.spatial).map(|v| phi.profile(s.time) * v)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    Ok(time_integral(&times, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::VelocityKind;
    use crate::grid::make_grid;

    fn grid() -> Arc<Grid> {
        make_grid(1, 64, 1.0).unwrap()
    }

    fn state(g: &Arc<Grid>, n: impl Fn(f64) -> f64, u: impl Fn(f64) -> f64) -> SimState {
        SimState::physical(
            ScalarField::from_fn(g, |x| n(x[0])),
            VectorField::from_fn(g, |_, x| u(x[0])),
        )
        .unwrap()
    }

    fn params(eps: f64, nu: f64) -> PhysParams {
        PhysParams::default().with_eps(eps).with_nu(nu)
    }

    /// Composite Simpson on [0, 1] with many panels.
    fn simpson(f: impl Fn(f64) -> f64) -> f64 {
        let m = 20000;
        let h = 1.0 / m as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn energy_constants() {
        let g = grid();
        let p = params(0.1, 0.1);
        let s = state(&g, |_| 1.0, |_| 0.0);
        assert!((energy(&s, &p).unwrap() - 1.0).abs() < 1e-14);
        let s = state(&g, |_| 1.0, |_| 2.0);
        assert!((energy(&s, &p).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn energy_against_quadrature() {
        let g = grid();
        let p = params(0.1, 0.1);
        let w = 2.0 * PI;
        let s = state(&g, |x| 2.0 + (w * x).cos(), |x| (w * x).sin());
        let law = ColdPressureLaw::from_params(&p);
        let oracle = simpson(|x| {
            let n = 2.0 + (w * x).cos();
            let dn = -w * (w * x).sin();
            let u = (w * x).sin();
            0.5 * n * u * u + n * n / (p.gamma - 1.0) + law.h(n) + 2.0 * 0.01 * dn * dn / (4.0 * n)
        });
        assert!((energy(&s, &p).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn dissipation_cases() {
        let g = grid();
        let p = params(0.1, 0.1);
        assert_eq!(energy_dissipation(&state(&g, |x| 1.0 + x * 0.0, |_| 0.0), &p).unwrap().integral, 0.0);
        assert!(energy_dissipation(&state(&g, |_| 1.5, |_| 0.7), &p).unwrap().integral.abs() < 1e-20);
        let d = energy_dissipation(&state(&g, |_| 1.0, |x| (2.0 * PI * x).sin()), &p).unwrap();
        assert!((d.integral - (2.0 * PI).powi(2) / 2.0).abs() < 1e-10);
        assert!((d.kappa_two_nu - 2.0 * d.kappa_nu).abs() < 1e-14);
    }

    #[test]
    fn bd_cases() {
        let g = grid();
        let p = params(0.1, 0.3);
        let s = state(&g, |_| 1.0, |_| 0.0);
        for form in [BdForm::AsStated, BdForm::Balanced] {
            assert!((bd_entropy(&s, &p, form).unwrap() - 1.0).abs() < 1e-14);
            assert_eq!(bd_dissipation(&s, &p, form).unwrap(), 0.0);
        }
        let w = 2.0 * PI;
        let s = state(&g, |x| 2.0 + (w * x).cos(), |_| 0.0);
        let law = ColdPressureLaw::from_params(&p);
        for form in [BdForm::AsStated, BdForm::Balanced] {
            let cb = form.gradient_coefficient(&p);
            let oracle = simpson(|x| {
                let n = 2.0 + (w * x).cos();
                let dn = -w * (w * x).sin();
                let wv = p.nu * dn / n;
                0.5 * n * wv * wv + n * n / (p.gamma - 1.0) + law.h(n) + cb * dn * dn / (4.0 * n)
            });
            assert!((bd_entropy(&s, &p, form).unwrap() - oracle).abs() < 1e-10);
        }
        let mut p0 = params(0.1, 0.3);
        p0.nu = 0.0;
        let s = state(&g, |x| 2.0 + (w * x).cos(), |x| (w * x).sin());
        let e = energy(&s, &p0).unwrap();
        let b = bd_entropy(&s, &p0, BdForm::AsStated).unwrap();
        assert!((e - b).abs() < 1e-13);
    }

    #[test]
    fn bd_minus_energy_identity() {
        let g = make_grid(2, 32, 1.0).unwrap();
        let p = params(0.07, 0.3);
        let n = ScalarField::from_fn(&g, |x| 2.0 + 0.5 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin());
        let u = VectorField::from_fn(&g, |a, x| (2.0 * PI * x[1 - a]).sin() * 0.4);
        let s = SimState::physical(n, u).unwrap();
        for form in [BdForm::AsStated, BdForm::Balanced] {
            let lhs = bd_entropy(&s, &p, form).unwrap() - energy(&s, &p).unwrap();
            let rhs = bd_minus_energy_terms(&s, &p, form).unwrap();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn effective_states_are_converted() {
        let g = grid();
        let p = params(0.1, 0.3);
        let s = state(&g, |x| 2.0 + (2.0 * PI * x).cos(), |x| (2.0 * PI * x).sin());
        let e = s.to_effective(&p).unwrap();
        assert_eq!(e.kind, VelocityKind::Effective);
        assert!((energy(&s, &p).unwrap() - energy(&e, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cutoff_properties() {
        let z = CutoffSpec;
        assert_eq!(z.zeta(0.25), 0.25);
        assert_eq!(z.zeta(2.0), 0.0);
        for &y in &[0.5, 1.0] {
            let h = 1e-7;
            assert!((z.zeta(y + h) - z.zeta(y - h)).abs() < 1e-6);
            assert!((z.zeta_prime(y + h) - z.zeta_prime(y - h)).abs() < 1e-5);
        }
        for i in 1..100 {
            let y = 0.5 + i as f64 * 0.005;
            let h = 1e-6;
            let fd = (z.zeta(y + h) - z.zeta(y - h)) / (2.0 * h);
            assert!((fd - z.zeta_prime(y)).abs() < 1e-6);
            assert!(z.zeta(y) >= 0.0);
        }
    }

    #[test]
    fn exponents() {
        let e = NormExponents::from_k(2.0);
        assert!((e.p - 16.0 / 9.0).abs() < 1e-15);
        assert!((e.q - 48.0 / 25.0).abs() < 1e-15);
        assert_eq!(e.inv_sqrt_time, 16.0);
        assert_eq!(e.inv_sqrt_space, 48.0);
        for k in [1.1, 2.0, 5.0] {
            let e = NormExponents::from_k(k);
            assert!(e.p > 1.0 && e.q > 1.0 && e.q_sobolev > 1.0 && e.p < 2.0 && 2.0 < e.inv_sqrt_time);
        }
    }

    #[test]
    fn dashboard_constant_state() {
        let g = grid();
        let p = params(0.1, 0.1);
        let r = norm_dashboard(&state(&g, |_| 1.0, |_| 0.0), &p, &NormExponents::from_k(2.0), &CutoffSpec).unwrap();
        for i in [2, 4, 5, 6, 7, 8, 12, 14] {
            assert_eq!(r.norms[i], 0.0, "{}", NORM_NAMES[i]);
        }
        assert!((r.norms[1] - 1.0).abs() < 1e-14);
        assert!((r.norms[11] - 1.0).abs() < 1e-13);
        assert!(r.norms.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn dashboard_negative_power_gradient() {
        let g = grid();
        let p = params(0.1, 0.1);
        let w = 2.0 * PI;
        let r = norm_dashboard(
            &state(&g, |x| (w * x).sin().exp(), |_| 0.0),
            &p,
            &NormExponents::from_k(2.0),
            &CutoffSpec,
        )
        .unwrap();
        let oracle = simpson(|x| {
            let n = (w * x).sin().exp();
            let dn = w * (w * x).cos() * n;
            (0.5 * dn.abs() * n.powf(-1.5)).powi(2)
        })
        .sqrt();
        assert!((r.norms[12] - oracle).abs() < 1e-8 * oracle);
    }

    #[test]
    fn dashboard_is_translation_invariant() {
        let g = grid();
        let p = params(0.1, 0.2);
        let exps = NormExponents::from_k(2.0);
        let w = 2.0 * PI;
        let n = |x: f64| 1.5 + 0.7 * (w * x).cos() + 0.2 * (2.0 * w * x).sin();
        let u = |x: f64| 0.3 * (w * x).sin() - 0.1 * (3.0 * w * x).cos();
        let a = norm_dashboard(&state(&g, n, u), &p, &exps, &CutoffSpec).unwrap();
        let shift = 5.0 / 64.0;
        let b = norm_dashboard(&state(&g, |x| n(x + shift), |x| u(x + shift)), &p, &exps, &CutoffSpec).unwrap();
        for i in 0..NORM_COUNT {
            assert!((a.norms[i] - b.norms[i]).abs() <= 1e-11 * (1.0 + a.norms[i]), "{}", NORM_NAMES[i]);
        }
    }

    #[test]
    fn bochner_composition() {
        let t = [0.0, 0.5, 1.0];
        assert_eq!(bochner_norm(&t, &[1.0, 3.0, 2.0], f64::INFINITY), 3.0);
        let v = bochner_norm(&t, &[2.0, 2.0, 2.0], 2.0);
        assert!((v - 2.0).abs() < 1e-15);
        assert_eq!(bochner_norm(&[0.0], &[4.0], 2.0), 4.0);
        assert!((time_integral(&t, &[0.0, 1.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_variation_matches_finite_differences() {
        let g = grid();
        let p = params(0.2, 0.1);
        let w = 2.0 * PI;
        let n = ScalarField::from_fn(&g, |x| 2.0 + 0.4 * (w * x[0]).cos());
        let dir = ScalarField::from_fn(&g, |x| (2.0 * w * x[0]).sin() + 0.3 * (w * x[0]).cos());
        let var = energy_first_variation(&n, &p).unwrap();
        let analytic = (&var * &dir).integrate();
        let h = 1e-5;
        let e = |s: f64| {
            let m = n.zip_map(&dir, |a, b| a + s * b);
            energy(&SimState::physical(m, VectorField::zeros(&g)).unwrap(), &p).unwrap()
        };
        let fd = (e(h) - e(-h)) / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-6 * analytic.abs());
    }
}
