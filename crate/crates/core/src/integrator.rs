//! Time evolution of the three systems under spectral (Galerkin) truncation.
//!
//! The unknowns are the density `n` and the momentum `m = n v`, where `v` is
//! the physical velocity (`eq2`, `eql`) or the effective velocity (`eqw`).
//! Each step is the two-stage, second-order IMEX Runge-Kutta scheme
//! ARS(2,2,2). The implicit part is the linearisation about the mean density
//! (continuity diffusion, viscosity, pressure and quantum dispersion, the
//! `delta` damping), solved exactly mode by mode; the explicit part is the
//! dealiased remainder.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::fields::{self, enforce_positivity, ensure_positive, PhysParams, PositivityMode, SimState, VelocityKind};
use crate::functionals::{self, DiagnosticsRecord, NormExponents};
use crate::grid::{make_grid, Grid, ScalarField, VectorField};
use crate::par::Execution;
use crate::physics;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// `eps > 0`, physical velocity.
    #[default]
    Eq2,
    /// Effective velocity with quantum coefficient `eps0 = eps^2 - nu^2`.
    Eqw,
    /// The `eps = 0` limit system.
    Eql,
}

impl Formulation {
    pub fn velocity_kind(self) -> VelocityKind {
        match self {
            Formulation::Eqw => VelocityKind::Effective,
            _ => VelocityKind::Physical,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Eq2 => "eq2",
            Formulation::Eqw => "eqw",
            Formulation::Eql => "eql",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub length: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<Grid>> {
        make_grid(self.dim, self.points, self.length)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Fixed { dt: f64 },
    /// `dt = min(cfl dx / (max|v| + c_s), quantum_cap dx^2 / eps_eff)`.
    Adaptive { cfl: f64, quantum_cap: f64 },
}

impl Default for TimeStep {
    fn default() -> Self {
        TimeStep::Adaptive {
            cfl: 0.5,
            quantum_cap: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub physics: PhysParams,
    pub initial: fields::InitialProfile,
    pub formulation: Formulation,
    pub final_time: f64,
    pub time_step: TimeStep,
    /// Galerkin mode cap; `None` keeps every resolved mode.
    pub galerkin_modes: Option<usize>,
    /// Snapshot every `cadence` steps (the final state is always kept).
    pub cadence: usize,
    pub positivity: PositivityMode,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        self.physics.validate()?;
        if !(self.final_time >= 0.0 && self.final_time.is_finite()) {
            return Err(QnsError::param("run.T", format!("must be >= 0, got {}", self.final_time)));
        }
        match self.time_step {
            TimeStep::Fixed { dt } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(QnsError::param("run.dt", format!("must be > 0, got {dt}")));
                }
            }
            TimeStep::Adaptive { cfl, quantum_cap } => {
                if !(cfl > 0.0 && cfl <= 1.0) {
                    return Err(QnsError::param("run.cfl", format!("must be in (0, 1], got {cfl}")));
                }
                if !(quantum_cap > 0.0 && quantum_cap <= 1.0) {
                    return Err(QnsError::param(
                        "run.quantum_cap",
                        format!("must be in (0, 1], got {quantum_cap}"),
                    ));
                }
            }
        }
        if let Some(cap) = self.galerkin_modes {
            let max = self.grid.points / 2;
            if cap == 0 || cap > max {
                return Err(QnsError::ModeCapOutOfRange { requested: cap, max });
            }
        }
        if self.cadence == 0 {
            return Err(QnsError::param("run.cadence", "must be >= 1"));
        }
        Ok(())
    }

    /// Parameters actually used by the run: the limit system has `eps = 0`.
    pub fn effective_params(&self) -> PhysParams {
        match self.formulation {
            Formulation::Eql => self.physics.with_eps(0.0),
            _ => self.physics,
        }
    }

    /// Effective-velocity runs with `eps < nu` have a negative quantum coefficient.
    pub fn construction_regime(&self) -> bool {
        self.formulation == Formulation::Eqw && self.physics.eps < self.physics.nu
    }

    pub fn initial_state(&self) -> Result<SimState> {
        let grid = self.grid.build()?;
        let params = self.effective_params();
        let data = self.initial.build(&grid, self.seed, params.n_floor)?;
        let s = data.into_state()?;
        match self.formulation {
            Formulation::Eqw => s.to_effective(&params),
            _ => Ok(s),
        }
    }
}

/// Time derivatives of density and momentum.
#[derive(Clone, Debug)]
pub struct Tendencies {
    pub dn: ScalarField,
    pub dm: VectorField,
}

fn require_kind(state: &SimState, kind: VelocityKind) -> Result<()> {
    if state.kind != kind {
        return Err(QnsError::param(
            "formulation",
            format!("state carries {:?} velocity, expected {:?}", state.kind, kind),
        ));
    }
    Ok(())
}

/// Row divergence of `a (x) b`: `out_i = sum_j d_j (a_i b_j)`.
fn div_outer(a: &VectorField, b: &VectorField) -> VectorField {
    let d = a.dim();
    let comps = (0..d)
        .map(|i| {
            let ai = a.component(i);
            let flux = (0..d).map(|j| &ai * &b.component(j)).collect();
            VectorField::from_components(flux)
                .expect("components share a grid")
                .divergence()
        })
        .collect();
    VectorField::from_components(comps).expect("components share a grid")
}

/// Unfiltered right-hand side for density `n` and momentum `m`.
fn raw_rhs(n: &ScalarField, m: &VectorField, form: Formulation, params: &PhysParams) -> Result<Tendencies> {
    let floor = params.n_floor;
    let v = m.div_scalar(&n.map(|x| x.max(floor)));
    let press = physics::total_pressure(n, params)?;
    let mut dm = &div_outer(m, &v).scale(-1.0) - &press.gradient();
    let dn;
    match form {
        Formulation::Eq2 | Formulation::Eql => {
            dn = m.divergence().scale(-1.0);
            if form == Formulation::Eq2 && params.eps != 0.0 {
                dm = &dm + &physics::bohm_force_with_coefficient(n, params.eps * params.eps)?;
            }
            let visc = functionals::strain_rate(&v).scale_by(n).divergence();
            dm = &dm + &visc.scale(2.0 * params.nu);
        }
        Formulation::Eqw => {
            dn = &m.divergence().scale(-1.0) + &n.laplacian().scale(params.nu);
            let e0 = params.eps0();
            if e0 != 0.0 {
                dm = &dm + &physics::bohm_force_with_coefficient(n, e0)?;
            }
            dm = &dm + &m.laplacian().scale(params.nu);
            if params.delta != 0.0 {
                dm = &dm + &delta_regularization_force(&v, params);
            }
        }
    }
    Ok(Tendencies { dn, dm })
}

fn dealiased(t: Tendencies) -> Tendencies {
    Tendencies {
        dn: t.dn.dealias(),
        dm: t.dm.dealias(),
    }
}

/// Continuity and momentum tendencies of the quantum system in physical variables.
pub fn rhs_eq2(state: &SimState, params: &PhysParams) -> Result<Tendencies> {
    require_kind(state, VelocityKind::Physical)?;
    ensure_positive(&state.n, state.time)?;
    raw_rhs(&state.n, &state.momentum(), Formulation::Eq2, params).map(dealiased)
}

/// Tendencies of the effective-velocity system (density diffusion, `nu lap(n w)`,
/// signed quantum coefficient `eps0`, optional `delta` damping).
pub fn rhs_eqw(state: &SimState, params: &PhysParams) -> Result<Tendencies> {
    require_kind(state, VelocityKind::Effective)?;
    ensure_positive(&state.n, state.time)?;
    raw_rhs(&state.n, &state.momentum(), Formulation::Eqw, params).map(dealiased)
}

/// Tendencies of the `eps = 0` limit system.
pub fn rhs_eql(state: &SimState, params: &PhysParams) -> Result<Tendencies> {
    require_kind(state, VelocityKind::Physical)?;
    ensure_positive(&state.n, state.time)?;
    raw_rhs(&state.n, &state.momentum(), Formulation::Eql, params).map(dealiased)
}

/// `delta (lap w - w)`.
pub fn delta_regularization_force(w: &VectorField, params: &PhysParams) -> VectorField {
    if params.delta == 0.0 {
        return VectorField::zeros(w.grid());
    }
    let lap = w.laplacian();
    lap.zip_components(w, |a, b| params.delta * (a - b))
}

fn check_cap(grid: &Grid, cap: usize) -> Result<()> {
    let max = grid.points() / 2;
    if cap == 0 || cap > max {
        return Err(QnsError::ModeCapOutOfRange { requested: cap, max });
    }
    Ok(())
}

/// Zero every Fourier coefficient whose largest mode index exceeds `cap`.
pub fn galerkin_project(f: &VectorField, cap: usize) -> Result<VectorField> {
    check_cap(f.grid(), cap)?;
    Ok(f.truncate_modes(cap))
}

pub fn galerkin_project_scalar(f: &ScalarField, cap: usize) -> Result<ScalarField> {
    check_cap(f.grid(), cap)?;
    Ok(f.truncate_modes(cap))
}

/// Linearisation about the uniform state at the mean density.
struct LinearOp {
    nu_n: f64,
    lam_l: f64,
    lam_t: f64,
    c2: f64,
    q: f64,
    damping: f64,
}

impl LinearOp {
    fn new(form: Formulation, params: &PhysParams, mean_n: f64) -> Self {
        let nu = params.nu;
        let c2 = physics::sound_speed_squared(mean_n, params);
        match form {
            Formulation::Eq2 | Formulation::Eql => LinearOp {
                nu_n: 0.0,
                lam_l: 2.0 * nu,
                lam_t: nu,
                c2,
                q: if form == Formulation::Eq2 {
                    params.eps * params.eps
                } else {
                    0.0
                },
                damping: 0.0,
            },
            Formulation::Eqw => LinearOp {
                nu_n: nu,
                lam_l: nu,
                lam_t: nu,
                c2,
                q: params.eps0(),
                damping: params.delta / mean_n,
            },
        }
    }

    /// Per-mode map on `(n, m)` spectral coefficients. `a = None` applies the
    /// operator; `a = Some(h)` solves `(I - h L) x = rhs`.
    fn per_mode(&self, k: [f64; 3], dim: usize, n: Complex64, m: &mut [Complex64], a: Option<f64>) -> Complex64 {
        let k2: f64 = k[..dim].iter().map(|x| x * x).sum();
        let damp = self.damping * (k2 + 1.0);
        let i = Complex64::new(0.0, 1.0);
        if k2 == 0.0 {
            let rate = -damp;
            for c in m.iter_mut() {
                *c = match a {
                    None => *c * rate,
                    Some(h) => *c / (1.0 - h * rate),
                };
            }
            return match a {
                None => Complex64::new(0.0, 0.0),
                Some(_) => n,
            };
        }
        let kn = k2.sqrt();
        let mut ml = Complex64::new(0.0, 0.0);
        for (c, kk) in m.iter().zip(&k[..dim]) {
            ml += c * (kk / kn);
        }
        let lam_l = self.lam_l * k2 + damp;
        let lam_t = self.lam_t * k2 + damp;
        let disp = self.c2 + self.q * k2;
        let (n_out, ml_out, t_factor) = match a {
            None => {
                let dn = -i * kn * ml - self.nu_n * k2 * n;
                let dl = -i * kn * disp * n - lam_l * ml;
                (dn, dl, -lam_t)
            }
            Some(h) => {
                let dd = 1.0 + h * self.nu_n * k2;
                let ll = 1.0 + h * lam_l;
                let det = dd * ll + h * h * k2 * disp;
                let nn = (ll * n - h * i * kn * ml) / det;
                let mm = (dd * ml - h * i * kn * disp * n) / det;
                (nn, mm, 1.0 / (1.0 + h * lam_t))
            }
        };
        for (c, kk) in m.iter_mut().zip(&k[..dim]) {
            let transverse = *c - ml * (kk / kn);
            *c = transverse * t_factor + ml_out * (kk / kn);
        }
        n_out
    }

    fn map(&self, grid: &Arc<Grid>, n: &ScalarField, m: &VectorField, a: Option<f64>) -> (ScalarField, VectorField) {
        let dim = grid.dim();
        let mut nh = grid.forward(n.values());
        let mut mh: Vec<Vec<Complex64>> = (0..dim).map(|ax| grid.forward(m.raw(ax))).collect();
        let mut buf = vec![Complex64::new(0.0, 0.0); dim];
        for flat in 0..nh.len() {
            let k = grid.derivative_symbol(flat);
            for ax in 0..dim {
                buf[ax] = mh[ax][flat];
            }
            nh[flat] = self.per_mode(k, dim, nh[flat], &mut buf, a);
            for ax in 0..dim {
                mh[ax][flat] = buf[ax];
            }
        }
        let n_out = ScalarField::from_vec(grid, grid.inverse(nh)).expect("grid sizes agree");
        let comps = mh
            .into_iter()
            .map(|c| ScalarField::from_vec(grid, grid.inverse(c)).expect("grid sizes agree"))
            .collect();
        (n_out, VectorField::from_components(comps).expect("grid sizes agree"))
    }
}

const ARS_GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: SimState,
    /// Nodes clamped to the floor in clamp mode.
    pub clamped: usize,
}

fn max_sound_speed(n: &ScalarField, params: &PhysParams) -> f64 {
    n.values()
        .iter()
        .map(|&v| physics::sound_speed_squared(v, params))
        .fold(0.0, f64::max)
        .sqrt()
}

fn quantum_scale(form: Formulation, params: &PhysParams) -> f64 {
    match form {
        Formulation::Eq2 => params.eps,
        Formulation::Eqw => params.eps0().abs().sqrt(),
        Formulation::Eql => 0.0,
    }
}

/// Largest step allowed by the adaptive rule at this state.
pub fn adaptive_dt(state: &SimState, params: &PhysParams, form: Formulation, cfl: f64, quantum_cap: f64) -> f64 {
    let dx = state.grid().spacing();
    let speed = state.vel.max_abs() + max_sound_speed(&state.n, params);
    let mut dt = if speed > 0.0 { cfl * dx / speed } else { f64::INFINITY };
    let e = quantum_scale(form, params);
    if e > 0.0 {
        dt = dt.min(quantum_cap * dx * dx / e);
    }
    dt
}

fn check_step_size(state: &SimState, params: &PhysParams, form: Formulation, dt: f64) -> Result<()> {
    let dx = state.grid().spacing();
    let speed = state.vel.max_abs() + max_sound_speed(&state.n, params);
    let courant = dt * speed / dx;
    if courant > 1.0 {
        return Err(QnsError::StepRejected {
            time: state.time,
            reason: format!("Courant number {courant:.3} exceeds 1 (dt = {dt:e})"),
        });
    }
    let e = quantum_scale(form, params);
    let qn = dt * e / (dx * dx);
    if qn > 1.0 {
        return Err(QnsError::StepRejected {
            time: state.time,
            reason: format!("quantum step number {qn:.3} exceeds 1 (dt = {dt:e})"),
        });
    }
    Ok(())
}

struct Stepper<'a> {
    grid: Arc<Grid>,
    form: Formulation,
    params: &'a PhysParams,
    cap: Option<usize>,
    op: LinearOp,
}

impl Stepper<'_> {
    fn project(&self, m: VectorField) -> VectorField {
        match self.cap {
            Some(c) if c < self.grid.points() / 2 => m.truncate_modes(c),
            _ => m,
        }
    }

    /// `N(U) = filter(R(U) - L U)`, momentum part projected.
    fn explicit(&self, n: &ScalarField, m: &VectorField) -> Result<(ScalarField, VectorField)> {
        let r = raw_rhs(n, m, self.form, self.params)?;
        let (ln, lm) = self.op.map(&self.grid, n, m, None);
        let dn = (&r.dn - &ln).dealias();
        let dm = self.project((&r.dm - &lm).dealias());
        Ok((dn, dm))
    }

    fn solve(&self, h: f64, n: &ScalarField, m: &VectorField, time: f64) -> Result<(ScalarField, VectorField)> {
        let (n, m) = self.op.map(&self.grid, n, m, Some(h));
        let m = self.project(m);
        ensure_positive(&n, time)?;
        Ok((n, m))
    }
}

/// Advance one step of size `dt`.
pub fn step(state: &SimState, params: &PhysParams, config: &RunConfig, dt: f64) -> Result<StepOutcome> {
    let form = config.formulation;
    require_kind(state, form.velocity_kind())?;
    ensure_positive(&state.n, state.time)?;
    check_step_size(state, params, form, dt)?;
    let grid = state.grid().clone();
    let stepper = Stepper {
        op: LinearOp::new(form, params, state.n.mean()),
        grid,
        form,
        params,
        cap: config.galerkin_modes,
    };
    let t = state.time;
    let g = ARS_GAMMA;
    let d = 1.0 - 1.0 / (2.0 * g);
    let n0 = &state.n;
    let m0 = state.momentum();

    let (k1n, k1m) = stepper.explicit(n0, &m0)?;
    let r2n = n0.zip_map(&k1n, |a, b| a + dt * g * b);
    let r2m = m0.zip_components(&k1m, |a, b| a + dt * g * b);
    let (n2, m2) = stepper.solve(dt * g, &r2n, &r2m, t + g * dt)?;

    let (k2n, k2m) = stepper.explicit(&n2, &m2)?;
    let (l2n, l2m) = stepper.op.map(&stepper.grid, &n2, &m2, None);
    let w1 = dt * d;
    let w2 = dt * (1.0 - d);
    let wl = dt * (1.0 - g);
    let mut r3n = n0.clone();
    for (i, v) in r3n.values_mut().iter_mut().enumerate() {
        *v += w1 * k1n.values()[i] + w2 * k2n.values()[i] + wl * l2n.values()[i];
    }
    let mut r3m = m0.clone();
    for ax in 0..r3m.dim() {
        let (a, b, c) = (k1m.raw(ax).to_vec(), k2m.raw(ax).to_vec(), l2m.raw(ax).to_vec());
        for (i, v) in r3m.raw_mut(ax).iter_mut().enumerate() {
            *v += w1 * a[i] + w2 * b[i] + wl * c[i];
        }
    }
    let (n3, m3) = stepper.solve(dt * g, &r3n, &r3m, t + dt)?;
    let time = t + dt;
    if !n3.is_finite() || !m3.is_finite() {
        return Err(QnsError::NonFinite {
            time,
            what: "state after step".into(),
        });
    }
    let vel = m3.div_scalar(&n3.map(|x| x.max(params.n_floor)));
    let next = SimState::new(n3, vel, state.kind, time)?;
    let (state, clamped) = enforce_positivity(&next, config.positivity, params.n_floor)?;
    Ok(StepOutcome { state, clamped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Clamp { time: f64, nodes: usize },
    StepRejected { time: f64, reason: String },
    Failure { time: f64, message: String },
}

#[derive(Debug)]
pub struct Trajectory {
    pub config: RunConfig,
    /// Parameters the run actually used.
    pub params: PhysParams,
    pub snapshots: Vec<SimState>,
    pub records: Vec<DiagnosticsRecord>,
    pub events: Vec<Event>,
    pub steps: usize,
    /// Set when the run stopped before the final time.
    pub failure: Option<QnsError>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> Result<Trajectory> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn final_state(&self) -> &SimState {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn construction_regime(&self) -> bool {
        self.config.construction_regime()
    }

    pub fn clamp_count(&self) -> usize {
        self.events
            .iter()
            .map(|e| match e {
                Event::Clamp { nodes, .. } => *nodes,
                _ => 0,
            })
            .sum()
    }
}

const MAX_HALVINGS: usize = 12;

/// Run to the final time, recording snapshots at the configured cadence and
/// diagnostics for every snapshot. Runtime failures end the run early and
/// are kept in [`Trajectory::failure`]; configuration errors are returned.
pub fn simulate(config: &RunConfig) -> Result<Trajectory> {
    config.validate()?;
    let params = config.effective_params();
    let initial = config.initial_state()?;
    let t_end = config.final_time;
    let mut snapshots = vec![initial.clone()];
    let mut events = Vec::new();
    let mut failure = None;
    let mut state = initial;
    let mut steps = 0usize;
    let tol = 1e-12 * t_end.max(1.0);
    while state.time < t_end - tol {
        let remaining = t_end - state.time;
        let mut dt = match config.time_step {
            TimeStep::Fixed { dt } => dt,
            TimeStep::Adaptive { cfl, quantum_cap } => {
                adaptive_dt(&state, &params, config.formulation, cfl, quantum_cap)
            }
        };
        // Avoid a sliver of a final step.
        if dt >= remaining - tol {
            dt = remaining;
        }
        let mut attempt = 0;
        let outcome = loop {
            match step(&state, &params, config, dt) {
                Err(QnsError::StepRejected { time, reason })
                    if matches!(config.time_step, TimeStep::Adaptive { .. }) && attempt < MAX_HALVINGS =>
                {
                    events.push(Event::StepRejected { time, reason });
                    dt *= 0.5;
                    attempt += 1;
                }
                other => break other,
            }
        };
        match outcome {
            Ok(out) => {
                if out.clamped > 0 {
                    events.push(Event::Clamp {
                        time: out.state.time,
                        nodes: out.clamped,
                    });
                }
                state = out.state;
                steps += 1;
                let last = state.time >= t_end - tol;
                if last {
                    state.time = t_end;
                }
                if steps.is_multiple_of(config.cadence) || last {
                    snapshots.push(state.clone());
                }
            }
            Err(e) => {
                events.push(Event::Failure {
                    time: state.time,
                    message: e.to_string(),
                });
                if snapshots.last().map(|s| s.time) != Some(state.time) {
                    snapshots.push(state.clone());
                }
                failure = Some(e);
                break;
            }
        }
    }
    let exps = NormExponents::from_k(params.cold_k);
    let records = functionals::dashboard_series(&snapshots, &params, &exps, config.execution)?;
    Ok(Trajectory {
        config: config.clone(),
        params,
        snapshots,
        records,
        events,
        steps,
        failure,
    })
}
