//! Studies built on top of the simulator: the semiclassical sweep, Galerkin
//! and damping refinement, identity batteries and discrete balance audits.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::fields::{PhysParams, SimState};
use crate::functionals::{
    self, bd_dissipation, bd_entropy, bochner_dashboard, quantum_weak_integral, trajectory_distance, BdForm,
    DistanceMetric, NormExponents, TestFunction, WeakSystem, EPS_WEIGHTED, NORM_COUNT, NORM_NAMES,
};
use crate::grid::{make_grid, Grid, ScalarField, VectorField};
use crate::integrator::{adaptive_dt, simulate, Formulation, RunConfig, TimeStep, Trajectory};
use crate::par::{self, Execution};
use crate::physics;

fn run_member(label: String, config: &RunConfig) -> Result<Trajectory> {
    let traj = simulate(config).map_err(|e| QnsError::MemberRunFailed {
        label: label.clone(),
        reason: e.to_string(),
    })?;
    traj.into_result().map_err(|e| QnsError::MemberRunFailed {
        label,
        reason: e.to_string(),
    })
}

fn run_all(exec: Execution, jobs: &[(String, RunConfig)]) -> Result<Vec<Trajectory>> {
    par::map(exec, jobs, |(label, cfg)| run_member(label.clone(), cfg))
        .into_iter()
        .collect()
}

/// Replace an adaptive step by a fixed step safe for every member config,
/// so all members share snapshot times.
fn common_fixed_step(configs: &[RunConfig]) -> Result<TimeStep> {
    let mut dt = f64::INFINITY;
    for c in configs {
        match c.time_step {
            TimeStep::Fixed { dt: d } => dt = dt.min(d),
            TimeStep::Adaptive { cfl, quantum_cap } => {
                let s = c.initial_state()?;
                // Half the initial estimate leaves room for growth of max|v|.
                let d = 0.5 * adaptive_dt(&s, &c.effective_params(), c.formulation, cfl, quantum_cap);
                dt = dt.min(d);
            }
        }
    }
    if !dt.is_finite() {
        dt = configs.first().map(|c| c.final_time.max(1e-3) / 100.0).unwrap_or(1e-3);
    }
    Ok(TimeStep::Fixed { dt })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepMember {
    pub eps: f64,
    /// `|| n^eps - n^0 ||_{L^2(0,T; L^inf)}`
    pub density_l2_linf: f64,
    /// `|| sqrt n^eps - sqrt n^0 ||_{L^2(0,T; H^1)}`
    pub sqrt_density_l2_h1: f64,
    /// `|| sqrt n^eps u^eps - sqrt n^0 u^0 ||_{L^2(0,T; L^2)}`
    pub sqrt_momentum_l2_l2: f64,
    /// Quantum weak integral without the `2 eps^2` prefactor.
    pub quantum_integral: f64,
    /// `Q(eps) = |2 eps^2 * quantum_integral|`.
    pub q_value: f64,
    pub in_fit: bool,
    /// Time (Bochner) norms of every dashboard entry.
    pub norms: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormUniformity {
    pub name: String,
    pub eps_weighted: bool,
    pub min: f64,
    pub max: f64,
    /// `max / min`; 1 when every value is zero.
    pub ratio: f64,
    /// True when the values do not increase as `eps` decreases.
    pub non_increasing_as_eps_decreases: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub nu: f64,
    pub dt: f64,
    pub eps_list: Vec<f64>,
    pub members: Vec<SweepMember>,
    pub baseline_norms: Vec<f64>,
    /// Least-squares slope of `log Q` against `log eps` over the fit points;
    /// absent with fewer than three usable points.
    pub slope: Option<f64>,
    pub fit_points: usize,
    pub norm_uniformity: Vec<NormUniformity>,
    /// Weak convergence claims are observed only through strong-norm proxies.
    pub weak_modes_observed_via_proxies: bool,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    /// Test function for `Q`; defaults to [`TestFunction::lowest_mode`].
    pub phi: Option<TestFunction>,
    /// Number of leading (largest) `eps` values left out of the fit.
    pub fit_skip: usize,
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            phi: None,
            fit_skip: 0,
            execution: Execution::Parallel,
        }
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Run the limit system once and the quantum system for every `eps`, then
/// compare each member with the limit solution.
pub fn epsilon_sweep(base: &RunConfig, eps_list: &[f64], options: &SweepOptions) -> Result<SweepReport> {
    if eps_list.is_empty() {
        return Err(QnsError::param("eps", "empty list"));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    for &e in &eps {
        if !(e > 0.0 && e.is_finite()) {
            return Err(QnsError::param("eps", format!("values must be > 0, got {e}")));
        }
    }
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite"));

    let mut baseline = base.clone();
    baseline.formulation = Formulation::Eql;
    let mut configs = vec![baseline];
    for &e in &eps {
        let mut c = base.clone();
        c.formulation = Formulation::Eq2;
        c.physics.eps = e;
        configs.push(c);
    }
    let step = common_fixed_step(&configs)?;
    for c in configs.iter_mut() {
        c.time_step = step;
        c.validate()?;
    }
    let jobs: Vec<(String, RunConfig)> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let label = if i == 0 {
                "eps=0 (limit)".to_string()
            } else {
                format!("eps={}", eps[i - 1])
            };
            (label, c.clone())
        })
        .collect();
    let exec = options.execution;
    let runs = run_all(exec, &jobs)?;
    let base_traj = &runs[0];
    let grid = base_traj.final_state().grid().clone();
    let phi = options
        .phi
        .clone()
        .unwrap_or_else(|| TestFunction::lowest_mode(&grid, base.final_time));
    let exps = NormExponents::from_k(base.physics.cold_k);
    let params = base_traj.params;

    let members: Vec<SweepMember> = par::map(exec, &runs[1..], |t| -> Result<SweepMember> {
        let e = t.params.eps;
        let w = quantum_weak_integral(&t.snapshots, &phi, Execution::Sequential)?;
        Ok(SweepMember {
            eps: e,
            density_l2_linf: trajectory_distance(&t.snapshots, &base_traj.snapshots, DistanceMetric::DensityL2Linf, &params)?,
            sqrt_density_l2_h1: trajectory_distance(
                &t.snapshots,
                &base_traj.snapshots,
                DistanceMetric::SqrtDensityL2H1,
                &params,
            )?,
            sqrt_momentum_l2_l2: trajectory_distance(
                &t.snapshots,
                &base_traj.snapshots,
                DistanceMetric::SqrtMomentumL2L2,
                &params,
            )?,
            quantum_integral: w,
            q_value: (2.0 * e * e * w).abs(),
            in_fit: false,
            norms: bochner_dashboard(&t.records, &exps).to_vec(),
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut members = members;

    let nu = base.physics.nu;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, m) in members.iter_mut().enumerate() {
        if i >= options.fit_skip && m.eps < nu && m.q_value > 0.0 {
            m.in_fit = true;
            xs.push(m.eps.ln());
            ys.push(m.q_value.ln());
        }
    }
    let slope = if xs.len() >= 3 { fit_slope(&xs, &ys) } else { None };

    let norm_uniformity = (0..NORM_COUNT)
        .map(|i| {
            let vals: Vec<f64> = members.iter().map(|m| m.norms[i]).collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(0.0, f64::max);
            let ratio = if max == 0.0 {
                1.0
            } else if min == 0.0 {
                f64::INFINITY
            } else {
                max / min
            };
            NormUniformity {
                name: NORM_NAMES[i].to_string(),
                eps_weighted: EPS_WEIGHTED.contains(&i),
                min,
                max,
                ratio,
                non_increasing_as_eps_decreases: vals.windows(2).all(|w| w[1] <= w[0]),
            }
        })
        .collect();

    let dt = match step {
        TimeStep::Fixed { dt } => dt,
        TimeStep::Adaptive { .. } => f64::NAN,
    };
    Ok(SweepReport {
        nu,
        dt,
        eps_list: eps,
        members,
        baseline_norms: bochner_dashboard(&base_traj.records, &exps).to_vec(),
        slope,
        fit_points: xs.len(),
        norm_uniformity,
        weak_modes_observed_via_proxies: true,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelGap {
    pub from: f64,
    pub to: f64,
    /// `|| n_a - n_b ||_{L^2 L^2}`
    pub density: f64,
    /// `|| sqrt n_a u_a - sqrt n_b u_b ||_{L^2 L^2}`
    pub momentum: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub parameter: String,
    pub levels: Vec<f64>,
    pub gaps: Vec<LevelGap>,
    /// Consecutive gaps strictly decrease.
    pub monotone: bool,
}

fn consecutive_gaps(parameter: &str, levels: Vec<f64>, runs: &[Trajectory], params: &PhysParams) -> Result<RefinementStudy> {
    let mut gaps = Vec::new();
    for i in 1..runs.len() {
        let a = &runs[i - 1].snapshots;
        let b = &runs[i].snapshots;
        let density = trajectory_distance(a, b, DistanceMetric::DensityL2L2, params)?;
        let momentum = trajectory_distance(a, b, DistanceMetric::SqrtMomentumL2L2, params)?;
        gaps.push(LevelGap {
            from: levels[i - 1],
            to: levels[i],
            density,
            momentum,
            total: density + momentum,
        });
    }
    let monotone = gaps.windows(2).all(|w| w[1].total < w[0].total);
    Ok(RefinementStudy {
        parameter: parameter.to_string(),
        levels,
        gaps,
        monotone,
    })
}

/// Runs with increasing Galerkin mode caps; gaps between consecutive caps.
pub fn galerkin_study(base: &RunConfig, caps: &[usize], exec: Execution) -> Result<RefinementStudy> {
    if caps.is_empty() {
        return Err(QnsError::param("galerkin", "empty list"));
    }
    if caps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QnsError::param("galerkin", "mode caps must be strictly increasing"));
    }
    let mut configs: Vec<RunConfig> = caps
        .iter()
        .map(|&n| {
            let mut c = base.clone();
            c.galerkin_modes = Some(n);
            c
        })
        .collect();
    let step = common_fixed_step(&configs)?;
    for c in configs.iter_mut() {
        c.time_step = step;
        c.validate()?;
    }
    let jobs: Vec<(String, RunConfig)> = caps
        .iter()
        .zip(configs)
        .map(|(n, c)| (format!("N={n}"), c))
        .collect();
    let runs = run_all(exec, &jobs)?;
    let params = runs[0].params;
    consecutive_gaps("galerkin_N", caps.iter().map(|&n| n as f64).collect(), &runs, &params)
}

/// Runs with decreasing damping `delta` in the effective-velocity system.
pub fn delta_study(base: &RunConfig, deltas: &[f64], exec: Execution) -> Result<RefinementStudy> {
    if deltas.is_empty() {
        return Err(QnsError::param("delta", "empty list"));
    }
    if base.formulation != Formulation::Eqw {
        return Err(QnsError::param(
            "run.formulation",
            "the delta study needs the effective-velocity system (eqw)",
        ));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|&d| d < 0.0) {
        return Err(QnsError::param("delta", "values must be >= 0 and strictly decreasing"));
    }
    let mut configs: Vec<RunConfig> = deltas
        .iter()
        .map(|&d| {
            let mut c = base.clone();
            c.physics.delta = d;
            c
        })
        .collect();
    let step = common_fixed_step(&configs)?;
    for c in configs.iter_mut() {
        c.time_step = step;
        c.validate()?;
    }
    let jobs: Vec<(String, RunConfig)> = deltas
        .iter()
        .zip(configs)
        .map(|(d, c)| (format!("delta={d}"), c))
        .collect();
    let runs = run_all(exec, &jobs)?;
    let params = runs[0].params;
    consecutive_gaps("delta", deltas.to_vec(), &runs, &params)
}

/// A smooth positive periodic density on the unit interval.
#[derive(Clone, Copy, Debug)]
pub struct SmoothProfile {
    pub name: &'static str,
    pub f: fn(f64) -> f64,
}

impl SmoothProfile {
    pub fn sample(&self, grid: &Arc<Grid>) -> ScalarField {
        let l = grid.length();
        let f = self.f;
        ScalarField::from_fn(grid, |x| {
            let d = x.len() as f64;
            x.iter().map(|&xa| f(xa / l)).sum::<f64>() / d
        })
    }
}

fn tau() -> f64 {
    2.0 * PI
}

/// Five smooth densities with values in `[0.5, 4]`. Each has complex
/// singularities close enough to the real axis that spectral truncation is
/// still visible at 64 points.
pub fn smooth_profile_library() -> Vec<SmoothProfile> {
    vec![
        SmoothProfile {
            name: "shifted_cosine",
            f: |x| 2.2 + 1.6 * (tau() * x).cos(),
        },
        SmoothProfile {
            name: "poisson_kernel",
            f: |x| 1.0 / (1.0 - 0.75 * (tau() * x).cos()),
        },
        SmoothProfile {
            name: "double_frequency",
            f: |x| 2.2 + 1.6 * (2.0 * tau() * x).sin(),
        },
        SmoothProfile {
            name: "two_mode",
            f: |x| 2.1 + 0.9 * (tau() * x).cos() + 0.6 * (3.0 * tau() * x).sin(),
        },
        SmoothProfile {
            name: "shifted_pole",
            f: |x| 1.0 / (0.9 - 0.6 * (tau() * x + 0.3).cos()),
        },
    ]
}

/// Library profiles sampled on a one-dimensional unit grid.
pub fn library_samples(points: usize) -> Result<Vec<ScalarField>> {
    let g = make_grid(1, points, 1.0)?;
    Ok(smooth_profile_library().iter().map(|p| p.sample(&g)).collect())
}

/// Three test fields mixing parities. Each carries a mode-2 component so the
/// pairing with a half-period density does not vanish.
pub fn pairing_test_functions(grid: &Arc<Grid>) -> Vec<VectorField> {
    let l = grid.length();
    let t = move |x: f64| tau() * x / l;
    vec![
        VectorField::from_fn(grid, move |a, x| t(x[a]).sin() + 0.3 * (2.0 * t(x[a])).cos()),
        VectorField::from_fn(grid, move |a, x| (2.0 * t(x[a])).cos() + 0.5 * (2.0 * t(x[a])).sin()),
        VectorField::from_fn(grid, move |a, x| (3.0 * t(x[a]) + 0.7).sin() + 0.4 * (2.0 * t(x[a]) + 0.2).cos()),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityRow {
    pub bohm: f64,
    pub pairing: f64,
    pub bd_energy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_bohm: f64,
    pub max_pairing: f64,
    pub max_bd_energy: f64,
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Residuals of the Bohm identity, the weak/strong quantum pairing (worst of
/// the three pairing test fields) and the BD-minus-energy decomposition, per
/// density sample.
pub fn identity_battery(samples: &[ScalarField], exec: Execution) -> Result<IdentityReport> {
    let params = PhysParams::default().with_eps(0.1).with_nu(0.3);
    let rows = par::map(exec, samples, |n| -> Result<IdentityRow> {
        let g = n.grid();
        let bohm = physics::check_bohm_identity(n)?;
        let mut pairing: f64 = 0.0;
        for phi in pairing_test_functions(g) {
            let weak = physics::quantum_weak_form(n, &phi)?;
            let strong = physics::quantum_strong_pairing(n, &phi)?;
            pairing = pairing.max(relative((weak - strong).abs(), strong.abs()));
        }
        let l = g.length();
        let u = VectorField::from_fn(g, |a, x| 0.5 * (tau() * x[a] / l).sin() + 0.2 * (2.0 * tau() * x[a] / l).cos());
        let s = SimState::physical(n.clone(), u)?;
        let mut bd: f64 = 0.0;
        for form in [BdForm::AsStated, BdForm::Balanced] {
            let lhs = bd_entropy(&s, &params, form)? - functionals::energy(&s, &params)?;
            let rhs = functionals::bd_minus_energy_terms(&s, &params, form)?;
            bd = bd.max(relative((lhs - rhs).abs(), lhs.abs().max(1.0)));
        }
        Ok(IdentityRow {
            bohm,
            pairing,
            bd_energy: bd,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&IdentityRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(IdentityReport {
        max_bohm: max(|r| r.bohm),
        max_pairing: max(|r| r.pairing),
        max_bd_energy: max(|r| r.bd_energy),
        rows,
    })
}

/// Bohm identity residual of one profile at each resolution.
pub fn identity_refinement(profile: &SmoothProfile, resolutions: &[usize]) -> Result<Vec<(usize, f64)>> {
    resolutions
        .iter()
        .map(|&m| {
            let g = make_grid(1, m, 1.0)?;
            Ok((m, physics::check_bohm_identity(&profile.sample(&g))?))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceAudit {
    pub times: Vec<f64>,
    /// Candidate coefficients `[nu, 2 nu]`.
    pub kappa_candidates: [f64; 2],
    /// Residual series `dE/dt + kappa int n|D(u)|^2` per candidate.
    pub energy_residuals: [Vec<f64>; 2],
    pub max_energy_residual: [f64; 2],
    /// Candidate with the smaller maximum residual.
    pub kappa: f64,
    pub bd_residuals_balanced: Vec<f64>,
    pub bd_residuals_as_stated: Vec<f64>,
    pub max_bd_balanced: f64,
    pub max_bd_as_stated: f64,
    /// Largest single-interval increase of the energy, relative to `E(0)`.
    pub max_energy_increase: f64,
    pub max_dissipation: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn finite_difference_residuals(times: &[f64], values: &[f64], rates: &[f64]) -> Vec<f64> {
    (1..times.len())
        .map(|i| (values[i] - values[i - 1]) / (times[i] - times[i - 1]) + 0.5 * (rates[i] + rates[i - 1]))
        .collect()
}

/// Discrete energy and BD balances along a trajectory.
pub fn balance_audit(trajectory: &Trajectory, exec: Execution) -> Result<BalanceAudit> {
    let recs = &trajectory.records;
    if recs.len() < 3 {
        return Err(QnsError::SparseTrajectory(format!(
            "{} snapshots; at least 3 are needed",
            recs.len()
        )));
    }
    let params = trajectory.params;
    let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let energy: Vec<f64> = recs.iter().map(|r| r.energy).collect();
    let diss: Vec<f64> = recs.iter().map(|r| r.energy_dissipation).collect();
    let kappas = [params.nu, 2.0 * params.nu];
    let energy_residuals = kappas.map(|k| {
        let rates: Vec<f64> = diss.iter().map(|d| k * d).collect();
        finite_difference_residuals(&times, &energy, &rates)
    });
    let max_energy_residual = [max_abs(&energy_residuals[0]), max_abs(&energy_residuals[1])];
    let kappa = if max_energy_residual[1] <= max_energy_residual[0] {
        kappas[1]
    } else {
        kappas[0]
    };

    let bd_bal: Vec<f64> = recs.iter().map(|r| r.bd_entropy).collect();
    let bd_bal_d: Vec<f64> = recs.iter().map(|r| r.bd_dissipation).collect();
    let as_stated = par::map(exec, &trajectory.snapshots, |s| -> Result<(f64, f64)> {
        Ok((
            bd_entropy(s, &params, BdForm::AsStated)?,
            bd_dissipation(s, &params, BdForm::AsStated)?,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let bd_as: Vec<f64> = as_stated.iter().map(|p| p.0).collect();
    let bd_as_d: Vec<f64> = as_stated.iter().map(|p| p.1).collect();
    let bd_residuals_balanced = finite_difference_residuals(&times, &bd_bal, &bd_bal_d);
    let bd_residuals_as_stated = finite_difference_residuals(&times, &bd_as, &bd_as_d);

    let e0 = energy[0].abs().max(f64::MIN_POSITIVE);
    let max_energy_increase = energy.windows(2).map(|w| (w[1] - w[0]) / e0).fold(f64::NEG_INFINITY, f64::max);
    Ok(BalanceAudit {
        max_bd_balanced: max_abs(&bd_residuals_balanced),
        max_bd_as_stated: max_abs(&bd_residuals_as_stated),
        times,
        kappa_candidates: kappas,
        energy_residuals,
        max_energy_residual,
        kappa,
        bd_residuals_balanced,
        bd_residuals_as_stated,
        max_energy_increase,
        max_dissipation: diss.iter().fold(0.0, |m, d| m.max(kappa * d)),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceLevel {
    pub dt: f64,
    pub audit: BalanceAudit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceRefinement {
    pub levels: Vec<BalanceLevel>,
    /// Coefficient identified at the finest level.
    pub kappa: f64,
    /// Maximum energy residual with `kappa` per level.
    pub energy_residuals: Vec<f64>,
    /// Maximum residual of the other candidate per level.
    pub other_residuals: Vec<f64>,
    pub bd_residuals: Vec<f64>,
    pub bd_residuals_as_stated: Vec<f64>,
    /// `log2` of consecutive residual ratios for the identified coefficient.
    pub energy_rates: Vec<f64>,
}

/// Audit the same run at several fixed step sizes (every step recorded).
pub fn balance_refinement(base: &RunConfig, dts: &[f64], exec: Execution) -> Result<BalanceRefinement> {
    if dts.len() < 2 {
        return Err(QnsError::param("dt", "need at least two step sizes"));
    }
    let jobs: Vec<(String, RunConfig)> = dts
        .iter()
        .map(|&dt| {
            let mut c = base.clone();
            c.time_step = TimeStep::Fixed { dt };
            c.cadence = 1;
            (format!("dt={dt}"), c)
        })
        .collect();
    let runs = run_all(exec, &jobs)?;
    let levels = runs
        .iter()
        .zip(dts)
        .map(|(t, &dt)| Ok(BalanceLevel { dt, audit: balance_audit(t, exec)? }))
        .collect::<Result<Vec<_>>>()?;
    let finest = &levels.last().expect("non-empty").audit;
    let idx = if finest.kappa == finest.kappa_candidates[1] { 1 } else { 0 };
    let energy_residuals: Vec<f64> = levels.iter().map(|l| l.audit.max_energy_residual[idx]).collect();
    let other_residuals: Vec<f64> = levels.iter().map(|l| l.audit.max_energy_residual[1 - idx]).collect();
    let energy_rates = energy_residuals.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(BalanceRefinement {
        kappa: finest.kappa,
        bd_residuals: levels.iter().map(|l| l.audit.max_bd_balanced).collect(),
        bd_residuals_as_stated: levels.iter().map(|l| l.audit.max_bd_as_stated).collect(),
        energy_residuals,
        other_residuals,
        energy_rates,
        levels,
    })
}

/// Weak residual of the same run at several `(points, dt)` levels.
pub fn weak_residual_refinement(
    base: &RunConfig,
    levels: &[(usize, f64)],
    system: WeakSystem,
    exec: Execution,
) -> Result<Vec<f64>> {
    let jobs: Vec<(String, RunConfig)> = levels
        .iter()
        .map(|&(m, dt)| {
            let mut c = base.clone();
            c.grid.points = m;
            c.time_step = TimeStep::Fixed { dt };
            c.cadence = 1;
            (format!("M={m},dt={dt}"), c)
        })
        .collect();
    let runs = run_all(exec, &jobs)?;
    runs.iter()
        .map(|t| {
            let phi = TestFunction::lowest_mode(t.final_state().grid(), base.final_time);
            functionals::weak_residual(t, &phi, system, Execution::Sequential)
        })
        .collect()
}

/// Distance between the physical and effective-velocity runs of the same
/// data, per step size.
pub fn formulation_consistency(base: &RunConfig, dts: &[f64], exec: Execution) -> Result<Vec<f64>> {
    let mut jobs = Vec::new();
    for &dt in dts {
        for form in [Formulation::Eq2, Formulation::Eqw] {
            let mut c = base.clone();
            c.formulation = form;
            c.time_step = TimeStep::Fixed { dt };
            c.physics.delta = 0.0;
            jobs.push((format!("{}:dt={dt}", form.name()), c));
        }
    }
    let runs = run_all(exec, &jobs)?;
    runs.chunks(2)
        .map(|pair| {
            let params = pair[0].params;
            let a = trajectory_distance(&pair[0].snapshots, &pair[1].snapshots, DistanceMetric::DensityL2L2, &params)?;
            let b = trajectory_distance(
                &pair[0].snapshots,
                &pair[1].snapshots,
                DistanceMetric::SqrtMomentumL2L2,
                &params,
            )?;
            Ok(a + b)
        })
        .collect()
}
