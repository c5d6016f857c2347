//! Simulation state, physical parameters, initial-data profiles and the
//! physical/effective velocity change of variables.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::grid::{Grid, ScalarField, VectorField};

fn default_cold_c() -> f64 {
    1.0
}
fn default_cold_k() -> f64 {
    2.0
}
fn default_n_floor() -> f64 {
    1e-6
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysParams {
    pub gamma: f64,
    pub nu: f64,
    pub eps: f64,
    #[serde(default = "default_cold_c")]
    pub cold_c: f64,
    #[serde(default = "default_cold_k")]
    pub cold_k: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_n_floor")]
    pub n_floor: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            gamma: 2.0,
            nu: 0.1,
            eps: 0.05,
            cold_c: 1.0,
            cold_k: 2.0,
            delta: 0.0,
            n_floor: 1e-6,
        }
    }
}

impl PhysParams {
    /// `eps0 = eps^2 - nu^2`, the quantum coefficient of the effective-velocity system.
    pub fn eps0(&self) -> f64 {
        self.eps * self.eps - self.nu * self.nu
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    /// Keys are reported as they appear in the config file.
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, bool, &str); 7] = [
            ("physics.gamma", self.gamma, self.gamma > 1.0, "must be > 1"),
            ("physics.nu", self.nu, self.nu > 0.0, "must be > 0"),
            ("physics.eps", self.eps, self.eps >= 0.0, "must be >= 0"),
            ("physics.cold_c", self.cold_c, self.cold_c > 0.0, "must be > 0"),
            ("physics.cold_k", self.cold_k, self.cold_k > 1.0, "must be > 1"),
            ("physics.delta", self.delta, self.delta >= 0.0, "must be >= 0"),
            ("physics.n_floor", self.n_floor, self.n_floor > 0.0, "must be > 0"),
        ];
        for (key, value, ok, why) in checks {
            if !value.is_finite() {
                return Err(QnsError::param(key, format!("got non-finite value {value}")));
            }
            if !ok {
                return Err(QnsError::param(key, format!("{why}, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKind {
    /// `vel` is the physical velocity `u`.
    Physical,
    /// `vel` is the effective velocity `w = u + nu grad log n`.
    Effective,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityMode {
    #[default]
    Strict,
    Clamp,
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub n: ScalarField,
    pub vel: VectorField,
    pub kind: VelocityKind,
    pub time: f64,
}

impl SimState {
    pub fn new(n: ScalarField, vel: VectorField, kind: VelocityKind, time: f64) -> Result<Self> {
        vel.check_grid(&n)?;
        Ok(SimState { n, vel, kind, time })
    }

    pub fn physical(n: ScalarField, u: VectorField) -> Result<Self> {
        Self::new(n, u, VelocityKind::Physical, 0.0)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.n.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.n.is_finite() && self.vel.is_finite()
    }

    /// Momentum `n * vel` in the state's own velocity variable.
    pub fn momentum(&self) -> VectorField {
        self.vel.mul_scalar(&self.n)
    }

    /// Same state expressed with the physical velocity.
    pub fn to_physical(&self, params: &PhysParams) -> Result<SimState> {
        match self.kind {
            VelocityKind::Physical => Ok(self.clone()),
            VelocityKind::Effective => Ok(SimState {
                n: self.n.clone(),
                vel: from_effective_velocity(&self.vel, &self.n, params)?,
                kind: VelocityKind::Physical,
                time: self.time,
            }),
        }
    }

    /// Same state expressed with the effective velocity.
    pub fn to_effective(&self, params: &PhysParams) -> Result<SimState> {
        match self.kind {
            VelocityKind::Effective => Ok(self.clone()),
            VelocityKind::Physical => Ok(SimState {
                n: self.n.clone(),
                vel: to_effective_velocity(&self.vel, &self.n, params)?,
                kind: VelocityKind::Effective,
                time: self.time,
            }),
        }
    }
}

/// Error unless every density value is strictly positive.
pub fn ensure_positive(n: &ScalarField, time: f64) -> Result<()> {
    let (index, min) = n.argmin();
    if min > 0.0 && min.is_finite() {
        return Ok(());
    }
    if !min.is_finite() {
        return Err(QnsError::NonFinite {
            time,
            what: "density".into(),
        });
    }
    Err(QnsError::Vacuum {
        time,
        index,
        coordinate: n.grid().coordinates(index),
        min,
    })
}

pub fn sqrt_density(state: &SimState) -> Result<ScalarField> {
    ensure_positive(&state.n, state.time)?;
    Ok(state.n.map(f64::sqrt))
}

fn grad_log(n: &ScalarField) -> Result<VectorField> {
    ensure_positive(n, f64::NAN)?;
    Ok(n.map(f64::ln).gradient())
}

/// `w = u + nu grad log n`.
pub fn to_effective_velocity(u: &VectorField, n: &ScalarField, params: &PhysParams) -> Result<VectorField> {
    u.check_grid(n)?;
    let g = grad_log(n)?;
    Ok(u.zip_components(&g, |a, b| a + params.nu * b))
}

/// `u = w - nu grad log n`.
pub fn from_effective_velocity(w: &VectorField, n: &ScalarField, params: &PhysParams) -> Result<VectorField> {
    w.check_grid(n)?;
    let g = grad_log(n)?;
    Ok(w.zip_components(&g, |a, b| a - params.nu * b))
}

/// Apply the positivity policy. Returns the (possibly clamped) state and
/// the number of clamped nodes.
pub fn enforce_positivity(state: &SimState, mode: PositivityMode, n_floor: f64) -> Result<(SimState, usize)> {
    let (index, min) = state.n.argmin();
    if !min.is_finite() {
        return Err(QnsError::NonFinite {
            time: state.time,
            what: "density".into(),
        });
    }
    if min >= n_floor {
        return Ok((state.clone(), 0));
    }
    match mode {
        PositivityMode::Strict => Err(QnsError::Vacuum {
            time: state.time,
            index,
            coordinate: state.grid().coordinates(index),
            min,
        }),
        PositivityMode::Clamp => {
            let hits = state.n.values().iter().filter(|&&v| v < n_floor).count();
            let mut out = state.clone();
            out.n = state.n.map(|v| v.max(n_floor));
            Ok((out, hits))
        }
    }
}

#[derive(Clone, Debug)]
pub struct InitialData {
    pub n0: ScalarField,
    pub u0: VectorField,
}

impl InitialData {
    pub fn into_state(self) -> Result<SimState> {
        SimState::physical(self.n0, self.u0)
    }
}

fn default_mode() -> u32 {
    1
}

/// Named analytic initial profiles. Coordinates are `x_a` in `[0, L)`, and
/// `theta_a = 2 pi x_a / L`.
///
/// - `constant`: `n = density`, `u = velocity` (missing components are 0).
/// - `cosine_bump`: `n = mean + amplitude * avg_a cos(mode theta_a)`,
///   `u_a = velocity_amplitude * sin(mode theta_a)`.
/// - `gaussian_on_torus`: `n = background + amplitude * sum_images exp(-|x - c - jL|^2 / (2 width^2))`
///   over image shifts `j` in `-2..=2` per axis, `u_a = velocity_amplitude * sin(theta_a)`.
/// - `random_bandlimited`: `n = mean + amplitude * f / max|f|`, with `f` a sum of
///   modes `1..=max_mode` per axis with uniform coefficients in `[-1, 1]`; each
///   velocity component is built the same way and scaled to `velocity_amplitude`.
///   Coefficients come from ChaCha8 seeded with the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Constant {
        density: f64,
        #[serde(default)]
        velocity: Vec<f64>,
    },
    CosineBump {
        mean: f64,
        amplitude: f64,
        #[serde(default)]
        velocity_amplitude: f64,
        #[serde(default = "default_mode")]
        mode: u32,
    },
    GaussianOnTorus {
        background: f64,
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default)]
        velocity_amplitude: f64,
    },
    RandomBandlimited {
        mean: f64,
        amplitude: f64,
        #[serde(default)]
        velocity_amplitude: f64,
        max_mode: u32,
    },
}

impl InitialProfile {
    pub fn name(&self) -> &'static str {
        match self {
            InitialProfile::Constant { .. } => "constant",
            InitialProfile::CosineBump { .. } => "cosine_bump",
            InitialProfile::GaussianOnTorus { .. } => "gaussian_on_torus",
            InitialProfile::RandomBandlimited { .. } => "random_bandlimited",
        }
    }

    pub fn build(&self, grid: &Arc<Grid>, seed: u64, n_floor: f64) -> Result<InitialData> {
        let d = grid.dim();
        let l = grid.length();
        let data = match self {
            InitialProfile::Constant { density, velocity } => {
                if velocity.len() > d {
                    return Err(QnsError::param(
                        "initial.velocity",
                        format!("has {} components for a {d}-dimensional grid", velocity.len()),
                    ));
                }
                InitialData {
                    n0: ScalarField::constant(grid, *density),
                    u0: VectorField::constant(grid, velocity),
                }
            }
            InitialProfile::CosineBump {
                mean,
                amplitude,
                velocity_amplitude,
                mode,
            } => {
                let m = *mode as f64;
                let n0 = ScalarField::from_fn(grid, |x| {
                    let s: f64 = x.iter().map(|&xa| (2.0 * PI * m * xa / l).cos()).sum();
                    mean + amplitude * s / d as f64
                });
                let u0 = VectorField::from_fn(grid, |a, x| velocity_amplitude * (2.0 * PI * m * x[a] / l).sin());
                InitialData { n0, u0 }
            }
            InitialProfile::GaussianOnTorus {
                background,
                amplitude,
                width,
                center,
                velocity_amplitude,
            } => {
                if *width <= 0.0 {
                    return Err(QnsError::param("initial.width", format!("must be > 0, got {width}")));
                }
                let c: Vec<f64> = (0..d)
                    .map(|a| center.get(a).copied().unwrap_or(0.5 * l))
                    .collect();
                let n0 = ScalarField::from_fn(grid, |x| {
                    background + amplitude * periodized_gaussian(x, &c, *width, l)
                });
                let u0 = VectorField::from_fn(grid, |a, x| velocity_amplitude * (2.0 * PI * x[a] / l).sin());
                InitialData { n0, u0 }
            }
            InitialProfile::RandomBandlimited {
                mean,
                amplitude,
                velocity_amplitude,
                max_mode,
            } => {
                if *max_mode == 0 {
                    return Err(QnsError::param("initial.max_mode", "must be >= 1"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n0 = random_field(grid, &mut rng, *max_mode).scaled_to(*amplitude);
                let n0 = n0.map(|v| mean + v);
                let comps = (0..d)
                    .map(|_| random_field(grid, &mut rng, *max_mode).scaled_to(*velocity_amplitude))
                    .collect();
                InitialData {
                    n0,
                    u0: VectorField::from_components(comps)?,
                }
            }
        };
        if !data.n0.is_finite() || !data.u0.is_finite() {
            return Err(QnsError::param("initial", "profile produced non-finite values"));
        }
        let min = data.n0.min();
        if min < n_floor {
            return Err(QnsError::param(
                "initial",
                format!("initial density minimum {min} is below n_floor {n_floor}"),
            ));
        }
        Ok(data)
    }
}

fn periodized_gaussian(x: &[f64], c: &[f64], width: f64, l: f64) -> f64 {
    let d = x.len();
    let images = -2i32..=2;
    let mut total = 0.0;
    let count = 5usize.pow(d as u32);
    for idx in 0..count {
        let mut r2 = 0.0;
        let mut rem = idx;
        for a in 0..d {
            let j = (rem % 5) as i32 + images.start();
            rem /= 5;
            let dx = x[a] - c[a] - j as f64 * l;
            r2 += dx * dx;
        }
        total += (-r2 / (2.0 * width * width)).exp();
    }
    total
}

struct Unscaled(ScalarField);

impl Unscaled {
    fn scaled_to(self, amplitude: f64) -> ScalarField {
        let m = self.0.max_abs();
        if m == 0.0 {
            return self.0;
        }
        self.0.scale(amplitude / m)
    }
}

fn random_field(grid: &Arc<Grid>, rng: &mut ChaCha8Rng, max_mode: u32) -> Unscaled {
    let d = grid.dim();
    let l = grid.length();
    let coeffs: Vec<(usize, f64, f64, f64)> = (0..d)
        .flat_map(|a| (1..=max_mode).map(move |s| (a, s as f64)))
        .map(|(a, s)| (a, s, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    Unscaled(ScalarField::from_fn(grid, |x| {
        coeffs
            .iter()
            .map(|&(a, s, ca, sa)| {
                let t = 2.0 * PI * s * x[a] / l;
                ca * t.cos() + sa * t.sin()
            })
            .sum()
    }))
}
