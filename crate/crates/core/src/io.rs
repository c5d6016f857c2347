//! Config files and on-disk formats.
//!
//! Diagnostics CSV layout (version 1):
//!
//! ```text
//! # qns diagnostics v1
//! t,mass,energy,energy_dissipation,energy_residual,bd_entropy,bd_dissipation,bd_residual,min_n,max_n,<18 norms>
//! ```
//!
//! Every float is printed as `{:.16e}` (17 significant digits).
//!
//! Snapshots hold the physical velocity. One-dimensional snapshots are CSV
//! (`x,n,u`) below a `# qns snapshot v1 t=<t> L=<L>` line. Higher dimensions
//! use a flat little-endian binary file: the 8 bytes `QNSSNAP1`, `u32` dim,
//! `u32` points per axis, `f64` length, `f64` time, then `n` and each velocity
//! component as `f64` in row-major order (axis 0 slowest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::experiments::{RefinementStudy, SweepReport};
use crate::fields::{InitialProfile, PhysParams, PositivityMode, SimState};
use crate::functionals::{DiagnosticsRecord, NORM_NAMES};
use crate::grid::{make_grid, ScalarField, VectorField};
use crate::integrator::{Formulation, GridSpec, RunConfig, TimeStep, Trajectory};
use crate::par::Execution;

pub const DIAGNOSTICS_VERSION_LINE: &str = "# qns diagnostics v1";
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"QNSSNAP1";

/// Fixed diagnostics columns, dashboard norms last.
pub fn diagnostics_header() -> Vec<&'static str> {
    let mut h = vec![
        "t",
        "mass",
        "energy",
        "energy_dissipation",
        "energy_residual",
        "bd_entropy",
        "bd_dissipation",
        "bd_residual",
        "min_n",
        "max_n",
    ];
    h.extend_from_slice(&NORM_NAMES);
    h
}

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub points: usize,
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_dim() -> usize {
    1
}

fn default_length() -> f64 {
    1.0
}

fn default_cadence() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
    pub quantum_cap: Option<f64>,
    #[serde(rename = "galerkin_N")]
    pub galerkin_n: Option<usize>,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default)]
    pub positivity_mode: PositivityMode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("qns-out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub grid: GridSection,
    pub physics: PhysParams,
    pub run: RunSection,
    pub initial: InitialProfile,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<ConfigFile> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| QnsError::Config(e.to_string()))?;
        cfg.to_run_config()?;
        Ok(cfg)
    }

    /// Resolve into a validated [`RunConfig`].
    pub fn to_run_config(&self) -> Result<RunConfig> {
        let r = &self.run;
        let time_step = match (r.dt, r.cfl, r.quantum_cap) {
            (Some(dt), None, None) => TimeStep::Fixed { dt },
            (None, cfl, cap) => {
                let TimeStep::Adaptive {
                    cfl: dc,
                    quantum_cap: dq,
                } = TimeStep::default()
                else {
                    unreachable!()
                };
                TimeStep::Adaptive {
                    cfl: cfl.unwrap_or(dc),
                    quantum_cap: cap.unwrap_or(dq),
                }
            }
            (Some(_), _, _) => {
                return Err(QnsError::param("run.dt", "give either dt or cfl/quantum_cap, not both"));
            }
        };
        let cfg = RunConfig {
            grid: GridSpec {
                dim: self.grid.dim,
                points: self.grid.points,
                length: self.grid.length,
            },
            physics: self.physics,
            initial: self.initial.clone(),
            formulation: r.formulation,
            final_time: r.final_time,
            time_step,
            galerkin_modes: r.galerkin_n,
            cadence: r.cadence,
            positivity: r.positivity_mode,
            seed: r.seed,
            execution: Execution::default(),
        };
        cfg.validate().map_err(|e| match e {
            QnsError::InvalidGrid(msg) => QnsError::param("grid", msg),
            QnsError::ModeCapOutOfRange { requested, max } => {
                QnsError::param("run.galerkin_N", format!("{requested} outside 1..={max}"))
            }
            QnsError::Vacuum { min, .. } => {
                QnsError::param("initial", format!("initial density {min:e} is below physics.n_floor"))
            }
            other => other,
        })?;
        // Surface bad initial data as a config error.
        cfg.initial_state().map_err(|e| match e {
            QnsError::InvalidParameter { .. } => e,
            other => QnsError::param("initial", other.to_string()),
        })?;
        Ok(cfg)
    }
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| QnsError::Config(format!("cannot read {}: {e}", path.display())))?;
    ConfigFile::from_toml(&text)
}

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::new();
    out.push_str(DIAGNOSTICS_VERSION_LINE);
    out.push('\n');
    out.push_str(&diagnostics_header().join(","));
    out.push('\n');
    for r in records {
        let mut row = vec![
            r.t,
            r.mass,
            r.energy,
            r.energy_dissipation,
            r.energy_residual,
            r.bd_entropy,
            r.bd_dissipation,
            r.bd_residual,
            r.min_n,
            r.max_n,
        ];
        row.extend_from_slice(&r.norms);
        let cells: Vec<String> = row.into_iter().map(fmt_float).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parse a diagnostics CSV back into rows of floats (header checked).
pub fn read_diagnostics_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    if lines.next() != Some(DIAGNOSTICS_VERSION_LINE) {
        return Err(QnsError::Config("missing diagnostics version line".into()));
    }
    let header = diagnostics_header().join(",");
    if lines.next() != Some(header.as_str()) {
        return Err(QnsError::Config("unexpected diagnostics header".into()));
    }
    lines
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|e| QnsError::Config(format!("bad cell `{c}`: {e}"))))
                .collect()
        })
        .collect()
}

fn physical_snapshot(state: &SimState, params: &PhysParams) -> Result<SimState> {
    state.to_physical(params)
}

pub fn snapshot_csv(state: &SimState, params: &PhysParams) -> Result<String> {
    let s = physical_snapshot(state, params)?;
    let g = s.grid();
    if g.dim() != 1 {
        return Err(QnsError::Snapshot("CSV snapshots are one-dimensional".into()));
    }
    let mut out = format!("# qns snapshot v1 t={} L={}\nx,n,u\n", fmt_float(s.time), fmt_float(g.length()));
    let u = s.vel.component(0);
    for i in 0..g.node_count() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_float(g.coordinates(i)[0]),
            fmt_float(s.n.values()[i]),
            fmt_float(u.values()[i])
        ));
    }
    Ok(out)
}

pub fn snapshot_binary(state: &SimState, params: &PhysParams) -> Result<Vec<u8>> {
    let s = physical_snapshot(state, params)?;
    let g = s.grid();
    let mut out = Vec::with_capacity(32 + 8 * g.node_count() * (1 + g.dim()));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.points() as u32).to_le_bytes());
    out.extend_from_slice(&g.length().to_le_bytes());
    out.extend_from_slice(&s.time.to_le_bytes());
    for v in s.n.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in s.vel.components() {
        for v in c.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_snapshot_csv(text: &str) -> Result<SimState> {
    let bad = |m: &str| QnsError::Snapshot(m.to_string());
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| bad("empty file"))?;
    let meta = first
        .strip_prefix("# qns snapshot v1 ")
        .ok_or_else(|| bad("missing snapshot version line"))?;
    let mut time = None;
    let mut length = None;
    for kv in meta.split_whitespace() {
        match kv.split_once('=') {
            Some(("t", v)) => time = v.parse::<f64>().ok(),
            Some(("L", v)) => length = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    let (time, length) = (time.ok_or_else(|| bad("missing t"))?, length.ok_or_else(|| bad("missing L"))?);
    if lines.next() != Some("x,n,u") {
        return Err(bad("unexpected header"));
    }
    let mut n = Vec::new();
    let mut u = Vec::new();
    for l in lines {
        let cells: Vec<f64> = l
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        if cells.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        n.push(cells[1]);
        u.push(cells[2]);
    }
    let g = make_grid(1, n.len(), length)?;
    let n = ScalarField::from_vec(&g, n)?;
    let u = VectorField::from_components(vec![ScalarField::from_vec(&g, u)?])?;
    let mut s = SimState::physical(n, u)?;
    s.time = time;
    Ok(s)
}

pub fn read_snapshot_binary(bytes: &[u8]) -> Result<SimState> {
    let bad = |m: &str| QnsError::Snapshot(m.to_string());
    if bytes.len() < 32 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("missing QNSSNAP1 header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dim = u32_at(8) as usize;
    let points = u32_at(12) as usize;
    let length = f64_at(16);
    let time = f64_at(24);
    let g = make_grid(dim, points, length)?;
    let count = g.node_count();
    if bytes.len() != 32 + 8 * count * (1 + dim) {
        return Err(bad("payload size does not match header"));
    }
    let block = |b: usize| -> Vec<f64> { (0..count).map(|i| f64_at(32 + 8 * (b * count + i))).collect() };
    let n = ScalarField::from_vec(&g, block(0))?;
    let comps = (0..dim)
        .map(|a| ScalarField::from_vec(&g, block(a + 1)))
        .collect::<Result<Vec<_>>>()?;
    let mut s = SimState::physical(n, VectorField::from_components(comps)?)?;
    s.time = time;
    Ok(s)
}

/// Load a snapshot written by [`write_snapshot`], choosing the format by extension.
pub fn read_snapshot(path: &Path) -> Result<SimState> {
    if path.extension().is_some_and(|e| e == "csv") {
        read_snapshot_csv(&fs::read_to_string(path)?)
    } else {
        read_snapshot_binary(&fs::read(path)?)
    }
}

/// Write one snapshot into `dir` as `<stem>.csv` (1D) or `<stem>.bin`.
pub fn write_snapshot(dir: &Path, stem: &str, state: &SimState, params: &PhysParams) -> Result<PathBuf> {
    if state.grid().dim() == 1 {
        let p = dir.join(format!("{stem}.csv"));
        fs::write(&p, snapshot_csv(state, params)?)?;
        Ok(p)
    } else {
        let p = dir.join(format!("{stem}.bin"));
        fs::write(&p, snapshot_binary(state, params)?)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary<'a> {
    pub config: &'a RunConfig,
    pub params: &'a PhysParams,
    pub steps: usize,
    pub snapshots: usize,
    pub final_time: f64,
    pub complete: bool,
    pub failure: Option<String>,
    pub construction_regime: bool,
    pub clamped_nodes: usize,
}

/// Write diagnostics, snapshots, events and a summary into `dir`.
pub fn write_run_outputs(traj: &Trajectory, dir: &Path, formats: &[OutputFormat]) -> Result<()> {
    fs::create_dir_all(dir)?;
    if formats.contains(&OutputFormat::Csv) || formats.is_empty() {
        fs::write(dir.join("diagnostics.csv"), diagnostics_csv(&traj.records))?;
    }
    if formats.contains(&OutputFormat::Json) {
        fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&traj.records)?)?;
    }
    let snap_dir = dir.join("snapshots");
    fs::create_dir_all(&snap_dir)?;
    for (i, s) in traj.snapshots.iter().enumerate() {
        write_snapshot(&snap_dir, &format!("snap_{i:06}"), s, &traj.params)?;
    }
    write_snapshot(dir, "final", traj.final_state(), &traj.params)?;
    fs::write(dir.join("events.json"), serde_json::to_string_pretty(&traj.events)?)?;
    let summary = RunSummary {
        config: &traj.config,
        params: &traj.params,
        steps: traj.steps,
        snapshots: traj.snapshots.len(),
        final_time: traj.final_state().time,
        complete: traj.is_complete(),
        failure: traj.failure.as_ref().map(|e| e.to_string()),
        construction_regime: traj.construction_regime(),
        clamped_nodes: traj.clamp_count(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn csv_lines(version: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = format!("# qns {version} v1\n{}\n", header.join(","));
    for r in rows {
        let cells: Vec<String> = r.into_iter().map(fmt_float).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One row per `eps`: distances, `Q` and fit membership (1 or 0).
pub fn sweep_table_csv(r: &SweepReport) -> String {
    csv_lines(
        "sweep",
        &[
            "eps",
            "density_l2_linf",
            "sqrt_density_l2_h1",
            "sqrt_momentum_l2_l2",
            "quantum_integral",
            "q_value",
            "in_fit",
        ],
        r.members.iter().map(|m| {
            vec![
                m.eps,
                m.density_l2_linf,
                m.sqrt_density_l2_h1,
                m.sqrt_momentum_l2_l2,
                m.quantum_integral,
                m.q_value,
                if m.in_fit { 1.0 } else { 0.0 },
            ]
        }),
    )
}

/// One row per consecutive pair of levels.
pub fn refinement_table_csv(r: &RefinementStudy) -> String {
    csv_lines(
        "refinement",
        &["from", "to", "density_gap", "momentum_gap", "total_gap"],
        r.gaps.iter().map(|g| vec![g.from, g.to, g.density, g.momentum, g.total]),
    )
}

/// Write `report.json` and `table.csv` into `dir`.
pub fn write_report<T: Serialize>(dir: &Path, report: &T, table: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("report.json"))?;
    f.write_all(serde_json::to_string_pretty(report)?.as_bytes())?;
    fs::write(dir.join("table.csv"), table)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::simulate;

    const MINIMAL: &str = r#"
[grid]
points = 32

[physics]
gamma = 2.0
nu = 0.1
eps = 0.05

[run]
T = 0.01
dt = 1e-3

[initial]
profile = "cosine_bump"
mean = 2.0
amplitude = 0.5
velocity_amplitude = 0.3
"#;

    fn key_of(e: QnsError) -> String {
        match e {
            QnsError::InvalidParameter { key, .. } => key,
            other => panic!("expected a parameter error, got {other}"),
        }
    }

    #[test]
    fn minimal_config() {
        let c = ConfigFile::from_toml(MINIMAL).unwrap();
        let r = c.to_run_config().unwrap();
        assert_eq!(r.grid.dim, 1);
        assert_eq!(r.time_step, TimeStep::Fixed { dt: 1e-3 });
        assert_eq!(c.output.formats, vec![OutputFormat::Csv]);
    }

    #[test]
    fn rejects_unknown_keys() {
        for (from, to) in [("points = 32", "points = 32\nspacing = 2"), ("T = 0.01", "T = 0.01\nfoo = 1")] {
            let text = MINIMAL.replace(from, to);
            let e = ConfigFile::from_toml(&text).unwrap_err();
            assert!(e.to_string().contains("unknown field"), "{e}");
        }
    }

    #[test]
    fn validation_names_keys() {
        let cases = [
            ("gamma = 2.0", "gamma = 0.5", "physics.gamma"),
            ("nu = 0.1", "nu = 0.0", "physics.nu"),
            ("points = 32", "points = 31", "grid"),
            ("dt = 1e-3", "dt = -1.0", "run.dt"),
            ("dt = 1e-3", "dt = 1e-3\ngalerkin_N = 40", "run.galerkin_N"),
            ("mean = 2.0", "mean = 0.1", "initial"),
        ];
        for (from, to, key) in cases {
            let e = ConfigFile::from_toml(&MINIMAL.replace(from, to)).unwrap_err();
            assert_eq!(key_of(e), key, "{to}");
        }
        let text = MINIMAL.replace("gamma = 2.0", "gamma = 2.0\ncold_k = 1.0");
        assert_eq!(key_of(ConfigFile::from_toml(&text).unwrap_err()), "physics.cold_k");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = ConfigFile::from_toml(MINIMAL).unwrap().to_run_config().unwrap();
        let t = simulate(&cfg).unwrap();
        let text = diagnostics_csv(&t.records);
        let rows = read_diagnostics_csv(&text).unwrap();
        assert_eq!(rows.len(), t.records.len());
        for (row, rec) in rows.iter().zip(&t.records) {
            assert_eq!(row[0].to_bits(), rec.t.to_bits());
            assert_eq!(row[2].to_bits(), rec.energy.to_bits());
            assert_eq!(row[10].to_bits(), rec.norms[0].to_bits());
        }
        assert_eq!(text, diagnostics_csv(&simulate(&cfg).unwrap().records));
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = ConfigFile::from_toml(MINIMAL).unwrap().to_run_config().unwrap();
        let s = cfg.initial_state().unwrap();
        let back = read_snapshot_csv(&snapshot_csv(&s, &cfg.physics).unwrap()).unwrap();
        assert_eq!(back.n.values(), s.n.values());
        assert_eq!(back.vel.component(0).values(), s.vel.component(0).values());

        let g = make_grid(2, 8, 2.0).unwrap();
        let n = ScalarField::from_fn(&g, |x| 1.0 + 0.1 * x[0] + 0.01 * x[1]);
        let u = VectorField::from_fn(&g, |a, x| x[a] - 0.5 * a as f64);
        let mut s = SimState::physical(n, u).unwrap();
        s.time = 0.25;
        let bytes = snapshot_binary(&s, &PhysParams::default()).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * 64 * 3);
        let back = read_snapshot_binary(&bytes).unwrap();
        assert_eq!(back.time, 0.25);
        assert_eq!(back.grid().length(), 2.0);
        assert_eq!(back.n.values(), s.n.values());
        assert_eq!(back.vel.component(1).values(), s.vel.component(1).values());
        assert!(read_snapshot_binary(&bytes[..40]).is_err());
    }
}
