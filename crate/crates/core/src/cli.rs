//! Batch driver: JSON config in, CSV tables and a JSON manifest out.

use crate::dispersion::{linspace, trace_mode, DispersionCurve, EdgeKind, Regime, Wire};
use crate::dynamics::{evolve_single, AmplitudeTrace, DynamicsConfig};
use crate::emission::{rate_sweep, Branch, TracedBranch};
use crate::modefields::{eval_fields, normalized_profile, DipoleSpec};
use crate::twodot::{evolve_single_full, evolve_two, TwoDotConfig, TwoDotTrace};
use crate::units_media::{MediumParams, UnitSystem};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid config key '{key}': {msg}")]
    Validation { key: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Validation {
        key: key.into(),
        msg: msg.into(),
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.count)
    }

    fn validate(&self, key: &str) -> Result<(), CliError> {
        if self.count == 0 {
            return Err(invalid(key, "grid is empty"));
        }
        if !self.min.is_finite() || !self.max.is_finite() || !(self.min > 0.0) {
            return Err(invalid(key, "bounds must be finite and > 0"));
        }
        if self.count > 1 && !(self.max > self.min) {
            return Err(invalid(key, "max must exceed min"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    BandEdge,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSettings {
    /// Detunings from the edge, beta units.
    pub deltas: Vec<f64>,
    pub gamma: f64,
    /// Edge coupling strength pi |g_c|^2 / sqrt(A), beta^{3/2}.
    pub coupling: f64,
    pub t_max: f64,
    pub n_steps: usize,
    pub substeps: usize,
    pub kernel_kind: KernelKind,
    /// Order and kind of the traced edge the full kernel is built around.
    pub edge_order: u32,
    pub edge_kind: EdgeKind,
    /// Spectral window of the full kernel, beta units.
    pub window: f64,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        DynamicsSettings {
            deltas: vec![0.0, 0.2, 0.4, 0.8],
            gamma: 0.0,
            coupling: 1.0,
            t_max: 20.0,
            n_steps: 2000,
            substeps: 4,
            kernel_kind: KernelKind::BandEdge,
            edge_order: 1,
            edge_kind: EdgeKind::Minimum,
            window: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoDotSettings {
    pub omega0: Vec<f64>,
    pub n_steps: usize,
    /// t_max in units of 1 / gamma_sp.
    pub t_max_gamma: f64,
    pub window_factor: f64,
    /// w_p / beta.
    pub freq_scale: f64,
}

impl Default for TwoDotSettings {
    fn default() -> Self {
        TwoDotSettings {
            omega0: vec![0.602, 0.748],
            n_steps: 2000,
            t_max_gamma: 10.0,
            window_factor: 40.0,
            freq_scale: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub units: UnitSystem,
    pub inner: String,
    pub outer: String,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Dot to wire-surface distance.
    pub d_hat: f64,
    pub z0_hat: f64,
    pub orders: Vec<u32>,
    pub k_grid: Grid,
    pub omega0_grid: Grid,
    pub quantization_length: f64,
    /// K at which field profiles are written, one file per order bound there.
    pub profile_k: f64,
    pub dynamics: DynamicsSettings,
    pub twodot: TwoDotSettings,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            units: UnitSystem::default(),
            inner: "ag".into(),
            outer: "gan".into(),
            radius: 0.1,
            d_hat: 0.2,
            z0_hat: 0.35,
            orders: vec![0, 1, 2, 3],
            k_grid: Grid {
                min: 0.5,
                max: 40.0,
                count: 791,
            },
            omega0_grid: Grid {
                min: 0.55,
                max: 0.8,
                count: 251,
            },
            quantization_length: 1.0,
            profile_k: 10.0,
            dynamics: DynamicsSettings::default(),
            twodot: TwoDotSettings::default(),
            out_dir: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn wire(&self) -> Result<Wire, CliError> {
        let inner = MediumParams::preset(&self.inner).map_err(|e| invalid("inner", e.to_string()))?;
        let outer = MediumParams::preset(&self.outer).map_err(|e| invalid("outer", e.to_string()))?;
        Ok(Wire {
            inner,
            outer,
            radius: self.radius,
        })
    }

    pub fn dipole(&self) -> DipoleSpec {
        DipoleSpec::radial(self.radius + self.d_hat)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.units.validate().map_err(|e| invalid("units", e.to_string()))?;
        self.wire()?;
        let pos = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be > 0, got {v}")))
            }
        };
        pos("R", self.radius)?;
        pos("d_hat", self.d_hat)?;
        pos("quantization_length", self.quantization_length)?;
        pos("profile_k", self.profile_k)?;
        if !(self.z0_hat >= 0.0) || !self.z0_hat.is_finite() {
            return Err(invalid("z0_hat", "must be >= 0"));
        }
        if self.orders.is_empty() {
            return Err(invalid("orders", "list is empty"));
        }
        if self.orders.iter().any(|&n| n > 20) {
            return Err(invalid("orders", "orders above 20 are not supported"));
        }
        let mut sorted = self.orders.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.orders.len() {
            return Err(invalid("orders", "duplicate order"));
        }
        self.k_grid.validate("k_grid")?;
        self.omega0_grid.validate("omega0_grid")?;
        let d = &self.dynamics;
        if d.deltas.is_empty() || d.deltas.iter().any(|x| !x.is_finite()) {
            return Err(invalid("dynamics.deltas", "need at least one finite detuning"));
        }
        if !(d.gamma >= 0.0) || !d.gamma.is_finite() {
            return Err(invalid("dynamics.gamma", "must be >= 0"));
        }
        if !(d.coupling >= 0.0) || !d.coupling.is_finite() {
            return Err(invalid("dynamics.coupling", "must be >= 0"));
        }
        pos("dynamics.t_max", d.t_max)?;
        pos("dynamics.window", d.window)?;
        if d.n_steps < 100 {
            return Err(invalid("dynamics.n_steps", "must be >= 100"));
        }
        if d.substeps == 0 {
            return Err(invalid("dynamics.substeps", "must be >= 1"));
        }
        let t = &self.twodot;
        if t.omega0.is_empty() || t.omega0.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("twodot.omega0", "need at least one positive frequency"));
        }
        if t.n_steps < 100 {
            return Err(invalid("twodot.n_steps", "must be >= 100"));
        }
        pos("twodot.t_max_gamma", t.t_max_gamma)?;
        pos("twodot.window_factor", t.window_factor)?;
        pos("twodot.freq_scale", t.freq_scale)?;
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be >= 1"));
        }
        Ok(())
    }
}

/// Parse and validate a JSON config; a blank document gives the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Dispersion,
    Rates,
    Dynamics,
    Entangle,
    All,
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dispersion" => Ok(Command::Dispersion),
            "rates" => Ok(Command::Rates),
            "dynamics" => Ok(Command::Dynamics),
            "entangle" => Ok(Command::Entangle),
            "all" => Ok(Command::All),
            _ => Err(format!("unknown command '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub threads: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub config: RunConfig,
}

/// Scientific notation, 9 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub fn curve_csv(c: &DispersionCurve) -> String {
    let mut s = String::from("n,K,Re_Omega,Im_Omega,regime,residual\n");
    for p in &c.samples {
        let regime = match p.regime {
            Regime::Bound => "bound",
            Regime::Nonbound => "nonbound",
        };
        row(
            &mut s,
            &[
                p.n.to_string(),
                fmt_num(p.k),
                fmt_num(p.omega.re),
                fmt_num(p.omega.im),
                regime.into(),
                fmt_num(p.residual),
            ],
        );
    }
    s
}

pub fn trace_csv(tr: &AmplitudeTrace) -> String {
    let mut s = String::from("t,Re_b,Im_b,population\n");
    for (t, b) in tr.t.iter().zip(&tr.b) {
        row(&mut s, &[fmt_num(*t), fmt_num(b.re), fmt_num(b.im), fmt_num(b.norm_sqr())]);
    }
    s
}

pub fn twodot_csv(tr: &TwoDotTrace) -> String {
    let mut s = String::from("t,Re_b1,Im_b1,Re_b2,Im_b2,pop1,pop2,concurrence\n");
    let conc = tr.concurrence();
    for i in 0..tr.t.len() {
        let (a, b) = (tr.b1[i], tr.b2[i]);
        row(
            &mut s,
            &[
                fmt_num(tr.t[i]),
                fmt_num(a.re),
                fmt_num(a.im),
                fmt_num(b.re),
                fmt_num(b.im),
                fmt_num(a.norm_sqr()),
                fmt_num(b.norm_sqr()),
                fmt_num(conc[i]),
            ],
        );
    }
    s
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    wire: Wire,
    curves: Option<Vec<DispersionCurve>>,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn curves(&mut self) -> Result<&[DispersionCurve], CliError> {
        if self.curves.is_none() {
            let grid = self.cfg.k_grid.points();
            let wire = self.wire;
            let out: Vec<_> = {
                use rayon::prelude::*;
                self.cfg
                    .orders
                    .par_iter()
                    .map(|&n| trace_mode(n, &grid, &wire))
                    .collect::<Result<_, _>>()
                    .map_err(numerical)?
            };
            for c in &out {
                for g in &c.gaps {
                    self.warnings.push(format!("n = {}: branch lost near K = {}", c.n, fmt_num(*g)));
                }
                for k in &c.unresolved_edges {
                    self.warnings.push(format!("n = {}: unresolved extremum near K = {}", c.n, fmt_num(*k)));
                }
            }
            self.curves = Some(out);
        }
        Ok(self.curves.as_deref().unwrap())
    }

    fn branches(&mut self) -> Result<Vec<TracedBranch>, CliError> {
        self.curves()?
            .iter()
            .map(|c| TracedBranch::new(c.clone()).map_err(numerical))
            .collect()
    }
}

fn run_dispersion(ctx: &mut Ctx, w: &mut Writer) -> Result<(), CliError> {
    let curves = ctx.curves()?.to_vec();
    let mut edges = String::from("n,K_c,Omega_c,A_n,kind,fit_residual\n");
    for c in &curves {
        w.put(&format!("curve_n{}.csv", c.n), &curve_csv(c))?;
        for e in &c.edges {
            let kind = match e.kind {
                EdgeKind::Minimum => "minimum",
                EdgeKind::Maximum => "maximum",
            };
            row(
                &mut edges,
                &[
                    e.n.to_string(),
                    fmt_num(e.k_c),
                    fmt_num(e.omega_c),
                    fmt_num(e.a_n),
                    kind.into(),
                    fmt_num(e.fit_residual),
                ],
            );
        }
    }
    w.put("edges.csv", &edges)?;
    // mode shapes at profile_k for every order bound there
    let k = ctx.cfg.profile_k;
    let r = ctx.cfg.radius;
    for c in &curves {
        let Ok(p) = crate::dispersion::omega_at(c, k) else {
            continue;
        };
        if p.regime != Regime::Bound {
            continue;
        }
        let prof = normalized_profile(&p, &ctx.wire, ctx.cfg.quantization_length).map_err(numerical)?;
        let mut s = String::from("rho,Re_Erho,Im_Erho,Re_Ephi,Im_Ephi,Re_Ez,Im_Ez,Re_Hrho,Im_Hrho,Re_Hphi,Im_Hphi,Re_Hz,Im_Hz\n");
        for rho in linspace(0.01 * r, 10.0 * r, 400) {
            let f = eval_fields(&prof, rho, 0.0).map_err(numerical)?;
            let mut fields = vec![fmt_num(rho)];
            for z in f.e.iter().chain(&f.h) {
                fields.push(fmt_num(z.re));
                fields.push(fmt_num(z.im));
            }
            row(&mut s, &fields);
        }
        w.put(&format!("field_n{}.csv", c.n), &s)?;
    }
    Ok(())
}

fn run_rates(ctx: &mut Ctx, w: &mut Writer) -> Result<(), CliError> {
    let branches = ctx.branches()?;
    let refs: Vec<&dyn Branch> = branches.iter().map(|b| b as &dyn Branch).collect();
    let g = ctx.cfg.omega0_grid;
    let mut omegas = g.points();
    // band-edge frequencies inside the grid, so the spikes show up
    for b in &branches {
        for e in b.edges() {
            if e.omega_c >= g.min && e.omega_c <= g.max {
                omegas.push(e.omega_c);
            }
        }
    }
    omegas.sort_by(f64::total_cmp);
    omegas.dedup();
    let pts = rate_sweep(&refs, &omegas, &ctx.cfg.dipole(), ctx.cfg.quantization_length).map_err(numerical)?;
    let mut s = String::from("omega0");
    for n in &ctx.cfg.orders {
        let _ = write!(s, ",rate_n{n}");
    }
    s.push_str(",total,diverged\n");
    let mut n_div = 0;
    for p in &pts {
        let mut fields = vec![fmt_num(p.omega0)];
        for (_, r) in &p.per_order {
            fields.push(fmt_num(*r));
        }
        fields.push(fmt_num(p.rate));
        fields.push(p.diverged.to_string());
        n_div += p.diverged as usize;
        row(&mut s, &fields);
    }
    if n_div > 0 {
        ctx.warnings.push(format!("{n_div} rate points sit at a band edge and are clamped"));
    }
    w.put("rates.csv", &s)
}

fn run_dynamics(ctx: &mut Ctx, w: &mut Writer) -> Result<(), CliError> {
    let d = ctx.cfg.dynamics.clone();
    let cfgs: Vec<DynamicsConfig> = d
        .deltas
        .iter()
        .map(|&delta| DynamicsConfig {
            edge: d.edge_kind,
            delta,
            gamma: d.gamma,
            coupling: d.coupling,
            t_max: d.t_max,
            n_steps: d.n_steps,
            substeps: d.substeps,
            check_step: true,
        })
        .collect();
    let traces: Vec<AmplitudeTrace> = match d.kernel_kind {
        KernelKind::BandEdge => {
            use rayon::prelude::*;
            cfgs.par_iter()
                .map(evolve_single)
                .collect::<Result<_, _>>()
                .map_err(numerical)?
        }
        KernelKind::Full => {
            let branches = ctx.branches()?;
            let refs: Vec<&dyn Branch> = branches.iter().map(|b| b as &dyn Branch).collect();
            let edge = branches
                .iter()
                .filter(|b| b.order() == d.edge_order)
                .flat_map(|b| b.edges())
                .find(|e| e.kind == d.edge_kind)
                .ok_or_else(|| CliError::Numerical(format!("no {:?} edge on order {}", d.edge_kind, d.edge_order)))?;
            let dipole = ctx.cfg.dipole();
            cfgs.iter()
                .map(|c| evolve_single_full(c, &edge, d.window, ctx.cfg.twodot.freq_scale, &refs, &dipole))
                .collect::<Result<_, _>>()
                .map_err(numerical)?
        }
    };
    for (delta, tr) in d.deltas.iter().zip(&traces) {
        for m in &tr.warnings {
            ctx.warnings.push(format!("delta = {delta}: {m}"));
        }
        w.put(&format!("dynamics_delta{delta:.3}.csv"), &trace_csv(tr))?;
    }
    Ok(())
}

fn run_entangle(ctx: &mut Ctx, w: &mut Writer) -> Result<(), CliError> {
    let branches = ctx.branches()?;
    let refs: Vec<&dyn Branch> = branches.iter().map(|b| b as &dyn Branch).collect();
    let t = ctx.cfg.twodot.clone();
    let dipole = ctx.cfg.dipole();
    for &w0 in &t.omega0 {
        let mut c = TwoDotConfig::calibrated(w0, ctx.cfg.z0_hat, &refs, &dipole, t.n_steps).map_err(numerical)?;
        c.t_max = t.t_max_gamma / c.gamma_sp;
        c.window_factor = t.window_factor;
        c.freq_scale = t.freq_scale;
        let tr = evolve_two(&c, &refs, &dipole).map_err(numerical)?;
        for m in &tr.warnings {
            ctx.warnings.push(format!("omega0 = {w0}: {m}"));
        }
        w.put(&format!("twodot_omega{w0:.3}.csv"), &twodot_csv(&tr))?;
    }
    Ok(())
}

/// Run `command` with outputs under `out`; the manifest is written last.
pub fn run(cfg: &RunConfig, command: Command, out: &Path) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let mut w = Writer {
        dir: out.to_path_buf(),
        files: vec![],
    };
    let mut ctx = Ctx {
        cfg,
        wire: cfg.wire()?,
        curves: None,
        warnings: vec![],
    };
    let all = command == Command::All;
    if all || command == Command::Dispersion {
        run_dispersion(&mut ctx, &mut w)?;
    }
    if all || command == Command::Rates {
        run_rates(&mut ctx, &mut w)?;
    }
    if all || command == Command::Dynamics {
        run_dynamics(&mut ctx, &mut w)?;
    }
    if all || command == Command::Entangle {
        run_entangle(&mut ctx, &mut w)?;
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: w.files.clone(),
        warnings: ctx.warnings,
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(numerical)?;
    w.put("manifest.json", &(text + "\n"))?;
    Ok(manifest)
}

/// Run inside a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &RunConfig, command: Command, out: &Path, threads: usize) -> Result<Manifest, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid("threads", e.to_string()))?;
    pool.install(|| run(cfg, command, out))
}
