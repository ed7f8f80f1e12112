//! Run configuration: a sectioned TOML document describing the mesh, the
//! material model, the scheme parameters, boundary data, the initial state,
//! and the output policy.
//!
//! Parsing is strict (unknown keys are rejected with line/column context) and
//! semantic validation collects every violation at once, each tagged with the
//! config path it concerns. Time-dependent boundary data is limited to
//! constants and piecewise-linear `[t, value]` tables; there is no expression
//! language.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fracstep_core::materials::{build_model, MaterialModel};
use fracstep_core::stepper::{BoundaryData, Problem, RegionData, SchemeParams, State, TimeFn};
use fracstep_core::{BoundaryRegion, Mesh, NodalField, SolverError};

fn default_unit() -> f64 {
    1.0
}

fn default_stride() -> usize {
    1
}

fn default_out_dir() -> String {
    "out".to_string()
}

/// Top-level run description. `parse(emit(cfg)) == cfg` for every valid
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Mesh family and sizes, discriminated by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshConfig {
    Interval {
        n_cells: usize,
        #[serde(default = "default_unit")]
        length: f64,
    },
    Grid {
        nx: usize,
        ny: usize,
        #[serde(default = "default_unit")]
        lx: f64,
        #[serde(default = "default_unit")]
        ly: f64,
    },
}

impl MeshConfig {
    pub fn dim(&self) -> usize {
        match self {
            MeshConfig::Interval { .. } => 1,
            MeshConfig::Grid { .. } => 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            MeshConfig::Interval { n_cells, .. } => n_cells + 1,
            MeshConfig::Grid { nx, ny, .. } => (nx + 1) * (ny + 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Built-in model name: `hydride`, `regular_solution`, or
    /// `poroelastic_regularized`.
    pub name: String,
    /// Scalar parameter overrides; unlisted parameters keep their built-in
    /// defaults.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub tau: f64,
    pub t_end: f64,
    #[serde(default)]
    pub quasistatic: bool,
    #[serde(default)]
    pub strict: bool,
    /// Displacement dofs (node·dim + component) held at their initial values.
    #[serde(default)]
    pub pin_dofs: Vec<usize>,
    #[serde(default)]
    pub allow_large_tau: bool,
    #[serde(default)]
    pub equilibrated_loads: bool,
    #[serde(default)]
    pub step3_multi_start: usize,
}

/// A constant or a piecewise-linear `[time, value]` table (clamped outside
/// its time range; times strictly increasing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFnSpec {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl TimeFnSpec {
    fn to_core(&self) -> TimeFn {
        match self {
            TimeFnSpec::Constant(v) => TimeFn::Const(*v),
            TimeFnSpec::Table(rows) => TimeFn::Table(rows.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Bulk force density, one entry per displacement component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<TimeFnSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<RegionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<RegionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottom: Option<RegionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<RegionConfig>,
}

impl BoundaryConfig {
    fn regions(&self) -> [(&'static str, BoundaryRegion, &Option<RegionConfig>); 4] {
        [
            ("boundary.left", BoundaryRegion::Left, &self.left),
            ("boundary.right", BoundaryRegion::Right, &self.right),
            ("boundary.bottom", BoundaryRegion::Bottom, &self.bottom),
            ("boundary.top", BoundaryRegion::Top, &self.top),
        ]
    }
}

/// Per-region boundary data: traction, solute influx, heat influx.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_s: Option<Vec<TimeFnSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_s: Option<TimeFnSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_s: Option<TimeFnSpec>,
}

/// A vector-valued initial field: one constant per component, or one row of
/// component values per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorInit {
    Constant(Vec<f64>),
    Nodal(Vec<Vec<f64>>),
}

/// A scalar initial field: a constant, or one value per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarInit {
    Constant(f64),
    Nodal(Vec<f64>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Displacement; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<VectorInit>,
    /// Velocity; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<VectorInit>,
    /// Phase field; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi0: Option<VectorInit>,
    /// Concentration; defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<ScalarInit>,
    /// Damage; defaults to one (undamaged).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d0: Option<ScalarInit>,
    /// Temperature; defaults to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<ScalarInit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    /// Keep (and write) every m-th state; the first and last are always kept.
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            snapshot_stride: default_stride(),
        }
    }
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// One semantic violation, tagged with the config path it concerns.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug)]
pub enum ConfigError {
    /// Unreadable file.
    Io { path: String, message: String },
    /// Syntax or type error; the message carries line/column context.
    Parse(String),
    /// Semantic violations, all collected at once.
    Invalid(Vec<Issue>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => {
                write!(f, "cannot read {path}: {message}")
            }
            ConfigError::Parse(msg) => write!(f, "{msg}"),
            ConfigError::Invalid(issues) => {
                writeln!(
                    f,
                    "configuration invalid ({} problem{}):",
                    issues.len(),
                    if issues.len() == 1 { "" } else { "s" }
                )?;
                for issue in issues {
                    writeln!(f, "  {issue}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

// ---------------------------------------------------------------------------
// Parse / emit
// ---------------------------------------------------------------------------

/// Parse and fully validate a configuration document. Syntax and type errors
/// surface with line/column context; semantic violations are all reported at
/// once with their config paths.
pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let issues = validate(&cfg);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse(&text)
}

/// Serialize a configuration; `parse(emit(cfg)) == cfg` for valid configs.
pub fn emit(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("a run configuration always serializes")
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn push(issues: &mut Vec<Issue>, path: impl Into<String>, message: impl Into<String>) {
    issues.push(Issue {
        path: path.into(),
        message: message.into(),
    });
}

fn check_finite(issues: &mut Vec<Issue>, path: &str, v: f64) -> bool {
    if v.is_finite() {
        true
    } else {
        push(issues, path, format!("value {v} is not finite"));
        false
    }
}

fn check_timefn(issues: &mut Vec<Issue>, path: &str, spec: &TimeFnSpec, nonneg: bool) {
    match spec {
        TimeFnSpec::Constant(v) => {
            if check_finite(issues, path, *v) && nonneg && *v < 0.0 {
                push(issues, path, format!("value {v} must be >= 0"));
            }
        }
        TimeFnSpec::Table(rows) => {
            if rows.is_empty() {
                push(issues, path, "table must have at least one [t, value] row");
                return;
            }
            for (i, (t, v)) in rows.iter().enumerate() {
                check_finite(issues, &format!("{path}[{i}]"), *t);
                if check_finite(issues, &format!("{path}[{i}]"), *v) && nonneg && *v < 0.0 {
                    push(issues, format!("{path}[{i}]"), format!("value {v} must be >= 0"));
                }
            }
            for w in rows.windows(2) {
                if w[1].0 <= w[0].0 {
                    push(
                        issues,
                        path,
                        format!(
                            "table times must be strictly increasing ({} then {})",
                            w[0].0, w[1].0
                        ),
                    );
                    break;
                }
            }
        }
    }
}

fn check_vector_init(
    issues: &mut Vec<Issue>,
    path: &str,
    spec: &VectorInit,
    comps: usize,
    n_nodes: usize,
    box_bounds: Option<(&[f64], &[f64])>,
) {
    let check_row = |issues: &mut Vec<Issue>, path: &str, row: &[f64]| {
        if row.len() != comps {
            push(
                issues,
                path,
                format!("expected {comps} component(s), got {}", row.len()),
            );
            return;
        }
        for (j, &v) in row.iter().enumerate() {
            if !check_finite(issues, path, v) {
                continue;
            }
            if let Some((lo, hi)) = box_bounds {
                if v < lo[j] || v > hi[j] {
                    push(
                        issues,
                        path,
                        format!("component {j} value {v} outside [{}, {}]", lo[j], hi[j]),
                    );
                }
            }
        }
    };
    match spec {
        VectorInit::Constant(row) => check_row(issues, path, row),
        VectorInit::Nodal(rows) => {
            if rows.len() != n_nodes {
                push(
                    issues,
                    path,
                    format!("expected one row per node ({n_nodes}), got {}", rows.len()),
                );
                return;
            }
            for (i, row) in rows.iter().enumerate() {
                check_row(issues, &format!("{path}[{i}]"), row);
            }
        }
    }
}

fn check_scalar_init(
    issues: &mut Vec<Issue>,
    path: &str,
    spec: &ScalarInit,
    n_nodes: usize,
    range: Option<(f64, f64, &str)>,
) {
    let check_value = |issues: &mut Vec<Issue>, path: &str, v: f64| {
        if !check_finite(issues, path, v) {
            return;
        }
        if let Some((lo, hi, label)) = range {
            if v < lo || v > hi {
                push(issues, path, format!("value {v} outside the {label} constraint"));
            }
        }
    };
    match spec {
        ScalarInit::Constant(v) => check_value(issues, path, *v),
        ScalarInit::Nodal(values) => {
            if values.len() != n_nodes {
                push(
                    issues,
                    path,
                    format!(
                        "expected one value per node ({n_nodes}), got {}",
                        values.len()
                    ),
                );
                return;
            }
            for (i, &v) in values.iter().enumerate() {
                check_value(issues, &format!("{path}[{i}]"), v);
            }
        }
    }
}

/// Collect every semantic violation at once. An empty result means the
/// configuration also builds into a valid problem and initial state.
pub fn validate(cfg: &RunConfig) -> Vec<Issue> {
    let mut issues = Vec::new();
    let dim = cfg.mesh.dim();
    let n_nodes = cfg.mesh.n_nodes();

    match cfg.mesh {
        MeshConfig::Interval { n_cells, length } => {
            if n_cells == 0 {
                push(&mut issues, "mesh.n_cells", "must be at least 1");
            }
            if !(length > 0.0 && length.is_finite()) {
                push(&mut issues, "mesh.length", format!("must be positive, got {length}"));
            }
        }
        MeshConfig::Grid { nx, ny, lx, ly } => {
            if nx == 0 {
                push(&mut issues, "mesh.nx", "must be at least 1");
            }
            if ny == 0 {
                push(&mut issues, "mesh.ny", "must be at least 1");
            }
            if !(lx > 0.0 && lx.is_finite()) {
                push(&mut issues, "mesh.lx", format!("must be positive, got {lx}"));
            }
            if !(ly > 0.0 && ly.is_finite()) {
                push(&mut issues, "mesh.ly", format!("must be positive, got {ly}"));
            }
        }
    }

    let model: Option<Box<dyn MaterialModel>> =
        match build_model(&cfg.model.name, dim, &cfg.model.parameters) {
            Ok(m) => Some(m),
            Err(e) => {
                push(&mut issues, "model", e.to_string());
                None
            }
        };

    let s = &cfg.scheme;
    let tau_ok = s.tau.is_finite() && s.tau > 0.0;
    if !tau_ok {
        push(&mut issues, "scheme.tau", format!("must be positive, got {}", s.tau));
    }
    let t_end_ok = s.t_end.is_finite() && s.t_end > 0.0;
    if !t_end_ok {
        push(
            &mut issues,
            "scheme.t_end",
            format!("must be positive, got {}", s.t_end),
        );
    }
    if tau_ok && t_end_ok {
        let ratio = s.t_end / s.tau;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
            push(
                &mut issues,
                "scheme.tau",
                format!(
                    "t_end/tau must be a positive integer: t_end = {} and tau = {} give {ratio}",
                    s.t_end, s.tau
                ),
            );
        }
    }
    for (i, &dof) in s.pin_dofs.iter().enumerate() {
        if dof >= n_nodes * dim {
            push(
                &mut issues,
                format!("scheme.pin_dofs[{i}]"),
                format!("dof {dof} out of range (mesh has {} dofs)", n_nodes * dim),
            );
        }
    }

    if cfg.output.snapshot_stride == 0 {
        push(&mut issues, "output.snapshot_stride", "must be at least 1");
    }
    if cfg.output.dir.is_empty() {
        push(&mut issues, "output.dir", "must not be empty");
    }

    let b = &cfg.boundary;
    if let Some(f) = &b.f {
        if f.len() != dim {
            push(
                &mut issues,
                "boundary.f",
                format!("expected {dim} component(s), got {}", f.len()),
            );
        }
        for (i, spec) in f.iter().enumerate() {
            check_timefn(&mut issues, &format!("boundary.f[{i}]"), spec, false);
        }
    }
    for (path, region, spec) in b.regions() {
        let Some(rc) = spec else { continue };
        if dim == 1 && matches!(region, BoundaryRegion::Bottom | BoundaryRegion::Top) {
            push(&mut issues, path, "only valid on a 2-d grid mesh");
            continue;
        }
        if let Some(f_s) = &rc.f_s {
            if f_s.len() != dim {
                push(
                    &mut issues,
                    format!("{path}.f_s"),
                    format!("expected {dim} component(s), got {}", f_s.len()),
                );
            }
            for (i, spec) in f_s.iter().enumerate() {
                check_timefn(&mut issues, &format!("{path}.f_s[{i}]"), spec, false);
            }
        }
        if let Some(h_s) = &rc.h_s {
            check_timefn(&mut issues, &format!("{path}.h_s"), h_s, true);
        }
        if let Some(q_s) = &rc.q_s {
            check_timefn(&mut issues, &format!("{path}.q_s"), q_s, true);
        }
    }

    let init = &cfg.initial;
    if let Some(u0) = &init.u0 {
        check_vector_init(&mut issues, "initial.u0", u0, dim, n_nodes, None);
    }
    if let Some(v0) = &init.v0 {
        check_vector_init(&mut issues, "initial.v0", v0, dim, n_nodes, None);
    }
    if let Some(chi0) = &init.chi0 {
        if let Some(m) = &model {
            let (lo, hi) = m.chi_box();
            check_vector_init(
                &mut issues,
                "initial.chi0",
                chi0,
                m.n_phase(),
                n_nodes,
                Some((&lo, &hi)),
            );
        }
    }
    if let Some(c0) = &init.c0 {
        check_scalar_init(&mut issues, "initial.c0", c0, n_nodes, None);
    }
    if let Some(d0) = &init.d0 {
        check_scalar_init(
            &mut issues,
            "initial.d0",
            d0,
            n_nodes,
            Some((0.0, 1.0, "[0, 1]")),
        );
    }
    if let Some(theta0) = &init.theta0 {
        check_scalar_init(
            &mut issues,
            "initial.theta0",
            theta0,
            n_nodes,
            Some((0.0, f64::INFINITY, "theta0 >= 0")),
        );
    }

    // A structurally clean configuration must also assemble: this funnels the
    // remaining cross-cutting rules (step-size admissibility, quasistatic
    // requirements, model-dependent initial-state domains) through the same
    // report.
    if issues.is_empty() {
        if let Err(e) = build(cfg) {
            push(&mut issues, "config", e.to_string());
        }
    }
    issues
}

// ---------------------------------------------------------------------------
// Build
// ---------------------------------------------------------------------------

fn vector_field(
    spec: Option<&VectorInit>,
    n_nodes: usize,
    comps: usize,
    name: &str,
) -> Result<NodalField, SolverError> {
    match spec {
        None => Ok(NodalField::zeros(n_nodes, comps)),
        Some(VectorInit::Constant(row)) => {
            if row.len() != comps {
                return Err(SolverError::invalid(format!(
                    "initial.{name}: expected {comps} component(s), got {}",
                    row.len()
                )));
            }
            Ok(NodalField::constant(n_nodes, row))
        }
        Some(VectorInit::Nodal(rows)) => {
            if rows.len() != n_nodes {
                return Err(SolverError::invalid(format!(
                    "initial.{name}: expected one row per node ({n_nodes}), got {}",
                    rows.len()
                )));
            }
            let mut flat = Vec::with_capacity(n_nodes * comps);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != comps {
                    return Err(SolverError::invalid(format!(
                        "initial.{name}[{i}]: expected {comps} component(s), got {}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
            NodalField::from_values(comps, flat)
        }
    }
}

fn scalar_field(
    spec: Option<&ScalarInit>,
    n_nodes: usize,
    default: f64,
    name: &str,
) -> Result<NodalField, SolverError> {
    match spec {
        None => Ok(NodalField::constant(n_nodes, &[default])),
        Some(ScalarInit::Constant(v)) => Ok(NodalField::constant(n_nodes, &[*v])),
        Some(ScalarInit::Nodal(values)) => {
            if values.len() != n_nodes {
                return Err(SolverError::invalid(format!(
                    "initial.{name}: expected one value per node ({n_nodes}), got {}",
                    values.len()
                )));
            }
            NodalField::from_values(1, values.clone())
        }
    }
}

/// Assemble the problem and initial state a configuration describes.
pub fn build(cfg: &RunConfig) -> Result<(Problem, State), SolverError> {
    let mesh = match cfg.mesh {
        MeshConfig::Interval { n_cells, length } => Mesh::interval(n_cells, length)?,
        MeshConfig::Grid { nx, ny, lx, ly } => Mesh::grid(nx, ny, lx, ly)?,
    };
    let dim = mesh.dim();
    let model = build_model(&cfg.model.name, dim, &cfg.model.parameters)?;

    let mut bc = BoundaryData::zero(dim);
    if let Some(f) = &cfg.boundary.f {
        if f.len() != dim {
            return Err(SolverError::invalid(format!(
                "boundary.f: expected {dim} component(s), got {}",
                f.len()
            )));
        }
        bc.f_bulk = f.iter().map(TimeFnSpec::to_core).collect();
    }
    for (path, region, spec) in cfg.boundary.regions() {
        let Some(rc) = spec else { continue };
        let mut data = RegionData::zero(dim);
        if let Some(f_s) = &rc.f_s {
            if f_s.len() != dim {
                return Err(SolverError::invalid(format!(
                    "{path}.f_s: expected {dim} component(s), got {}",
                    f_s.len()
                )));
            }
            data.f_s = f_s.iter().map(TimeFnSpec::to_core).collect();
        }
        if let Some(h_s) = &rc.h_s {
            data.h_s = h_s.to_core();
        }
        if let Some(q_s) = &rc.q_s {
            data.q_s = q_s.to_core();
        }
        bc.regions.insert(region, data);
    }

    let mut params = SchemeParams::new(cfg.scheme.tau, cfg.scheme.t_end);
    params.quasistatic = cfg.scheme.quasistatic;
    params.strict = cfg.scheme.strict;
    params.pin_dofs = cfg.scheme.pin_dofs.clone();
    params.allow_large_tau = cfg.scheme.allow_large_tau;
    params.equilibrated_loads = cfg.scheme.equilibrated_loads;
    params.step3_multi_start = cfg.scheme.step3_multi_start;
    params.keep_every = cfg.output.snapshot_stride.max(1);

    let n_nodes = mesh.n_nodes();
    let np = model.n_phase();
    let init = &cfg.initial;
    let u0 = vector_field(init.u0.as_ref(), n_nodes, dim, "u0")?;
    let v0 = vector_field(init.v0.as_ref(), n_nodes, dim, "v0")?;
    let chi0 = vector_field(init.chi0.as_ref(), n_nodes, np, "chi0")?;
    let c0 = scalar_field(init.c0.as_ref(), n_nodes, 0.0, "c0")?;
    let d0 = scalar_field(init.d0.as_ref(), n_nodes, 1.0, "d0")?;
    let theta0 = scalar_field(init.theta0.as_ref(), n_nodes, 1.0, "theta0")?;

    let pb = Problem::new(mesh, model, bc, params)?;
    let state = State::initialize(&pb.mesh, pb.model.as_ref(), u0, v0, chi0, c0, d0, theta0)?;
    Ok((pb, state))
}
