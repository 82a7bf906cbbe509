//! Running configured experiments and writing their outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, FieldSource, Kind, MaterialConfig};
use crate::energy::{energy_phi0, test_field_library, weak_residual, LoadField};
use crate::error::{Result, VkError};
use crate::field::{BoundaryData, GridSpec, PlateState};
use crate::flow::{mm_run, FlowOptions, ToySpace, Trajectory};
use crate::io;
use crate::lbfgs::LbfgsOptions;
use crate::plate_space::PlateSpace;
use crate::presets::{Domain, ScalarExpr, VectorExpr};
use crate::slope::local_slope;
use crate::spline::{BicubicSpline, ScalarField};
use crate::thin::{gamma_ladder, Corrector, Generators};

/// Outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunReport {
    /// Contents of `summary.json`, including the normalized configuration.
    pub summary: Value,
    pub files: Vec<PathBuf>,
    /// Every hard invariant of the run held.
    pub passed: bool,
}

/// Nodal values and gradient of a scalar field entry.
pub fn scalar_nodal(src: &str, key: &str, grid: &GridSpec) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
    let n = grid.n_nodes();
    let mut val = vec![0.0; n];
    let mut grad = [vec![0.0; n], vec![0.0; n]];
    let field = scalar_field(src, key, grid)?;
    let dom = grid.domain();
    for j in 0..grid.n2 {
        for i in 0..grid.n1 {
            let k = grid.node(i, j);
            let jet = field.jet(grid.node_x(i, j), &dom);
            val[k] = jet.val;
            grad[0][k] = jet.d1[0];
            grad[1][k] = jet.d1[1];
        }
    }
    Ok((val, grad))
}

/// Nodal values of a vector field entry.
pub fn vector_nodal(src: &str, key: &str, grid: &GridSpec) -> Result<[Vec<f64>; 2]> {
    let [a, b] = vector_field(src, key, grid)?;
    let dom = grid.domain();
    let sample = |f: &ScalarField| -> Vec<f64> {
        (0..grid.n2)
            .flat_map(|j| (0..grid.n1).map(move |i| (i, j)))
            .map(|(i, j)| f.value(grid.node_x(i, j), &dom))
            .collect()
    };
    Ok([sample(&a), sample(&b)])
}

/// A scalar entry as a field: the preset itself, or the spline through csv node values.
pub fn scalar_field(src: &str, key: &str, grid: &GridSpec) -> Result<ScalarField> {
    match FieldSource::parse(src) {
        FieldSource::Preset(e) => Ok(ScalarExpr::parse(&e).map_err(|err| VkError::config(key, err.to_string()))?.into()),
        FieldSource::Csv(p) => {
            let col = io::read_node_csv(&p, grid, 1, key)?.remove(0);
            Ok(ScalarField::Spline(Arc::new(BicubicSpline::new(grid, &col)?)))
        }
    }
}

pub fn vector_field(src: &str, key: &str, grid: &GridSpec) -> Result<[ScalarField; 2]> {
    match FieldSource::parse(src) {
        FieldSource::Preset(e) => {
            let [a, b] = VectorExpr::parse(&e).map_err(|err| VkError::config(key, err.to_string()))?.components();
            Ok([a.into(), b.into()])
        }
        FieldSource::Csv(p) => {
            let mut cols = io::read_node_csv(&p, grid, 2, key)?;
            let b = cols.pop().expect("two columns");
            let a = cols.pop().expect("two columns");
            Ok([
                ScalarField::Spline(Arc::new(BicubicSpline::new(grid, &a)?)),
                ScalarField::Spline(Arc::new(BicubicSpline::new(grid, &b)?)),
            ])
        }
    }
}

pub fn boundary_data(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<BoundaryData> {
    let u_hat = vector_nodal(&cfg.bc.u_hat, "bc.u_hat", grid)?;
    let (v_hat, dv) = scalar_nodal(&cfg.bc.v_hat, "bc.v_hat", grid)?;
    let grad = match &cfg.bc.grad_v_hat {
        Some(g) => vector_nodal(g, "bc.grad_v_hat", grid)?,
        None => dv,
    };
    BoundaryData::from_arrays(grid, u_hat, v_hat, grad)
}

/// Initial state from `[bc]` and `[init]`.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<PlateState> {
    let grid = cfg.grid.spec()?;
    let bc = Arc::new(boundary_data(cfg, &grid)?);
    let u_src = cfg.init.u.as_deref().unwrap_or(&cfg.bc.u_hat);
    let v_src = cfg.init.v.as_deref().unwrap_or(&cfg.bc.v_hat);
    let u = vector_nodal(u_src, "init.u", &grid)?;
    let (v, _) = scalar_nodal(v_src, "init.v", &grid)?;
    PlateState::make_state(grid, bc, u, v)
}

pub fn load_field(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<LoadField> {
    match FieldSource::parse(&cfg.load.f) {
        FieldSource::Preset(e) => LoadField::from_expr(grid, &ScalarExpr::parse(&e).map_err(|err| VkError::config("load.f", err.to_string()))?),
        FieldSource::Csv(p) => LoadField::from_values(grid, io::read_cell_csv(&p, grid, "load.f")?),
    }
}

pub fn flow_options(cfg: &ExperimentConfig) -> FlowOptions {
    FlowOptions {
        lbfgs: LbfgsOptions {
            eps_rel: cfg.run.eps_inner,
            max_iters: cfg.run.max_iters,
            ..LbfgsOptions::default()
        },
        record_slopes: cfg.run.record_slopes,
        precondition: cfg.run.precondition,
    }
}

/// Steps `n` violating `phi(Y_n) + d_n^2/(2 tau) <= phi(Y_{n-1}) + eps`.
pub fn certificate_failures<T>(traj: &Trajectory<T>) -> Vec<usize> {
    let eps = traj.certificate_eps();
    (1..traj.states.len())
        .filter(|&n| traj.energies[n] + traj.increments[n - 1].powi(2) / (2.0 * traj.tau) > traj.energies[n - 1] + eps)
        .collect()
}

fn flow_summary<T>(traj: &Trajectory<T>) -> (Value, bool) {
    let failures = certificate_failures(traj);
    let n = traj.n_steps();
    let monotone = traj.energies.windows(2).all(|w| w[1] <= w[0] + traj.certificate_eps());
    let v = json!({
        "steps": n,
        "requested_steps": traj.requested_steps,
        "complete": traj.is_complete(),
        "failure": traj.failure.as_ref().map(|e| e.to_string()),
        "initial_energy": traj.energies[0],
        "final_energy": traj.energies[n],
        "dissipation_sum": traj.increments.iter().map(|d| d * d / (2.0 * traj.tau)).sum::<f64>(),
        "path_length": traj.increments.iter().sum::<f64>(),
        "certificate_failures": failures.len(),
        "certificate_excess": if n > 0 { Some(traj.certificate_excess()) } else { None },
        "energy_monotone": monotone,
        "kept_previous_steps": traj.stats.iter().filter(|s| s.kept_prev).count(),
        "unconverged_steps": traj.stats.iter().filter(|s| !s.converged).count(),
        "inner_iterations": traj.stats.iter().map(|s| s.iterations).sum::<usize>(),
    });
    (v, traj.is_complete() && failures.is_empty() && monotone)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.dir.join(name);
        std::fs::write(&p, contents)?;
        self.files.push(p);
        Ok(())
    }
}

/// Execute the configured pipeline and write `config.toml`, the CSV tables and
/// `summary.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    out.write("config.toml", &cfg.echo())?;
    let start = Instant::now();
    let (mut details, passed) = match cfg.kind {
        Kind::Toy => run_toy(cfg, &mut out)?,
        Kind::Evolve => run_evolve(cfg, &mut out)?,
        Kind::Slope => run_slope(cfg, &mut out)?,
        Kind::Gamma => run_gamma(cfg, &mut out)?,
    };
    let obj = details.as_object_mut().expect("details are an object");
    obj.insert("kind".into(), serde_json::to_value(cfg.kind).expect("kind serializes"));
    obj.insert("passed".into(), passed.into());
    obj.insert("wall_time_s".into(), start.elapsed().as_secs_f64().into());
    obj.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    let summary_path = out.dir.join("summary.json");
    obj.insert(
        "outputs".into(),
        out.files
            .iter()
            .chain(std::iter::once(&summary_path))
            .map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect::<Vec<_>>()
            .into(),
    );
    let text = serde_json::to_string_pretty(&details).expect("summary serializes");
    out.write("summary.json", &text)?;
    Ok(RunReport {
        summary: details,
        files: out.files,
        passed,
    })
}

fn run_toy(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Value, bool)> {
    let traj = mm_run(&ToySpace, cfg.run.tau, cfg.run.t_end, cfg.toy.x0, &flow_options(cfg))?;
    out.write("run.csv", &io::run_csv(&traj))?;
    let (mut v, passed) = flow_summary(&traj);
    let x = *traj.states.last().expect("nonempty");
    let t = traj.n_steps() as f64 * traj.tau;
    let exact = cfg.toy.x0 * (-t).exp();
    let o = v.as_object_mut().expect("object");
    o.insert("final_state".into(), x.into());
    o.insert("exact".into(), exact.into());
    o.insert("error".into(), (x - exact).abs().into());
    if let Some(sl) = &traj.slopes {
        o.insert("energy_identity_defect".into(), traj.energy_identity_defect(sl)?.into());
    }
    Ok((v, passed))
}

fn run_evolve(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Value, bool)> {
    let init = initial_state(cfg)?;
    let grid = init.grid;
    let forms = cfg.material.forms()?;
    let load = load_field(cfg, &grid)?;
    if cfg.run.record_slopes && !load.is_zero() {
        return Err(VkError::UnsupportedWithLoad);
    }
    let space = PlateSpace::new(forms, load.clone());
    let traj = mm_run(&space, cfg.run.tau, cfg.run.t_end, init, &flow_options(cfg))?;
    out.write("run.csv", &io::run_csv(&traj))?;
    let parts = traj
        .states
        .iter()
        .map(|s| energy_phi0(s, &forms, &load))
        .collect::<Result<Vec<_>>>()?;
    out.write("energy.csv", &io::energy_csv(traj.tau, &parts))?;
    out.write("final_state.csv", &io::snapshot_to_string(traj.states.last().expect("nonempty")))?;

    let (mut v, passed) = flow_summary(&traj);
    let tests = test_field_library(&grid, cfg.run.seed);
    let mut residual: f64 = 0.0;
    for w in traj.states.windows(2) {
        residual = residual.max(weak_residual(&w[0], &w[1], traj.tau, &forms, &load, &tests)?.max());
    }
    let o = v.as_object_mut().expect("object");
    o.insert("max_weak_residual".into(), if traj.n_steps() > 0 { Some(residual) } else { None }.into());
    if let Some(s) = &traj.slopes {
        o.insert("energy_identity_defect".into(), traj.energy_identity_defect(s)?.into());
    }
    Ok((v, passed))
}

fn run_slope(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Value, bool)> {
    let state = match &cfg.slope.state {
        Some(p) => io::read_snapshot(Path::new(p))?,
        None => initial_state(cfg)?,
    };
    let forms = cfg.material.forms()?;
    let load = load_field(cfg, &state.grid)?;
    let r = local_slope(&state, &forms, &load)?;
    let phi = energy_phi0(&state, &forms, &load)?;
    out.write(
        "slope.csv",
        &format!(
            "slope,phi0,cg_iterations,cg_residual,duality_gap,two_form_defect\n{:e},{:e},{},{:e},{:e},{:e}\n",
            r.slope,
            phi.total,
            r.cg.iterations,
            r.cg.final_residual(),
            r.duality_gap,
            r.two_form_defect
        ),
    )?;
    let v = json!({
        "slope": r.slope,
        "energy": phi.total,
        "cg_iterations": r.cg.iterations,
        "cg_residual": r.cg.final_residual(),
        "duality_gap": r.duality_gap,
        "two_form_defect": r.two_form_defect,
    });
    Ok((v, true))
}

fn reject_direct(m: &MaterialConfig) -> Result<()> {
    if m.cw2.is_some() || m.cd2.is_some() {
        return Err(VkError::config("material.cw2", "thin-plate ladders need 3D densities, not direct 2D tensors"));
    }
    Ok(())
}

fn run_gamma(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(Value, bool)> {
    reject_direct(&cfg.material)?;
    let grid = cfg.grid.spec()?;
    let g = &cfg.gamma;
    let corrector = g.corrector()?;
    let generators = Arc::new(Generators::from_fields(
        grid.domain(),
        vector_field(&g.u, "gamma.u", &grid)?,
        scalar_field(&g.v, "gamma.v", &grid)?,
        corrector,
    ));
    let pair = if g.dissipation {
        Some(Arc::new(Generators::from_fields(
            grid.domain(),
            vector_field(&g.pair_u, "gamma.pair_u", &grid)?,
            scalar_field(&g.pair_v, "gamma.pair_v", &grid)?,
            corrector,
        )))
    } else {
        None
    };
    let load = match FieldSource::parse(&cfg.load.f) {
        FieldSource::Preset(e) => ScalarExpr::parse(&e)?,
        FieldSource::Csv(_) => return Err(VkError::config("load.f", "thin-plate ladders take preset loads only")),
    };
    let rows = gamma_ladder(&generators, pair.as_ref(), &cfg.material.spec()?, &g.h_list, &cfg.quadrature.spec()?, &load)?;
    out.write("ladder.csv", &io::ladder_csv(&rows))?;
    let decreasing = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let d_decreasing = rows.windows(2).all(|w| match (w[0].d_gap, w[1].d_gap) {
        (Some(a), Some(b)) => b < a,
        _ => true,
    });
    let last = rows.last().expect("nonempty ladder");
    let v = json!({
        "rows": rows.len(),
        "phi0": last.phi0,
        "final_gap": last.gap,
        "final_p_part": last.energy.p_part,
        "final_d_gap": last.d_gap,
        "gaps_decreasing": decreasing,
        "d_gaps_decreasing": d_decreasing,
    });
    Ok((v, true))
}

/// Generators from a command-line description: a preset such as `pure_bend(1)` used for
/// both `u` and `v`, an explicit `u=<vector preset>;v=<scalar preset>`, or `csv:<snapshot>`
/// whose nodal fields are interpolated by splines. Without `domain`, a snapshot's own
/// rectangle is used, and the unit square otherwise.
pub fn parse_generators(desc: &str, domain: Option<Domain>, corrector: Corrector) -> Result<Generators> {
    let desc = desc.trim();
    if let FieldSource::Csv(p) = FieldSource::parse(desc) {
        let s = io::read_snapshot(&p)?;
        let domain = domain.unwrap_or(s.grid.domain());
        if s.grid.domain() != domain {
            return Err(VkError::GridMismatch(format!("snapshot covers {:?}, expected {domain:?}", s.grid.domain())));
        }
        let spline = |f: &[f64]| -> Result<ScalarField> { Ok(ScalarField::Spline(Arc::new(BicubicSpline::new(&s.grid, f)?))) };
        return Ok(Generators::from_fields(domain, [spline(&s.u[0])?, spline(&s.u[1])?], spline(&s.v_nodal())?, corrector));
    }
    let (u, v) = if desc.contains('=') {
        let mut u = None;
        let mut v = None;
        for part in desc.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some(("u", e)) => u = Some(e.trim().to_string()),
                Some(("v", e)) => v = Some(e.trim().to_string()),
                _ => return Err(VkError::config("generator", format!("expected `u=...;v=...`, got `{part}`"))),
            }
        }
        (u.unwrap_or_else(|| "zero".into()), v.unwrap_or_else(|| "zero".into()))
    } else {
        (desc.to_string(), desc.to_string())
    };
    let u = VectorExpr::parse(&u).map_err(|e| VkError::config("generator.u", e.to_string()))?;
    let v = ScalarExpr::parse(&v).map_err(|e| VkError::config("generator.v", e.to_string()))?;
    Ok(Generators::new(domain.unwrap_or(Domain::unit()), u, v, corrector))
}
