//! Experiment runners and their output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nonlocal_kpp::analysis::{
    moment_sharpness_experiment, solution_metrics, sweep_epsilon, MomentOptions, SweepMetrics,
};
use nonlocal_kpp::barriers::{
    build_supersolution, make_subsolution, validate_subsolution, validation_spacing, ValidateOptions,
};
use nonlocal_kpp::grid::{make_grid, Field};
use nonlocal_kpp::resource::ResourceSpec;
use nonlocal_kpp::solver::{make_operator, radius_schedule, solve_minimal, SolverConfig};
use nonlocal_kpp::KppError;
use serde::Serialize;

use crate::config::{ConfigError, Experiment, RunConfig};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(KppError),
    Io(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<KppError> for RunError {
    fn from(e: KppError) -> Self {
        RunError::Solver(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: &Path) -> RunResult<Self> {
        fs::create_dir_all(dir.join("fields"))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> RunResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> RunResult<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Nodal values with coordinates, one column per named field.
    pub fn fields(&self, name: &str, cols: &[(&str, &Field)]) -> RunResult<()> {
        let grid = cols[0].1.grid();
        let dim = grid.dim();
        let mut header = vec!["x"];
        if dim == 2 {
            header.push("y");
        }
        header.extend(cols.iter().map(|c| c.0));
        let rows: Vec<Vec<String>> = (0..grid.len())
            .map(|i| {
                let mut r: Vec<String> = grid.point(i).iter().map(|&v| num(v)).collect();
                r.extend(cols.iter().map(|c| num(c.1.values()[i])));
                r
            })
            .collect();
        self.csv(&format!("fields/{name}.csv"), &header, &rows)
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub config_path: String,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub parallel: bool,
    pub config: &'a RunConfig,
}

pub fn solver_config(cfg: &RunConfig, resource: &ResourceSpec, eps: f64, default_start: &str) -> SolverConfig {
    let s = &cfg.solver;
    let mut c = SolverConfig::new(eps, s.m);
    c.k = s.k;
    c.tol_inner = s.tol_inner;
    c.tol_outer = s.tol_outer;
    c.tol_r = s.tol_r;
    c.r_schedule = s.r_schedule.clone();
    c.max_iters = s.max_iters;
    c.start = cfg.start(resource, default_start);
    c.inner = s.inner;
    c.h = s.h;
    c.cutoff = cfg.kernel.cutoff.map(|f| f * eps);
    c
}

const METRIC_HEADER: [&str; 20] = [
    "eps",
    "h",
    "nodes",
    "radius",
    "deficit",
    "excess",
    "bbm",
    "reaction",
    "leakage",
    "defect",
    "l1_reaction",
    "l1_mass",
    "boundary_sup",
    "sup_u",
    "lower_bound_gap",
    "outer_iters",
    "residual_sup",
    "monotonicity_violation",
    "positivity_min",
    "converged",
];

fn metric_row(eps: f64, radius: f64, m: &SweepMetrics) -> Vec<String> {
    vec![
        num(eps),
        num(m.h),
        m.nodes.to_string(),
        num(radius),
        num(m.deficit),
        num(m.excess),
        num(m.bbm),
        num(m.mass.reaction),
        num(m.mass.leakage),
        num(m.mass.defect),
        num(m.mass.l1_reaction),
        num(m.l1_mass),
        num(m.boundary_sup),
        num(m.sup_u),
        num(m.lower_bound_gap),
        m.report.outer_iters.to_string(),
        num(m.report.residual_sup),
        num(m.report.monotonicity_violation),
        num(m.report.positivity_min),
        m.report.converged.to_string(),
    ]
}

fn long_rows(eps: f64, m: &SweepMetrics) -> Vec<Vec<String>> {
    [
        ("deficit", m.deficit),
        ("excess", m.excess),
        ("bbm", m.bbm),
        ("reaction", m.mass.reaction),
        ("leakage", m.mass.leakage),
        ("l1_reaction", m.mass.l1_reaction),
        ("l1_mass", m.l1_mass),
        ("boundary_sup", m.boundary_sup),
        ("sup_u", m.sup_u),
    ]
    .iter()
    .map(|(k, v)| vec![num(eps), k.to_string(), num(*v)])
    .collect()
}

/// Returns whether every solve succeeded.
pub fn run(exp: Experiment, cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    match exp {
        Experiment::Solve => solve(cfg, out),
        Experiment::Sweep => sweep(cfg, out),
        Experiment::Barriers => barriers(cfg, out),
        Experiment::Moments => moments(cfg, out),
        Experiment::Appendix => appendix(cfg, out),
    }
}

fn solve(cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    let kernel = cfg.kernel();
    let resource = cfg.resource()?;
    let sc = solver_config(cfg, &resource, cfg.solver.epsilon, "auto");
    let (u, report) = solve_minimal(&kernel, &resource, &sc)?;
    let op = make_operator(&kernel, &sc, u.grid().radius())?;
    let a = resource.sample(op.grid());
    let met = solution_metrics(&op, &resource, &u, report)?;
    out.fields("u", &[("a", &a), ("u", &u)])?;
    out.csv("results.csv", &METRIC_HEADER, &[metric_row(sc.epsilon, u.grid().radius(), &met)])?;
    out.csv("long.csv", &["eps", "metric", "value"], &long_rows(sc.epsilon, &met))?;
    #[derive(Serialize)]
    struct Report<'a> {
        epsilon: f64,
        m: f64,
        schedule: Vec<f64>,
        residual_tolerance: f64,
        metrics: &'a SweepMetrics,
    }
    let tol = sc.tol_outer * (met.report.k + 2.0);
    out.json(
        "report.json",
        &Report {
            epsilon: sc.epsilon,
            m: sc.m,
            schedule: radius_schedule(&kernel, &resource, &sc),
            residual_tolerance: tol,
            metrics: &met,
        },
    )?;
    Ok(true)
}

fn sweep(cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    let kernel = cfg.kernel();
    let resource = cfg.resource()?;
    let eps = &cfg.solver.eps_list;
    let base = solver_config(cfg, &resource, eps[0], "principal");
    let res = sweep_epsilon(&kernel, &resource, cfg.solver.m, eps, &base)?;
    let mut rows = Vec::new();
    let mut long = Vec::new();
    let mut ok = true;
    for (i, (e, f)) in res.entries.iter().zip(&res.fields).enumerate() {
        match (&e.metrics, f) {
            (Some(m), Some(u)) => {
                rows.push(metric_row(e.eps, res.radius, m));
                long.extend(long_rows(e.eps, m));
                let a = resource.sample(u.grid());
                out.fields(&format!("u_eps_{i:02}"), &[("a", &a), ("u", u)])?;
            }
            _ => {
                ok = false;
                let mut r = vec![num(e.eps)];
                r.extend(std::iter::repeat_n(String::new(), METRIC_HEADER.len() - 2));
                r.push("false".into());
                rows.push(r);
            }
        }
    }
    out.csv("results.csv", &METRIC_HEADER, &rows)?;
    out.csv("long.csv", &["eps", "metric", "value"], &long)?;
    out.json("report.json", &res)?;
    Ok(ok)
}

fn barriers(cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    let kernel = cfg.kernel();
    let resource = cfg.resource()?;
    let b = &cfg.barriers;
    let m = cfg.solver.m;
    let dim = kernel.dim();
    let z = b.z.unwrap_or_else(|| resource.argmax());
    let mut sub = make_subsolution(&resource, z, b.theta, dim)?;
    let val = validate_subsolution(&sub, &resource, &kernel, m, &b.eps_list, &ValidateOptions::default())?;
    sub.set_threshold(val.threshold);
    let eps_field = val.threshold.unwrap_or(*b.eps_list.last().expect("non-empty"));
    let h = validation_spacing(&sub, &kernel, eps_field);
    let zr = z[0].hypot(z[1]);
    let rg = ((zr + sub.support_radius()) / h).ceil() * h;
    let g = Arc::new(make_grid(dim, rg, h)?);
    let usub = sub.field(&g, Default::default());
    out.fields("subsolution", &[("subsolution", &usub)])?;
    let rows: Vec<Vec<String>> = val
        .entries
        .iter()
        .map(|e| {
            vec![num(e.eps), num(e.min_residual), num(e.predicted_slack), e.nodes.to_string(), e.passed.to_string()]
        })
        .collect();
    out.csv("validation.csv", &["eps", "min_residual", "predicted_slack", "nodes", "passed"], &rows)?;

    let super_eps = b.super_eps.unwrap_or(eps_field);
    let he = b.extended_h;
    let ge = Arc::new(make_grid(dim, (b.extended_radius / he).round() * he, he)?);
    let sup = build_supersolution(&resource, &kernel, m, b.beta, super_eps, &ge);
    #[derive(Serialize)]
    struct Report<'a> {
        subsolution: &'a nonlocal_kpp::barriers::SubSolutionSpec,
        validation: &'a nonlocal_kpp::barriers::SubValidation,
        supersolution: Option<nonlocal_kpp::barriers::SuperSolutionSpec>,
        supersolution_error: Option<String>,
    }
    let ok = match &sup {
        Ok((v, _)) => {
            let a = resource.sample(&ge);
            out.fields("supersolution", &[("a", &a), ("supersolution", v)])?;
            true
        }
        Err(_) => false,
    };
    let (spec, err) = match sup {
        Ok((_, s)) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    out.json(
        "report.json",
        &Report { subsolution: sub.spec(), validation: &val, supersolution: spec, supersolution_error: err },
    )?;
    Ok(ok && val.threshold.is_some())
}

fn moments(cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    let kernel = cfg.kernel();
    let mo = &cfg.moments;
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct Row {
        beta: f64,
        finite: bool,
        moment: Option<f64>,
        truncated_moment: f64,
    }
    let mut report = Vec::new();
    for &b in &mo.betas {
        let mb = kernel.moment(b)?;
        let tr = kernel.truncated_moment(b, mo.cutoff);
        let finite = mb.is_finite();
        rows.push(vec![num(b), finite.to_string(), if finite { num(mb) } else { "inf".into() }, num(tr)]);
        report.push(Row { beta: b, finite, moment: finite.then_some(mb), truncated_moment: tr });
    }
    out.csv("moments.csv", &["beta", "finite", "moment", "truncated_moment"], &rows)?;
    out.json("report.json", &report)?;
    Ok(true)
}

fn appendix(cfg: &RunConfig, out: &Output) -> RunResult<bool> {
    let resource = cfg.resource()?;
    let ap = &cfg.appendix;
    let opts = MomentOptions {
        dim: cfg.kernel.dim,
        theta: ap.theta,
        z: cfg.barriers.z.unwrap_or_else(|| resource.argmax()),
        betas_below_m: ap.beta_offsets.clone(),
        cutoff: ap.cutoff,
        validate: ValidateOptions::default(),
    };
    let rep = moment_sharpness_experiment(ap.m, &ap.alphas, &ap.eps_list, &resource, &opts)?;
    let mut mrows = Vec::new();
    let mut vrows = Vec::new();
    for r in &rep.rows {
        for i in 0..r.betas.len() {
            mrows.push(vec![num(r.alpha), num(r.betas[i]), num(r.weighted[i]), r.truncated[i].to_string()]);
        }
        for e in &r.validation.entries {
            vrows.push(vec![num(r.alpha), num(e.eps), num(e.min_residual), e.passed.to_string()]);
        }
    }
    out.csv("appendix_moments.csv", &["alpha", "beta", "weighted_moment", "truncated"], &mrows)?;
    out.csv("appendix_validation.csv", &["alpha", "eps", "min_residual", "passed"], &vrows)?;
    out.json("report.json", &rep)?;
    Ok(true)
}
