//! Run configuration: TOML sections, defaults, and cross-field validation.

use std::fmt;
use std::path::{Path, PathBuf};

use nonlocal_kpp::kernel::{make_kernel, KernelFamily, KernelProfile};
use nonlocal_kpp::resource::{make_resource, ResourceFamily, ResourceSpec};
use nonlocal_kpp::solver::{InnerMethod, Start};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Solve,
    Sweep,
    Barriers,
    Moments,
    Appendix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: Option<PathBuf>,
    pub kernel: RawKernel,
    pub resource: Option<RawResource>,
    #[serde(default)]
    pub solver: RawSolver,
    #[serde(default)]
    pub barriers: RawBarriers,
    #[serde(default)]
    pub moments: RawMoments,
    #[serde(default)]
    pub appendix: RawAppendix,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKernel {
    pub family: String,
    pub dim: Option<usize>,
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    /// Stencil cutoff as a multiple of `eps`.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawResource {
    pub family: String,
    pub amplitude: Option<f64>,
    pub amplitudes: Option<[f64; 2]>,
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
    pub separation: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSolver {
    pub m: Option<f64>,
    pub epsilon: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub k: Option<f64>,
    pub tol_inner: Option<f64>,
    pub tol_outer: Option<f64>,
    pub tol_r: Option<f64>,
    pub r_schedule: Option<Vec<f64>>,
    pub max_iters: Option<usize>,
    pub start: Option<String>,
    pub z: Option<[f64; 2]>,
    pub theta: Option<f64>,
    pub inner: Option<String>,
    pub h: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBarriers {
    pub theta: Option<f64>,
    pub z: Option<[f64; 2]>,
    pub eps_list: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub super_eps: Option<f64>,
    pub extended_radius: Option<f64>,
    pub extended_h: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMoments {
    pub betas: Option<Vec<f64>>,
    pub cutoff: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAppendix {
    pub m: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub eps_list: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub beta_offsets: Option<Vec<f64>>,
    pub cutoff: Option<f64>,
}

/// Fully resolved configuration; serialized into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: Option<PathBuf>,
    pub kernel: KernelConfig,
    pub resource: Option<ResourceFamily>,
    pub solver: SolverSection,
    pub barriers: BarrierSection,
    pub moments: MomentSection,
    pub appendix: AppendixSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub dim: usize,
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSection {
    pub m: f64,
    pub epsilon: f64,
    pub eps_list: Vec<f64>,
    pub k: Option<f64>,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub tol_r: f64,
    pub r_schedule: Vec<f64>,
    pub max_iters: usize,
    pub start: String,
    pub z: Option<[f64; 2]>,
    pub theta: f64,
    pub inner: InnerMethod,
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSection {
    pub theta: f64,
    pub z: Option<[f64; 2]>,
    pub eps_list: Vec<f64>,
    pub beta: Option<f64>,
    pub super_eps: Option<f64>,
    pub extended_radius: f64,
    pub extended_h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentSection {
    pub betas: Vec<f64>,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AppendixSection {
    pub m: f64,
    pub alphas: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub theta: f64,
    pub beta_offsets: Vec<f64>,
    pub cutoff: f64,
}

/// 1-based line of `key` inside `[section]` (or at top level when `section` is empty).
pub fn locate(raw: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in raw.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Ctx<'a> {
    raw: &'a str,
    path: &'a Path,
}

impl Ctx<'_> {
    fn err(&self, section: &str, key: &str, msg: impl fmt::Display) -> ConfigError {
        let line = locate(self.raw, section, key).or_else(|| locate(self.raw, section, ""));
        let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        match line {
            Some(l) => ConfigError(format!("{}:{l}: {name}: {msg}", self.path.display())),
            None => ConfigError(format!("{}: {name}: {msg}", self.path.display())),
        }
    }

    fn positive(&self, section: &str, key: &str, v: f64) -> Result<f64, ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("must be positive and finite, got {v}")))
        }
    }

    fn descending(&self, section: &str, key: &str, v: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        if v.is_empty() || v.iter().any(|&e| !(e > 0.0 && e.is_finite())) || v.windows(2).any(|w| w[1] >= w[0]) {
            return Err(self.err(section, key, "must be a non-empty, positive, strictly descending list"));
        }
        Ok(v)
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: cannot read: {e}", path.display())))?;
    parse(&raw, path)
}

pub fn parse(raw: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    let cfg: RawConfig = toml::from_str(raw).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cx = Ctx { raw, path };

    let k = &cfg.kernel;
    let dim = k.dim.unwrap_or(1);
    if dim != 1 && dim != 2 {
        return Err(cx.err("kernel", "dim", format!("must be 1 or 2, got {dim}")));
    }
    let family = match k.family.as_str() {
        "uniform_ball" => {
            KernelFamily::UniformBall { radius: cx.positive("kernel", "radius", k.radius.unwrap_or(1.0))? }
        }
        "triangle" => KernelFamily::Triangle { radius: cx.positive("kernel", "radius", k.radius.unwrap_or(1.0))? },
        "gaussian" => KernelFamily::Gaussian { sigma: cx.positive("kernel", "sigma", k.sigma.unwrap_or(1.0))? },
        "power_tail" => {
            let a = k.alpha.ok_or_else(|| cx.err("kernel", "alpha", "missing key `alpha` for family power_tail"))?;
            KernelFamily::PowerTail { alpha: cx.positive("kernel", "alpha", a)? }
        }
        other => {
            return Err(cx.err(
                "kernel",
                "family",
                format!("unknown family `{other}` (expected uniform_ball, triangle, gaussian, power_tail)"),
            ))
        }
    };
    if let Some(c) = k.cutoff {
        cx.positive("kernel", "cutoff", c)?;
    }
    make_kernel(family, dim).map_err(|e| cx.err("kernel", "family", e))?;

    let resource = match &cfg.resource {
        None => None,
        Some(r) => {
            let delta = cx.positive("resource", "delta", r.delta.unwrap_or(0.5))?;
            let fam = match r.family.as_str() {
                "compact_bump" => ResourceFamily::CompactBump {
                    amplitude: cx.positive("resource", "amplitude", r.amplitude.unwrap_or(1.0))?,
                    radius: cx.positive("resource", "radius", r.radius.unwrap_or(1.0))?,
                    delta,
                },
                "gaussian_bump" => ResourceFamily::GaussianBump {
                    amplitude: cx.positive("resource", "amplitude", r.amplitude.unwrap_or(1.0))?,
                    sigma: cx.positive("resource", "sigma", r.sigma.unwrap_or(1.0))?,
                    delta,
                },
                "two_bumps" => ResourceFamily::TwoBumps {
                    amplitudes: r.amplitudes.unwrap_or([1.0, 1.0]),
                    radius: cx.positive("resource", "radius", r.radius.unwrap_or(1.0))?,
                    separation: cx.positive("resource", "separation", r.separation.unwrap_or(2.0))?,
                    delta,
                },
                other => {
                    return Err(cx.err(
                        "resource",
                        "family",
                        format!("unknown family `{other}` (expected compact_bump, gaussian_bump, two_bumps)"),
                    ))
                }
            };
            make_resource(fam).map_err(|e| cx.err("resource", "family", e))?;
            Some(fam)
        }
    };

    let s = &cfg.solver;
    let m = s.m.unwrap_or(1.0);
    if !(0.0..2.0).contains(&m) {
        return Err(cx.err("solver", "m", format!("must lie in [0, 2), got {m}")));
    }
    if let KernelFamily::PowerTail { alpha } = family {
        if m > 0.0
            && alpha <= m
            && matches!(cfg.experiment, Some(Experiment::Solve | Experiment::Sweep | Experiment::Barriers))
        {
            return Err(cx.err(
                "solver",
                "m",
                format!("the kernel's moment of order m = {m} is infinite (alpha = {alpha})"),
            ));
        }
    }
    let theta = s.theta.unwrap_or(0.3);
    if !(theta > 0.0 && theta < 1.0) {
        return Err(cx.err("solver", "theta", "must lie in (0, 1)"));
    }
    let start = s.start.clone().unwrap_or_else(|| "auto".into());
    if !["auto", "zero", "principal", "subsolution"].contains(&start.as_str()) {
        return Err(cx.err(
            "solver",
            "start",
            format!("unknown start `{start}` (expected auto, zero, principal, subsolution)"),
        ));
    }
    let inner = match s.inner.as_deref().unwrap_or("contraction") {
        "contraction" => InnerMethod::Contraction,
        "conjugate_gradient" => InnerMethod::ConjugateGradient,
        other => return Err(cx.err("solver", "inner", format!("unknown method `{other}`"))),
    };
    let r_schedule = s.r_schedule.clone().unwrap_or_default();
    if r_schedule.windows(2).any(|w| w[1] <= w[0]) || r_schedule.iter().any(|&r| !(r > 0.0)) {
        return Err(cx.err("solver", "r_schedule", "must be positive and strictly increasing"));
    }
    let solver = SolverSection {
        m,
        epsilon: cx.positive("solver", "epsilon", s.epsilon.unwrap_or(0.2))?,
        eps_list: cx.descending(
            "solver",
            "eps_list",
            s.eps_list.clone().unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05]),
        )?,
        k: s.k.map(|k| cx.positive("solver", "k", k)).transpose()?,
        tol_inner: cx.positive("solver", "tol_inner", s.tol_inner.unwrap_or(1e-14))?,
        tol_outer: cx.positive("solver", "tol_outer", s.tol_outer.unwrap_or(1e-11))?,
        tol_r: cx.positive("solver", "tol_r", s.tol_r.unwrap_or(1e-8))?,
        r_schedule,
        max_iters: s.max_iters.unwrap_or(2_000_000),
        start,
        z: s.z,
        theta,
        inner,
        h: s.h.map(|h| cx.positive("solver", "h", h)).transpose()?,
    };

    let b = &cfg.barriers;
    let btheta = b.theta.unwrap_or(0.3);
    if !(btheta > 0.0 && btheta < 1.0) {
        return Err(cx.err("barriers", "theta", "must lie in (0, 1)"));
    }
    let barriers = BarrierSection {
        theta: btheta,
        z: b.z,
        eps_list: cx.descending(
            "barriers",
            "eps_list",
            b.eps_list
                .clone()
                .unwrap_or_else(|| vec![0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6]),
        )?,
        beta: b.beta.map(|v| cx.positive("barriers", "beta", v)).transpose()?,
        super_eps: b.super_eps.map(|v| cx.positive("barriers", "super_eps", v)).transpose()?,
        extended_radius: cx.positive("barriers", "extended_radius", b.extended_radius.unwrap_or(8.0))?,
        extended_h: cx.positive("barriers", "extended_h", b.extended_h.unwrap_or(0.05))?,
    };

    let mo = &cfg.moments;
    let betas = mo.betas.clone().unwrap_or_else(|| vec![0.5, 1.0, 1.5, 2.0]);
    if betas.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
        return Err(cx.err("moments", "betas", "orders must be finite and nonnegative"));
    }
    let moments = MomentSection { betas, cutoff: cx.positive("moments", "cutoff", mo.cutoff.unwrap_or(1e30))? };

    let ap = &cfg.appendix;
    let am = ap.m.unwrap_or(1.0);
    if !(am > 0.0 && am < 2.0) {
        return Err(cx.err("appendix", "m", format!("must lie in (0, 2), got {am}")));
    }
    let atheta = ap.theta.unwrap_or(0.9);
    if !(atheta > 0.0 && atheta < 1.0) {
        return Err(cx.err("appendix", "theta", "must lie in (0, 1)"));
    }
    let alphas = ap.alphas.clone().unwrap_or_else(|| vec![am + 0.5, am - 0.25]);
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(cx.err("appendix", "alphas", "must be positive"));
    }
    let offsets = ap.beta_offsets.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.01]);
    if offsets.iter().any(|&d| !(d > 0.0 && d < am)) {
        return Err(cx.err("appendix", "beta_offsets", "each offset must lie in (0, m)"));
    }
    let appendix = AppendixSection {
        m: am,
        alphas,
        eps_list: cx.descending(
            "appendix",
            "eps_list",
            ap.eps_list.clone().unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4, 1e-5]),
        )?,
        theta: atheta,
        beta_offsets: offsets,
        cutoff: cx.positive("appendix", "cutoff", ap.cutoff.unwrap_or(1e30))?,
    };

    Ok(RunConfig {
        experiment: cfg.experiment,
        output_dir: cfg.output_dir,
        kernel: KernelConfig { family, dim, cutoff: k.cutoff },
        resource,
        solver,
        barriers,
        moments,
        appendix,
    })
}

impl RunConfig {
    pub fn kernel(&self) -> KernelProfile {
        make_kernel(self.kernel.family, self.kernel.dim).expect("validated")
    }

    pub fn resource(&self) -> Result<ResourceSpec, ConfigError> {
        let fam =
            self.resource.ok_or_else(|| ConfigError("missing section [resource] (key `family` required)".into()))?;
        Ok(make_resource(fam).expect("validated"))
    }

    pub fn start(&self, resource: &ResourceSpec, default: &str) -> Start {
        let s = &self.solver;
        let z = s.z.unwrap_or_else(|| resource.argmax());
        let kind = if s.start == "auto" { default } else { s.start.as_str() };
        match kind {
            "zero" => Start::Zero,
            "principal" => Start::Principal,
            "subsolution" => Start::Subsolution { z, theta: s.theta },
            _ => Start::Auto { z, theta: s.theta },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Result<RunConfig, ConfigError> {
        parse(s, Path::new("run.toml"))
    }

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = p("[kernel]\nfamily = \"uniform_ball\"\n[resource]\nfamily = \"compact_bump\"\n").unwrap();
        assert_eq!(c.kernel.dim, 1);
        assert_eq!(c.solver.m, 1.0);
        assert_eq!(c.solver.eps_list, vec![0.4, 0.2, 0.1, 0.05]);
        assert_eq!(c.appendix.alphas, vec![1.5, 0.75]);
    }

    #[test]
    fn missing_family_is_named() {
        let e = p("[kernel]\ndim = 1\n").unwrap_err();
        assert!(e.0.contains("family"), "{e}");
        assert!(e.0.contains("line"), "{e}");
    }

    #[test]
    fn semantic_errors_are_line_anchored() {
        let e = p("[kernel]\nfamily = \"uniform_ball\"\n\n[solver]\nm = 2.5\n").unwrap_err();
        assert!(e.0.starts_with("run.toml:5: solver.m"), "{e}");
        assert!(p("[kernel]\nfamily = \"power_tail\"\nalpha = 0.5\n[solver]\nm = 1.0\n").is_ok());
        let e = p("experiment = \"solve\"\n[kernel]\nfamily = \"power_tail\"\nalpha = 0.5\n[solver]\nm = 1.0\n")
            .unwrap_err();
        assert!(e.0.starts_with("run.toml:6: solver.m") && e.0.contains("infinite"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(p("[kernel]\nfamily = \"gaussian\"\nwidth = 2\n").is_err());
        assert!(p("[kernel]\nfamily = \"cauchy\"\n").is_err());
    }

    #[test]
    fn locate_finds_keys() {
        let raw = "a = 1\n[solver]\nm = 1\n[kernel]\nm = 2\n";
        assert_eq!(locate(raw, "", "a"), Some(1));
        assert_eq!(locate(raw, "solver", "m"), Some(3));
        assert_eq!(locate(raw, "kernel", "m"), Some(5));
        assert_eq!(locate(raw, "kernel", ""), Some(4));
    }
}
