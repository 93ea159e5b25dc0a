//! Experiments: epsilon sweeps, energy and mass diagnostics, uniqueness probe, moment sharpness.

use serde::Serialize;

use crate::barriers::{make_subsolution, validate_subsolution, SubValidation, ValidateOptions};
use crate::exec::pairwise_sum;
use crate::grid::{integrate, make_grid, Field};
use crate::kernel::{make_kernel, DiscreteKernel, KernelFamily, KernelProfile};
use crate::nonlocal_op::OperatorHandle;
use crate::resource::ResourceSpec;
use crate::solver::{make_operator, solve_minimal, solve_truncated, SolveReport, SolverConfig};
use crate::{KppError, Result};

/// Discrete double integral of `eps^{-m} J_eps(x-y) (u(x)-u(y))^2` over node pairs.
pub fn bbm_energy(kernel: &DiscreteKernel, m: f64, u: &Field) -> Result<f64> {
    let grid = u.grid();
    if grid.dim() != kernel.dim() || (grid.spacing() - kernel.spacing()).abs() > 1e-12 * kernel.spacing() {
        return Err(KppError::GridMismatch("kernel and field disagree on dim or spacing".into()));
    }
    let s = kernel.epsilon().powf(-m);
    let v = u.values();
    let rows: Vec<f64> = (0..grid.len())
        .map(|i| {
            let li = grid.lattice(i);
            let mut acc = 0.0;
            for &(off, w) in kernel.taps() {
                if off == [0, 0] {
                    continue;
                }
                if let Some(j) = grid.index_of([li[0] + off[0], li[1] + off[1]]) {
                    let d = v[i] - v[j];
                    acc += w * d * d;
                }
            }
            acc
        })
        .collect();
    Ok(s * pairwise_sum(&rows) * grid.cell_volume())
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct MassBalance {
    /// `int u (a - u)`
    pub reaction: f64,
    /// `eps^{-m} int u (1 - inside mass)`
    pub leakage: f64,
    /// `int residual`; `reaction = leakage + defect` holds exactly.
    pub defect: f64,
    /// `int |u (a - u)|`
    pub l1_reaction: f64,
}

pub fn mass_residual(op: &OperatorHandle, u: &Field, a: &Field) -> Result<MassBalance> {
    if !u.same_grid(a) || u.values().len() != op.grid().len() {
        return Err(KppError::GridMismatch("fields are not on the operator grid".into()));
    }
    let vol = op.grid().cell_volume();
    let (uv, av) = (u.values(), a.values());
    let reac: Vec<f64> = uv.iter().zip(av).map(|(u, a)| u * (a - u)).collect();
    let leak: Vec<f64> = uv.iter().zip(op.inside_mass()).map(|(u, w)| u * (1.0 - w)).collect();
    let res = op.residual_values(uv, av);
    let abs: Vec<f64> = reac.iter().map(|x| x.abs()).collect();
    Ok(MassBalance {
        reaction: pairwise_sum(&reac) * vol,
        leakage: op.scale() * pairwise_sum(&leak) * vol,
        defect: pairwise_sum(&res) * vol,
        l1_reaction: pairwise_sum(&abs) * vol,
    })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct UniquenessProbe {
    /// `int u v (v - u)`
    pub value: f64,
    /// `int (v r_u - u r_v)`, the value the identity predicts from the residuals.
    pub residual_term: f64,
}

/// Fails with `ResidualGate` unless both fields have `sup |residual| <= gate`.
pub fn uniqueness_probe(op: &OperatorHandle, u: &Field, v: &Field, a: &Field, gate: f64) -> Result<UniquenessProbe> {
    if !u.same_grid(v) || !u.same_grid(a) {
        return Err(KppError::GridMismatch("fields are not on one grid".into()));
    }
    let ru = op.residual_values(u.values(), a.values());
    let rv = op.residual_values(v.values(), a.values());
    for (name, r) in [("u", &ru), ("v", &rv)] {
        let sup = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(sup <= gate) {
            return Err(KppError::ResidualGate(format!("{name} is not a solution (sup residual {sup:.3e})")));
        }
    }
    let (uv, vv) = (u.values(), v.values());
    let vol = op.grid().cell_volume();
    let p: Vec<f64> = uv.iter().zip(vv).map(|(a, b)| a * b * (b - a)).collect();
    let q: Vec<f64> = (0..uv.len()).map(|i| vv[i] * ru[i] - uv[i] * rv[i]).collect();
    Ok(UniquenessProbe { value: pairwise_sum(&p) * vol, residual_term: pairwise_sum(&q) * vol })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetrics {
    pub h: f64,
    pub nodes: usize,
    /// max of `(a+ - u)+` over supp(a+) shrunk by the collar
    pub deficit: f64,
    /// max of `(u - a+)+` where `a <= 0`
    pub excess: f64,
    pub bbm: f64,
    pub mass: MassBalance,
    pub l1_mass: f64,
    /// sup of `u` on `|x| >= R_ell`
    pub boundary_sup: f64,
    pub sup_u: f64,
    /// min of `u - (a-1)+`
    pub lower_bound_gap: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SweepMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub m: f64,
    pub radius: f64,
    pub collar_cells: f64,
    pub entries: Vec<SweepEntry>,
    /// `sup |u_{2R} - u_R|` on `B_{R_ell}` at the smallest `eps`.
    pub revalidation_change: Option<f64>,
    #[serde(skip)]
    pub fields: Vec<Option<Field>>,
}

impl SweepResult {
    pub fn eps_list(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.eps).collect()
    }

    pub fn deficits(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.metrics.as_ref().map_or(f64::NAN, |m| m.deficit)).collect()
    }
}

pub fn solution_metrics(
    op: &OperatorHandle,
    resource: &ResourceSpec,
    u: &Field,
    report: SolveReport,
) -> Result<SweepMetrics> {
    let grid = op.grid();
    let h = grid.spacing();
    let a = resource.sample(grid);
    let collar = 2.0 * h;
    let mut deficit = 0.0f64;
    let mut excess = 0.0f64;
    let mut boundary = 0.0f64;
    let mut gap = f64::INFINITY;
    for i in 0..grid.len() {
        let x = grid.point(i);
        let (ui, ai) = (u.values()[i], a.values()[i]);
        if resource.in_support_interior(x, collar) {
            deficit = deficit.max(ai.max(0.0) - ui);
        }
        if ai <= 0.0 {
            excess = excess.max(ui - ai.max(0.0));
        }
        if grid.norm(i) >= resource.r_ell() {
            boundary = boundary.max(ui);
        }
        gap = gap.min(ui - (ai - 1.0).max(0.0));
    }
    Ok(SweepMetrics {
        h,
        nodes: grid.len(),
        deficit,
        excess,
        bbm: bbm_energy(op.kernel(), op.m(), u)?,
        mass: mass_residual(op, u, &a)?,
        l1_mass: integrate(u),
        boundary_sup: boundary,
        sup_u: u.values().iter().fold(0.0f64, |m, &x| m.max(x)),
        lower_bound_gap: gap,
        report,
    })
}

/// Solves at every `eps` on one ball, radius taken from the continuation at the largest `eps`.
/// `base` supplies tolerances and the start; its `epsilon`, `h` and `cutoff` are reset per `eps`.
pub fn sweep_epsilon(
    kernel: &KernelProfile,
    resource: &ResourceSpec,
    m: f64,
    eps_list: &[f64],
    base: &SolverConfig,
) -> Result<SweepResult> {
    if !(0.0..2.0).contains(&m) {
        return Err(KppError::InvalidParameter(format!("m must lie in [0, 2), got {m}")));
    }
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(KppError::InvalidParameter("eps_list must be positive and strictly descending".into()));
    }
    if m > 0.0 && !kernel.moment_is_finite(m) {
        return Err(KppError::InfiniteMoment(m));
    }
    let cfg_at = |eps: f64| {
        let mut c = base.clone();
        c.epsilon = eps;
        c.m = m;
        c.h = None;
        c.cutoff = None;
        c
    };
    let (_, first) = solve_minimal(kernel, resource, &cfg_at(eps_list[0]))?;
    let radius = first.stages.last().expect("one stage").radius;

    let solved: Vec<Result<(OperatorHandle, Field, SolveReport)>> = base.exec.map_tasks(eps_list.len(), |i| {
        let c = cfg_at(eps_list[i]);
        let op = make_operator(kernel, &c, radius)?;
        let (u, r) = solve_truncated(&op, resource, &c)?;
        Ok((op, u, r))
    });
    let mut entries = Vec::with_capacity(eps_list.len());
    let mut fields = Vec::with_capacity(eps_list.len());
    for (&eps, s) in eps_list.iter().zip(solved) {
        match s.and_then(|(op, u, r)| Ok((solution_metrics(&op, resource, &u, r)?, u))) {
            Ok((met, u)) => {
                entries.push(SweepEntry { eps, metrics: Some(met), error: None });
                fields.push(Some(u));
            }
            Err(e) => {
                entries.push(SweepEntry { eps, metrics: None, error: Some(e.to_string()) });
                fields.push(None);
            }
        }
    }

    let last = eps_list.len() - 1;
    let revalidation_change = fields[last].as_ref().and_then(|u| {
        let mut c = cfg_at(eps_list[last]);
        let (h, _) = crate::solver::resolution(kernel, &c);
        c.r_schedule = vec![radius, (2.0 * radius / h).round() * h];
        c.start = base.start.clone();
        let (v, _) = solve_minimal(kernel, resource, &c).ok()?;
        let g = v.grid();
        let mut change = 0.0f64;
        for i in 0..u.grid().len() {
            if u.grid().norm(i) <= resource.r_ell() {
                let j = g.index_of(u.grid().lattice(i))?;
                change = change.max((v.values()[j] - u.values()[i]).abs());
            }
        }
        Some(change)
    });

    Ok(SweepResult { m, radius, collar_cells: 2.0, entries, revalidation_change, fields })
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub alpha: f64,
    pub betas: Vec<f64>,
    /// `(m - beta) M_beta(J)`, divergent moments truncated at `cutoff`
    pub weighted: Vec<f64>,
    pub truncated: Vec<bool>,
    /// successive `weighted[i+1] / weighted[i]`
    pub ratios: Vec<f64>,
    pub moment_m_finite: bool,
    pub validation: SubValidation,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub m: f64,
    pub dim: usize,
    pub theta: f64,
    pub cutoff: f64,
    pub rows: Vec<MomentRow>,
}

#[derive(Debug, Clone)]
pub struct MomentOptions {
    pub dim: usize,
    pub theta: f64,
    pub z: [f64; 2],
    pub betas_below_m: Vec<f64>,
    pub cutoff: f64,
    pub validate: ValidateOptions,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            dim: 1,
            theta: 0.9,
            z: [0.0, 0.0],
            betas_below_m: vec![0.1, 0.05, 0.01],
            cutoff: 1e30,
            validate: ValidateOptions::default(),
        }
    }
}

/// Tabulates `(m - beta) M_beta` for power-tail kernels as `beta -> m` and validates the
/// sub-solution over `eps_list`.
pub fn moment_sharpness_experiment(
    m: f64,
    alpha_list: &[f64],
    eps_list: &[f64],
    resource: &ResourceSpec,
    opts: &MomentOptions,
) -> Result<MomentReport> {
    if !(m > 0.0 && m < 2.0) {
        return Err(KppError::InvalidParameter(format!("m must lie in (0, 2), got {m}")));
    }
    let sub = make_subsolution(resource, opts.z, opts.theta, opts.dim)?;
    let mut rows = Vec::new();
    for &alpha in alpha_list {
        let kernel = make_kernel(KernelFamily::PowerTail { alpha }, opts.dim)?;
        let betas: Vec<f64> = opts.betas_below_m.iter().map(|d| m - d).collect();
        let mut weighted = Vec::new();
        let mut truncated = Vec::new();
        for &b in &betas {
            let finite = kernel.moment_is_finite(b);
            let mb = if finite { kernel.moment(b)? } else { kernel.truncated_moment(b, opts.cutoff) };
            weighted.push((m - b) * mb);
            truncated.push(!finite);
        }
        let ratios = weighted.windows(2).map(|w| w[1] / w[0]).collect();
        let validation = validate_subsolution(&sub, resource, &kernel, m, eps_list, &opts.validate)?;
        rows.push(MomentRow {
            alpha,
            betas,
            weighted,
            truncated,
            ratios,
            moment_m_finite: kernel.moment_is_finite(m),
            validation,
        });
    }
    Ok(MomentReport { m, dim: opts.dim, theta: opts.theta, cutoff: opts.cutoff, rows })
}

/// `Zero` if identically zero, `Positive` if every node is positive, `Mixed` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    Zero,
    Positive,
    Mixed,
}

pub fn positivity(u: &Field) -> Positivity {
    let v = u.values();
    if v.iter().all(|&x| x == 0.0) {
        Positivity::Zero
    } else if v.iter().all(|&x| x > 0.0) {
        Positivity::Positive
    } else {
        Positivity::Mixed
    }
}

/// Grid of radius `radius` at the spacing `config` would use.
pub fn grid_for(
    kernel: &KernelProfile,
    config: &SolverConfig,
    radius: f64,
) -> Result<std::sync::Arc<crate::grid::Grid>> {
    let (h, _) = crate::solver::resolution(kernel, config);
    Ok(std::sync::Arc::new(make_grid(kernel.dim(), radius, h)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::{make_resource, ResourceFamily};
    use crate::solver::Start;

    fn bump() -> ResourceSpec {
        make_resource(ResourceFamily::CompactBump { amplitude: 1.0, radius: 1.0, delta: 0.5 }).unwrap()
    }

    fn uniform() -> KernelProfile {
        make_kernel(KernelFamily::UniformBall { radius: 1.0 }, 1).unwrap()
    }

    fn solved(eps: f64, m: f64) -> (OperatorHandle, Field, ResourceSpec, SolverConfig) {
        let mut c = SolverConfig::new(eps, m);
        c.start = Start::Principal;
        let a = bump();
        let op = make_operator(&uniform(), &c, 2.0).unwrap();
        let (u, _) = solve_truncated(&op, &a, &c).unwrap();
        (op, u, a, c)
    }

    #[test]
    fn constant_field_has_zero_energy() {
        let (op, _, _, _) = solved(0.4, 1.0);
        let c = Field::constant(op.grid().clone(), 0.7);
        assert_eq!(bbm_energy(op.kernel(), 1.0, &c).unwrap(), 0.0);
    }

    #[test]
    fn step_energy_matches_cell_weight_double_sum() {
        let h = 0.125;
        let j = uniform();
        let dk = j.discretize(1.0, h, 1.0).unwrap();
        let g = std::sync::Arc::new(make_grid(1, 2.0, h).unwrap());
        let u = Field::from_fn(g.clone(), |x| if x[0] > 0.0 { 1.0 } else { 0.0 });
        // cell weight of offset k for the density 1/2 on [-1, 1]
        let w = |k: i64| {
            let lo = (k as f64 - 0.5) * h;
            let hi = (k as f64 + 0.5) * h;
            0.5 * (hi.min(1.0) - lo.max(-1.0)).max(0.0)
        };
        let mut brute = 0.0;
        for i in 0..g.len() {
            for k in 0..g.len() {
                let d = u.values()[i] - u.values()[k];
                brute += w(i as i64 - k as i64) * d * d;
            }
        }
        brute *= h;
        let e = bbm_energy(&dk, 0.0, &u).unwrap();
        assert!((e - brute).abs() < 1e-10, "{e} vs {brute}");
    }

    #[test]
    fn mass_identity_zero_and_solved() {
        let (op, u, a, _) = solved(0.2, 1.0);
        let af = a.sample(op.grid());
        let z = mass_residual(&op, &Field::zeros(op.grid().clone()), &af).unwrap();
        assert_eq!((z.reaction, z.leakage), (0.0, 0.0));
        let b = mass_residual(&op, &u, &af).unwrap();
        assert!((b.reaction - b.leakage - b.defect).abs() <= 1e-10 * b.l1_reaction, "{b:?}");
        assert!(b.leakage > 0.0);
    }

    #[test]
    fn uniqueness_probe_cases() {
        let (op, u, a, c) = solved(0.2, 1.0);
        let af = a.sample(op.grid());
        let gate = 1e-8;
        let p = uniqueness_probe(&op, &u, &u, &af, gate).unwrap();
        assert_eq!(p.value, 0.0);
        let shifted = Field::new(op.grid().clone(), u.values().iter().map(|x| x + 0.1).collect()).unwrap();
        assert!(matches!(uniqueness_probe(&op, &u, &shifted, &af, gate), Err(KppError::ResidualGate(_))));
        let mut c2 = c.clone();
        c2.start = Start::Custom { values: u.values().iter().map(|x| 0.5 * x).collect() };
        let (v, _) = solve_truncated(&op, &a, &c2).unwrap();
        let p = uniqueness_probe(&op, &u, &v, &af, gate).unwrap();
        let scale = a.sup_a_plus().powi(3);
        assert!(p.value.abs() <= 10.0 * c.tol_outer * scale, "{p:?}");
    }

    #[test]
    fn positivity_classes() {
        let g = std::sync::Arc::new(make_grid(1, 1.0, 0.5).unwrap());
        assert_eq!(positivity(&Field::zeros(g.clone())), Positivity::Zero);
        assert_eq!(positivity(&Field::constant(g.clone(), 0.1)), Positivity::Positive);
        assert_eq!(positivity(&Field::from_fn(g, |x| x[0].max(0.0))), Positivity::Mixed);
    }

    #[test]
    fn small_sweep_shape() {
        let mut c = SolverConfig::new(0.4, 1.0);
        c.start = Start::Principal;
        let s = sweep_epsilon(&uniform(), &bump(), 1.0, &[0.4, 0.2], &c).unwrap();
        assert_eq!(s.entries.len(), 2);
        let d = s.deficits();
        assert!(d.iter().all(|x| x.is_finite()));
        assert!(d[1] < d[0]);
        assert!(s.revalidation_change.is_some());
        assert!(sweep_epsilon(&uniform(), &bump(), 1.0, &[0.2, 0.4], &c).is_err());
        assert!(sweep_epsilon(&uniform(), &bump(), 2.0, &[0.4], &c).is_err());
    }

    #[test]
    fn moment_table_dichotomy() {
        let opts = MomentOptions::default();
        let r = moment_sharpness_experiment(1.0, &[1.5, 0.75], &[1e-2], &bump(), &opts).unwrap();
        assert!(r.rows[0].ratios.iter().all(|&q| q <= 2.0));
        assert!(r.rows[1].ratios.iter().all(|&q| q > 2.0));
        assert!(r.rows[1].truncated.iter().all(|&t| t));
        assert!(moment_sharpness_experiment(0.0, &[1.5], &[1e-2], &bump(), &opts).is_err());
    }
}
