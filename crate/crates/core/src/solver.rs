//! Monotone iteration `M[u^{j+1}] - k u^{j+1} = -k u^j - f(u^j)` on `B_R`, continuation in `R`,
//! and discrete maximum/comparison principle checks.

use std::sync::Arc;

use serde::Serialize;

use crate::barriers::make_subsolution;
use crate::exec::{pairwise_sum, Exec};
use crate::grid::{make_grid, Field, Grid};
use crate::kernel::{DiscreteKernel, KernelProfile};
use crate::nonlocal_op::{ApplyMode, OperatorHandle};
use crate::resource::ResourceSpec;
use crate::{KppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Start {
    Zero,
    Subsolution {
        z: [f64; 2],
        theta: f64,
    },
    /// Scaled principal eigenvector of `M + a` when its eigenvalue is positive.
    Principal,
    /// Sub-solution if it passes the residual check at this `eps`, otherwise `Principal`.
    Auto {
        z: [f64; 2],
        theta: f64,
    },
    Custom {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub m: f64,
    pub k: Option<f64>,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub tol_r: f64,
    /// Empty means the default schedule `R0 * {1, 2, 4, 8}`.
    pub r_schedule: Vec<f64>,
    pub h: Option<f64>,
    pub cutoff: Option<f64>,
    pub max_iters: usize,
    pub max_inner: usize,
    pub start: Start,
    pub keep_history: bool,
    pub mode: Option<ApplyMode>,
    pub inner: InnerMethod,
    #[serde(skip)]
    pub exec: Exec,
}

impl SolverConfig {
    pub fn new(epsilon: f64, m: f64) -> Self {
        SolverConfig {
            epsilon,
            m,
            k: None,
            tol_inner: 1e-14,
            tol_outer: 1e-11,
            tol_r: 1e-8,
            r_schedule: Vec::new(),
            h: None,
            cutoff: None,
            max_iters: 2_000_000,
            max_inner: 500,
            start: Start::Auto { z: [0.0, 0.0], theta: 0.3 },
            keep_history: false,
            mode: None,
            inner: InnerMethod::Contraction,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Fixed-point contraction, needs `k > 2 eps^{-m}`.
    Contraction,
    /// Conjugate gradients on the symmetric positive definite `k - M`; any `k > 0`.
    ConjugateGradient,
}

/// `1 + 4 ||a+|| + ||a||`, the smallest default keeping the step monotone.
pub fn reaction_k(resource: &ResourceSpec) -> f64 {
    1.0 + 4.0 * resource.sup_a_plus() + resource.sup_abs()
}

/// `1 + max(2 eps^{-m}, 4 ||a+|| + ||a||)`
pub fn default_k(eps: f64, m: f64, resource: &ResourceSpec) -> f64 {
    1.0 + (2.0 * eps.powf(-m)).max(4.0 * resource.sup_a_plus() + resource.sup_abs())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterRecord {
    pub delta: f64,
    pub monotonicity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub radius: f64,
    pub nodes: usize,
    pub outer_iters: usize,
    pub residual_sup: f64,
    pub monotonicity_violation: f64,
    pub bracket_violation: f64,
    pub converged: bool,
    pub start: String,
    pub start_min_residual: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub stages: Vec<StageReport>,
    pub outer_iters: usize,
    pub residual_sup: f64,
    pub monotonicity_violation: f64,
    pub positivity_min: f64,
    pub k: f64,
    pub converged: bool,
    pub bracket_violation: f64,
    /// `sup |u_R - u_{R_prev}|` on `B_{R_ell}` at the last stage.
    pub window_change: Option<f64>,
    /// `max (u_{R_prev} - u_R)` over common nodes, across stages.
    pub radius_monotonicity_violation: f64,
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `M[u] - k u = g` by `u <- (s K u - g) / (s + k)`, `s = eps^{-m}`.
pub fn inner_solve(op: &OperatorHandle, k: f64, g: &Field, tol_inner: f64) -> Result<Field> {
    if g.values().len() != op.grid().len() {
        return Err(KppError::GridMismatch("right-hand side is not on the operator grid".into()));
    }
    let u = inner_solve_values(op, k, g.values(), None, tol_inner, 10_000)?;
    Field::new(op.grid().clone(), u)
}

fn inner_solve_values(
    op: &OperatorHandle,
    k: f64,
    g: &[f64],
    warm: Option<&[f64]>,
    tol_inner: f64,
    max_inner: usize,
) -> Result<Vec<f64>> {
    let s = op.scale();
    if !(k > 2.0 * s) {
        return Err(KppError::Precondition(format!("k = {k} must exceed 2 eps^-m = {}", 2.0 * s)));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(KppError::NonFinite("right-hand side"));
    }
    let denom = 1.0 / (s + k);
    let mut u: Vec<f64> = match warm {
        Some(w) => w.to_vec(),
        None => g.iter().map(|v| -v / k).collect(),
    };
    let scale = sup_abs(&u).max(sup_abs(g) / k);
    let thresh = tol_inner * scale;
    let mut prev_change = f64::INFINITY;
    for _ in 0..max_inner {
        let ku = op.convolve(&u);
        let next: Vec<f64> = ku.iter().zip(g).map(|(c, gi)| (s * c - gi) * denom).collect();
        let change = next.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        u = next;
        if change <= thresh || change == 0.0 || (change >= prev_change && change <= 1e3 * f64::EPSILON * scale) {
            break;
        }
        prev_change = change;
    }
    Ok(u)
}

/// Solves `M[u] - k u = g` by conjugate gradients from `warm`.
pub fn inner_solve_cg(op: &OperatorHandle, k: f64, g: &[f64], warm: &[f64], tol_inner: f64) -> Result<Vec<f64>> {
    if !(k > 0.0) {
        return Err(KppError::Precondition("k must be positive".into()));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(KppError::NonFinite("right-hand side"));
    }
    let s = op.scale();
    let n = g.len();
    let apply_a = |x: &[f64]| -> Vec<f64> {
        let kx = op.convolve(x);
        x.iter().zip(&kx).map(|(xi, ci)| (s + k) * xi - s * ci).collect()
    };
    let dot = |x: &[f64], y: &[f64]| -> f64 {
        let prod: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        pairwise_sum(&prod)
    };
    let mut x = warm.to_vec();
    let ax = apply_a(&x);
    let mut r: Vec<f64> = (0..n).map(|i| -g[i] - ax[i]).collect();
    let scale = sup_abs(warm).max(sup_abs(g) / k);
    let thresh = tol_inner * scale * k;
    if sup_abs(&r) <= thresh {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let max_iter = 20 * n + 1000;
    for _ in 0..max_iter {
        let ap = apply_a(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if sup_abs(&r) <= thresh {
            return Ok(x);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(KppError::Budget("conjugate gradient did not reach the inner tolerance".into()))
}

fn kpp_f(u: f64, a: f64) -> f64 {
    u * (a - u)
}

/// Positive multiple of the principal eigenvector of `M + diag(a)` that is a strict
/// sub-solution, or `None` when no positive sub-eigenfunction is found.
pub fn principal_start(op: &OperatorHandle, a: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let s = op.scale();
    let shift = s + a.iter().fold(0.0f64, |m, &x| m.max(-x)) + 1.0;
    let mut v = vec![1.0; n];
    let max_iter = 200_000;
    for it in 1..=max_iter {
        let mv = op.apply_values(&v);
        let mut bv: Vec<f64> = mv.iter().zip(&v).zip(a).map(|((m, v), a)| m + (a + shift) * v).collect();
        let top = bv.iter().fold(0.0f64, |m, &x| m.max(x));
        if !(top > 0.0) {
            return None;
        }
        bv.iter_mut().for_each(|x| *x /= top);
        if it % 25 == 0 {
            let lv = op.apply_values(&bv);
            let mut mu_min = f64::INFINITY;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let l = lv[i] + a[i] * bv[i];
                num += l * bv[i];
                den += bv[i] * bv[i];
                if bv[i] > 0.0 {
                    mu_min = mu_min.min(l / bv[i]);
                } else {
                    mu_min = f64::NEG_INFINITY;
                }
            }
            if mu_min > 0.0 {
                let delta = 0.5 * mu_min;
                return Some(bv.iter().map(|x| delta * x).collect());
            }
            if it > 5000 && num / den <= 0.0 {
                return None;
            }
        }
        v = bv;
    }
    None
}

fn resolve_start(op: &OperatorHandle, resource: &ResourceSpec, a: &[f64], start: &Start) -> Result<(Vec<f64>, String)> {
    let g = op.grid();
    let n = g.len();
    let dim = g.dim();
    let sub = |z: [f64; 2], theta: f64| -> Result<Vec<f64>> {
        let s = make_subsolution(resource, z, theta, dim)?;
        Ok(s.field(g, op.exec()).into_values())
    };
    match start {
        Start::Zero => Ok((vec![0.0; n], "zero".into())),
        Start::Subsolution { z, theta } => Ok((sub(*z, *theta)?, format!("subsolution(theta={theta})"))),
        Start::Custom { values } => {
            if values.len() != n {
                return Err(KppError::GridMismatch("custom start has the wrong length".into()));
            }
            Ok((values.clone(), "custom".into()))
        }
        Start::Principal => match principal_start(op, a) {
            Some(v) => Ok((v, "principal".into())),
            None => Ok((vec![0.0; n], "zero (no positive principal eigenfunction)".into())),
        },
        Start::Auto { z, theta } => {
            let v = sub(*z, *theta)?;
            let k = 1.0;
            let r = op.residual_values(&v, a);
            if min_of(&r) >= -start_tol(k) {
                Ok((v, format!("subsolution(theta={theta})")))
            } else {
                resolve_start(op, resource, a, &Start::Principal)
            }
        }
    }
}

fn start_tol(k: f64) -> f64 {
    1e-12 * k
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, &x| m.min(x))
}

/// Monotone iteration on the operator's grid.
pub fn solve_truncated(
    op: &OperatorHandle,
    resource: &ResourceSpec,
    config: &SolverConfig,
) -> Result<(Field, SolveReport)> {
    let grid = op.grid().clone();
    let a = resource.sample(&grid).into_values();
    let (u0, kind) = resolve_start(op, resource, &a, &config.start)?;
    let (u, stage) = iterate(op, resource, &a, u0, kind, config)?;
    let field = Field::new(grid, u)?;
    let report = summarize(vec![stage], &field, config_k(op, resource, config), None, 0.0);
    Ok((field, report))
}

fn config_k(op: &OperatorHandle, resource: &ResourceSpec, config: &SolverConfig) -> f64 {
    config.k.unwrap_or_else(|| match config.inner {
        InnerMethod::Contraction => default_k(op.epsilon(), op.m(), resource),
        InnerMethod::ConjugateGradient => reaction_k(resource),
    })
}

fn iterate(
    op: &OperatorHandle,
    resource: &ResourceSpec,
    a: &[f64],
    u0: Vec<f64>,
    kind: String,
    config: &SolverConfig,
) -> Result<(Vec<f64>, StageReport)> {
    let k = config_k(op, resource, config);
    let s = op.scale();
    let needs = if config.inner == InnerMethod::Contraction { 2.0 * s } else { 0.0 };
    if !(k > needs) || k < 4.0 * resource.sup_a_plus() + resource.sup_abs() {
        return Err(KppError::Precondition(format!("k = {k} violates the monotonicity conditions")));
    }
    let sup_ap = resource.sup_a_plus();
    let r0 = op.residual_values(&u0, a);
    let start_min = min_of(&r0);
    if start_min < -start_tol(k) {
        return Err(KppError::StartNotSubsolution(start_min));
    }
    if u0.iter().any(|&x| x < 0.0 || x > sup_ap * (1.0 + 1e-12)) {
        return Err(KppError::Precondition("start must lie in [0, ||a+||]".into()));
    }
    let mut u = u0.clone();
    let mut mono = f64::NEG_INFINITY;
    let mut bracket = 0.0f64;
    let mut iters = 0;
    let mut converged = false;
    let mut history = Vec::new();
    let mut prev_delta = f64::INFINITY;
    let mut rho: f64 = 0.0;
    let floor = 64.0 * f64::EPSILON * sup_ap;
    while iters < config.max_iters {
        let g: Vec<f64> = u.iter().zip(a).map(|(&ui, &ai)| -k * ui - kpp_f(ui, ai)).collect();
        let next = match config.inner {
            InnerMethod::Contraction => inner_solve_values(op, k, &g, Some(&u), config.tol_inner, config.max_inner)?,
            InnerMethod::ConjugateGradient => inner_solve_cg(op, k, &g, &u, config.tol_inner)?,
        };
        iters += 1;
        let mut delta = 0.0f64;
        let mut viol = f64::NEG_INFINITY;
        for ((&p, &q), &st) in u.iter().zip(&next).zip(&u0) {
            delta = delta.max((q - p).abs());
            viol = viol.max(p - q);
            bracket = bracket.max(st - q).max(q - sup_ap);
        }
        mono = mono.max(viol);
        if config.keep_history {
            history.push(IterRecord { delta, monotonicity: viol });
        }
        if viol > 1e-12 {
            return Err(KppError::Monotonicity(viol));
        }
        u = next;
        if prev_delta.is_finite() && prev_delta > 0.0 && delta > floor {
            let r = (delta / prev_delta).min(1.0 - 1e-9);
            rho = if rho == 0.0 { r } else { 0.9 * rho + 0.1 * r };
        }
        let est = delta * (rho / (1.0 - rho)).max(1.0);
        if delta == 0.0 || est < config.tol_outer || delta <= floor {
            converged = true;
            break;
        }
        prev_delta = delta;
    }
    if converged {
        fill_support(op, a, &mut u, k);
    }
    let res = op.residual_values(&u, a);
    let stage = StageReport {
        radius: op.grid().radius(),
        nodes: op.grid().len(),
        outer_iters: iters,
        residual_sup: sup_abs(&res),
        monotonicity_violation: mono.max(f64::MIN),
        bracket_violation: bracket,
        converged,
        start: kind,
        start_min_residual: start_min,
        history,
    };
    Ok((u, stage))
}

/// Nonpositive nodes of a nonzero sub-solution that the outer loop never reached are raised to
/// `r / (s + k)`, one stencil hop per pass; the result is still a sub-solution.
fn fill_support(op: &OperatorHandle, a: &[f64], u: &mut [f64], k: f64) {
    let mut zeros = u.iter().filter(|&&x| x <= 0.0).count();
    if zeros == u.len() {
        return;
    }
    let c = 1.0 / (op.scale() + k);
    while zeros > 0 {
        let r = op.residual_values(u, a);
        for (ui, ri) in u.iter_mut().zip(&r) {
            if *ui <= 0.0 && *ri > 0.0 {
                *ui = ri * c;
            }
        }
        let z = u.iter().filter(|&&x| x <= 0.0).count();
        if z == zeros {
            break;
        }
        zeros = z;
    }
}

fn summarize(stages: Vec<StageReport>, u: &Field, k: f64, window: Option<f64>, rmono: f64) -> SolveReport {
    let last = stages.last().expect("at least one stage");
    SolveReport {
        outer_iters: stages.iter().map(|s| s.outer_iters).sum(),
        residual_sup: last.residual_sup,
        monotonicity_violation: stages.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.monotonicity_violation)),
        positivity_min: min_of(u.values()),
        k,
        converged: stages.iter().all(|s| s.converged) && window.is_none_or(|w| w.is_finite()),
        bracket_violation: stages.iter().fold(0.0, |m, s| m.max(s.bracket_violation)),
        window_change: window,
        radius_monotonicity_violation: rmono,
        stages,
    }
}

/// Lattice spacing and stencil cutoff used by `config` at its `eps`.
pub fn resolution(kernel: &KernelProfile, config: &SolverConfig) -> (f64, f64) {
    let h = config.h.unwrap_or_else(|| kernel.max_spacing(config.epsilon));
    let c = config.cutoff.unwrap_or_else(|| kernel.default_cutoff(config.epsilon));
    (h, c)
}

/// Radii actually used: the configured schedule snapped to the lattice, or `R0 * {1,2,4,8}`.
pub fn radius_schedule(kernel: &KernelProfile, resource: &ResourceSpec, config: &SolverConfig) -> Vec<f64> {
    let (h, c) = resolution(kernel, config);
    let base: Vec<f64> = if config.r_schedule.is_empty() {
        let r0 = resource.r_ell() + 2.0 * c;
        vec![r0, 2.0 * r0, 4.0 * r0, 8.0 * r0]
    } else {
        config.r_schedule.clone()
    };
    base.iter().map(|r| (r / h - 1e-9).ceil() * h).collect()
}

/// Operator on the ball of radius `radius`, rounded up to a multiple of the spacing.
pub fn make_operator(kernel: &KernelProfile, config: &SolverConfig, radius: f64) -> Result<OperatorHandle> {
    let (h, c) = resolution(kernel, config);
    let dk = Arc::new(kernel.discretize(config.epsilon, h, c)?);
    operator_on(dk, kernel.dim(), radius, config)
}

fn operator_on(dk: Arc<DiscreteKernel>, dim: usize, radius: f64, config: &SolverConfig) -> Result<OperatorHandle> {
    let h = dk.spacing();
    let grid: Arc<Grid> = Arc::new(make_grid(dim, (radius / h - 1e-9).ceil() * h, h)?);
    let mode = config.mode.unwrap_or_else(|| ApplyMode::auto(&dk, &grid));
    Ok(OperatorHandle::new(dk, grid, config.m, mode)?.with_exec(config.exec))
}

/// Continuation over the radius schedule with zero extension between stages.
pub fn solve_minimal(
    kernel: &KernelProfile,
    resource: &ResourceSpec,
    config: &SolverConfig,
) -> Result<(Field, SolveReport)> {
    let schedule = radius_schedule(kernel, resource, config);
    if schedule.is_empty() || schedule[0] < resource.r_ell() {
        return Err(KppError::Precondition("radius schedule must start at R >= R_ell".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KppError::Precondition("radius schedule must be increasing".into()));
    }
    let (h, c) = resolution(kernel, config);
    let dk = Arc::new(kernel.discretize(config.epsilon, h, c)?);
    let mut stages = Vec::new();
    let mut prev: Option<Field> = None;
    let mut window = None;
    let mut rmono = 0.0f64;
    let mut k = 0.0;
    for &radius in &schedule {
        let op = operator_on(dk.clone(), kernel.dim(), radius, config)?;
        k = config_k(&op, resource, config);
        let a = resource.sample(op.grid()).into_values();
        let (u0, kind) = match &prev {
            None => resolve_start(&op, resource, &a, &config.start)?,
            Some(p) => (p.extend_by_zero(op.grid())?.into_values(), "zero extension".into()),
        };
        let (u, stage) = iterate(&op, resource, &a, u0, kind, config)?;
        stages.push(stage);
        let field = Field::new(op.grid().clone(), u)?;
        if let Some(p) = &prev {
            let g = op.grid();
            let mut change = 0.0f64;
            for i in 0..p.grid().len() {
                let x = p.grid().lattice(i);
                let j = g.index_of(x).expect("nested grids");
                rmono = rmono.max(p.values()[i] - field.values()[j]);
                if p.grid().norm(i) <= resource.r_ell() {
                    change = change.max((p.values()[i] - field.values()[j]).abs());
                }
            }
            window = Some(change);
            prev = Some(field);
            if change < config.tol_r {
                break;
            }
        } else {
            prev = Some(field);
        }
    }
    let u = prev.expect("at least one stage");
    let mut report = summarize(stages, &u, k, window, rmono);
    report.converged &=
        window.is_none_or(|w| w < config.tol_r) && schedule.len() > 1 || schedule.len() == 1 && report.converged;
    Ok((u, report))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaxPrincipleVerdict {
    pub hypothesis_holds: bool,
    pub min_hypothesis: f64,
    pub max_w: f64,
    pub conclusion_holds: bool,
}

/// If `M[w] - k w >= 0` on the grid then `w <= tol`.
pub fn check_max_principle(op: &OperatorHandle, k: f64, w: &Field, tol: f64) -> Result<MaxPrincipleVerdict> {
    if !(k > 0.0) {
        return Err(KppError::Precondition("k must be positive".into()));
    }
    let mw = op.apply(w)?;
    let min_h = mw.values().iter().zip(w.values()).fold(f64::INFINITY, |m, (a, b)| m.min(a - k * b));
    let max_w = w.values().iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let hyp = min_h >= 0.0;
    Ok(MaxPrincipleVerdict {
        hypothesis_holds: hyp,
        min_hypothesis: min_h,
        max_w,
        conclusion_holds: !hyp || max_w <= tol,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ComparisonVerdict {
    pub max_gap: f64,
    pub holds: bool,
    pub sub_min_residual: f64,
    pub super_max_residual: f64,
}

/// Checks residual signs of both inputs on the truncated problem, then `u_sub <= v_super + tol`.
pub fn check_comparison(
    op: &OperatorHandle,
    resource: &ResourceSpec,
    u_sub: &Field,
    v_super: &Field,
    tol: f64,
) -> Result<ComparisonVerdict> {
    let a = resource.sample(op.grid());
    let ru = op.residual_values(u_sub.values(), a.values());
    let rv = op.residual_values(v_super.values(), a.values());
    let sub_min = min_of(&ru);
    let sup_max = rv.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if u_sub.values().iter().any(|&x| x < 0.0) || sub_min < -tol {
        return Err(KppError::ResidualGate(format!("not a nonnegative sub-solution (min residual {sub_min:.3e})")));
    }
    if v_super.values().iter().any(|&x| x <= 0.0) || sup_max > tol {
        return Err(KppError::ResidualGate(format!("not a positive super-solution (max residual {sup_max:.3e})")));
    }
    let gap = u_sub.values().iter().zip(v_super.values()).fold(f64::NEG_INFINITY, |m, (u, v)| m.max(u - v));
    Ok(ComparisonVerdict { max_gap: gap, holds: gap <= tol, sub_min_residual: sub_min, super_max_residual: sup_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{make_kernel, KernelFamily};
    use crate::resource::{make_resource, ResourceFamily};
    use proptest::prelude::*;

    fn setup(eps: f64, m: f64, radius: f64) -> (KernelProfile, ResourceSpec, OperatorHandle, SolverConfig) {
        let j = make_kernel(KernelFamily::UniformBall { radius: 1.0 }, 1).unwrap();
        let a = make_resource(ResourceFamily::GaussianBump { amplitude: 1.0, sigma: 1.0, delta: 0.5 }).unwrap();
        let cfg = SolverConfig::new(eps, m);
        let op = make_operator(&j, &cfg, radius).unwrap();
        (j, a, op, cfg)
    }

    fn round_trip(op: &OperatorHandle, k: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let n = op.grid().len();
        let w: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
        let mw = op.apply_values(&w);
        let g: Vec<f64> = mw.iter().zip(&w).map(|(a, b)| a - k * b).collect();
        (w, g)
    }

    #[test]
    fn inner_zero_rhs() {
        let (_, _, op, _) = setup(0.5, 1.0, 2.0);
        let g = Field::zeros(op.grid().clone());
        let u = inner_solve(&op, 10.0, &g, 1e-13).unwrap();
        assert!(u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inner_round_trip_and_residual() {
        let (_, _, op, _) = setup(0.5, 1.0, 2.0);
        let k = 1.0 + 2.0 * op.scale();
        let (w, g) = round_trip(&op, k, 7);
        let gf = Field::new(op.grid().clone(), g.clone()).unwrap();
        let u = inner_solve(&op, k, &gf, 1e-13).unwrap();
        let err = u.values().iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
        let mu = op.apply_values(u.values());
        let res = (0..g.len()).fold(0.0f64, |m, i| m.max((mu[i] - k * u.values()[i] - g[i]).abs()));
        assert!(res <= 10.0 * 1e-13 * (k + 2.0 * op.scale()), "{res}");
        let cg = inner_solve_cg(&op, 1.5, &round_trip(&op, 1.5, 7).1, &vec![0.0; g.len()], 1e-14).unwrap();
        let err = cg.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn inner_rejects_small_k_and_nan() {
        let (_, _, op, _) = setup(0.5, 1.0, 2.0);
        let g = Field::zeros(op.grid().clone());
        assert!(matches!(inner_solve(&op, op.scale(), &g, 1e-13), Err(KppError::Precondition(_))));
        let mut bad = vec![0.0; op.grid().len()];
        bad[0] = f64::NAN;
        assert!(inner_solve_values(&op, 10.0, &bad, None, 1e-13, 10).is_err());
    }

    #[test]
    fn zero_start_is_fixed_point() {
        let (_, a, op, mut cfg) = setup(0.4, 1.0, 2.0);
        cfg.start = Start::Zero;
        let (u, r) = solve_truncated(&op, &a, &cfg).unwrap();
        assert_eq!(r.outer_iters, 1);
        assert!(u.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn truncated_solve_audits() {
        let (_, a, op, mut cfg) = setup(0.4, 1.0, 2.0);
        cfg.start = Start::Principal;
        cfg.keep_history = true;
        let (u, r) = solve_truncated(&op, &a, &cfg).unwrap();
        let st = &r.stages[0];
        assert!(r.converged);
        assert!(r.monotonicity_violation <= 1e-12);
        assert!(r.bracket_violation <= 1e-12);
        assert!(r.residual_sup <= cfg.tol_outer * (r.k + 2.0));
        assert!(r.positivity_min > 0.0);
        assert_eq!(st.history.len(), st.outer_iters);
        let hmax = st.history.iter().fold(f64::NEG_INFINITY, |m, h| m.max(h.monotonicity));
        assert_eq!(hmax, st.monotonicity_violation);
        assert!(u.values().iter().all(|&x| x <= a.sup_a_plus()));
    }

    #[test]
    fn cg_inner_agrees_with_contraction() {
        let (_, a, op, mut cfg) = setup(0.4, 1.0, 2.0);
        cfg.start = Start::Principal;
        let (u1, _) = solve_truncated(&op, &a, &cfg).unwrap();
        cfg.inner = InnerMethod::ConjugateGradient;
        let (u2, r2) = solve_truncated(&op, &a, &cfg).unwrap();
        assert!(r2.k < 2.0 * op.scale() + 1.0);
        let d = u1.values().iter().zip(u2.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn non_subsolution_start_rejected() {
        let (_, a, op, mut cfg) = setup(0.4, 1.0, 2.0);
        cfg.start = Start::Custom { values: vec![0.45; op.grid().len()] };
        assert!(matches!(solve_truncated(&op, &a, &cfg), Err(KppError::StartNotSubsolution(_))));
    }

    #[test]
    fn small_k_rejected() {
        let (_, a, op, mut cfg) = setup(0.4, 1.0, 2.0);
        cfg.k = Some(1.0);
        cfg.start = Start::Zero;
        assert!(matches!(solve_truncated(&op, &a, &cfg), Err(KppError::Precondition(_))));
    }

    #[test]
    fn minimal_two_stage_monotone_in_radius() {
        let (j, a, _, mut cfg) = setup(0.2, 1.0, 2.0);
        cfg.start = Start::Principal;
        let r0 = a.r_ell() + 0.5;
        cfg.r_schedule = vec![r0, 2.0 * r0];
        let (u, r) = solve_minimal(&j, &a, &cfg).unwrap();
        assert_eq!(r.stages.len(), 2);
        assert!(r.radius_monotonicity_violation <= 1e-12);
        assert!(u.values().iter().all(|&x| x <= a.sup_a_plus() + 1e-12));
        assert!(r.window_change.is_some());
        cfg.r_schedule = vec![0.5 * a.r_ell()];
        assert!(solve_minimal(&j, &a, &cfg).is_err());
    }

    #[test]
    fn start_independence() {
        let (j, _, _, mut cfg) = setup(0.02, 0.0, 2.0);
        let a = make_resource(ResourceFamily::CompactBump { amplitude: 1.0, radius: 1.0, delta: 0.5 }).unwrap();
        let op = make_operator(&j, &cfg, 1.2).unwrap();
        cfg.start = Start::Subsolution { z: [0.0, 0.0], theta: 0.3 };
        let (u1, r1) = solve_truncated(&op, &a, &cfg).unwrap();
        cfg.start = Start::Subsolution { z: [0.1, 0.0], theta: 0.5 };
        let (u2, r2) = solve_truncated(&op, &a, &cfg).unwrap();
        assert!(r1.converged && r2.converged);
        let d = u1.values().iter().zip(u2.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 10.0 * cfg.tol_outer, "{d}");
    }

    #[test]
    fn max_principle_cases() {
        let (_, _, op, _) = setup(0.5, 1.0, 2.0);
        let w = Field::constant(op.grid().clone(), -1.0);
        let v = check_max_principle(&op, 3.0, &w, 1e-12).unwrap();
        assert!(v.hypothesis_holds && v.conclusion_holds);
        let bump = Field::from_fn(op.grid().clone(), |x| (1.0 - x[0] * x[0]).max(0.0));
        let v = check_max_principle(&op, 3.0, &bump, 1e-12).unwrap();
        assert!(!v.hypothesis_holds && v.conclusion_holds);
        assert!(check_max_principle(&op, 0.0, &w, 1e-12).is_err());
    }

    #[test]
    fn comparison_rejects_wrong_signs() {
        let (_, a, op, _) = setup(0.5, 1.0, 2.0);
        let top = Field::constant(op.grid().clone(), a.sup_a_plus());
        let zero = Field::zeros(op.grid().clone());
        let v = check_comparison(&op, &a, &zero, &top, 1e-12).unwrap();
        assert!(v.holds);
        assert!(matches!(check_comparison(&op, &a, &top, &top, 1e-12), Err(KppError::ResidualGate(_))));
        assert!(matches!(check_comparison(&op, &a, &zero, &zero, 1e-12), Err(KppError::ResidualGate(_))));
    }

    #[test]
    fn compact_start_fills_whole_ball() {
        let j = make_kernel(KernelFamily::UniformBall { radius: 1.0 }, 1).unwrap();
        let a = make_resource(ResourceFamily::CompactBump { amplitude: 1.0, radius: 1.0, delta: 0.5 }).unwrap();
        let mut cfg = SolverConfig::new(0.01, 0.5);
        cfg.start = Start::Subsolution { z: [0.0, 0.0], theta: 0.3 };
        cfg.inner = InnerMethod::ConjugateGradient;
        let op = make_operator(&j, &cfg, 2.5).unwrap();
        let (u, r) = solve_truncated(&op, &a, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.positivity_min > 0.0, "{}", r.positivity_min);
        let av = a.sample(op.grid());
        assert!(op.residual_values(u.values(), av.values()).iter().all(|&x| x >= -1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn max_principle_on_resolvent_outputs(seed in 0u64..10_000, k in 0.5f64..20.0) {
            let (_, _, op, _) = setup(0.5, 1.0, 2.0);
            let n = op.grid().len();
            let g: Vec<f64> = (0..n).map(|i| ((i as u64 * 40503 + seed * 7919) % 997) as f64 / 997.0).collect();
            let w = inner_solve_cg(&op, k, &g, &vec![0.0; n], 1e-15).unwrap();
            prop_assert!(w.iter().all(|&x| x <= 1e-13));
            let wf = Field::new(op.grid().clone(), w).unwrap();
            let v = check_max_principle(&op, k, &wf, 1e-13).unwrap();
            prop_assert!(v.conclusion_holds);
        }

        #[test]
        fn adversarial_positive_max_breaks_hypothesis(seed in 0u64..10_000, k in 0.1f64..20.0) {
            let (_, _, op, _) = setup(0.5, 1.0, 2.0);
            let n = op.grid().len();
            let mut w: Vec<f64> = (0..n).map(|i| ((i as u64 * 104729 + seed) % 211) as f64 / 211.0 - 0.8).collect();
            w[(seed as usize) % n] = 1.0;
            let wf = Field::new(op.grid().clone(), w).unwrap();
            let v = check_max_principle(&op, k, &wf, 0.0).unwrap();
            prop_assert!(!v.hypothesis_holds);
        }
    }
}
