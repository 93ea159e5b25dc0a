//! Explicit sub-solution (mollified cap of the resource) and power-decay super-solution.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::exec::Exec;
use crate::grid::{make_grid_capped, Field, Grid, DEFAULT_MAX_NODES};
use crate::kernel::{radial_measure, KernelFamily, KernelProfile};
use crate::nonlocal_op::{ApplyMode, OperatorHandle};
use crate::quadrature::{gauss7, integrate_pts};
use crate::resource::ResourceSpec;
use crate::{KppError, Result};

/// `max{(1-r)^3, 0}`
pub fn psi(r: f64) -> f64 {
    let t = 1.0 - r;
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// Laplacian of `Psi(x) = psi(|x|)` at `|x| = r > 0` in dimension `dim`.
pub fn laplacian_psi(r: f64, dim: usize) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let t = 1.0 - r;
    3.0 * t * (2.0 - (dim as f64 - 1.0) * t / r)
}

pub fn kappa(dim: usize) -> f64 {
    let n = dim as f64;
    (0.5f64).max((n - 1.0) / (n + 1.0))
}

/// `phi(x) = C min{Psi(x), psi(kappa)}`, unit mass, supported in `B_1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhiProfile {
    pub dim: usize,
    pub kappa: f64,
    pub c_kappa: f64,
}

impl PhiProfile {
    pub fn value(&self, r: f64) -> f64 {
        self.c_kappa * psi(r.max(self.kappa))
    }

    pub fn mass(&self) -> f64 {
        let f = |r: f64| radial_measure(self.dim, r) * self.value(r);
        integrate_pts(f, &[0.0, self.kappa, 1.0], 1e-16, 1e-14).value
    }
}

pub fn build_phi(dim: usize) -> Result<PhiProfile> {
    if dim != 1 && dim != 2 {
        return Err(KppError::InvalidParameter(format!("dimension must be 1 or 2, got {dim}")));
    }
    let k = kappa(dim);
    let raw = PhiProfile { dim, kappa: k, c_kappa: 1.0 };
    Ok(PhiProfile { c_kappa: 1.0 / raw.mass(), ..raw })
}

fn smootherstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubSolutionSpec {
    pub dim: usize,
    pub z: [f64; 2],
    pub theta: f64,
    pub a_plus_z: f64,
    pub r_loc: f64,
    pub kappa: f64,
    pub c_kappa: f64,
    /// Plateau height of the cap `eta`, equal to `(1 - 3 theta / 4) a+(z)`.
    pub eta_height: f64,
    pub eps_threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SubSolution {
    spec: SubSolutionSpec,
    phi: PhiProfile,
    table: Option<Arc<RadialSpline>>,
}

impl SubSolution {
    pub fn spec(&self) -> &SubSolutionSpec {
        &self.spec
    }

    pub fn set_threshold(&mut self, t: Option<f64>) {
        self.spec.eps_threshold = t;
    }

    pub fn support_radius(&self) -> f64 {
        1.5 * self.spec.r_loc
    }

    /// Cap `eta` as a function of the distance to `z`.
    pub fn eta(&self, rho: f64) -> f64 {
        let r = self.spec.r_loc;
        self.spec.eta_height * smootherstep((r - rho) / (0.5 * r))
    }

    fn phi_half(&self, d: f64) -> f64 {
        let h = 0.5 * self.spec.r_loc;
        self.phi.value(d.abs() / h) / h.powi(self.spec.dim as i32)
    }

    /// `(eta * phi_{R/2})` as a function of the distance to `z`.
    pub fn radial(&self, s: f64) -> f64 {
        let s = s.abs();
        if s >= self.support_radius() {
            return 0.0;
        }
        match &self.table {
            Some(t) => t.eval(s).max(0.0),
            None => self.radial_1d(s),
        }
    }

    fn radial_1d(&self, s: f64) -> f64 {
        let r = self.spec.r_loc;
        let hk = 0.5 * r * self.phi.kappa;
        let lo = (-r).max(s - 0.5 * r);
        let hi = r.min(s + 0.5 * r);
        if hi <= lo {
            return 0.0;
        }
        let mut pts = vec![lo, hi];
        for p in [-r, -0.5 * r, 0.5 * r, r, s - hk, s + hk] {
            if p > lo && p < hi {
                pts.push(p);
            }
        }
        pts.sort_by(f64::total_cmp);
        let f = |t: f64| self.eta(t.abs()) * self.phi_half(s - t);
        pts.windows(2).map(|w| gauss7(f, w[0], w[1])).sum()
    }

    fn radial_2d_quad(&self, s: f64) -> f64 {
        let r = self.spec.r_loc;
        let rh = 0.5 * r;
        let theta = |rho: f64| -> f64 {
            if s == 0.0 || rho == 0.0 {
                return 2.0 * PI * self.eta(s.max(rho));
            }
            let mut pts = vec![0.0, PI];
            for d in [rh, r] {
                let c = (s * s + rho * rho - d * d) / (2.0 * s * rho);
                if c > -1.0 && c < 1.0 {
                    pts.push(c.acos());
                }
            }
            pts.sort_by(f64::total_cmp);
            let f = |w: f64| self.eta((s * s + rho * rho - 2.0 * s * rho * w.cos()).max(0.0).sqrt());
            2.0 * integrate_pts(f, &pts, 1e-15, 1e-13).value
        };
        let mut pts = vec![0.0, rh];
        for p in [rh * self.phi.kappa, (s - rh).abs(), s + rh, (s - r).abs(), s + r] {
            if p > 0.0 && p < rh {
                pts.push(p);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let f = |rho: f64| self.phi_half(rho) * rho * theta(rho);
        integrate_pts(f, &pts, 1e-15, 1e-13).value
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d0 = x[0] - self.spec.z[0];
        let d1 = if x.len() > 1 { x[1] - self.spec.z[1] } else { 0.0 };
        self.radial(d0.hypot(d1))
    }

    pub fn field(&self, grid: &Arc<Grid>, exec: Exec) -> Field {
        let v = exec.map(grid.len(), |i| self.eval(grid.point(i)));
        Field::new(grid.clone(), v).expect("finite sub-solution")
    }

    /// Slack `(theta/8) a+(z) inf_{B_{R(1+(kappa+1)/4)}(z)} u` from the construction.
    pub fn predicted_slack(&self) -> f64 {
        let s = &self.spec;
        let rad = s.r_loc * (1.0 + (s.kappa + 1.0) / 4.0);
        s.theta / 8.0 * s.a_plus_z * self.radial(rad)
    }
}

/// Largest `R` with `(1 - theta/4) a+(z) <= a` on `B_{2R}(z)`, by bisection on sampled balls.
pub fn local_radius(resource: &ResourceSpec, z: [f64; 2], theta: f64, dim: usize) -> f64 {
    let target = (1.0 - theta / 4.0) * resource.eval_plus(&z[..dim]);
    let ok = |rr: f64| -> bool {
        let rad = 2.0 * rr;
        if dim == 1 {
            (0..=2000).all(|k| {
                let t = -1.0 + 2.0 * k as f64 / 2000.0;
                resource.eval(&[z[0] + rad * t]) >= target
            })
        } else {
            resource.eval(&z) >= target
                && (1..=64).all(|i| {
                    let q = rad * i as f64 / 64.0;
                    (0..128).all(|j| {
                        let t = 2.0 * PI * j as f64 / 128.0;
                        resource.eval(&[z[0] + q * t.cos(), z[1] + q * t.sin()]) >= target
                    })
                })
        }
    };
    let mut hi = resource.r_ell().max(1.0);
    while ok(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    lo
}

/// Builds the sub-solution centred at `z` and samples it on `grid`.
pub fn build_subsolution(
    resource: &ResourceSpec,
    z: [f64; 2],
    theta: f64,
    grid: &Arc<Grid>,
    dim: usize,
) -> Result<(Field, SubSolution)> {
    let sub = make_subsolution(resource, z, theta, dim)?;
    if grid.dim() != dim {
        return Err(KppError::GridMismatch("grid dimension differs".into()));
    }
    if grid.spacing() > sub.spec.r_loc / 16.0 * (1.0 + 1e-9) {
        return Err(KppError::Grid(format!(
            "spacing {} does not resolve R_loc/2 = {} with 8 cells",
            grid.spacing(),
            sub.spec.r_loc / 2.0
        )));
    }
    let f = sub.field(grid, Exec::default());
    let a = resource.sample_plus(grid);
    for (i, (&u, &ap)) in f.values().iter().zip(a.values()).enumerate() {
        if u > 0.0 && u >= ap {
            return Err(KppError::Precondition(format!("sub-solution reaches a+ at node {i} ({u} >= {ap})")));
        }
    }
    Ok((f, sub))
}

/// Builds the sub-solution without sampling it.
pub fn make_subsolution(resource: &ResourceSpec, z: [f64; 2], theta: f64, dim: usize) -> Result<SubSolution> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(KppError::InvalidParameter(format!("theta must lie in (0,1), got {theta}")));
    }
    let zz = if dim == 1 { [z[0], 0.0] } else { z };
    let a_plus_z = resource.eval_plus(&zz[..dim]);
    if a_plus_z <= 0.0 {
        return Err(KppError::Precondition(format!("z = {zz:?} is not in supp(a+)")));
    }
    let phi = build_phi(dim)?;
    let r_loc = local_radius(resource, zz, theta, dim);
    let spec = SubSolutionSpec {
        dim,
        z: zz,
        theta,
        a_plus_z,
        r_loc,
        kappa: phi.kappa,
        c_kappa: phi.c_kappa,
        eta_height: (1.0 - 0.75 * theta) * a_plus_z,
        eps_threshold: None,
    };
    let mut sub = SubSolution { spec, phi, table: None };
    if dim == 2 {
        let n = 1200;
        let len = sub.support_radius();
        let ys: Vec<f64> = (0..=n).map(|i| sub.radial_2d_quad(len * i as f64 / n as f64)).collect();
        sub.table = Some(Arc::new(RadialSpline::clamped(len, ys)));
    }
    Ok(sub)
}

/// Clamped cubic spline on a uniform mesh of `[0, len]` with zero end slopes.
#[derive(Debug)]
pub struct RadialSpline {
    len: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl RadialSpline {
    fn clamped(len: f64, y: Vec<f64>) -> Self {
        let n = y.len() - 1;
        let h = len / n as f64;
        // Tridiagonal system for second derivatives.
        let mut a = vec![h / 6.0; n + 1];
        let mut b = vec![2.0 * h / 3.0; n + 1];
        let mut c = vec![h / 6.0; n + 1];
        let mut d = vec![0.0; n + 1];
        b[0] = h / 3.0;
        b[n] = h / 3.0;
        a[0] = 0.0;
        c[n] = 0.0;
        d[0] = (y[1] - y[0]) / h;
        d[n] = -(y[n] - y[n - 1]) / h;
        for i in 1..n {
            d[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h;
        }
        for i in 1..=n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut m = vec![0.0; n + 1];
        m[n] = d[n] / b[n];
        for i in (0..n).rev() {
            m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
        }
        RadialSpline { len, y, m }
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.y.len() - 1;
        let h = self.len / n as f64;
        let t = (s / h).clamp(0.0, n as f64);
        let i = (t.floor() as usize).min(n - 1);
        let a = (i as f64 + 1.0) - t;
        let b = t - i as f64;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationEntry {
    pub eps: f64,
    pub min_residual: f64,
    pub predicted_slack: f64,
    pub nodes: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubValidation {
    pub entries: Vec<ValidationEntry>,
    pub threshold: Option<f64>,
    pub tol_sub: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    /// `tol_sub = tol_rel * ||a+||_inf`
    pub tol_rel: f64,
    pub max_nodes: usize,
    pub exec: Exec,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { tol_rel: 1e-8, max_nodes: DEFAULT_MAX_NODES, exec: Exec::default() }
    }
}

/// Lattice spacing used when `u` is checked at scale `eps`.
pub fn validation_spacing(sub: &SubSolution, kernel: &KernelProfile, eps: f64) -> f64 {
    kernel.max_spacing(eps).min(sub.spec.r_loc / 16.0)
}

/// Full-space residual of the sub-solution at one `eps`; returns (min residual, nodes).
pub fn subsolution_residual(
    sub: &SubSolution,
    resource: &ResourceSpec,
    kernel: &KernelProfile,
    m: f64,
    eps: f64,
    max_nodes: usize,
    exec: Exec,
) -> Result<(f64, usize)> {
    let dim = sub.spec.dim;
    let h = validation_spacing(sub, kernel, eps);
    let supp = sub.support_radius();
    let (cutoff, reach) = match kernel.support_radius() {
        Some(s) => (s * eps, s * eps),
        None => ((5.0 * eps).max(2.0 * supp + 2.0 * h), 2.0 * h),
    };
    let zr = sub.spec.z[0].hypot(sub.spec.z[1]);
    let radius = ((zr + supp + reach) / h).ceil() * h;
    let grid = Arc::new(make_grid_capped(dim, radius, h, max_nodes)?);
    let dk = Arc::new(kernel.discretize(eps, h, cutoff)?);
    let mode = ApplyMode::auto(&dk, &grid);
    let op = OperatorHandle::new(dk, grid.clone(), m, mode)?.with_exec(exec);
    let u = sub.field(&grid, exec);
    let a = resource.sample(&grid);
    let r = op.residual_values(u.values(), a.values());
    Ok((r.iter().fold(f64::INFINITY, |x, &y| x.min(y)), grid.len()))
}

/// Residual check over `eps_list`; the threshold is the largest `eps` below which every
/// listed value passes.
pub fn validate_subsolution(
    sub: &SubSolution,
    resource: &ResourceSpec,
    kernel: &KernelProfile,
    m: f64,
    eps_list: &[f64],
    opts: &ValidateOptions,
) -> Result<SubValidation> {
    if m > 0.0 && !kernel.moment_is_finite(m) && !matches!(kernel.family(), KernelFamily::PowerTail { .. }) {
        return Err(KppError::InfiniteMoment(m));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let tol = opts.tol_rel * resource.sup_a_plus();
    let slack = sub.predicted_slack();
    let entries: Vec<ValidationEntry> = eps
        .iter()
        .map(|&e| match subsolution_residual(sub, resource, kernel, m, e, opts.max_nodes, opts.exec) {
            Ok((min_residual, nodes)) => ValidationEntry {
                eps: e,
                min_residual,
                predicted_slack: slack,
                nodes,
                passed: min_residual >= -tol,
                skipped: None,
            },
            Err(err) => ValidationEntry {
                eps: e,
                min_residual: f64::NAN,
                predicted_slack: slack,
                nodes: 0,
                passed: false,
                skipped: Some(err.to_string()),
            },
        })
        .collect();
    let mut threshold = None;
    for e in entries.iter().rev() {
        if e.passed {
            threshold = Some(e.eps);
        } else {
            break;
        }
    }
    Ok(SubValidation { entries, threshold, tol_sub: tol })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuperSolutionSpec {
    pub beta: f64,
    pub tau: f64,
    pub r_sup: f64,
    pub c_tau_r: f64,
    pub ell: f64,
    pub sup_a_plus: f64,
    pub eps: f64,
    pub m: f64,
    pub max_residual: f64,
    pub max_outer_ratio: f64,
    pub mass_deficit_bound: f64,
}

impl SuperSolutionSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = if r <= self.r_sup { self.r_sup } else { r };
        self.c_tau_r * self.tau / (1.0 + self.tau * t.powf(self.beta))
    }

    pub fn plateau(&self) -> f64 {
        self.c_tau_r * self.tau / (1.0 + self.tau * self.r_sup.powf(self.beta))
    }
}

pub fn default_beta(kernel: &KernelProfile) -> f64 {
    let n = kernel.dim() as f64 + 1.0;
    match kernel.family() {
        KernelFamily::PowerTail { alpha } => n.min(alpha - 0.5),
        _ => n,
    }
}

/// Searches `tau = 2^{-j}`, `R = R0 2^i` until the power-decay profile is a super-solution
/// on the nodes of `grid_extended`.
pub fn build_supersolution(
    resource: &ResourceSpec,
    kernel: &KernelProfile,
    m: f64,
    beta: Option<f64>,
    eps: f64,
    grid_extended: &Arc<Grid>,
) -> Result<(Field, SuperSolutionSpec)> {
    let beta = beta.unwrap_or_else(|| default_beta(kernel));
    if !(beta > 0.0) {
        return Err(KppError::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if !kernel.moment(beta)?.is_finite() {
        return Err(KppError::InfiniteMoment(beta));
    }
    let dim = kernel.dim();
    let sup = resource.sup_a_plus();
    let ell = resource.ell();
    let h = kernel.max_spacing(eps);
    let scale = eps.powf(-m);
    let mut cutoff = kernel.default_cutoff(eps);
    if kernel.support_radius().is_none() {
        while scale * kernel.tail_mass(cutoff / eps) > 1e-4 * ell && cutoff / h < 2e5 / dim as f64 / dim as f64 {
            cutoff *= 2.0;
        }
    }
    let dk = Arc::new(kernel.discretize(eps, h, cutoff)?);
    let stencil_grid = Arc::new(crate::grid::make_grid(dim, h, h)?);
    let op = OperatorHandle::new(dk.clone(), stencil_grid, m, ApplyMode::Direct)?;
    let deficit_bound = scale * dk.mass_deficit() * sup;
    let tol = 1e-8 * sup;
    let r0 = resource.r_a().max(resource.r_ell()).max(1.0);
    let pts: Vec<[f64; 2]> = grid_extended.nodes().to_vec();
    let mut r = r0;
    while r <= 0.5 * grid_extended.radius() {
        for j in 1..=48 {
            let tau = 0.5f64.powi(j);
            let spec = SuperSolutionSpec {
                beta,
                tau,
                r_sup: r,
                c_tau_r: (1.0 / tau + r.powf(beta)) * sup,
                ell,
                sup_a_plus: sup,
                eps,
                m,
                max_residual: 0.0,
                max_outer_ratio: 0.0,
                mass_deficit_bound: deficit_bound,
            };
            let f = |x: &[f64]| spec.eval(x);
            let res: Vec<(f64, f64, f64)> = Exec::default().map(pts.len(), |i| {
                let x = pts[i];
                let v = spec.eval(&x[..dim]);
                let a = resource.eval(&x[..dim]);
                let rr = op.apply_fn_at(x, &f) + deficit_bound + v * (a - v);
                (rr, v, a)
            });
            let mut ok = true;
            let mut max_res = f64::NEG_INFINITY;
            let mut max_ratio = f64::NEG_INFINITY;
            for (i, &(rr, v, a)) in res.iter().enumerate() {
                max_res = max_res.max(rr);
                if rr > tol || v < a.max(0.0) {
                    ok = false;
                    break;
                }
                if grid_extended.norm(i) >= r {
                    max_ratio = max_ratio.max(rr / v);
                    if rr > -0.5 * ell * v {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                let spec = SuperSolutionSpec { max_residual: max_res, max_outer_ratio: max_ratio, ..spec };
                let field = Field::from_fn(grid_extended.clone(), |x| spec.eval(x));
                return Ok((field, spec));
            }
        }
        r *= 2.0;
    }
    Err(KppError::Budget(format!("no super-solution with R <= {} on the extended grid", 0.5 * grid_extended.radius())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernel::make_kernel;
    use crate::resource::{make_resource, ResourceFamily};

    fn bump() -> ResourceSpec {
        make_resource(ResourceFamily::CompactBump { amplitude: 1.0, radius: 1.0, delta: 0.5 }).unwrap()
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(0.0), 1.0);
        assert_eq!(psi(1.5), 0.0);
        assert_eq!(psi(0.5), 0.125);
        assert_eq!(laplacian_psi(0.5, 3), 0.0);
        for dim in [1, 2, 3] {
            let k = (dim as f64 - 1.0) / (dim as f64 + 1.0);
            for i in 0..50 {
                let r = k.max(1e-3) + (1.0 - k) * i as f64 / 50.0;
                assert!(laplacian_psi(r, dim) >= -1e-15);
            }
        }
    }

    #[test]
    fn laplacian_matches_finite_differences() {
        for dim in [1usize, 2, 3] {
            let r = 0.6;
            let d = 1e-4;
            let p = |r: f64| psi(r);
            let fd = (p(r + d) - 2.0 * p(r) + p(r - d)) / (d * d)
                + (dim as f64 - 1.0) / r * (p(r + d) - p(r - d)) / (2.0 * d);
            assert!((fd - laplacian_psi(r, dim)).abs() < 1e-6);
        }
    }

    #[test]
    fn phi_constants() {
        assert_eq!(kappa(1), 0.5);
        assert_eq!(kappa(2), 0.5);
        let p1 = build_phi(1).unwrap();
        // 1 / (2 (kappa psi(kappa) + int_kappa^1 psi)) = 1 / (2 (1/16 + 1/64)) = 6.4
        assert!((p1.c_kappa - 6.4).abs() < 1e-12, "{}", p1.c_kappa);
        let p2 = build_phi(2).unwrap();
        let closed = 1.0 / (2.0 * PI * (0.125 * 0.125 + 0.5f64.powi(4) / 4.0 - 0.5f64.powi(5) / 5.0));
        assert!((p2.c_kappa - closed).abs() < 1e-10);
        for p in [p1, p2] {
            assert!((p.mass() - 1.0).abs() < 1e-10);
            assert_eq!(p.value(0.0), p.value(0.5));
            let mut prev = p.value(0.0);
            for i in 1..=100 {
                let v = p.value(i as f64 / 90.0);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn local_radius_compact_bump() {
        let r = local_radius(&bump(), [0.0, 0.0], 0.3, 1);
        assert!((r - (0.0375f64 / 4.0).sqrt()).abs() < 1e-12);
        let r2 = local_radius(&bump(), [0.0, 0.0], 0.3, 2);
        assert!((r2 - r).abs() < 1e-12);
    }

    #[test]
    fn subsolution_shape_1d() {
        let res = bump();
        let sub = make_subsolution(&res, [0.0, 0.0], 0.3, 1).unwrap();
        let rl = sub.spec().r_loc;
        let h = rl / 64.0;
        let radius = (0.2 / h).ceil() * h;
        let g = Arc::new(make_grid(1, radius, h).unwrap());
        let (f, sub) = build_subsolution(&res, [0.0, 0.0], 0.3, &g, 1).unwrap();
        assert!(sub.eval(&[0.0]) >= 0.7 * 0.5);
        assert!((sub.eval(&[0.0]) - sub.spec().eta_height).abs() < 1e-14);
        for (i, &v) in f.values().iter().enumerate() {
            if g.norm(i) >= 1.5 * rl {
                assert_eq!(v, 0.0);
            }
            assert!(v >= 0.0);
        }
        // mass of eta * phi equals mass of eta
        let eta_mass = integrate_pts(|t: f64| 2.0 * sub.eta(t), &[0.0, rl / 2.0, rl], 1e-16, 1e-14).value;
        let u_mass =
            integrate_pts(|t: f64| 2.0 * sub.radial(t), &[0.0, rl / 4.0, rl / 2.0, rl, 1.5 * rl], 1e-16, 1e-13).value;
        assert!((eta_mass - u_mass).abs() < 1e-12);
    }

    #[test]
    fn subsolution_2d_table_matches_quadrature() {
        let res = bump();
        let sub = make_subsolution(&res, [0.0, 0.0], 0.3, 2).unwrap();
        let rl = sub.spec().r_loc;
        assert!((sub.radial(0.0) - sub.spec().eta_height).abs() < 1e-10);
        for s in [0.1, 0.37, 0.6, 0.93, 1.2, 1.45] {
            let q = sub.radial_2d_quad(s * rl);
            assert!((sub.radial(s * rl) - q).abs() < 1e-9, "s={s}");
        }
        let mass =
            integrate_pts(|r: f64| 2.0 * PI * r * sub.radial(r), &[0.0, rl / 2.0, rl, 1.5 * rl], 1e-15, 1e-11).value;
        let eta_mass = integrate_pts(|r: f64| 2.0 * PI * r * sub.eta(r), &[0.0, rl / 2.0, rl], 1e-16, 1e-13).value;
        assert!((mass - eta_mass).abs() < 1e-9 * eta_mass);
    }

    #[test]
    fn rejects_outside_support_and_coarse_grid() {
        let res = bump();
        let g = Arc::new(make_grid(1, 2.0, 0.5).unwrap());
        assert!(build_subsolution(&res, [0.9, 0.0], 0.3, &g, 1).is_err());
        assert!(build_subsolution(&res, [0.0, 0.0], 0.3, &g, 1).is_err());
    }

    #[test]
    fn validation_small_eps_m0() {
        let res = bump();
        let j = make_kernel(KernelFamily::UniformBall { radius: 1.0 }, 1).unwrap();
        let sub = make_subsolution(&res, [0.0, 0.0], 0.3, 1).unwrap();
        let v =
            validate_subsolution(&sub, &res, &j, 0.0, &[0.3, 0.03, 0.01, 0.003], &ValidateOptions::default()).unwrap();
        let t = v.threshold.expect("threshold");
        assert!(t >= 0.01, "{v:?}");
        assert!(!v.entries[0].passed);
    }

    #[test]
    fn supersolution_compact() {
        let res = bump();
        let j = make_kernel(KernelFamily::UniformBall { radius: 1.0 }, 1).unwrap();
        let ext = Arc::new(make_grid(1, 8.0, 0.02).unwrap());
        let (f, s) = build_supersolution(&res, &j, 1.0, None, 0.1, &ext).unwrap();
        assert!((s.plateau() - 0.5).abs() < 1e-15);
        let a = res.sample_plus(&ext);
        for (u, ap) in f.values().iter().zip(a.values()) {
            assert!(u >= ap);
        }
        for i in 0..ext.len() {
            let r = ext.norm(i);
            if r > s.r_sup {
                let c = f.values()[i] * (1.0 + s.tau * r.powf(s.beta));
                assert!((c - s.c_tau_r * s.tau).abs() < 1e-14 * c);
            }
        }
    }
}
