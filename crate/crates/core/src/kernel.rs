//! Radial dispersal kernels, moments, tails and cell-integrated discrete weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use statrs::function::beta::ln_beta;
use statrs::function::erf::erfc;

use crate::quadrature::{integrate_pts, integrate_to_infinity};
use crate::{KppError, Result};

const QUAD_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    UniformBall { radius: f64 },
    Triangle { radius: f64 },
    Gaussian { sigma: f64 },
    PowerTail { alpha: f64 },
    Custom,
}

/// User-supplied radial profile, normalized at construction.
#[derive(Clone)]
pub struct CustomProfile {
    pub profile: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub support_radius: Option<f64>,
    /// `J_0(r) ~ r^{-(N + tail_exponent)}` at infinity; moments of order `>= tail_exponent` diverge.
    pub tail_exponent: Option<f64>,
    /// Radii where the profile is not smooth.
    pub breakpoints: Vec<f64>,
}

impl fmt::Debug for CustomProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomProfile")
            .field("support_radius", &self.support_radius)
            .field("tail_exponent", &self.tail_exponent)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct KernelProfile {
    family: KernelFamily,
    dim: usize,
    norm: f64,
    custom: Option<CustomProfile>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(KppError::InvalidParameter(format!("dimension must be 1 or 2, got {dim}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(KppError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Surface measure factor: `2` for `N = 1`, `2 pi r` for `N = 2`.
pub fn radial_measure(dim: usize, r: f64) -> f64 {
    if dim == 1 {
        2.0
    } else {
        2.0 * PI * r
    }
}

pub fn make_kernel(family: KernelFamily, dim: usize) -> Result<KernelProfile> {
    check_dim(dim)?;
    let n = dim as f64;
    let norm = match family {
        KernelFamily::UniformBall { radius } => {
            positive("radius", radius)?;
            if dim == 1 {
                1.0 / (2.0 * radius)
            } else {
                1.0 / (PI * radius * radius)
            }
        }
        KernelFamily::Triangle { radius } => {
            positive("radius", radius)?;
            if dim == 1 {
                1.0 / radius
            } else {
                3.0 / (PI * radius * radius)
            }
        }
        KernelFamily::Gaussian { sigma } => {
            positive("sigma", sigma)?;
            (2.0 * PI * sigma * sigma).powf(-n / 2.0)
        }
        KernelFamily::PowerTail { alpha } => {
            positive("alpha", alpha)?;
            if dim == 1 {
                alpha / 2.0
            } else {
                alpha * (alpha + 1.0) / (2.0 * PI)
            }
        }
        KernelFamily::Custom => {
            return Err(KppError::InvalidParameter("use make_custom_kernel for custom profiles".into()))
        }
    };
    Ok(KernelProfile { family, dim, norm, custom: None })
}

pub fn make_custom_kernel(custom: CustomProfile, dim: usize) -> Result<KernelProfile> {
    check_dim(dim)?;
    if let Some(s) = custom.support_radius {
        positive("support_radius", s)?;
    }
    if let Some(t) = custom.tail_exponent {
        if t <= 0.0 {
            return Err(KppError::NonIntegrable(format!("tail exponent {t} <= 0")));
        }
    }
    let mut k = KernelProfile { family: KernelFamily::Custom, dim, norm: 1.0, custom: Some(custom) };
    let mass = k.radial_integral(0.0, |_| 1.0)?;
    if !(mass.is_finite() && mass > 0.0) {
        return Err(KppError::NonIntegrable(format!("mass {mass}")));
    }
    k.norm = 1.0 / mass;
    Ok(k)
}

impl KernelProfile {
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            KernelFamily::UniformBall { radius } | KernelFamily::Triangle { radius } => Some(radius),
            KernelFamily::Gaussian { .. } | KernelFamily::PowerTail { .. } => None,
            KernelFamily::Custom => self.custom.as_ref().and_then(|c| c.support_radius),
        }
    }

    /// Radii where `J_0` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::UniformBall { radius } | KernelFamily::Triangle { radius } => vec![radius],
            KernelFamily::Gaussian { .. } | KernelFamily::PowerTail { .. } => vec![],
            KernelFamily::Custom => {
                let c = self.custom.as_ref().expect("custom profile");
                let mut b = c.breakpoints.clone();
                b.extend(c.support_radius);
                b.sort_by(f64::total_cmp);
                b.dedup();
                b
            }
        }
    }

    /// `J_0(r)`, normalized.
    pub fn profile(&self, r: f64) -> f64 {
        let raw = match self.family {
            KernelFamily::UniformBall { radius } => {
                if r <= radius {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::Triangle { radius } => (1.0 - r / radius).max(0.0),
            KernelFamily::Gaussian { sigma } => (-0.5 * (r / sigma).powi(2)).exp(),
            KernelFamily::PowerTail { alpha } => (1.0 + r).powf(-(self.dim as f64 + alpha)),
            KernelFamily::Custom => {
                let c = self.custom.as_ref().expect("custom profile");
                if c.support_radius.is_some_and(|s| r > s) {
                    0.0
                } else {
                    (c.profile)(r)
                }
            }
        };
        self.norm * raw
    }

    /// `J(x)` for a point `x` in `R^N`.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.profile(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// `sigma_N * int_{r0}^{R} J_0(r) r^{N-1} g(r) dr`, `R` the support radius or infinity.
    fn radial_integral<G: Fn(f64) -> f64>(&self, r0: f64, g: G) -> Result<f64> {
        let f = |r: f64| radial_measure(self.dim, r) * self.profile(r) * g(r);
        let mut pts = vec![r0];
        pts.extend(self.breakpoints().into_iter().filter(|&b| b > r0));
        match self.support_radius() {
            Some(s) => {
                if s <= r0 {
                    return Ok(0.0);
                }
                pts.retain(|&p| p <= s);
                if *pts.last().unwrap() < s {
                    pts.push(s);
                }
                let q = integrate_pts(f, &pts, 1e-15, QUAD_REL);
                Ok(q.value)
            }
            None => {
                let last = *pts.last().unwrap();
                let head = if pts.len() > 1 { integrate_pts(f, &pts, 1e-15, QUAD_REL).value } else { 0.0 };
                let q = integrate_to_infinity(f, last, QUAD_REL);
                if !q.converged {
                    return Err(KppError::NonIntegrable("tail quadrature did not converge".into()));
                }
                Ok(head + q.value)
            }
        }
    }

    /// Whether `M_beta(J)` is finite, decided from family metadata.
    pub fn moment_is_finite(&self, beta: f64) -> bool {
        match self.family {
            KernelFamily::PowerTail { alpha } => beta < alpha,
            KernelFamily::Custom => {
                let c = self.custom.as_ref().expect("custom profile");
                c.support_radius.is_some() || c.tail_exponent.is_none_or(|t| beta < t)
            }
            _ => true,
        }
    }

    /// `M_beta(J) = int J(x) |x|^beta dx`; `+inf` when the tail exponent forces divergence.
    pub fn moment(&self, beta: f64) -> Result<f64> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(KppError::InvalidParameter(format!("moment order must be >= 0, got {beta}")));
        }
        if beta == 0.0 {
            return Ok(1.0);
        }
        if !self.moment_is_finite(beta) {
            return Ok(f64::INFINITY);
        }
        match self.family {
            KernelFamily::PowerTail { alpha } => {
                // sigma_N c int_0^inf r^{beta+N-1} (1+r)^{-(N+alpha)} dr = sigma_N c B(beta+N, alpha-beta)
                let n = self.dim as f64;
                let pref = if self.dim == 1 { alpha } else { alpha * (alpha + 1.0) };
                Ok(pref * ln_beta(beta + n, alpha - beta).exp())
            }
            _ => self.radial_integral(0.0, |r| r.powf(beta)),
        }
    }

    /// `int_{|x| <= cutoff} J(x) |x|^beta dx`, integrated in `ln r` beyond `r = 1`.
    pub fn truncated_moment(&self, beta: f64, cutoff: f64) -> f64 {
        let f = |r: f64| radial_measure(self.dim, r) * self.profile(r) * r.powf(beta);
        let lim = self.support_radius().map_or(cutoff, |s| s.min(cutoff));
        let mut pts = vec![0.0];
        pts.extend(self.breakpoints().into_iter().filter(|&b| b > 0.0 && b < lim.min(1.0)));
        pts.push(lim.min(1.0));
        let head = integrate_pts(f, &pts, 1e-300, QUAD_REL).value;
        if lim <= 1.0 {
            return head;
        }
        let g = |s: f64| {
            let r = s.exp();
            f(r) * r
        };
        let mut spts = vec![0.0];
        spts.extend(self.breakpoints().into_iter().filter(|&b| b > 1.0 && b < lim).map(f64::ln));
        spts.push(lim.ln());
        head + integrate_pts(g, &spts, 1e-300, QUAD_REL).value
    }

    /// `int_{|y| >= r} J(y) dy`.
    pub fn tail_mass(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        let t = match self.family {
            KernelFamily::UniformBall { radius } => {
                let q = (r / radius).min(1.0);
                if self.dim == 1 {
                    1.0 - q
                } else {
                    1.0 - q * q
                }
            }
            KernelFamily::Triangle { radius } => {
                let q = (r / radius).min(1.0);
                if self.dim == 1 {
                    (1.0 - q) * (1.0 - q)
                } else {
                    1.0 - 3.0 * q * q + 2.0 * q * q * q
                }
            }
            KernelFamily::Gaussian { sigma } => {
                if self.dim == 1 {
                    erfc(r / (sigma * std::f64::consts::SQRT_2))
                } else {
                    (-0.5 * (r / sigma).powi(2)).exp()
                }
            }
            KernelFamily::PowerTail { alpha } => {
                if self.dim == 1 {
                    (1.0 + r).powf(-alpha)
                } else {
                    (1.0 + r).powf(-(1.0 + alpha)) * (1.0 + r + alpha * r)
                }
            }
            KernelFamily::Custom => self.radial_integral(r, |_| 1.0).unwrap_or(f64::NAN),
        };
        t.clamp(0.0, 1.0)
    }

    /// Natural cutoff for the discrete stencil at scale `eps`.
    pub fn default_cutoff(&self, eps: f64) -> f64 {
        match self.support_radius() {
            Some(s) => s * eps,
            None => 8.0 * eps,
        }
    }

    /// Largest admissible lattice spacing at scale `eps`.
    pub fn max_spacing(&self, eps: f64) -> f64 {
        eps * self.support_radius().map_or(1.0, |s| s.min(1.0)) / 4.0
    }

    /// Cell-integrated weights of `J_eps` on the lattice `h Z^N`, truncated to `|y| < cutoff`.
    pub fn discretize(&self, eps: f64, h: f64, cutoff: f64) -> Result<DiscreteKernel> {
        positive("epsilon", eps)?;
        positive("grid spacing", h)?;
        positive("cutoff", cutoff)?;
        let max_h = self.max_spacing(eps);
        if h > max_h * (1.0 + 1e-9) {
            return Err(KppError::KernelTooCoarse { h, max_h });
        }
        let c = match self.support_radius() {
            Some(s) => cutoff.min(s * eps),
            None => {
                if cutoff < 5.0 * eps * (1.0 - 1e-12) {
                    return Err(KppError::Precondition(format!("cutoff {cutoff} below 5*eps for an unbounded kernel")));
                }
                cutoff
            }
        };
        let deficit = self.tail_mass(c / eps);
        let kmax = ((c / h + 0.5).ceil() as i64 - 1).max(0) as usize;
        let cs = c / eps;
        let hs = h / eps;
        let side = 2 * kmax + 1;
        let mut weights = vec![0.0; side.pow(self.dim as u32)];
        let breaks: Vec<f64> = self.breakpoints().into_iter().filter(|&b| b < cs).chain([cs]).collect();
        if self.dim == 1 {
            for k in 0..=kmax {
                let (a, b) = if k == 0 { (0.0, 0.5 * hs) } else { ((k as f64 - 0.5) * hs, (k as f64 + 0.5) * hs) };
                let b = b.min(cs);
                if b <= a {
                    continue;
                }
                let mut pts = vec![a];
                pts.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
                pts.push(b);
                let mut w = integrate_pts(|s| self.profile(s), &pts, 1e-16, 1e-13).value;
                if k == 0 {
                    w *= 2.0;
                }
                weights[kmax + k] = w;
                weights[kmax - k] = w;
            }
        } else {
            for i in 0..=kmax {
                for j in 0..=i {
                    let w = self.cell_integral_2d(i, j, hs, cs, &breaks);
                    for (p, q) in [(i, j), (j, i)] {
                        for (sp, sq) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
                            let a = (kmax as i64 + sp * p as i64) as usize;
                            let b = (kmax as i64 + sq * q as i64) as usize;
                            weights[a * side + b] = w;
                        }
                    }
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            let scale = (1.0 - deficit) / total;
            weights.iter_mut().for_each(|w| *w *= scale);
        }
        Ok(DiscreteKernel::new(self.dim, eps, h, c, kmax, weights, deficit))
    }

    fn cell_integral_2d(&self, i: usize, j: usize, hs: f64, cs: f64, breaks: &[f64]) -> f64 {
        let lo = |k: usize| if k == 0 { -0.5 * hs } else { (k as f64 - 0.5) * hs };
        let (x0, x1) = (lo(i), (i as f64 + 0.5) * hs);
        let (y0, y1) = (lo(j), (j as f64 + 0.5) * hs);
        let near = |a: f64, b: f64| if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()) };
        if near(x0, x1).hypot(near(y0, y1)) >= cs {
            return 0.0;
        }
        let inner = |x: f64| {
            let mut pts = vec![y0];
            if y0 < 0.0 && y1 > 0.0 {
                pts.push(0.0);
            }
            for &b in breaks {
                if b > x.abs() {
                    let y = (b * b - x * x).sqrt();
                    for yy in [-y, y] {
                        if yy > y0 && yy < y1 {
                            pts.push(yy);
                        }
                    }
                }
            }
            pts.push(y1);
            pts.sort_by(f64::total_cmp);
            let f = |y: f64| {
                let r = x.hypot(y);
                if r < cs {
                    self.profile(r)
                } else {
                    0.0
                }
            };
            integrate_pts(f, &pts, 1e-17, 1e-13).value
        };
        let mut pts = vec![x0];
        if x0 < 0.0 && x1 > 0.0 {
            pts.push(0.0);
        }
        for &b in breaks {
            for xx in [-b, b] {
                if xx > x0 && xx < x1 {
                    pts.push(xx);
                }
            }
        }
        pts.push(x1);
        pts.sort_by(f64::total_cmp);
        integrate_pts(inner, &pts, 1e-17, 1e-12).value
    }
}

/// Nonnegative, even weights `w_k ~ int_{cell k} J_eps` on a `(2K+1)^N` offset box.
#[derive(Debug, Clone)]
pub struct DiscreteKernel {
    dim: usize,
    eps: f64,
    h: f64,
    cutoff: f64,
    kmax: usize,
    weights: Vec<f64>,
    mass_deficit: f64,
    taps: Vec<([i64; 2], f64)>,
}

impl DiscreteKernel {
    fn new(dim: usize, eps: f64, h: f64, cutoff: f64, kmax: usize, weights: Vec<f64>, mass_deficit: f64) -> Self {
        let side = 2 * kmax + 1;
        let k = kmax as i64;
        let taps = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(idx, &w)| {
                let off =
                    if dim == 1 { [idx as i64 - k, 0] } else { [(idx / side) as i64 - k, (idx % side) as i64 - k] };
                (off, w)
            })
            .collect();
        DiscreteKernel { dim, eps, h, cutoff, kmax, weights, mass_deficit, taps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn epsilon(&self) -> f64 {
        self.eps
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
    /// Stencil half-width in cells.
    pub fn kmax(&self) -> usize {
        self.kmax
    }
    pub fn mass_deficit(&self) -> f64 {
        self.mass_deficit
    }
    /// Dense weights, row-major over offsets `-K..=K` in each axis.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Nonzero weights with their offsets, in lexicographic offset order.
    pub fn taps(&self) -> &[([i64; 2], f64)] {
        &self.taps
    }

    pub fn weight(&self, off: [i64; 2]) -> f64 {
        let k = self.kmax as i64;
        if off[0].abs() > k || (self.dim == 2 && off[1].abs() > k) || (self.dim == 1 && off[1] != 0) {
            return 0.0;
        }
        let side = 2 * self.kmax + 1;
        if self.dim == 1 {
            self.weights[(off[0] + k) as usize]
        } else {
            self.weights[(off[0] + k) as usize * side + (off[1] + k) as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_k w_k |k h|^beta`.
    pub fn discrete_moment(&self, beta: f64) -> f64 {
        self.taps
            .iter()
            .map(|(o, w)| {
                let r = self.h * ((o[0] * o[0] + o[1] * o[1]) as f64).sqrt();
                if r == 0.0 {
                    if beta == 0.0 {
                        *w
                    } else {
                        0.0
                    }
                } else {
                    w * r.powf(beta)
                }
            })
            .sum()
    }
}
