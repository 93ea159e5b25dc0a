//! Resource functions `a(x)`: positive on a bounded set, `<= -ell` far out.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::grid::{Field, Grid};
use crate::{KppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ResourceFamily {
    /// `A exp(-|x|^2 / sigma^2) - delta`
    GaussianBump {
        amplitude: f64,
        sigma: f64,
        delta: f64,
    },
    /// `A max(0, 1 - (|x| / r0)^2) - delta`
    CompactBump {
        amplitude: f64,
        radius: f64,
        delta: f64,
    },
    /// Two compact bumps centred at `(+-separation, 0)`, minus `delta`.
    TwoBumps {
        amplitudes: [f64; 2],
        radius: f64,
        separation: f64,
        delta: f64,
    },
    Custom,
}

#[derive(Clone)]
pub struct CustomResource {
    pub a: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub sup_a_plus: f64,
    pub sup_abs: f64,
    pub r_a: f64,
    pub ell: f64,
    pub r_ell: f64,
    pub argmax: [f64; 2],
}

impl fmt::Debug for CustomResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomResource")
            .field("sup_a_plus", &self.sup_a_plus)
            .field("r_a", &self.r_a)
            .field("ell", &self.ell)
            .field("r_ell", &self.r_ell)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct ResourceSpec {
    family: ResourceFamily,
    custom: Option<CustomResource>,
    sup_a_plus: f64,
    sup_abs: f64,
    r_a: f64,
    ell: f64,
    r_ell: f64,
}

fn bad(msg: String) -> KppError {
    KppError::InvalidParameter(msg)
}

fn bump(amp: f64, r0: f64, d2: f64) -> f64 {
    amp * (1.0 - d2 / (r0 * r0)).max(0.0)
}

pub fn make_resource(family: ResourceFamily) -> Result<ResourceSpec> {
    let (sup_a_plus, sup_abs, r_a, ell, r_ell) = match family {
        ResourceFamily::GaussianBump { amplitude: a, sigma, delta: d } => {
            check_common(a, d)?;
            if !(sigma > 0.0) {
                return Err(bad(format!("sigma must be positive, got {sigma}")));
            }
            let r_a = sigma * (a / d).ln().sqrt();
            let r_ell = sigma * (2.0 * a / d).ln().sqrt();
            (a - d, (a - d).max(d), r_a, 0.5 * d, r_ell)
        }
        ResourceFamily::CompactBump { amplitude: a, radius, delta: d } => {
            check_common(a, d)?;
            if !(radius > 0.0) {
                return Err(bad(format!("radius must be positive, got {radius}")));
            }
            (a - d, (a - d).max(d), radius * (1.0 - d / a).sqrt(), d, radius)
        }
        ResourceFamily::TwoBumps { amplitudes, radius, separation, delta: d } => {
            let amax = amplitudes[0].max(amplitudes[1]);
            check_common(amax, d)?;
            if amplitudes.iter().any(|&a| !(a > 0.0)) {
                return Err(bad("both amplitudes must be positive".into()));
            }
            if !(radius > 0.0) {
                return Err(bad(format!("radius must be positive, got {radius}")));
            }
            if separation < radius {
                return Err(bad(format!("bumps overlap: separation {separation} < radius {radius}")));
            }
            let r_a = amplitudes
                .iter()
                .filter(|&&a| a > d)
                .map(|&a| separation + radius * (1.0 - d / a).sqrt())
                .fold(0.0, f64::max);
            (amax - d, (amax - d).max(d), r_a, d, separation + radius)
        }
        ResourceFamily::Custom => return Err(bad("use make_custom_resource for custom resources".into())),
    };
    let spec = ResourceSpec { family, custom: None, sup_a_plus, sup_abs, r_a, ell, r_ell };
    spec.check_far_field()?;
    Ok(spec)
}

pub fn make_custom_resource(c: CustomResource) -> Result<ResourceSpec> {
    if !(c.sup_a_plus > 0.0) {
        return Err(bad("a+ must not vanish identically".into()));
    }
    if !(c.ell > 0.0) {
        return Err(bad(format!("ell must be positive, got {}", c.ell)));
    }
    if c.r_ell < c.r_a {
        return Err(bad("r_ell must be at least r_a".into()));
    }
    let spec = ResourceSpec {
        family: ResourceFamily::Custom,
        sup_a_plus: c.sup_a_plus,
        sup_abs: c.sup_abs,
        r_a: c.r_a,
        ell: c.ell,
        r_ell: c.r_ell,
        custom: Some(c),
    };
    spec.check_far_field()?;
    Ok(spec)
}

fn check_common(a: f64, d: f64) -> Result<()> {
    if !(d > 0.0) {
        return Err(bad(format!("delta must be positive, got {d}")));
    }
    if !(a > d) {
        return Err(bad(format!("amplitude {a} <= delta {d}: a+ vanishes identically")));
    }
    Ok(())
}

impl ResourceSpec {
    pub fn family(&self) -> ResourceFamily {
        self.family
    }
    /// `||a+||_inf`
    pub fn sup_a_plus(&self) -> f64 {
        self.sup_a_plus
    }
    /// `||a||_inf`
    pub fn sup_abs(&self) -> f64 {
        self.sup_abs
    }
    /// `supp(a+)` lies in `B_{r_a}`.
    pub fn r_a(&self) -> f64 {
        self.r_a
    }
    pub fn ell(&self) -> f64 {
        self.ell
    }
    /// `a <= -ell` for `|x| >= r_ell`.
    pub fn r_ell(&self) -> f64 {
        self.r_ell
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let x0 = x[0];
        let x1 = x.get(1).copied().unwrap_or(0.0);
        match self.family {
            ResourceFamily::GaussianBump { amplitude, sigma, delta } => {
                amplitude * (-(x0 * x0 + x1 * x1) / (sigma * sigma)).exp() - delta
            }
            ResourceFamily::CompactBump { amplitude, radius, delta } => {
                bump(amplitude, radius, x0 * x0 + x1 * x1) - delta
            }
            ResourceFamily::TwoBumps { amplitudes, radius, separation, delta } => {
                let l = (x0 + separation).powi(2) + x1 * x1;
                let r = (x0 - separation).powi(2) + x1 * x1;
                bump(amplitudes[0], radius, l) + bump(amplitudes[1], radius, r) - delta
            }
            ResourceFamily::Custom => (self.custom.as_ref().expect("custom").a)(x),
        }
    }

    pub fn eval_plus(&self, x: &[f64]) -> f64 {
        self.eval(x).max(0.0)
    }

    /// A point where `a+` attains its maximum.
    pub fn argmax(&self) -> [f64; 2] {
        match self.family {
            ResourceFamily::TwoBumps { amplitudes, separation, .. } => {
                if amplitudes[0] >= amplitudes[1] {
                    [-separation, 0.0]
                } else {
                    [separation, 0.0]
                }
            }
            ResourceFamily::Custom => self.custom.as_ref().expect("custom").argmax,
            _ => [0.0, 0.0],
        }
    }

    /// Global Lipschitz constant of `a`.
    pub fn lipschitz(&self) -> f64 {
        match self.family {
            ResourceFamily::GaussianBump { amplitude, sigma, .. } => {
                amplitude * (2.0f64).sqrt() / sigma * (-0.5f64).exp()
            }
            ResourceFamily::CompactBump { amplitude, radius, .. } => 2.0 * amplitude / radius,
            ResourceFamily::TwoBumps { amplitudes, radius, .. } => 2.0 * amplitudes[0].max(amplitudes[1]) / radius,
            ResourceFamily::Custom => f64::INFINITY,
        }
    }

    /// Whether `x` lies in `supp(a+)` at distance more than `collar` from its boundary.
    pub fn in_support_interior(&self, x: &[f64], collar: f64) -> bool {
        let x0 = x[0];
        let x1 = x.get(1).copied().unwrap_or(0.0);
        match self.family {
            ResourceFamily::GaussianBump { .. } | ResourceFamily::CompactBump { .. } => {
                x0.hypot(x1) < self.r_a - collar
            }
            ResourceFamily::TwoBumps { amplitudes, radius, separation, delta } => {
                [(-separation, amplitudes[0]), (separation, amplitudes[1])]
                    .iter()
                    .any(|&(c, a)| a > delta && (x0 - c).hypot(x1) < radius * (1.0 - delta / a).sqrt() - collar)
            }
            ResourceFamily::Custom => {
                let n = 32;
                (0..n).all(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let p = [x0 + collar * t.cos(), x1 + if x.len() > 1 { collar * t.sin() } else { 0.0 }];
                    self.eval(&p[..x.len()]) > 0.0
                }) && self.eval(x) > 0.0
            }
        }
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> Field {
        Field::from_fn(grid.clone(), |x| self.eval(x))
    }

    pub fn sample_plus(&self, grid: &Arc<Grid>) -> Field {
        Field::from_fn(grid.clone(), |x| self.eval_plus(x))
    }

    fn check_far_field(&self) -> Result<()> {
        let tol = 1e-12 * self.sup_abs.max(1.0);
        for k in 0..=400 {
            let r = self.r_ell + 10.0 * k as f64 / 400.0;
            if self.eval(&[r]).max(self.eval(&[-r])) > -self.ell + tol {
                return Err(bad(format!("a > -ell at |x| = {r}")));
            }
            for d in 0..16 {
                let t = 2.0 * std::f64::consts::PI * d as f64 / 16.0;
                let p = [r * t.cos(), r * t.sin()];
                if self.eval(&p) > -self.ell + tol {
                    return Err(bad(format!("a > -ell at |x| = {r}")));
                }
            }
        }
        Ok(())
    }
}
