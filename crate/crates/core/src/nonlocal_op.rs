//! The truncated operator `M_{R,eps,m}[phi](x) = eps^{-m} (sum_{y in B_R} w(x-y) phi(y) - phi(x))`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::exec::Exec;
use crate::grid::{Field, Grid};
use crate::kernel::{DiscreteKernel, KernelProfile};
use crate::{KppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyMode {
    Direct,
    Fft,
}

impl ApplyMode {
    /// Direct summation unless the stencil work clearly dominates an FFT.
    pub fn auto(kernel: &DiscreteKernel, grid: &Grid) -> ApplyMode {
        let work = kernel.taps().len() as f64 * grid.len() as f64;
        if kernel.taps().len() > 64 && work > 5e7 {
            ApplyMode::Fft
        } else {
            ApplyMode::Direct
        }
    }
}

struct FftPlan {
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
}

#[derive(Clone)]
pub struct OperatorHandle {
    kernel: Arc<DiscreteKernel>,
    grid: Arc<Grid>,
    m: f64,
    scale: f64,
    mode: ApplyMode,
    exec: Exec,
    fft: Option<Arc<FftPlan>>,
    inside: Arc<Vec<f64>>,
    /// Per lattice row `i + half`: index of its first node and its half-width, 2D only.
    rows: Arc<Vec<(usize, i64)>>,
}

impl std::fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("eps", &self.kernel.epsilon())
            .field("m", &self.m)
            .field("nodes", &self.grid.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl OperatorHandle {
    pub fn new(kernel: Arc<DiscreteKernel>, grid: Arc<Grid>, m: f64, mode: ApplyMode) -> Result<Self> {
        if kernel.dim() != grid.dim() {
            return Err(KppError::GridMismatch("kernel and grid dimensions differ".into()));
        }
        if (kernel.spacing() - grid.spacing()).abs() > 1e-12 * grid.spacing() {
            return Err(KppError::GridMismatch(format!(
                "kernel spacing {} differs from grid spacing {}",
                kernel.spacing(),
                grid.spacing()
            )));
        }
        if !(0.0..=2.0).contains(&m) {
            return Err(KppError::InvalidParameter(format!("m must lie in [0, 2], got {m}")));
        }
        let scale = kernel.epsilon().powf(-m);
        let fft = (mode == ApplyMode::Fft).then(|| Arc::new(plan_fft(&kernel, &grid)));
        let mut op = OperatorHandle {
            kernel,
            grid,
            m,
            scale,
            mode,
            exec: Exec::default(),
            fft,
            inside: Arc::new(Vec::new()),
            rows: Arc::new(Vec::new()),
        };
        if op.grid.dim() == 2 {
            let half = op.grid.half() as i64;
            let mut rows = vec![(0usize, -1i64); 2 * half as usize + 1];
            for i in (0..op.grid.len()).rev() {
                let [a, b] = op.grid.lattice(i);
                let r = &mut rows[(a + half) as usize];
                r.0 = i;
                r.1 = r.1.max(b);
            }
            op.rows = Arc::new(rows);
        }
        let ones = vec![1.0; op.grid.len()];
        op.inside = Arc::new(op.convolve(&ones));
        Ok(op)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn kernel(&self) -> &Arc<DiscreteKernel> {
        &self.kernel
    }
    pub fn epsilon(&self) -> f64 {
        self.kernel.epsilon()
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn mode(&self) -> ApplyMode {
        self.mode
    }
    /// `eps^{-m}`
    pub fn scale(&self) -> f64 {
        self.scale
    }
    /// `sum_{y in B_R} w(x - y)` per node.
    pub fn inside_mass(&self) -> &[f64] {
        &self.inside
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.values().len() != self.grid.len() || !f.same_grid(&Field::zeros(self.grid.clone())) {
            return Err(KppError::GridMismatch("field is not defined on the operator grid".into()));
        }
        Ok(())
    }

    /// Truncated convolution `sum_{y in grid} w(x-y) phi(y)`.
    pub fn convolve(&self, phi: &[f64]) -> Vec<f64> {
        match (&self.fft, self.mode) {
            (Some(plan), ApplyMode::Fft) => self.convolve_fft(plan, phi),
            _ => self.convolve_direct(phi),
        }
    }

    fn convolve_direct(&self, phi: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let taps = self.kernel.taps();
        let mut out = vec![0.0; g.len()];
        if g.dim() == 1 {
            let n = g.len() as i64;
            self.exec.fill(&mut out, |i| {
                let mut s = 0.0;
                for (o, w) in taps {
                    let j = i as i64 + o[0];
                    if j >= 0 && j < n {
                        s += w * phi[j as usize];
                    }
                }
                s
            });
        } else {
            let k = self.kernel.kmax() as i64;
            let side = 2 * self.kernel.kmax() + 1;
            let wts = self.kernel.weights();
            let half = g.half() as i64;
            let rows = &self.rows;
            self.exec.fill(&mut out, |i| {
                let [a, b] = g.lattice(i);
                let mut s = 0.0;
                for di in -k..=k {
                    let r = a + di;
                    if r.abs() > half {
                        continue;
                    }
                    let (start, w) = rows[(r + half) as usize];
                    if w < 0 {
                        continue;
                    }
                    let lo = (b - k).max(-w);
                    let hi = (b + k).min(w);
                    if lo > hi {
                        continue;
                    }
                    let wrow = &wts[(di + k) as usize * side..][..side];
                    let src = &phi[start + (lo + w) as usize..=start + (hi + w) as usize];
                    let wseg = &wrow[(lo - b + k) as usize..=(hi - b + k) as usize];
                    for (x, y) in wseg.iter().zip(src) {
                        s += x * y;
                    }
                }
                s
            });
        }
        out
    }

    fn convolve_fft(&self, plan: &FftPlan, phi: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let p = plan.size;
        let half = g.half() as i64;
        let k = self.kernel.kmax() as i64;
        let zero = Complex::new(0.0, 0.0);
        if g.dim() == 1 {
            let mut buf = vec![zero; p];
            for (i, v) in phi.iter().enumerate() {
                buf[i] = Complex::new(*v, 0.0);
            }
            plan.fwd.process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&plan.spectrum) {
                *b *= s;
            }
            plan.inv.process(&mut buf);
            let norm = 1.0 / p as f64;
            (0..g.len()).map(|i| buf[i + k as usize].re * norm).collect()
        } else {
            let mut buf = vec![zero; p * p];
            for i in 0..g.len() {
                let l = g.lattice(i);
                buf[(l[0] + half) as usize * p + (l[1] + half) as usize] = Complex::new(phi[i], 0.0);
            }
            fft2(&plan.fwd, &mut buf, p);
            for (b, s) in buf.iter_mut().zip(&plan.spectrum) {
                *b *= s;
            }
            fft2(&plan.inv, &mut buf, p);
            let norm = 1.0 / (p * p) as f64;
            (0..g.len())
                .map(|i| {
                    let l = g.lattice(i);
                    buf[(l[0] + half + k) as usize * p + (l[1] + half + k) as usize].re * norm
                })
                .collect()
        }
    }

    /// `M[phi]` on raw nodal values.
    pub fn apply_values(&self, phi: &[f64]) -> Vec<f64> {
        let mut c = self.convolve(phi);
        for (c, p) in c.iter_mut().zip(phi) {
            *c = self.scale * (*c - p);
        }
        c
    }

    pub fn apply(&self, phi: &Field) -> Result<Field> {
        self.check(phi)?;
        Field::new(self.grid.clone(), self.apply_values(phi.values()))
    }

    /// `M[u] + u (a - u)` on raw nodal values.
    pub fn residual_values(&self, u: &[f64], a: &[f64]) -> Vec<f64> {
        let mut r = self.apply_values(u);
        for ((r, u), a) in r.iter_mut().zip(u).zip(a) {
            *r += u * (a - u);
        }
        r
    }

    /// Full-space operator at a point for a function known off the grid.
    pub fn apply_fn_at(&self, x: [f64; 2], f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let h = self.kernel.spacing();
        let d = self.grid.dim();
        let mut s = 0.0;
        for (o, w) in self.kernel.taps() {
            let p = [x[0] + o[0] as f64 * h, x[1] + o[1] as f64 * h];
            s += w * f(&p[..d]);
        }
        self.scale * (s - f(&x[..d]))
    }
}

pub fn apply(op: &OperatorHandle, phi: &Field) -> Result<Field> {
    op.apply(phi)
}

pub fn kpp_residual(op: &OperatorHandle, u: &Field, a: &Field) -> Result<Field> {
    op.check(u)?;
    op.check(a)?;
    Field::new(op.grid.clone(), op.residual_values(u.values(), a.values()))
}

/// `(M_m/2) sum_y rho_eps(y) (u(x+y) - 2u(x) + u(x-y)) / |y|^m` with `u` extended by zero and
/// `rho_eps(y) = eps^{-m} |y|^m J_eps(y) / M_m`.
pub fn second_difference_form(op: &OperatorHandle, profile: &KernelProfile, u: &Field, x: usize) -> Result<f64> {
    op.check(u)?;
    let mm = profile.moment(op.m)?;
    if !mm.is_finite() {
        return Err(KppError::InfiniteMoment(op.m));
    }
    let g = &op.grid;
    let h = g.spacing();
    let l = g.lattice(x);
    let at = |o: [i64; 2]| g.index_of([l[0] + o[0], l[1] + o[1]]).map_or(0.0, |j| u.values()[j]);
    let ux = u.values()[x];
    let mut s = 0.0;
    for (o, w) in op.kernel.taps() {
        if o[0] == 0 && o[1] == 0 {
            continue;
        }
        let r = h * ((o[0] * o[0] + o[1] * o[1]) as f64).sqrt();
        let rho = op.scale * r.powf(op.m) * w / mm;
        let d2 = at(*o) - 2.0 * ux + at([-o[0], -o[1]]);
        s += rho * d2 / r.powf(op.m);
    }
    Ok(0.5 * mm * s)
}

fn plan_fft(kernel: &DiscreteKernel, grid: &Grid) -> FftPlan {
    let k = kernel.kmax();
    let side = 2 * grid.half() + 1;
    let p = (side + 2 * k).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(p);
    let inv = planner.plan_fft_inverse(p);
    let ks = 2 * k + 1;
    let zero = Complex::new(0.0, 0.0);
    let spectrum = if grid.dim() == 1 {
        let mut b = vec![zero; p];
        for s in 0..ks {
            b[s] = Complex::new(kernel.weights()[s], 0.0);
        }
        fwd.process(&mut b);
        b
    } else {
        let mut b = vec![zero; p * p];
        for a in 0..ks {
            for c in 0..ks {
                b[a * p + c] = Complex::new(kernel.weights()[a * ks + c], 0.0);
            }
        }
        fft2(&fwd, &mut b, p);
        b
    };
    FftPlan { size: p, fwd, inv, spectrum }
}

fn fft2(f: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>], p: usize) {
    f.process(buf);
    transpose(buf, p);
    f.process(buf);
    transpose(buf, p);
}

fn transpose(buf: &mut [Complex<f64>], p: usize) {
    for i in 0..p {
        for j in i + 1..p {
            buf.swap(i * p + j, j * p + i);
        }
    }
}
