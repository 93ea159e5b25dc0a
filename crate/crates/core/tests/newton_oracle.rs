//! The monotone solver against a dense damped Newton method on the same nodal system.

use nalgebra::{DMatrix, DVector};
use nonlocal_kpp::kernel::{make_kernel, KernelFamily};
use nonlocal_kpp::resource::{make_resource, ResourceFamily, ResourceSpec};
use nonlocal_kpp::solver::{make_operator, solve_truncated, SolverConfig, Start};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `eps^{-m} (W - I)` assembled from the stencil weights and lattice coordinates.
fn dense_operator(op: &nonlocal_kpp::nonlocal_op::OperatorHandle) -> DMatrix<f64> {
    let g = op.grid();
    let k = op.kernel();
    let n = g.len();
    let s = op.scale();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let li = g.lattice(i);
        for j in 0..n {
            let lj = g.lattice(j);
            let w = k.weight([lj[0] - li[0], lj[1] - li[1]]);
            a[(i, j)] = s * w;
        }
        a[(i, i)] -= s;
    }
    a
}

fn newton(m: &DMatrix<f64>, a: &[f64], start: f64) -> DVector<f64> {
    let n = a.len();
    let av = DVector::from_column_slice(a);
    let f = |u: &DVector<f64>| m * u + u.component_mul(&(&av - u));
    let mut u = DVector::from_element(n, start);
    let mut fu = f(&u);
    for _ in 0..200 {
        if fu.amax() < 1e-14 {
            break;
        }
        let mut jac = m.clone();
        for i in 0..n {
            jac[(i, i)] += a[i] - 2.0 * u[i];
        }
        let step = jac.lu().solve(&(-&fu)).expect("nonsingular Jacobian");
        let mut t = 1.0;
        loop {
            let cand = &u + &step * t;
            let fc = f(&cand);
            if fc.norm() < fu.norm() || t < 1e-6 {
                u = cand;
                fu = fc;
                break;
            }
            t *= 0.5;
        }
    }
    u
}

fn check(dim: usize, eps: f64, m: f64, res: &ResourceSpec, radius: f64, h: f64) -> f64 {
    let kernel = make_kernel(KernelFamily::UniformBall { radius: 1.0 }, dim).unwrap();
    let mut cfg = SolverConfig::new(eps, m);
    cfg.h = Some(h);
    cfg.start = Start::Principal;
    let op = make_operator(&kernel, &cfg, radius).unwrap();
    assert!(op.grid().len() <= if dim == 1 { 64 } else { 256 });
    let a = res.sample(op.grid());
    let (u, report) = solve_truncated(&op, res, &cfg).unwrap();
    assert!(report.converged);
    assert!(report.monotonicity_violation <= 1e-12);
    assert!(report.bracket_violation <= 1e-12);
    let dense = dense_operator(&op);
    let v = newton(&dense, a.values(), res.sup_a_plus());
    u.values().iter().zip(v.iter()).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

#[test]
fn one_dimensional_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    for _ in 0..10 {
        let amp = rng.gen_range(0.8..2.0);
        let r0 = rng.gen_range(0.8..1.5);
        let delta = rng.gen_range(0.2..0.5);
        let res = make_resource(ResourceFamily::CompactBump { amplitude: amp, radius: r0, delta }).unwrap();
        let radius = r0 + 0.3;
        let h = radius / 31.0;
        let eps = rng.gen_range(4.0 * h..0.6f64.max(4.5 * h));
        let m = rng.gen_range(0.0..1.5);
        let err = check(1, eps, m, &res, radius, h);
        assert!(err < 1e-8, "eps={eps} m={m}: {err}");
    }
}

#[test]
fn two_dimensional_instances() {
    for (eps, m, amp) in [(0.8, 0.0, 1.0), (0.9, 1.0, 1.5), (1.2, 0.5, 2.0)] {
        let res = make_resource(ResourceFamily::CompactBump { amplitude: amp, radius: 1.0, delta: 0.3 }).unwrap();
        let h = 1.2 / 7.0;
        let err = check(2, eps, m, &res, 1.2, h);
        assert!(err < 1e-8, "eps={eps} m={m}: {err}");
    }
}

#[test]
fn oracle_assembly_matches_operator() {
    let kernel = make_kernel(KernelFamily::Triangle { radius: 1.0 }, 2).unwrap();
    let mut cfg = SolverConfig::new(0.9, 0.7);
    cfg.h = Some(0.2);
    let op = make_operator(&kernel, &cfg, 1.0).unwrap();
    let d = dense_operator(&op);
    let phi: Vec<f64> = (0..op.grid().len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
    let x = &d * DVector::from_column_slice(&phi);
    let y = op.apply_values(&phi);
    assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
}
