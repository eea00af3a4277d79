use seeds_core::imputation::{
    fit_intrinsic, fit_plain, intrinsic_scale, solve_intrinsic, solve_plain, IntrinsicProblem,
    ModelData,
};
use seeds_core::kernels::scaled_kernel;
use seeds_core::types::Component;

const XS: [f64; 10] = [0.1, 0.4, 0.5, 0.9, 1.3, 1.6, 2.0, 2.2, 2.8, 3.1];
const YS: [f64; 10] = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];

fn data(weights: Vec<f64>, bandwidth: Option<f64>) -> ModelData {
    ModelData {
        component: if bandwidth.is_some() {
            Component::Left
        } else {
            Component::Exact
        },
        t: 1.0,
        dim: 2,
        rows: XS.iter().flat_map(|&x| [1.0, x]).collect(),
        weights,
        outcomes: YS.to_vec(),
        bandwidth,
    }
}

fn exact_fixture() -> ModelData {
    data(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0], None)
}

fn kernel_fixture() -> ModelData {
    let w = XS.iter().map(|&x| scaled_kernel(x - 1.5, 0.5)).collect();
    data(w, Some(0.5))
}

fn g(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn deviance(d: &ModelData, b0: f64, b1: f64) -> f64 {
    (0..d.len())
        .map(|i| {
            let p = g(b0 + b1 * d.rows[2 * i + 1]);
            -d.weights[i] * (d.outcomes[i] * p.ln() + (1.0 - d.outcomes[i]) * (1.0 - p).ln())
        })
        .sum()
}

/// Coarse grid, then a 1e-3 grid around the coarse minimiser.
fn grid_minimum(f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let scan = |b: (f64, f64, f64), lo0: f64, lo1: f64, step: f64, count: usize| {
        let mut b = b;
        for i in 0..=count {
            for j in 0..=count {
                let (x, y) = (lo0 + i as f64 * step, lo1 + j as f64 * step);
                let v = f(x, y);
                if v < b.0 {
                    b = (v, x, y);
                }
            }
        }
        b
    };
    let best = scan((f64::INFINITY, 0.0, 0.0), -8.0, -8.0, 0.05, 320);
    let best = scan(best, best.1 - 0.1, best.2 - 0.1, 1e-3, 200);
    (best.1, best.2)
}

fn intercept_on_constraint(d: &ModelData, b1: f64) -> f64 {
    let c = |b0: f64| {
        (0..d.len())
            .map(|i| d.weights[i] * (d.outcomes[i] - g(b0 + b1 * d.rows[2 * i + 1])))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Slope grid with the intercept root-solved from the constraint.
fn constrained_minimum(d: &ModelData, scale: f64) -> (f64, f64) {
    let problem = IntrinsicProblem::new(d, scale);
    let objective = |b1: f64| {
        let b0 = intercept_on_constraint(d, b1);
        (problem.objective(&[b0, b1]), b0)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 0..=1600 {
        let b1 = -8.0 + k as f64 * 0.01;
        let (v, b0) = objective(b1);
        if v < best.0 {
            best = (v, b0, b1);
        }
    }
    let centre = best.2;
    for k in 0..=2000 {
        let b1 = centre - 0.01 + k as f64 * 1e-5;
        let (v, b0) = objective(b1);
        if v < best.0 {
            best = (v, b0, b1);
        }
    }
    (best.1, best.2)
}

#[test]
fn intercept_only_three_to_one() {
    let d = ModelData {
        component: Component::Exact,
        t: 1.0,
        dim: 1,
        rows: vec![1.0; 4],
        weights: vec![1.0; 4],
        outcomes: vec![1.0, 1.0, 1.0, 0.0],
        bandwidth: None,
    };
    let fit = solve_plain(&d, None);
    assert!((fit.beta[0] - 3f64.ln()).abs() < 1e-10);
    assert!((fit.beta[0] - 1.0986).abs() < 1e-4);
}

#[test]
fn exact_fit_matches_likelihood_grid() {
    let d = exact_fixture();
    let fit = fit_plain(&d).unwrap();
    let (b0, b1) = grid_minimum(|a, b| deviance(&d, a, b));
    assert!((fit.beta[0] - b0).abs() < 2e-3, "{:?} vs {b0}", fit.beta);
    assert!((fit.beta[1] - b1).abs() < 2e-3, "{:?} vs {b1}", fit.beta);
}

#[test]
fn kernel_fit_matches_deviance_grid() {
    let d = kernel_fixture();
    let fit = solve_plain(&d, None);
    assert!(fit.converged);
    let (b0, b1) = grid_minimum(|a, b| deviance(&d, a, b));
    assert!((fit.beta[0] - b0).abs() < 2e-3, "{:?} vs {b0}", fit.beta);
    assert!((fit.beta[1] - b1).abs() < 2e-3, "{:?} vs {b1}", fit.beta);
}

#[test]
fn intrinsic_fits_match_constrained_grid() {
    for (d, mean) in [(exact_fixture(), 0.7), (kernel_fixture(), 0.25)] {
        let plain = solve_plain(&d, None);
        let fit = fit_intrinsic(&d, mean, &plain).unwrap();
        let (b0, b1) = constrained_minimum(&d, intrinsic_scale(&d, mean));
        assert!((fit.beta[0] - b0).abs() < 5e-3, "{:?} vs ({b0}, {b1})", fit.beta);
        assert!((fit.beta[1] - b1).abs() < 5e-3, "{:?} vs ({b0}, {b1})", fit.beta);
    }
}

#[test]
fn lagrangian_gradient_matches_differences() {
    let d = kernel_fixture();
    let problem = IntrinsicProblem::new(&d, 3.0);
    for k in 0..20 {
        let beta = [-1.5 + 0.15 * k as f64, 1.2 - 0.1 * k as f64];
        let mu = 0.3 * k as f64 - 2.0;
        let grad = problem.lagrangian_gradient(&beta, mu);
        for p in 0..2 {
            let (mut up, mut down) = (beta, beta);
            up[p] += 1e-6;
            down[p] -= 1e-6;
            let fd = (problem.lagrangian(&up, mu) - problem.lagrangian(&down, mu)) / 2e-6;
            let rel = (grad[p] - fd).abs() / grad[p].abs().max(1e-8);
            assert!(rel < 1e-4, "component {p} at {beta:?}: {} vs {fd}", grad[p]);
        }
    }
}

#[test]
fn record_order_does_not_matter() {
    let d = kernel_fixture();
    let order = [7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
    let shuffled = d.subset(&order);
    let a = solve_plain(&d, None);
    let b = solve_plain(&shuffled, None);
    let ia = solve_intrinsic(&IntrinsicProblem::new(&d, 2.0), &a.beta).unwrap();
    let ib = solve_intrinsic(&IntrinsicProblem::new(&shuffled, 2.0), &b.beta).unwrap();
    for p in 0..2 {
        assert!((a.beta[p] - b.beta[p]).abs() < 1e-12);
        assert!((ia.beta[p] - ib.beta[p]).abs() < 1e-12);
    }
}

#[test]
fn intercept_only_intrinsic_is_plain() {
    let mut d = kernel_fixture();
    d.dim = 1;
    d.rows = vec![1.0; 10];
    let plain = solve_plain(&d, None);
    let fit = fit_intrinsic(&d, 0.3, &plain).unwrap();
    assert!((fit.beta[0] - plain.beta[0]).abs() < 1e-10);
}
