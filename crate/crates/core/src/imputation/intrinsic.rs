use nalgebra::{DMatrix, DVector};

use super::{
    logistic, FitResult, ModelData, CONSTRAINT_TOLERANCE, EE_TOLERANCE, MAX_HALVINGS,
    MAX_ITERATIONS,
};
use crate::error::{Result, SeedsError};

/// Allowed increase of the objective over the feasible starting point.
const OBJECTIVE_SLACK: f64 = 1e-12;
/// Reduced-gradient norm at which descent hands over to Newton.
const DESCENT_HANDOFF: f64 = 1e-7;
/// Iteration budget of the reduced descent fallback.
const DESCENT_ITERATIONS: usize = 500;
/// Newton gives up after `STALL_LIMIT` consecutive steps that shrink the
/// residual norm by less than `STALL_RATIO`.
const STALL_RATIO: f64 = 0.9;
const STALL_LIMIT: usize = 5;
/// Relative singular-value cutoff of the KKT step.
const SINGULAR_CUTOFF: f64 = 1e-12;

/// Variance-minimising fit of one working model.
///
/// minimise `f(β) = scale/n · Σ a_i² {y_i - g(βᵀΦ̄_i)}²`
/// subject to `c(β) = 1/n · Σ a_i {y_i - g(βᵀΦ̄_i)} = 0`,
///
/// where `a_i` is the model weight. The constraint is the intercept row of
/// the plain estimating equation, so a plain fit is always feasible.
pub struct IntrinsicProblem<'a> {
    data: &'a ModelData,
    scale: f64,
}

struct Terms {
    objective: f64,
    constraint: f64,
    grad_f: DVector<f64>,
    grad_c: DVector<f64>,
    hess_f: DMatrix<f64>,
    hess_c: DMatrix<f64>,
}

impl<'a> IntrinsicProblem<'a> {
    pub fn new(data: &'a ModelData, scale: f64) -> Self {
        IntrinsicProblem { data, scale }
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    fn terms(&self, beta: &[f64]) -> Terms {
        let data = self.data;
        let d = data.dim;
        let inv_n = 1.0 / data.len() as f64;
        let mut t = Terms {
            objective: 0.0,
            constraint: 0.0,
            grad_f: DVector::zeros(d),
            grad_c: DVector::zeros(d),
            hess_f: DMatrix::zeros(d, d),
            hess_c: DMatrix::zeros(d, d),
        };
        for i in 0..data.len() {
            let a = data.weights[i];
            if a == 0.0 {
                continue;
            }
            let x = data.row(i);
            let g = logistic(dot(x, beta));
            let g1 = g * (1.0 - g);
            let g2 = g1 * (1.0 - 2.0 * g);
            let r = data.outcomes[i] - g;
            let o = self.scale * a * a * inv_n;
            t.objective += o * r * r;
            t.constraint += a * r * inv_n;
            // d/dβ of o r² is -2 o r g' x; of a r / n is -a g' x / n
            let gf = -2.0 * o * r * g1;
            let gc = -a * g1 * inv_n;
            let hf = 2.0 * o * (g1 * g1 - r * g2);
            let hc = -a * g2 * inv_n;
            for p in 0..d {
                t.grad_f[p] += gf * x[p];
                t.grad_c[p] += gc * x[p];
                for q in 0..=p {
                    let xx = x[p] * x[q];
                    t.hess_f[(p, q)] += hf * xx;
                    t.hess_c[(p, q)] += hc * xx;
                }
            }
        }
        for p in 0..d {
            for q in 0..p {
                t.hess_f[(q, p)] = t.hess_f[(p, q)];
                t.hess_c[(q, p)] = t.hess_c[(p, q)];
            }
        }
        t
    }

    /// Objective, constraint and `∂c/∂β0`, without the second derivatives.
    fn values(&self, beta: &[f64]) -> (f64, f64, f64) {
        let data = self.data;
        let inv_n = 1.0 / data.len() as f64;
        let (mut f, mut c, mut dc) = (0.0, 0.0, 0.0);
        for i in 0..data.len() {
            let a = data.weights[i];
            if a == 0.0 {
                continue;
            }
            let x = data.row(i);
            let g = logistic(dot(x, beta));
            let r = data.outcomes[i] - g;
            f += self.scale * a * a * inv_n * r * r;
            c += a * r * inv_n;
            dc -= a * g * (1.0 - g) * x[0] * inv_n;
        }
        (f, c, dc)
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        self.values(beta).0
    }

    pub fn constraint(&self, beta: &[f64]) -> f64 {
        self.values(beta).1
    }

    /// Gradient in `β` of the Lagrangian `f(β) + μ c(β)`.
    pub fn lagrangian_gradient(&self, beta: &[f64], multiplier: f64) -> Vec<f64> {
        let t = self.terms(beta);
        (t.grad_f + t.grad_c * multiplier).iter().cloned().collect()
    }

    pub fn lagrangian(&self, beta: &[f64], multiplier: f64) -> f64 {
        let t = self.terms(beta);
        t.objective + multiplier * t.constraint
    }

    /// KKT residual `(∇f + μ∇c, c)`, its Jacobian, and the objective.
    fn kkt(&self, beta: &[f64], mu: f64) -> (DVector<f64>, DMatrix<f64>, f64) {
        let d = self.data.dim;
        let t = self.terms(beta);
        let mut f = DVector::zeros(d + 1);
        let mut j = DMatrix::zeros(d + 1, d + 1);
        for p in 0..d {
            f[p] = t.grad_f[p] + mu * t.grad_c[p];
            for q in 0..d {
                j[(p, q)] = t.hess_f[(p, q)] + mu * t.hess_c[(p, q)];
            }
            j[(p, d)] = t.grad_c[p];
            j[(d, p)] = t.grad_c[p];
        }
        f[d] = t.constraint;
        (f, j, t.objective)
    }

    /// KKT residual alone, for line searches.
    fn kkt_residual(&self, beta: &[f64], mu: f64) -> DVector<f64> {
        let data = self.data;
        let d = data.dim;
        let inv_n = 1.0 / data.len() as f64;
        let mut f = DVector::zeros(d + 1);
        for i in 0..data.len() {
            let a = data.weights[i];
            if a == 0.0 {
                continue;
            }
            let x = data.row(i);
            let g = logistic(dot(x, beta));
            let g1 = g * (1.0 - g);
            let r = data.outcomes[i] - g;
            let o = self.scale * a * a * inv_n;
            let w = -2.0 * o * r * g1 - mu * a * g1 * inv_n;
            for p in 0..d {
                f[p] += w * x[p];
            }
            f[d] += a * r * inv_n;
        }
        f
    }

    /// Sets `beta[0]` so that the constraint holds for the other
    /// coefficients. The constraint is strictly decreasing in the intercept,
    /// so the root is unique when it exists; `None` if it does not.
    fn solve_intercept(&self, beta: &mut [f64]) -> Option<()> {
        // c and dc/dβ0 at the current intercept
        let eval = |beta: &[f64]| {
            let (_, c, dc) = self.values(beta);
            (c, dc)
        };
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..200 {
            let (c, dc) = eval(beta);
            if c.abs() <= CONSTRAINT_TOLERANCE * 1e-3 {
                return Some(());
            }
            if c > 0.0 {
                lo = beta[0];
            } else {
                hi = beta[0];
            }
            let mut next = if dc < 0.0 { beta[0] - c / dc } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0 + (lo.abs()).max(1.0),
                    (false, true) => hi - 1.0 - (hi.abs()).max(1.0),
                    (false, false) => return None,
                };
            }
            if next.abs() > 1e6 || hi - lo <= 1e-15 * (1.0 + next.abs()) {
                return None;
            }
            beta[0] = next;
        }
        None
    }

    /// Residuals `√o_i r_i` of the objective written as a sum of squares and
    /// their Jacobian in the non-intercept coefficients, with the intercept
    /// following the constraint.
    fn reduced_system(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>, Vec<f64>) {
        let data = self.data;
        let d = data.dim;
        let inv_n = 1.0 / data.len() as f64;
        let active: Vec<usize> = (0..data.len()).filter(|&i| data.weights[i] != 0.0).collect();
        let mut cx = vec![0.0; d];
        for &i in &active {
            let x = data.row(i);
            let g = logistic(dot(x, beta));
            let w = data.weights[i] * g * (1.0 - g);
            for p in 0..d {
                cx[p] += w * x[p];
            }
        }
        // dβ0/dβ_k along the constraint surface
        let slope: Vec<f64> = (1..d).map(|k| -cx[k] / cx[0]).collect();
        let mut res = DVector::zeros(active.len());
        let mut jac = DMatrix::zeros(active.len(), d - 1);
        for (row, &i) in active.iter().enumerate() {
            let x = data.row(i);
            let a = data.weights[i];
            let g = logistic(dot(x, beta));
            let root = (self.scale * inv_n).sqrt() * a.abs();
            res[row] = root * (data.outcomes[i] - g);
            let g1 = g * (1.0 - g);
            for k in 1..d {
                jac[(row, k - 1)] = -root * g1 * (x[k] + x[0] * slope[k - 1]);
            }
        }
        (res, jac, slope)
    }
}

fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(u, b)| u * b).sum()
}

struct Run {
    beta: Vec<f64>,
    mu: f64,
    iterations: usize,
}

/// Minimum-norm Newton step. A basis column that vanishes on every weighted
/// record makes the Jacobian singular without affecting the fit, so the
/// step is taken in the pseudo-inverse sense.
fn kkt_step(j: &DMatrix<f64>, f: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = j.clone().svd(true, true);
    let top = svd.singular_values.max();
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    svd.solve(&(-f), top * SINGULAR_CUTOFF).ok()
}

fn newton_kkt(problem: &IntrinsicProblem, init: &[f64], init_mu: f64, budget: usize) -> Run {
    let d = problem.dim();
    let mut beta = init.to_vec();
    let mut mu = init_mu;
    let (mut f, mut j, _) = problem.kkt(&beta, mu);
    let mut norm = f.norm();
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < budget && !converged(&f, norm, d) {
        iterations += 1;
        let Some(step) = kkt_step(&j, &f) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = (0..d).map(|p| beta[p] + scale * step[p]).collect();
            let cmu = mu + scale * step[d];
            let cnorm = problem.kkt_residual(&cand, cmu).norm();
            if cnorm < norm {
                (f, j, _) = problem.kkt(&cand, cmu);
                beta = cand;
                mu = cmu;
                // slow progress far from a solution means Newton is heading
                // for a non-solution minimum of the residual norm
                stalled = if cnorm > STALL_RATIO * norm { stalled + 1 } else { 0 };
                norm = cnorm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || stalled >= STALL_LIMIT {
            break;
        }
    }
    Run {
        beta,
        mu,
        iterations,
    }
}

/// Levenberg-Marquardt on the objective restricted to the constraint
/// surface. Every accepted step lowers the objective, so it cannot stall at a
/// non-stationary point the way a residual-norm line search can. Returns the
/// end point with the multiplier implied by the intercept row.
fn reduced_descent(problem: &IntrinsicProblem, init: &[f64], handoff: f64) -> Option<Run> {
    let d = problem.dim();
    let mut beta = init.to_vec();
    problem.solve_intercept(&mut beta)?;
    let mut objective = problem.objective(&beta);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while d > 1 && iterations < DESCENT_ITERATIONS {
        iterations += 1;
        let (res, jac, slope) = problem.reduced_system(&beta);
        let grad = jac.transpose() * &res;
        if grad.norm() <= handoff {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut improved = false;
        for _ in 0..=MAX_HALVINGS {
            let mut m = jtj.clone();
            for k in 0..d - 1 {
                m[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = m.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = beta.clone();
            for k in 1..d {
                cand[k] += step[k - 1];
                cand[0] += slope[k - 1] * step[k - 1];
            }
            if problem.solve_intercept(&mut cand).is_some() {
                let value = problem.objective(&cand);
                if value < objective {
                    beta = cand;
                    objective = value;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let t = problem.terms(&beta);
    let mu = if t.grad_c[0] != 0.0 {
        -t.grad_f[0] / t.grad_c[0]
    } else {
        0.0
    };
    Some(Run {
        beta,
        mu,
        iterations,
    })
}

fn converged(f: &DVector<f64>, norm: f64, d: usize) -> bool {
    norm <= EE_TOLERANCE && f[d].abs() <= CONSTRAINT_TOLERANCE
}

/// Newton on the `(d+1)`-dimensional KKT system, started at `init` with a
/// zero multiplier. If that fails to converge or ends above the starting
/// objective, the objective is first decreased along the constraint surface
/// and Newton is restarted from there.
pub fn solve_intrinsic(problem: &IntrinsicProblem, init: &[f64]) -> Result<FitResult> {
    let d = problem.dim();
    let t = problem.data.t;
    let start_feasible = problem.constraint(init).abs() <= CONSTRAINT_TOLERANCE;
    // a plain fit satisfies the constraint only to solver precision; the
    // benchmark is the same point moved exactly onto the constraint
    let mut anchor = init.to_vec();
    let start_objective = match problem.solve_intercept(&mut anchor) {
        Some(()) => problem.objective(&anchor).max(problem.objective(init)),
        None => problem.objective(init),
    };
    let acceptable = |run: &Run| {
        let (f, _, objective) = problem.kkt(&run.beta, run.mu);
        let ok = converged(&f, f.norm(), d)
            && (!start_feasible || objective <= start_objective + OBJECTIVE_SLACK);
        ok.then_some((f, objective))
    };
    let exact = newton_kkt(problem, init, 0.0, MAX_ITERATIONS);
    let mut spent = exact.iterations;
    let (run, (f, objective)) = match acceptable(&exact) {
        Some(v) => (exact, v),
        None => {
            let mut attempt = |start: &[f64], handoff: f64| {
                let descent = reduced_descent(problem, start, handoff)?;
                spent += descent.iterations;
                if acceptable(&descent).is_some() {
                    return Some(descent);
                }
                let polish = newton_kkt(problem, &descent.beta, descent.mu, MAX_ITERATIONS);
                spent += polish.iterations;
                Some(if acceptable(&polish).is_some() { polish } else { descent })
            };
            // a quick descent usually leaves Newton in its basin; if not,
            // descend as far as floating point allows
            let polished = attempt(init, DESCENT_HANDOFF).map(|run| {
                if acceptable(&run).is_some() {
                    return run;
                }
                attempt(&run.beta, 0.1 * EE_TOLERANCE).unwrap_or(run)
            });
            match polished.as_ref().and_then(|r| acceptable(r)) {
                Some(v) => (polished.unwrap(), v),
                None => {
                    return Err(SeedsError::SolverDiverged {
                        t,
                        iterations: spent,
                    })
                }
            }
        }
    };
    Ok(FitResult {
        beta: run.beta,
        converged: true,
        iterations: run.iterations,
        final_residual_norm: f.norm(),
        constraint_residual: Some(f[d]),
        multiplier: Some(run.mu),
        objective: Some(objective),
        ridge_used: 0.0,
        separation: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputation::solve_plain;
    use crate::types::Component;

    fn fixture() -> ModelData {
        let xs = [0.1, 0.4, 0.5, 0.9, 1.3, 1.6, 2.0, 2.2, 2.8, 3.1];
        let ys = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let ws = [1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        ModelData {
            component: Component::Exact,
            t: 1.0,
            dim: 2,
            rows: xs.iter().flat_map(|&x| [1.0, x]).collect(),
            weights: ws.to_vec(),
            outcomes: ys.to_vec(),
            bandwidth: None,
        }
    }

    #[test]
    fn intercept_only_is_pinned_by_constraint() {
        let mut data = fixture();
        data.dim = 1;
        data.rows = vec![1.0; 10];
        let plain = solve_plain(&data, None);
        let fit = solve_intrinsic(&IntrinsicProblem::new(&data, 4.0), &plain.beta).unwrap();
        assert!((fit.beta[0] - plain.beta[0]).abs() < 1e-10);
    }

    #[test]
    fn intrinsic_improves_objective_and_stays_feasible() {
        let data = fixture();
        let plain = solve_plain(&data, None);
        let problem = IntrinsicProblem::new(&data, 2.5);
        assert!(problem.constraint(&plain.beta).abs() <= 1e-10);
        let fit = solve_intrinsic(&problem, &plain.beta).unwrap();
        assert!(fit.constraint_residual.unwrap().abs() <= CONSTRAINT_TOLERANCE);
        assert!(fit.objective.unwrap() <= problem.objective(&plain.beta) + 1e-12);
        let grad = problem.lagrangian_gradient(&fit.beta, fit.multiplier.unwrap());
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }
}
