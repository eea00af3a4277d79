use nalgebra::{DMatrix, DVector};

use super::{
    logistic, FitResult, ModelData, CONDITION_LIMIT, EE_TOLERANCE, MAX_HALVINGS, MAX_ITERATIONS,
    RIDGE,
};

/// Linear predictors beyond this magnitude mean the fit is running off to infinity.
const SEPARATION_ETA: f64 = 15.0;

/// `(1/n) Σ w_i Φ̄_i {y_i - g(βᵀΦ̄_i)} - penalty·β` and its negated Jacobian.
pub(super) fn equation(
    data: &ModelData,
    beta: &[f64],
    penalty: f64,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let d = data.dim;
    let scale = 1.0 / data.len() as f64;
    let mut u = DVector::zeros(d);
    let mut info = DMatrix::zeros(d, d);
    let mut max_eta = 0.0f64;
    for i in 0..data.len() {
        let w = data.weights[i];
        if w == 0.0 {
            continue;
        }
        let x = data.row(i);
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        max_eta = max_eta.max(eta.abs());
        let p = logistic(eta);
        let r = w * (data.outcomes[i] - p);
        let v = w * p * (1.0 - p);
        for a in 0..d {
            u[a] += r * x[a];
            let vx = v * x[a];
            for b in 0..=a {
                info[(a, b)] += vx * x[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    u *= scale;
    info *= scale;
    if penalty > 0.0 {
        for a in 0..d {
            u[a] -= penalty * beta[a];
            info[(a, a)] += penalty;
        }
    }
    (u, info, max_eta)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn newton_step(info: &DMatrix<f64>, u: &DVector<f64>, ridge: &mut f64) -> Option<DVector<f64>> {
    let mut m = info.clone();
    if *ridge == 0.0 && condition_number(info) > CONDITION_LIMIT {
        *ridge = RIDGE;
    }
    if *ridge > 0.0 {
        for a in 0..m.nrows() {
            m[(a, a)] += *ridge;
        }
    }
    m.cholesky().map(|c| c.solve(u))
}

struct Outcome {
    beta: Vec<f64>,
    converged: bool,
    iterations: usize,
    norm: f64,
    ridge: f64,
    diverging: bool,
}

fn iterate(data: &ModelData, start: Vec<f64>, penalty: f64) -> Outcome {
    let mut beta = start;
    let mut ridge = 0.0;
    let (mut u, mut info, mut max_eta) = equation(data, &beta, penalty);
    let mut norm = u.norm();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        if norm <= EE_TOLERANCE {
            break;
        }
        if penalty == 0.0 && max_eta > SEPARATION_ETA {
            return Outcome {
                beta,
                converged: false,
                iterations,
                norm,
                ridge,
                diverging: true,
            };
        }
        iterations += 1;
        let Some(step) = newton_step(&info, &u, &mut ridge) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (cu, cinfo, ceta) = equation(data, &cand, penalty);
            let cnorm = cu.norm();
            if cnorm < norm {
                beta = cand;
                u = cu;
                info = cinfo;
                max_eta = ceta;
                norm = cnorm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Outcome {
        converged: norm <= EE_TOLERANCE,
        diverging: penalty == 0.0 && max_eta > SEPARATION_ETA,
        beta,
        iterations,
        norm,
        ridge,
    }
}

/// Newton iteration on the weighted logistic estimating equation.
///
/// Ill-conditioned Jacobians get a `1e-6` ridge. When the iterates run off
/// to infinity (separation), the equation is re-solved with a `1e-6 β`
/// penalty and the result is flagged.
pub fn solve_plain(data: &ModelData, init: Option<&[f64]>) -> FitResult {
    let start = init.map_or_else(|| vec![0.0; data.dim], |b| b.to_vec());
    let first = iterate(data, start, 0.0);
    if first.converged && !first.diverging {
        return FitResult {
            beta: first.beta,
            converged: true,
            iterations: first.iterations,
            final_residual_norm: first.norm,
            constraint_residual: None,
            multiplier: None,
            objective: None,
            ridge_used: first.ridge,
            separation: false,
        };
    }
    let penalised = iterate(data, vec![0.0; data.dim], RIDGE);
    FitResult {
        beta: penalised.beta,
        converged: penalised.converged,
        iterations: first.iterations + penalised.iterations,
        final_residual_norm: penalised.norm,
        constraint_residual: None,
        multiplier: None,
        objective: None,
        ridge_used: RIDGE.max(penalised.ridge),
        separation: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Component;

    fn data(rows: Vec<f64>, dim: usize, weights: Vec<f64>, outcomes: Vec<f64>) -> ModelData {
        ModelData {
            component: Component::Exact,
            t: 1.0,
            dim,
            rows,
            weights,
            outcomes,
            bandwidth: None,
        }
    }

    #[test]
    fn intercept_balanced_outcomes() {
        let d = data(vec![1.0; 4], 1, vec![1.0; 4], vec![1.0, 0.0, 1.0, 0.0]);
        let fit = solve_plain(&d, None);
        assert!(fit.converged && !fit.separation);
        assert!(fit.beta[0].abs() < 1e-12);
    }

    #[test]
    fn intercept_matches_logit_of_mean() {
        let d = data(vec![1.0; 5], 1, vec![1.0, 1.0, 1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        let fit = solve_plain(&d, None);
        let expected = (0.75f64 / 0.25).ln();
        assert!((fit.beta[0] - expected).abs() < 1e-9);
        assert!((fit.beta[0] - 1.0986).abs() < 1e-4);
        // 1-d grid search on the equation itself
        let mut best = (f64::INFINITY, 0.0);
        for k in -3000..=3000 {
            let b = k as f64 * 1e-3;
            let u = equation(&d, &[b], 0.0).0[0].abs();
            if u < best.0 {
                best = (u, b);
            }
        }
        assert!((best.1 - fit.beta[0]).abs() <= 1e-3);
    }

    #[test]
    fn separation_is_flagged_with_large_coefficient() {
        let d = data(vec![1.0; 6], 1, vec![0.5; 6], vec![1.0; 6]);
        let fit = solve_plain(&d, None);
        assert!(fit.separation);
        assert!(fit.converged);
        assert!(fit.ridge_used >= RIDGE);
        assert!(fit.beta[0] > 5.0);
    }

    #[test]
    fn collinear_design_gets_ridge() {
        // second column duplicates the intercept
        let rows = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let d = data(rows, 2, vec![1.0; 4], vec![1.0, 0.0, 1.0, 1.0]);
        let fit = solve_plain(&d, None);
        assert!(fit.ridge_used > 0.0);
        let p = logistic(fit.beta[0] + fit.beta[1]);
        assert!((p - 0.75).abs() < 1e-4);
    }
}
