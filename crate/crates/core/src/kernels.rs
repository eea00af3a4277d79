//! Gaussian kernel smoothing and rule-of-thumb bandwidths.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeedsError};
use crate::types::{quantile_sorted, Dataset};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `∫ K(u)² du` for the standard Gaussian kernel, `1 / (2√π)`.
pub const NU2: f64 = 0.282_094_791_773_878_14;

/// Default undersmoothing exponent; bandwidths shrink like `m^(-0.3)`.
pub const DEFAULT_KAPPA: f64 = 0.3;

pub fn gaussian_kernel(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// `K_h(x) = K(x / h) / h`.
#[inline]
pub fn scaled_kernel(x: f64, h: f64) -> f64 {
    gaussian_kernel(x / h) / h
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(SeedsError::NonpositiveBandwidth(h))
    }
}

/// `K_h(anchor_i - t)` for every anchor.
pub fn kernel_weights(anchors: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
    check_bandwidth(h)?;
    Ok(anchors.iter().map(|&a| scaled_kernel(a - t, h)).collect())
}

fn sample_sd(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / (m - 1.0)).sqrt()
}

/// `1.06 · min(sd, IQR / 1.34) · m^(-κ)` with `κ` strictly inside `(1/5, 1/2)`.
pub fn rule_of_thumb_bandwidth(anchors: &[f64], m: usize, kappa: f64) -> Result<f64> {
    if m < 2 || anchors.len() < 2 {
        return Err(SeedsError::InvalidParameter(
            "bandwidth needs at least two observations".into(),
        ));
    }
    if !(kappa > 0.2 && kappa < 0.5) {
        return Err(SeedsError::InvalidParameter(format!(
            "undersmoothing exponent must lie in (0.2, 0.5), got {kappa}"
        )));
    }
    let sd = sample_sd(anchors);
    if !(sd > 0.0) {
        return Err(SeedsError::DegenerateSample);
    }
    let mut sorted = anchors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    // a zero IQR with positive sd falls back to sd alone
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(1.06 * spread * (m as f64).powf(-kappa))
}

/// The four bandwidths: labeled/unlabeled, left/right anchors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub labeled_left: f64,
    pub labeled_right: f64,
    pub unlabeled_left: f64,
    pub unlabeled_right: f64,
}

/// Explicit bandwidths; any `None` falls back to the rule of thumb.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandwidthOverrides {
    pub labeled_left: Option<f64>,
    pub labeled_right: Option<f64>,
    pub unlabeled_left: Option<f64>,
    pub unlabeled_right: Option<f64>,
}

impl Bandwidths {
    pub fn validate(&self) -> Result<()> {
        check_bandwidth(self.labeled_left)?;
        check_bandwidth(self.labeled_right)?;
        check_bandwidth(self.unlabeled_left)?;
        check_bandwidth(self.unlabeled_right)
    }

    /// Rule-of-thumb bandwidths from the `L` and `U` values of each set.
    ///
    /// With fewer than two unlabeled records the labeled bandwidths are reused
    /// for the unlabeled side.
    pub fn rule_of_thumb(
        dataset: &Dataset,
        kappa: f64,
        overrides: &BandwidthOverrides,
    ) -> Result<Self> {
        let n = dataset.n();
        let lab_l: Vec<f64> = dataset.labeled.iter().map(|r| r.left).collect();
        let lab_u: Vec<f64> = dataset.labeled.iter().map(|r| r.right).collect();
        let pick = |given: Option<f64>, anchors: &[f64], m: usize| match given {
            Some(h) => check_bandwidth(h).map(|_| h),
            None => rule_of_thumb_bandwidth(anchors, m, kappa),
        };
        let labeled_left = pick(overrides.labeled_left, &lab_l, n)?;
        let labeled_right = pick(overrides.labeled_right, &lab_u, n)?;
        let big_n = dataset.big_n();
        let (unlabeled_left, unlabeled_right) = if big_n >= 2 {
            let un_l: Vec<f64> = dataset.unlabeled.iter().map(|r| r.left).collect();
            let un_u: Vec<f64> = dataset.unlabeled.iter().map(|r| r.right).collect();
            (
                pick(overrides.unlabeled_left, &un_l, big_n)?,
                pick(overrides.unlabeled_right, &un_u, big_n)?,
            )
        } else {
            (
                overrides.unlabeled_left.unwrap_or(labeled_left),
                overrides.unlabeled_right.unwrap_or(labeled_right),
            )
        };
        let bw = Bandwidths {
            labeled_left,
            labeled_right,
            unlabeled_left,
            unlabeled_right,
        };
        bw.validate()?;
        Ok(bw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kernel_values() {
        assert!(close(gaussian_kernel(0.0), 0.398_942_3, 1e-7));
        for u in [0.3, 1.0, 2.5] {
            assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
        }
    }

    #[test]
    fn nu2_matches_quadrature() {
        // midpoint rule on [-10, 10], step 1e-4
        let step = 1e-4;
        let mut sum = 0.0;
        let mut u = -10.0 + step / 2.0;
        while u < 10.0 {
            sum += gaussian_kernel(u).powi(2);
            u += step;
        }
        let quad = sum * step;
        assert!(close(quad, NU2, 1e-6), "{quad}");
        assert!(close(NU2, 0.282_094_8, 1e-7));
    }

    #[test]
    fn kernel_weight_examples() {
        let t = 3.7;
        let w = kernel_weights(&[t], t, 2.0).unwrap();
        assert!(close(w[0], 0.398_942_3 / 2.0, 1e-7));
        let w = kernel_weights(&[t + 1.0], t, 1.0).unwrap();
        assert!(close(w[0], 0.241_970_7, 1e-7));
        let w = kernel_weights(&[0.0, 1.0, 2.0], 1.0, 0.5).unwrap();
        let k2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!(close(w[0], k2 / 0.5, 1e-12));
        assert!(close(w[1], gaussian_kernel(0.0) / 0.5, 1e-12));
        assert!(close(w[2], w[0], 0.0));
        assert!(close(w[0], 0.107_98, 1e-5));
        assert!(close(w[1], 0.797_88, 1e-5));
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert_eq!(
            kernel_weights(&[1.0], 0.0, 0.0),
            Err(SeedsError::NonpositiveBandwidth(0.0))
        );
        assert!(kernel_weights(&[1.0], 0.0, -1.0).is_err());
    }

    #[test]
    fn bandwidth_rescaling_identity() {
        // K_h(x) = (h'/h) K_{h'}(x h'/h)
        for &(x, h, hp) in &[(0.3, 0.5, 1.2), (-1.1, 2.0, 0.4), (2.2, 0.7, 0.7)] {
            let lhs = scaled_kernel(x, h);
            let rhs = (hp / h) * scaled_kernel(x * hp / h, hp);
            assert!(close(lhs, rhs, 1e-14));
        }
    }

    #[test]
    fn kernel_mass_estimates_density() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let anchors: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>() * 4.0).collect();
        let w = kernel_weights(&anchors, 2.0, 0.1).unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(close(mean, 0.25, 0.02), "{mean}");
    }

    #[test]
    fn rule_of_thumb_formula() {
        let b = (0.75f64).sqrt();
        let anchors = [-b, -b, b, b];
        assert!(close(sample_sd(&anchors), 1.0, 1e-12));
        let h = rule_of_thumb_bandwidth(&anchors, 100, 0.3).unwrap();
        assert!(close(h, 1.06 * 100f64.powf(-0.3), 1e-12));
        assert!(close(h, 0.266_26, 1e-5));
    }

    #[test]
    fn rule_of_thumb_guards() {
        assert_eq!(
            rule_of_thumb_bandwidth(&[2.0; 10], 10, 0.3),
            Err(SeedsError::DegenerateSample)
        );
        assert!(rule_of_thumb_bandwidth(&[1.0, 2.0, 3.0], 3, 0.2).is_err());
        assert!(rule_of_thumb_bandwidth(&[1.0, 2.0, 3.0], 3, 0.5).is_err());
        assert!(rule_of_thumb_bandwidth(&[1.0], 1, 0.3).is_err());
    }
}
