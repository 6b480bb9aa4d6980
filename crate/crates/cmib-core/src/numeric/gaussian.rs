use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{CmibError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian over `R^d`, parameterized by per-dimension mean and
/// standard deviation (not variance). All information quantities derived
/// from it are in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    /// Requires `mean` and `std` of equal nonzero length, all entries finite
    /// and every `std > 0`.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(CmibError::EmptyInput("DiagGaussian mean"));
        }
        if mean.len() != std.len() {
            return Err(CmibError::DimMismatch {
                context: "DiagGaussian",
                expected: mean.len(),
                got: std.len(),
            });
        }
        for (i, (&m, &s)) in mean.iter().zip(&std).enumerate() {
            if !m.is_finite() || !s.is_finite() {
                return Err(CmibError::invalid_parameter(
                    format!("component {i}"),
                    "mean and std must be finite",
                ));
            }
            if s <= 0.0 {
                return Err(CmibError::invalid_parameter(
                    format!("std[{i}]"),
                    format!("must be positive, got {s}"),
                ));
            }
        }
        Ok(DiagGaussian { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// KL(self || other) in nats, closed form:
    /// `sum_i ln(r_i/q_i) + (q_i^2 + (mq_i - mr_i)^2) / (2 r_i^2) - 1/2`
    /// with `q` this distribution's std and `r` the other's.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(CmibError::DimMismatch {
                context: "DiagGaussian::kl",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let mut total = 0.0;
        for i in 0..self.dim() {
            let q = self.std[i];
            let r = other.std[i];
            let dm = self.mean[i] - other.mean[i];
            total += (r / q).ln() + (q * q + dm * dm) / (2.0 * r * r) - 0.5;
        }
        Ok(total)
    }

    /// Log density at `z` in nats.
    pub fn logpdf(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(CmibError::DimMismatch {
                context: "DiagGaussian::logpdf",
                expected: self.dim(),
                got: z.len(),
            });
        }
        let mut total = 0.0;
        for i in 0..self.dim() {
            let s = self.std[i];
            let d = (z[i] - self.mean[i]) / s;
            total += -0.5 * (LN_2PI + d * d) - s.ln();
        }
        Ok(total)
    }

    /// Reparameterized sample `z = mean + std ⊙ eps`, `eps ~ N(0, I)`.
    /// Consumes exactly `dim` normal draws from `rng`.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| m + s * rng.normal())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let q = DiagGaussian::new(vec![0.4, -1.2, 3.0], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(q.kl(&q).unwrap(), 0.0);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let q = DiagGaussian::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
        let r = DiagGaussian::standard(2);
        assert_relative_eq!(q.kl(&r).unwrap(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo_log_ratio() {
        // Independent estimate: E_q[log q(z) - log r(z)] over 10^6 samples,
        // agreement within three standard errors.
        let q = DiagGaussian::new(vec![0.3], vec![0.7]).unwrap();
        let r = DiagGaussian::new(vec![-0.1], vec![1.2]).unwrap();
        let closed = q.kl(&r).unwrap();

        let n = 1_000_000usize;
        let mut rng = Rng::new(20_240_901);
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = q.sample(&mut rng);
            let x = q.logpdf(&z).unwrap() - r.logpdf(&z).unwrap();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - closed).abs() <= 3.0 * se,
            "closed form {closed} vs MC {mean} (3se = {})",
            3.0 * se
        );
    }

    #[test]
    fn kl_is_asymmetric_in_general() {
        let q = DiagGaussian::new(vec![0.0], vec![0.5]).unwrap();
        let r = DiagGaussian::new(vec![1.0], vec![2.0]).unwrap();
        assert!((q.kl(&r).unwrap() - r.kl(&q).unwrap()).abs() > 1e-3);
    }

    #[test]
    fn logpdf_standard_normal_at_origin() {
        let g = DiagGaussian::standard(1);
        assert_relative_eq!(g.logpdf(&[0.0]).unwrap(), -0.918_938_5, epsilon = 1e-6);
    }

    #[test]
    fn logpdf_translation_invariance() {
        let g = DiagGaussian::new(vec![0.7, -0.2], vec![0.9, 1.4]).unwrap();
        let shifted = DiagGaussian::new(vec![5.7, 4.8], vec![0.9, 1.4]).unwrap();
        let a = g.logpdf(&[0.1, 0.3]).unwrap();
        let b = shifted.logpdf(&[5.1, 5.3]).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn sample_with_tiny_std_returns_mean() {
        let g = DiagGaussian::new(vec![2.0, -3.0], vec![1e-12, 1e-12]).unwrap();
        let mut rng = Rng::new(0);
        let z = g.sample(&mut rng);
        assert!((z[0] - 2.0).abs() < 1e-10);
        assert!((z[1] + 3.0).abs() < 1e-10);
    }

    #[test]
    fn sample_is_deterministic_given_rng_state() {
        let g = DiagGaussian::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        let a = g.sample(&mut Rng::new(99));
        let b = g.sample(&mut Rng::new(99));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_moments_match_parameters() {
        let g = DiagGaussian::new(vec![1.5], vec![0.8]).unwrap();
        let mut rng = Rng::new(7);
        let n = 100_000usize;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = g.sample(&mut rng)[0];
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        // 4 sigma on the mean estimate, generous band on std.
        assert!((mean - 1.5).abs() < 4.0 * 0.8 / (n as f64).sqrt());
        assert!((std - 0.8).abs() < 0.01);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(DiagGaussian::new(vec![], vec![]).is_err());
        assert!(DiagGaussian::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn logpdf_average_log_ratio_approximates_kl() {
        let q = DiagGaussian::new(vec![0.2, -0.4], vec![1.1, 0.6]).unwrap();
        let r = DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut rng = Rng::new(314);
        let n = 200_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = q.sample(&mut rng);
            sum += q.logpdf(&z).unwrap() - r.logpdf(&z).unwrap();
        }
        let est = sum / n as f64;
        let kl = q.kl(&r).unwrap();
        assert!((est - kl).abs() < 0.02, "est {est} vs kl {kl}");
    }
}
