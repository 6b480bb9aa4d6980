use crate::error::{CmibError, Result};
use crate::numeric::Rng;

const SLICE_TOL: f64 = 1e-12;

/// Conditional distribution `q(out | conditioners)` over small alphabets.
///
/// The table is flat with the output fastest: row `c` (a row-major composite
/// index over the conditioners in declaration order) holds the conditional
/// distribution `q(· | c)`, which must sum to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChannel {
    conditioners: Vec<(String, usize)>,
    output: (String, usize),
    table: Vec<f64>,
}

impl DiscreteChannel {
    pub fn new(
        conditioners: Vec<(String, usize)>,
        output: (String, usize),
        table: Vec<f64>,
    ) -> Result<Self> {
        if conditioners.is_empty() {
            return Err(CmibError::EmptyInput("DiscreteChannel conditioners"));
        }
        for (name, s) in conditioners.iter().chain(std::iter::once(&output)) {
            if *s == 0 || *s > super::joint::MAX_ALPHABET {
                return Err(CmibError::invalid_parameter(
                    name.clone(),
                    format!("alphabet size {s} outside 1..={}", super::joint::MAX_ALPHABET),
                ));
            }
        }
        for (i, (a, _)) in conditioners.iter().enumerate() {
            if conditioners[i + 1..].iter().any(|(b, _)| a == b) || *a == output.0 {
                return Err(CmibError::OverlappingVariables(a.clone()));
            }
        }
        let rows: usize = conditioners.iter().map(|(_, s)| *s).product();
        let out_size = output.1;
        if table.len() != rows * out_size {
            return Err(CmibError::DimMismatch {
                context: "DiscreteChannel table",
                expected: rows * out_size,
                got: table.len(),
            });
        }
        for r in 0..rows {
            let slice = &table[r * out_size..(r + 1) * out_size];
            let mut total = 0.0;
            for &p in slice {
                if !(p >= 0.0) {
                    return Err(CmibError::InvalidDistribution(format!(
                        "negative or NaN probability {p} in conditional slice {r}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > SLICE_TOL {
                return Err(CmibError::InvalidDistribution(format!(
                    "conditional slice {r} sums to {total}, not 1"
                )));
            }
        }
        Ok(DiscreteChannel {
            conditioners,
            output,
            table,
        })
    }

    /// Random channel: each conditional slice drawn symmetric Dirichlet(1).
    pub fn random(
        conditioners: Vec<(String, usize)>,
        output: (String, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        let rows: usize = conditioners.iter().map(|(_, s)| *s).product();
        let out_size = output.1;
        let mut table = vec![0.0; rows * out_size];
        for r in 0..rows {
            let slice = &mut table[r * out_size..(r + 1) * out_size];
            for p in slice.iter_mut() {
                *p = -(1.0 - rng.uniform()).ln();
            }
            let total: f64 = slice.iter().sum();
            for p in slice.iter_mut() {
                *p /= total;
            }
            let total: f64 = slice.iter().sum();
            for p in slice.iter_mut() {
                *p /= total;
            }
        }
        Self::new(conditioners, output, table)
    }

    pub fn conditioners(&self) -> &[(String, usize)] {
        &self.conditioners
    }

    pub fn output(&self) -> (&str, usize) {
        (&self.output.0, self.output.1)
    }

    /// `q(out = o | conditioner row = row)`.
    pub fn prob(&self, row: usize, o: usize) -> f64 {
        self.table[row * self.output.1 + o]
    }

    pub fn rows(&self) -> usize {
        self.table.len() / self.output.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_normalized_slices() {
        let ch = DiscreteChannel::new(
            vec![("M".into(), 2)],
            ("z".into(), 2),
            vec![0.3, 0.7, 0.9, 0.1],
        )
        .unwrap();
        assert_eq!(ch.prob(1, 0), 0.9);
        assert_eq!(ch.rows(), 2);
    }

    #[test]
    fn rejects_unnormalized_slice() {
        let err = DiscreteChannel::new(
            vec![("M".into(), 2)],
            ("z".into(), 2),
            vec![0.3, 0.8, 0.9, 0.1],
        );
        assert!(matches!(err, Err(CmibError::InvalidDistribution(_))));
    }

    #[test]
    fn rejects_overlapping_names() {
        assert!(DiscreteChannel::new(
            vec![("M".into(), 2), ("M".into(), 2)],
            ("z".into(), 2),
            vec![0.5; 8],
        )
        .is_err());
        assert!(DiscreteChannel::new(
            vec![("z".into(), 2)],
            ("z".into(), 2),
            vec![0.5; 4],
        )
        .is_err());
    }

    #[test]
    fn random_channels_are_valid_and_deterministic() {
        let mut a = Rng::new(8);
        let mut b = Rng::new(8);
        let ca = DiscreteChannel::random(vec![("M".into(), 3)], ("z".into(), 4), &mut a).unwrap();
        let cb = DiscreteChannel::random(vec![("M".into(), 3)], ("z".into(), 4), &mut b).unwrap();
        assert_eq!(ca, cb);
    }
}
