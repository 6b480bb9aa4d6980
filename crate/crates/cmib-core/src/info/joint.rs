use std::collections::BTreeSet;

use super::xlnx;
use crate::error::{CmibError, Result};
use crate::numeric::Rng;

/// Maximum alphabet size per variable; keeps exhaustive enumeration cheap.
pub const MAX_ALPHABET: usize = 8;
/// Maximum total table size.
pub const MAX_TABLE: usize = 1_000_000;
const NORMALIZATION_TOL: f64 = 1e-12;

/// Exhaustive joint distribution over named discrete variables.
///
/// The table is a flat array in row-major order over the variables in
/// declaration order: the **last** declared variable varies fastest, i.e.
/// `index = (((i_0 * s_1) + i_1) * s_2 + i_2) ...` for sizes `s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    vars: Vec<(String, usize)>,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    /// Validates: nonempty variable list, alphabet sizes in `1..=8`, table
    /// length equal to the product of sizes, entries nonnegative, total mass
    /// 1 within 1e-12.
    pub fn new(vars: Vec<(String, usize)>, probs: Vec<f64>) -> Result<Self> {
        if vars.is_empty() {
            return Err(CmibError::EmptyInput("DiscreteJoint variables"));
        }
        let mut seen = BTreeSet::new();
        let mut size = 1usize;
        for (name, s) in &vars {
            if !seen.insert(name.clone()) {
                return Err(CmibError::OverlappingVariables(name.clone()));
            }
            if *s == 0 || *s > MAX_ALPHABET {
                return Err(CmibError::invalid_parameter(
                    name.clone(),
                    format!("alphabet size {s} outside 1..={MAX_ALPHABET}"),
                ));
            }
            size = size.checked_mul(*s).ok_or_else(|| {
                CmibError::invalid_parameter("table", "table size overflow")
            })?;
            if size > MAX_TABLE {
                return Err(CmibError::invalid_parameter(
                    "table",
                    format!("table size exceeds {MAX_TABLE}"),
                ));
            }
        }
        if probs.len() != size {
            return Err(CmibError::DimMismatch {
                context: "DiscreteJoint table",
                expected: size,
                got: probs.len(),
            });
        }
        let mut total = 0.0;
        for &p in &probs {
            if !(p >= 0.0) {
                return Err(CmibError::InvalidDistribution(format!(
                    "negative or NaN probability {p}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CmibError::InvalidDistribution(format!(
                "table sums to {total}, not 1"
            )));
        }
        Ok(DiscreteJoint { vars, probs })
    }

    /// Random joint with the given variables, table drawn symmetric
    /// Dirichlet(1) (i.i.d. exponentials, normalized).
    pub fn random(vars: Vec<(String, usize)>, rng: &mut Rng) -> Result<Self> {
        let size: usize = vars.iter().map(|(_, s)| *s).product();
        let mut probs: Vec<f64> = (0..size)
            .map(|_| -(1.0 - rng.uniform()).ln())
            .collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        // Exact renormalization so the constructor's 1e-12 check holds.
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Self::new(vars, probs)
    }

    pub fn vars(&self) -> &[(String, usize)] {
        &self.vars
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn var_index(&self, name: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| CmibError::UnknownVariable(name.to_string()))
    }

    fn sizes(&self) -> Vec<usize> {
        self.vars.iter().map(|(_, s)| *s).collect()
    }

    /// Decode a flat index into per-variable indices (declaration order).
    pub(crate) fn decode(&self, mut flat: usize) -> Vec<usize> {
        let sizes = self.sizes();
        let mut idx = vec![0usize; sizes.len()];
        for k in (0..sizes.len()).rev() {
            idx[k] = flat % sizes[k];
            flat /= sizes[k];
        }
        idx
    }

    /// Marginal joint over `names` (kept in this joint's declaration order).
    pub fn marginal(&self, names: &[&str]) -> Result<DiscreteJoint> {
        if names.is_empty() {
            return Err(CmibError::EmptyInput("marginal variable set"));
        }
        let mut keep = Vec::new();
        for name in names {
            let i = self.var_index(name)?;
            if keep.contains(&i) {
                return Err(CmibError::OverlappingVariables((*name).to_string()));
            }
            keep.push(i);
        }
        keep.sort_unstable();
        let kept_vars: Vec<(String, usize)> = keep.iter().map(|&i| self.vars[i].clone()).collect();
        let kept_sizes: Vec<usize> = kept_vars.iter().map(|(_, s)| *s).collect();
        let out_size: usize = kept_sizes.iter().product();
        let mut out = vec![0.0; out_size];
        for (flat, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let idx = self.decode(flat);
            let mut o = 0usize;
            for (k, &vi) in keep.iter().enumerate() {
                o = o * kept_sizes[k] + idx[vi];
            }
            out[o] += p;
        }
        DiscreteJoint::renormalized(kept_vars, out)
    }

    /// Build without the strict mass re-check (used internally where mass is
    /// preserved by construction up to accumulation error).
    fn renormalized(vars: Vec<(String, usize)>, probs: Vec<f64>) -> Result<DiscreteJoint> {
        let mut j = DiscreteJoint { vars, probs };
        let total: f64 = j.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CmibError::InvalidDistribution(format!(
                "marginal mass {total}"
            )));
        }
        for p in &mut j.probs {
            *p /= total;
        }
        Ok(j)
    }

    /// Shannon entropy (nats) of the marginal over `names`.
    pub fn entropy(&self, names: &[&str]) -> Result<f64> {
        let m = self.marginal(names)?;
        Ok(-m.probs.iter().map(|&p| xlnx(p)).sum::<f64>())
    }

    /// Mutual information `I(A; B) = H(A) + H(B) - H(A,B)` between disjoint
    /// variable sets.
    pub fn mutual_info(&self, a: &[&str], b: &[&str]) -> Result<f64> {
        self.check_disjoint(a, b)?;
        let mut ab: Vec<&str> = a.to_vec();
        ab.extend_from_slice(b);
        Ok(self.entropy(a)? + self.entropy(b)? - self.entropy(&ab)?)
    }

    /// Conditional mutual information as the conditional-slice average:
    /// `I(A; B | G) = sum_g p(g) I(A; B | G = g)`.
    pub fn cond_mutual_info(&self, a: &[&str], b: &[&str], given: &[&str]) -> Result<f64> {
        self.check_disjoint(a, b)?;
        self.check_disjoint(a, given)?;
        self.check_disjoint(b, given)?;
        let mut all: Vec<&str> = a.to_vec();
        all.extend_from_slice(b);
        all.extend_from_slice(given);
        let joint = self.marginal(&all)?;

        // In `joint`, variables appear in declaration order; find positions.
        let a_pos: Vec<usize> = a.iter().map(|n| joint.var_index(n).unwrap()).collect();
        let b_pos: Vec<usize> = b.iter().map(|n| joint.var_index(n).unwrap()).collect();
        let g_pos: Vec<usize> = given.iter().map(|n| joint.var_index(n).unwrap()).collect();
        let sizes = joint.sizes();

        let g_sizes: Vec<usize> = g_pos.iter().map(|&i| sizes[i]).collect();
        let g_count: usize = g_sizes.iter().product();
        let a_sizes: Vec<usize> = a_pos.iter().map(|&i| sizes[i]).collect();
        let b_sizes: Vec<usize> = b_pos.iter().map(|&i| sizes[i]).collect();
        let a_count: usize = a_sizes.iter().product();
        let b_count: usize = b_sizes.iter().product();

        // Accumulate p(a,b,g) into per-g slices.
        let mut slices = vec![vec![0.0; a_count * b_count]; g_count];
        let mut g_mass = vec![0.0; g_count];
        for (flat, &p) in joint.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let idx = joint.decode(flat);
            let gi = compose(&idx, &g_pos, &g_sizes);
            let ai = compose(&idx, &a_pos, &a_sizes);
            let bi = compose(&idx, &b_pos, &b_sizes);
            slices[gi][ai * b_count + bi] += p;
            g_mass[gi] += p;
        }

        let mut total = 0.0;
        for g in 0..g_count {
            let pg = g_mass[g];
            if pg == 0.0 {
                continue;
            }
            // I(A;B | G=g) on the normalized slice.
            let slice = &slices[g];
            let mut pa = vec![0.0; a_count];
            let mut pb = vec![0.0; b_count];
            for ai in 0..a_count {
                for bi in 0..b_count {
                    let p = slice[ai * b_count + bi] / pg;
                    pa[ai] += p;
                    pb[bi] += p;
                }
            }
            let mut mi = 0.0;
            for ai in 0..a_count {
                for bi in 0..b_count {
                    let p = slice[ai * b_count + bi] / pg;
                    if p > 0.0 {
                        mi += p * (p / (pa[ai] * pb[bi])).ln();
                    }
                }
            }
            total += pg * mi;
        }
        Ok(total)
    }

    fn check_disjoint(&self, a: &[&str], b: &[&str]) -> Result<()> {
        for n in a {
            self.var_index(n)?;
        }
        for n in b {
            self.var_index(n)?;
            if a.contains(n) {
                return Err(CmibError::OverlappingVariables((*n).to_string()));
            }
        }
        Ok(())
    }

    /// Extend with a conditional channel: the result ranges over this joint's
    /// variables plus the channel output, with
    /// `p'(v, out) = p(v) * q(out | conditioners(v))`.
    pub fn extend_with_channel(&self, ch: &super::DiscreteChannel) -> Result<DiscreteJoint> {
        let cond_pos: Vec<usize> = ch
            .conditioners()
            .iter()
            .map(|(n, s)| {
                let i = self.var_index(n)?;
                if self.vars[i].1 != *s {
                    return Err(CmibError::DimMismatch {
                        context: "channel conditioner alphabet",
                        expected: self.vars[i].1,
                        got: *s,
                    });
                }
                Ok(i)
            })
            .collect::<Result<_>>()?;
        let (out_name, out_size) = ch.output();
        if self.vars.iter().any(|(n, _)| n == out_name) {
            return Err(CmibError::OverlappingVariables(out_name.to_string()));
        }
        let cond_sizes: Vec<usize> = ch.conditioners().iter().map(|(_, s)| *s).collect();

        let mut vars = self.vars.clone();
        vars.push((out_name.to_string(), out_size));
        let mut probs = vec![0.0; self.probs.len() * out_size];
        for (flat, &p) in self.probs.iter().enumerate() {
            let idx = self.decode(flat);
            let ci = compose(&idx, &cond_pos, &cond_sizes);
            for o in 0..out_size {
                probs[flat * out_size + o] = p * ch.prob(ci, o);
            }
        }
        DiscreteJoint::renormalized(vars, probs)
    }
}

/// Compose selected per-variable indices into a flat row-major index.
fn compose(idx: &[usize], positions: &[usize], sizes: &[usize]) -> usize {
    let mut out = 0usize;
    for (k, &pos) in positions.iter().enumerate() {
        out = out * sizes[k] + idx[pos];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(name_a: &str, name_b: &str, probs: Vec<f64>) -> DiscreteJoint {
        DiscreteJoint::new(
            vec![(name_a.to_string(), 2), (name_b.to_string(), 2)],
            probs,
        )
        .unwrap()
    }

    #[test]
    fn entropy_uniform_binary_is_ln2() {
        let j = DiscreteJoint::new(vec![("A".into(), 2)], vec![0.5, 0.5]).unwrap();
        assert!((j.entropy(&["A"]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn entropy_point_mass_is_zero() {
        let j = DiscreteJoint::new(vec![("A".into(), 4)], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(j.entropy(&["A"]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_matches_extended_precision_oracle() {
        // Oracle: Kahan-compensated direct sum of -p ln p.
        let mut rng = Rng::new(404);
        let j = DiscreteJoint::random(vec![("A".into(), 5), ("B".into(), 7)], &mut rng).unwrap();
        let (mut acc, mut comp) = (0.0f64, 0.0f64);
        for &p in j.probs() {
            let term = if p > 0.0 { -p * p.ln() } else { 0.0 };
            let y = term - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        let h = j.entropy(&["A", "B"]).unwrap();
        assert!((h - acc).abs() < 1e-12, "{h} vs {acc}");
    }

    #[test]
    fn mutual_info_independent_is_zero() {
        let j = pair("A", "B", vec![0.25, 0.25, 0.25, 0.25]);
        assert!(j.mutual_info(&["A"], &["B"]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn mutual_info_copied_bit_is_ln2() {
        let j = pair("A", "B", vec![0.5, 0.0, 0.0, 0.5]);
        let mi = j.mutual_info(&["A"], &["B"]).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn mutual_info_matches_direct_definition() {
        // Oracle: sum p(a,b) ln [p(a,b) / (p(a) p(b))] computed from scratch.
        let rng = Rng::new(2024);
        for trial in 0..20 {
            let mut r = rng.substream("mi", trial);
            let j =
                DiscreteJoint::random(vec![("A".into(), 3), ("B".into(), 4)], &mut r).unwrap();
            let probs = j.probs();
            let mut pa = [0.0; 3];
            let mut pb = [0.0; 4];
            for a in 0..3 {
                for b in 0..4 {
                    pa[a] += probs[a * 4 + b];
                    pb[b] += probs[a * 4 + b];
                }
            }
            let mut direct = 0.0;
            for a in 0..3 {
                for b in 0..4 {
                    let p = probs[a * 4 + b];
                    if p > 0.0 {
                        direct += p * (p / (pa[a] * pb[b])).ln();
                    }
                }
            }
            let mi = j.mutual_info(&["A"], &["B"]).unwrap();
            assert!((mi - direct).abs() < 1e-12, "trial {trial}: {mi} vs {direct}");
        }
    }

    #[test]
    fn cond_mutual_info_matches_entropy_combination() {
        // Oracle: I(A;B|G) = H(A,G) + H(B,G) - H(A,B,G) - H(G).
        let rng = Rng::new(555);
        for trial in 0..20 {
            let mut r = rng.substream("cmi", trial);
            let j = DiscreteJoint::random(
                vec![("A".into(), 3), ("B".into(), 2), ("G".into(), 4)],
                &mut r,
            )
            .unwrap();
            let by_slices = j.cond_mutual_info(&["A"], &["B"], &["G"]).unwrap();
            let by_entropy = j.entropy(&["A", "G"]).unwrap() + j.entropy(&["B", "G"]).unwrap()
                - j.entropy(&["A", "B", "G"]).unwrap()
                - j.entropy(&["G"]).unwrap();
            assert!(
                (by_slices - by_entropy).abs() < 1e-12,
                "trial {trial}: {by_slices} vs {by_entropy}"
            );
        }
    }

    #[test]
    fn cond_mutual_info_degenerate_conditioner() {
        // G constant: I(A;B|G) reduces to I(A;B).
        let j = DiscreteJoint::new(
            vec![("A".into(), 2), ("B".into(), 2), ("G".into(), 1)],
            vec![0.4, 0.1, 0.2, 0.3],
        )
        .unwrap();
        let cmi = j.cond_mutual_info(&["A"], &["B"], &["G"]).unwrap();
        let mi = j.mutual_info(&["A"], &["B"]).unwrap();
        assert!((cmi - mi).abs() < 1e-14);
    }

    #[test]
    fn rejects_invalid_tables() {
        assert!(DiscreteJoint::new(vec![("A".into(), 2)], vec![0.6, 0.6]).is_err());
        assert!(DiscreteJoint::new(vec![("A".into(), 2)], vec![1.2, -0.2]).is_err());
        assert!(DiscreteJoint::new(vec![("A".into(), 9)], vec![1.0 / 9.0; 9]).is_err());
        assert!(DiscreteJoint::new(vec![("A".into(), 2)], vec![0.5, 0.25, 0.25]).is_err());
        assert!(
            DiscreteJoint::new(vec![("A".into(), 2), ("A".into(), 2)], vec![0.25; 4]).is_err()
        );
    }

    #[test]
    fn unknown_and_overlapping_variables_error() {
        let j = pair("A", "B", vec![0.25; 4].to_vec());
        assert!(matches!(
            j.entropy(&["C"]),
            Err(CmibError::UnknownVariable(_))
        ));
        assert!(matches!(
            j.mutual_info(&["A"], &["A"]),
            Err(CmibError::OverlappingVariables(_))
        ));
    }

    #[test]
    fn marginal_of_full_set_is_identity() {
        let mut rng = Rng::new(9);
        let j = DiscreteJoint::random(vec![("A".into(), 2), ("B".into(), 3)], &mut rng).unwrap();
        let m = j.marginal(&["A", "B"]).unwrap();
        for (a, b) in j.probs().iter().zip(m.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
