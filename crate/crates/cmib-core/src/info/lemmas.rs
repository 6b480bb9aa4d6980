use serde::{Deserialize, Serialize};

use super::{DiscreteChannel, DiscreteJoint};
use crate::error::{CmibError, Result};
use crate::numeric::Rng;

/// Exact-enumeration check that the joint bottleneck objective over the
/// variables `(X, M) -> (c, z) -> Y` equals the sum of a text bottleneck term
/// and a conditional multimodal term:
///
/// `I((X,M);(c,z)) - beta * I((c,z);Y)
///    = [I((X,M);c) - beta * I(c;Y)] + [I((X,M);z|c) - beta * I(z;Y|c)]`
///
/// This is an identity via the chain rule for mutual information, so it must
/// hold for *any* joint distribution over the five variables; no structural
/// assumptions are needed.
pub fn verify_lemma1(joint: &DiscreteJoint, beta: f64) -> Result<Lemma1Report> {
    for name in ["X", "M", "c", "z", "Y"] {
        joint.var_index(name)?;
    }
    let joint_value = joint.mutual_info(&["X", "M"], &["c", "z"])?
        - beta * joint.mutual_info(&["c", "z"], &["Y"])?;
    let text_term =
        joint.mutual_info(&["X", "M"], &["c"])? - beta * joint.mutual_info(&["c"], &["Y"])?;
    let residual_term = joint.cond_mutual_info(&["X", "M"], &["z"], &["c"])?
        - beta * joint.cond_mutual_info(&["z"], &["Y"], &["c"])?;
    let factored_value = text_term + residual_term;
    Ok(Lemma1Report {
        beta,
        joint_value,
        factored_value,
        gap: (joint_value - factored_value).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub beta: f64,
    pub joint_value: f64,
    pub factored_value: f64,
    pub gap: f64,
}

/// A fully specified finite instance of the variational-bound setting:
/// an environment joint over `(X, M, Y, c)`, a stochastic encoder
/// `q(z | M, c)`, a prior `r(z | c)` and a predictor `pi(Y | z, c)`.
///
/// The encoder's conditioning set is checked at construction: it must be
/// exactly `(M, c)`. An encoder reading `X` (or `Y`) would break the
/// conditional-independence assumption the bound rests on, so such instances
/// are rejected rather than silently producing vacuous numbers.
#[derive(Debug, Clone)]
pub struct Lemma2Instance {
    env: DiscreteJoint,
    encoder: DiscreteChannel,
    prior: DiscreteChannel,
    predictor: DiscreteChannel,
}

impl Lemma2Instance {
    pub fn new(
        env: DiscreteJoint,
        encoder: DiscreteChannel,
        prior: DiscreteChannel,
        predictor: DiscreteChannel,
    ) -> Result<Self> {
        for name in ["X", "M", "Y", "c"] {
            env.var_index(name)?;
        }
        let size_of = |name: &str| -> usize {
            let i = env.var_index(name).expect("checked above");
            env.vars()[i].1
        };

        let enc_names: Vec<&str> = encoder.conditioners().iter().map(|(n, _)| n.as_str()).collect();
        if enc_names.contains(&"X") || enc_names.contains(&"Y") {
            return Err(CmibError::MarkovViolation(format!(
                "encoder conditions on {:?}; it may only read (M, c)",
                enc_names
            )));
        }
        if enc_names != ["M", "c"] {
            return Err(CmibError::MarkovViolation(format!(
                "encoder must condition on exactly (M, c), got {:?}",
                enc_names
            )));
        }
        let (z_name, z_size) = encoder.output();
        if z_name != "z" {
            return Err(CmibError::invalid_parameter(
                "encoder output",
                format!("must be named z, got {z_name}"),
            ));
        }
        for ((n, s), expected) in encoder.conditioners().iter().zip(["M", "c"]) {
            if *s != size_of(expected) {
                return Err(CmibError::DimMismatch {
                    context: "encoder conditioner alphabet",
                    expected: size_of(expected),
                    got: *s,
                });
            }
            debug_assert_eq!(n, expected);
        }

        let prior_names: Vec<&str> = prior.conditioners().iter().map(|(n, _)| n.as_str()).collect();
        if prior_names != ["c"] {
            return Err(CmibError::invalid_parameter(
                "prior",
                format!("must condition on exactly (c), got {:?}", prior_names),
            ));
        }
        if prior.conditioners()[0].1 != size_of("c") || prior.output().1 != z_size {
            return Err(CmibError::DimMismatch {
                context: "prior alphabets",
                expected: z_size,
                got: prior.output().1,
            });
        }

        let pred_names: Vec<&str> =
            predictor.conditioners().iter().map(|(n, _)| n.as_str()).collect();
        if pred_names != ["z", "c"] {
            return Err(CmibError::invalid_parameter(
                "predictor",
                format!("must condition on exactly (z, c), got {:?}", pred_names),
            ));
        }
        if predictor.conditioners()[0].1 != z_size
            || predictor.conditioners()[1].1 != size_of("c")
            || predictor.output().1 != size_of("Y")
        {
            return Err(CmibError::DimMismatch {
                context: "predictor alphabets",
                expected: size_of("Y"),
                got: predictor.output().1,
            });
        }

        Ok(Lemma2Instance {
            env,
            encoder,
            prior,
            predictor,
        })
    }

    pub fn env(&self) -> &DiscreteJoint {
        &self.env
    }

    fn z_size(&self) -> usize {
        self.encoder.output().1
    }

    fn c_size(&self) -> usize {
        let i = self.env.var_index("c").expect("validated");
        self.env.vars()[i].1
    }

    fn m_size(&self) -> usize {
        let i = self.env.var_index("M").expect("validated");
        self.env.vars()[i].1
    }

    /// `p(M=m, c=c)` as a flat `m * c_size + c` table.
    fn pm_c(&self) -> Result<Vec<f64>> {
        marginal_table(&self.env, &["M", "c"])
    }

    /// Aggregated posterior `q(z | c) = sum_m p(m | c) q(z | m, c)` as a
    /// channel on `c`. Rows with `p(c) = 0` are filled uniform; they carry no
    /// mass in any expectation.
    pub fn aggregated_posterior(&self) -> Result<DiscreteChannel> {
        let (zs, cs, ms) = (self.z_size(), self.c_size(), self.m_size());
        let pmc = self.pm_c()?;
        let mut pc = vec![0.0; cs];
        for m in 0..ms {
            for c in 0..cs {
                pc[c] += pmc[m * cs + c];
            }
        }
        let mut table = vec![0.0; cs * zs];
        for c in 0..cs {
            if pc[c] == 0.0 {
                for z in 0..zs {
                    table[c * zs + z] = 1.0 / zs as f64;
                }
                continue;
            }
            for m in 0..ms {
                let w = pmc[m * cs + c] / pc[c];
                for z in 0..zs {
                    table[c * zs + z] += w * self.encoder.prob(m * cs + c, z);
                }
            }
            let total: f64 = table[c * zs..(c + 1) * zs].iter().sum();
            for z in 0..zs {
                table[c * zs + z] /= total;
            }
        }
        DiscreteChannel::new(
            vec![("c".to_string(), cs)],
            ("z".to_string(), zs),
            table,
        )
    }

    /// The exact conditional `p(Y | z, c)` induced by the environment and the
    /// encoder; unreached `(z, c)` cells are filled uniform.
    pub fn true_predictor(&self) -> Result<DiscreteChannel> {
        let full = self.env.extend_with_channel(&self.encoder)?;
        let (zs, cs) = (self.z_size(), self.c_size());
        let y_size = {
            let i = self.env.var_index("Y").expect("validated");
            self.env.vars()[i].1
        };
        let pyzc = marginal_table(&full, &["Y", "z", "c"])?;
        let mut table = vec![0.0; zs * cs * y_size];
        for z in 0..zs {
            for c in 0..cs {
                let mut mass = 0.0;
                for y in 0..y_size {
                    mass += pyzc[(y * zs + z) * cs + c];
                }
                let row = (z * cs + c) * y_size;
                if mass == 0.0 {
                    for y in 0..y_size {
                        table[row + y] = 1.0 / y_size as f64;
                    }
                } else {
                    for y in 0..y_size {
                        table[row + y] = pyzc[(y * zs + z) * cs + c] / mass;
                    }
                    let total: f64 = table[row..row + y_size].iter().sum();
                    for y in 0..y_size {
                        table[row + y] /= total;
                    }
                }
            }
        }
        DiscreteChannel::new(
            vec![("z".to_string(), zs), ("c".to_string(), cs)],
            ("Y".to_string(), y_size),
            table,
        )
    }
}

/// Evaluate both sides of the variational bound on a finite instance.
///
/// * `lhs  = I((X,M); z | c) - beta_z * I(z; Y | c)` on the induced joint;
/// * `rhs  = E[KL(q(z|M,c) || r(z|c))] + beta_z * E[-ln pi(Y|z,c)]
///           - beta_z * H(Y | c)`;
/// * `slack = rhs - lhs`, nonnegative up to accumulation error.
///
/// The report also carries the decomposition of the expected KL into
/// `I(M; z | c)` plus the aggregated-posterior-to-prior KL, which is the
/// identity making the `beta_z = 0` case exact: there, `slack` equals the
/// aggregated KL term alone.
pub fn verify_lemma2(instance: &Lemma2Instance, beta_z: f64) -> Result<Lemma2Report> {
    let env = &instance.env;
    let full = env.extend_with_channel(&instance.encoder)?;
    let (zs, cs, ms) = (instance.z_size(), instance.c_size(), instance.m_size());

    let lhs = full.cond_mutual_info(&["X", "M"], &["z"], &["c"])?
        - beta_z * full.cond_mutual_info(&["z"], &["Y"], &["c"])?;

    // E_{(M,c)} KL(q(.|M,c) || r(.|c)), with an explicit error on absolute
    // discontinuity (q puts mass where r has none).
    let pmc = instance.pm_c()?;
    let mut expected_kl = 0.0;
    for m in 0..ms {
        for c in 0..cs {
            let w = pmc[m * cs + c];
            if w == 0.0 {
                continue;
            }
            for z in 0..zs {
                let q = instance.encoder.prob(m * cs + c, z);
                if q == 0.0 {
                    continue;
                }
                let r = instance.prior.prob(c, z);
                if r == 0.0 {
                    return Err(CmibError::InfiniteDivergence(format!(
                        "q(z={z} | m={m}, c={c}) = {q} but prior r(z={z} | c={c}) = 0"
                    )));
                }
                expected_kl += w * q * (q / r).ln();
            }
        }
    }

    let mi_m_z_given_c = full.cond_mutual_info(&["M"], &["z"], &["c"])?;

    // E_c KL(q_agg(.|c) || r(.|c)).
    let agg = instance.aggregated_posterior()?;
    let pc = marginal_table(env, &["c"])?;
    let mut aggregated_prior_kl = 0.0;
    for c in 0..cs {
        if pc[c] == 0.0 {
            continue;
        }
        for z in 0..zs {
            let q = agg.prob(c, z);
            if q == 0.0 {
                continue;
            }
            let r = instance.prior.prob(c, z);
            if r == 0.0 {
                return Err(CmibError::InfiniteDivergence(format!(
                    "aggregated posterior has mass at (z={z}, c={c}) but prior is zero"
                )));
            }
            aggregated_prior_kl += pc[c] * q * (q / r).ln();
        }
    }

    // E[-ln pi(Y | z, c)] over the induced joint.
    let pyzc = marginal_table(&full, &["Y", "z", "c"])?;
    let y_size = pyzc.len() / (zs * cs);
    let mut cross_entropy = 0.0;
    for y in 0..y_size {
        for z in 0..zs {
            for c in 0..cs {
                let p = pyzc[(y * zs + z) * cs + c];
                if p == 0.0 {
                    continue;
                }
                let pi = instance.predictor.prob(z * cs + c, y);
                if pi == 0.0 {
                    return Err(CmibError::InfiniteDivergence(format!(
                        "predictor assigns zero to reachable (Y={y}, z={z}, c={c})"
                    )));
                }
                cross_entropy -= p * pi.ln();
            }
        }
    }

    let cond_label_entropy = env.entropy(&["Y", "c"])? - env.entropy(&["c"])?;
    let rhs = expected_kl + beta_z * cross_entropy - beta_z * cond_label_entropy;

    Ok(Lemma2Report {
        beta_z,
        lhs,
        rhs,
        slack: rhs - lhs,
        expected_kl,
        mi_m_z_given_c,
        aggregated_prior_kl,
        cross_entropy,
        cond_label_entropy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma2Report {
    pub beta_z: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub expected_kl: f64,
    pub mi_m_z_given_c: f64,
    pub aggregated_prior_kl: f64,
    pub cross_entropy: f64,
    pub cond_label_entropy: f64,
}

/// One line of a verification report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_seed: u64,
    pub lemma: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap_or_slack: f64,
    pub pass: bool,
}

/// Random bound instance with all alphabets in `2..=3`, drawn from the given
/// stream: environment joint Dirichlet(1), encoder/prior/predictor slices
/// Dirichlet(1).
pub fn random_lemma2_instance(rng: &mut Rng) -> Result<Lemma2Instance> {
    let pick = |r: &mut Rng| 2 + r.below(2);
    let (xs, ms, ys, cs, zs) = (
        pick(rng),
        pick(rng),
        pick(rng),
        pick(rng),
        pick(rng),
    );
    let env = DiscreteJoint::random(
        vec![
            ("X".into(), xs),
            ("M".into(), ms),
            ("Y".into(), ys),
            ("c".into(), cs),
        ],
        rng,
    )?;
    let encoder = DiscreteChannel::random(
        vec![("M".into(), ms), ("c".into(), cs)],
        ("z".into(), zs),
        rng,
    )?;
    let prior = DiscreteChannel::random(vec![("c".into(), cs)], ("z".into(), zs), rng)?;
    let predictor = DiscreteChannel::random(
        vec![("z".into(), zs), ("c".into(), cs)],
        ("Y".into(), ys),
        rng,
    )?;
    Lemma2Instance::new(env, encoder, prior, predictor)
}

/// Marginal of `j` over `names`, flattened row-major in the *given* name
/// order (unlike [`DiscreteJoint::marginal`], which keeps declaration order).
fn marginal_table(j: &DiscreteJoint, names: &[&str]) -> Result<Vec<f64>> {
    let pos: Vec<usize> = names
        .iter()
        .map(|n| j.var_index(n))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = pos.iter().map(|&i| j.vars()[i].1).collect();
    let out_size: usize = sizes.iter().product();
    let mut out = vec![0.0; out_size];
    for (flat, &p) in j.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let idx = j.decode(flat);
        let mut o = 0usize;
        for (k, &vi) in pos.iter().enumerate() {
            o = o * sizes[k] + idx[vi];
        }
        out[o] += p;
    }
    Ok(out)
}
