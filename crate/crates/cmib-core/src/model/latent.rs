use serde::{Deserialize, Serialize};

use crate::card::SkillCard;
use crate::env::RolloutBundle;
use crate::error::{CmibError, Result};
use crate::library::{MultimodalSkill, Provenance, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::model::frozen::FrozenTaskModel;
use crate::numeric::{Activation, DiagGaussian, FeedforwardNet, Rng};

/// Architecture of the trainable bottleneck nets. Doubles as the checkpoint
/// descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDescriptor {
    /// Pooled perception width consumed by the posterior.
    pub m_dim: usize,
    pub card_dim: usize,
    pub latent_dim: usize,
    pub prefix_dim: usize,
    pub posterior_hidden: usize,
    pub prior_hidden: usize,
    pub projection_hidden: usize,
    /// When false, both the posterior and the prior receive a zeroed card
    /// embedding: the latent arm is trained independently of the text arm.
    pub conditioned: bool,
}

impl LatentDescriptor {
    pub fn standard(m_dim: usize, card_dim: usize, conditioned: bool) -> Self {
        LatentDescriptor {
            m_dim,
            card_dim,
            latent_dim: 8,
            prefix_dim: 16,
            posterior_hidden: 64,
            prior_hidden: 32,
            projection_hidden: 32,
            conditioned,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_dim", self.m_dim),
            ("card_dim", self.card_dim),
            ("latent_dim", self.latent_dim),
            ("prefix_dim", self.prefix_dim),
            ("posterior_hidden", self.posterior_hidden),
            ("prior_hidden", self.prior_hidden),
            ("projection_hidden", self.projection_hidden),
        ] {
            if v == 0 {
                return Err(CmibError::invalid_parameter(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// The trainable half of the skill constructor: a posterior encoder over
/// `[M ; embed(card)]`, a conditional prior over `embed(card)`, and a
/// projection from latent samples to frozen-model control prefixes. Both
/// Gaussian heads emit `(mean, log-std)` with the log-std clamped to
/// `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSkillModel {
    pub(crate) descriptor: LatentDescriptor,
    pub(crate) posterior: FeedforwardNet,
    pub(crate) prior: FeedforwardNet,
    pub(crate) projection: FeedforwardNet,
}

/// Splits a Gaussian head's raw output into (mean, clamped log-std).
pub(crate) fn split_gaussian_head(out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = out.len() / 2;
    let mean = out[..d].to_vec();
    let log_std = out[d..].iter().map(|&s| s.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)).collect();
    (mean, log_std)
}

impl LatentSkillModel {
    pub fn new(descriptor: LatentDescriptor, rng: &mut Rng) -> Result<Self> {
        descriptor.validate()?;
        let acts = [Activation::Tanh, Activation::Identity];
        let posterior = FeedforwardNet::random(
            &[
                descriptor.m_dim + descriptor.card_dim,
                descriptor.posterior_hidden,
                2 * descriptor.latent_dim,
            ],
            &acts,
            rng,
        )?;
        let prior = FeedforwardNet::random(
            &[descriptor.card_dim, descriptor.prior_hidden, 2 * descriptor.latent_dim],
            &acts,
            rng,
        )?;
        let projection = FeedforwardNet::random(
            &[descriptor.latent_dim, descriptor.projection_hidden, descriptor.prefix_dim],
            &acts,
            rng,
        )?;
        Ok(LatentSkillModel { descriptor, posterior, prior, projection })
    }

    pub fn descriptor(&self) -> &LatentDescriptor {
        &self.descriptor
    }

    pub fn latent_dim(&self) -> usize {
        self.descriptor.latent_dim
    }

    pub fn prefix_dim(&self) -> usize {
        self.descriptor.prefix_dim
    }

    pub fn conditioned(&self) -> bool {
        self.descriptor.conditioned
    }

    /// Posterior input `[M ; embed(card)]`, with the card part zeroed for
    /// the unconditioned variant.
    pub(crate) fn posterior_input(&self, m: &[f64], card_embedding: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.descriptor.m_dim {
            return Err(CmibError::DimMismatch {
                context: "posterior perception input",
                expected: self.descriptor.m_dim,
                got: m.len(),
            });
        }
        if card_embedding.len() != self.descriptor.card_dim {
            return Err(CmibError::DimMismatch {
                context: "posterior card input",
                expected: self.descriptor.card_dim,
                got: card_embedding.len(),
            });
        }
        let mut input = Vec::with_capacity(m.len() + card_embedding.len());
        input.extend_from_slice(m);
        if self.descriptor.conditioned {
            input.extend_from_slice(card_embedding);
        } else {
            input.extend(std::iter::repeat(0.0).take(card_embedding.len()));
        }
        Ok(input)
    }

    pub(crate) fn prior_input(&self, card_embedding: &[f64]) -> Result<Vec<f64>> {
        if card_embedding.len() != self.descriptor.card_dim {
            return Err(CmibError::DimMismatch {
                context: "prior card input",
                expected: self.descriptor.card_dim,
                got: card_embedding.len(),
            });
        }
        Ok(if self.descriptor.conditioned {
            card_embedding.to_vec()
        } else {
            vec![0.0; card_embedding.len()]
        })
    }

    pub fn posterior_dist(&self, m: &[f64], card_embedding: &[f64]) -> Result<DiagGaussian> {
        let out = self.posterior.forward(&self.posterior_input(m, card_embedding)?)?;
        let (mean, log_std) = split_gaussian_head(&out);
        DiagGaussian::new(mean, log_std.iter().map(|s| s.exp()).collect())
    }

    pub fn prior_dist(&self, card_embedding: &[f64]) -> Result<DiagGaussian> {
        let out = self.prior.forward(&self.prior_input(card_embedding)?)?;
        let (mean, log_std) = split_gaussian_head(&out);
        DiagGaussian::new(mean, log_std.iter().map(|s| s.exp()).collect())
    }

    /// Control prefix of a latent sample.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.projection.forward(z)
    }

    pub fn param_count(&self) -> usize {
        self.posterior.param_count() + self.prior.param_count() + self.projection.param_count()
    }

    /// Canonical flat layout: posterior, then prior, then projection.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = self.posterior.flatten_params();
        out.extend(self.prior.flatten_params());
        out.extend(self.projection.flatten_params());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CmibError::DimMismatch {
                context: "LatentSkillModel::set_params",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let a = self.posterior.param_count();
        let b = a + self.prior.param_count();
        self.posterior.set_params(&flat[..a])?;
        self.prior.set_params(&flat[a..b])?;
        self.projection.set_params(&flat[b..])?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = Checkpoint {
            descriptor: self.descriptor.clone(),
            params: self.flatten_params(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Checkpoint =
            serde_json::from_str(text).map_err(|e| crate::env::json_parse_error(text, e))?;
        let mut zero_rng = Rng::new(0);
        let mut model = LatentSkillModel::new(file.descriptor, &mut zero_rng)?;
        model.set_params(&file.params)?;
        Ok(model)
    }
}

/// Checkpoint schema: architecture descriptor plus the flat parameter
/// vector in canonical order.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    descriptor: LatentDescriptor,
    params: Vec<f64>,
}

impl Serialize for LatentSkillModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        Checkpoint { descriptor: self.descriptor.clone(), params: self.flatten_params() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatentSkillModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = Checkpoint::deserialize(deserializer)?;
        let mut zero_rng = Rng::new(0);
        let mut model =
            LatentSkillModel::new(file.descriptor, &mut zero_rng).map_err(serde::de::Error::custom)?;
        model.set_params(&file.params).map_err(serde::de::Error::custom)?;
        Ok(model)
    }
}

/// Draws one latent from the trained posterior and freezes the result into
/// a library skill: card, posterior parameters, the sample, and its
/// projected prefix.
pub fn realize_skill(
    model: &LatentSkillModel,
    task_model: &FrozenTaskModel,
    bundle: &RolloutBundle,
    card: &SkillCard,
    provenance: Provenance,
    rng: &mut Rng,
) -> Result<MultimodalSkill> {
    let e_card = e_card_checked(model, task_model.embed_card(card))?;
    let posterior = model.posterior_dist(&bundle.m, &e_card)?;
    let z_star = posterior.sample(rng);
    let prefix = model.project(&z_star)?;
    let skill = MultimodalSkill {
        skill_id: format!("skill-{}", bundle.bundle_id()),
        card: card.clone(),
        posterior_mean: posterior.mean().to_vec(),
        posterior_std: posterior.std().to_vec(),
        z_star,
        prefix,
        provenance,
    };
    skill.validate()?;
    Ok(skill)
}

fn e_card_checked(model: &LatentSkillModel, e: Vec<f64>) -> Result<Vec<f64>> {
    if e.len() != model.descriptor.card_dim {
        return Err(CmibError::DimMismatch {
            context: "card embedding width",
            expected: model.descriptor.card_dim,
            got: e.len(),
        });
    }
    Ok(e)
}

/// Action distribution of the frozen model under a stored skill: the card
/// is always embedded; the latent prefix is injected only when requested
/// (otherwise an all-zero prefix of the same width).
pub fn control_forward(
    task_model: &FrozenTaskModel,
    skill: &MultimodalSkill,
    step: usize,
    use_latent: bool,
) -> Result<Vec<f64>> {
    let e_card = task_model.embed_card(&skill.card);
    let prefix = if use_latent {
        skill.prefix.clone()
    } else {
        vec![0.0; skill.prefix.len()]
    };
    task_model.action_distribution(&prefix, &e_card, step)
}
