//! Persistent skill store. A skill pairs a text card with the realized
//! latent (posterior parameters, one sample, and its projected prefix); the
//! library indexes rendered card tokens for retrieval by token overlap.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::card::SkillCard;
use crate::env::json_parse_error;
use crate::error::{CmibError, Result};

/// Clamp range for posterior log-std, shared with the latent model.
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;

/// Where a skill came from and how good its two bottleneck objectives were.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub bundle_id: String,
    pub config_hash: String,
    /// Selection objective of the chosen card.
    pub j_c: f64,
    /// Final surrogate loss of the latent stage.
    pub j_z: f64,
}

/// A realized skill: the selected card plus the latent posterior's
/// parameters, one sampled latent, and its projected control prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSkill {
    pub skill_id: String,
    pub card: SkillCard,
    pub posterior_mean: Vec<f64>,
    pub posterior_std: Vec<f64>,
    pub z_star: Vec<f64>,
    /// Projected control prefix of `z_star`.
    pub prefix: Vec<f64>,
    pub provenance: Provenance,
}

impl MultimodalSkill {
    pub fn validate(&self) -> Result<()> {
        let d = self.posterior_mean.len();
        if self.posterior_std.len() != d || self.z_star.len() != d {
            return Err(CmibError::DimMismatch {
                context: "MultimodalSkill latent dimensions",
                expected: d,
                got: self.posterior_std.len().max(self.z_star.len()),
            });
        }
        let (lo, hi) = (LOG_SIGMA_MIN.exp(), LOG_SIGMA_MAX.exp());
        for &s in &self.posterior_std {
            if !s.is_finite() || s < lo * (1.0 - 1e-12) || s > hi * (1.0 + 1e-12) {
                return Err(CmibError::invalid_parameter(
                    "posterior_std",
                    format!("outside clamp range [{lo:.3e}, {hi:.3e}]: {s}"),
                ));
            }
        }
        Ok(())
    }

    fn index_tokens(&self) -> Vec<String> {
        let mut tokens = self.card.tokens();
        tokens.sort();
        tokens.dedup();
        tokens
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryFile {
    version: u32,
    skills: Vec<MultimodalSkill>,
}

const LIBRARY_VERSION: u32 = 1;

/// Ordered skill collection with an inverted index from card tokens to the
/// skills containing them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillLibrary {
    skills: Vec<MultimodalSkill>,
    index: BTreeMap<String, Vec<usize>>,
}

impl SkillLibrary {
    pub fn new() -> Self {
        SkillLibrary::default()
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[MultimodalSkill] {
        &self.skills
    }

    pub fn get(&self, skill_id: &str) -> Option<&MultimodalSkill> {
        self.skills.iter().find(|s| s.skill_id == skill_id)
    }

    pub fn add_skill(&mut self, skill: MultimodalSkill) -> Result<()> {
        skill.validate()?;
        if self.skills.iter().any(|s| s.skill_id == skill.skill_id) {
            return Err(CmibError::DuplicateSkillId(skill.skill_id));
        }
        let idx = self.skills.len();
        for token in skill.index_tokens() {
            self.index.entry(token).or_default().push(idx);
        }
        self.skills.push(skill);
        Ok(())
    }

    /// Skills containing `token` on their rendered card, in insertion order.
    pub fn skills_with_token(&self, token: &str) -> Vec<&MultimodalSkill> {
        self.index
            .get(token)
            .map(|ids| ids.iter().map(|&i| &self.skills[i]).collect())
            .unwrap_or_default()
    }

    /// Top-k skills by Jaccard similarity between the de-duplicated query
    /// tokens and each card's de-duplicated tokens. Ties (including score
    /// zero) resolve by insertion order, so every call is deterministic.
    pub fn retrieve(&self, query: &[String], k: usize) -> Result<Vec<(f64, &MultimodalSkill)>> {
        if k == 0 {
            return Err(CmibError::invalid_parameter("k", "must be at least 1"));
        }
        if self.skills.is_empty() {
            return Ok(Vec::new());
        }
        let mut q: Vec<&String> = query.iter().collect();
        q.sort();
        q.dedup();

        let mut hits = vec![0usize; self.skills.len()];
        for token in &q {
            if let Some(ids) = self.index.get(token.as_str()) {
                for &i in ids {
                    hits[i] += 1;
                }
            }
        }
        let mut scored: Vec<(f64, usize)> = hits
            .iter()
            .enumerate()
            .map(|(i, &inter)| {
                let card_tokens = self.skills[i].index_tokens().len();
                let union = q.len() + card_tokens - inter;
                let score = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
                (score, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(s, i)| (s, &self.skills[i])).collect())
    }

    pub fn to_json(&self) -> String {
        let file = LibraryFile { version: LIBRARY_VERSION, skills: self.skills.clone() };
        serde_json::to_string_pretty(&file).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LibraryFile =
            serde_json::from_str(text).map_err(|e| json_parse_error(text, e))?;
        if file.version != LIBRARY_VERSION {
            return Err(CmibError::invalid_parameter(
                "library version",
                format!("expected {LIBRARY_VERSION}, got {}", file.version),
            ));
        }
        let mut lib = SkillLibrary::new();
        for skill in file.skills {
            lib.add_skill(skill)?;
        }
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        SkillLibrary::from_json(&text)
    }
}
