//! Staged artifact pipeline: fit the frozen model, generate rollout
//! bundles, select cards, train the latent arms and realize skills,
//! evaluate every arm, and merge the per-seed rows into the final report.
//!
//! Every artifact on disk is stamped with the producing config's hash (and
//! seed where applicable). Loading an artifact under a different config is
//! a hard [`CmibError::HashMismatch`]; stages never silently mix artifacts.
//! Stage failures are wrapped with the stage name and leave the artifacts
//! of completed stages on disk for inspection.
//!
//! All payloads serialize through `serde_json` with exact float round-
//! tripping, so a rerun under the same config and seeds reproduces every
//! data file byte-for-byte. Wall-clock timings are the one exception and
//! live in separate, purely informational `timings` files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::card::{SelectionReport, SkillCard};
use crate::config::ExperimentConfig;
use crate::env::{RolloutBundle, TaskInstance};
use crate::error::{CmibError, Result};
use crate::eval::{
    build_arm, evaluate_method_on_seed, ArmArtifacts, Report, SeedRow, SeedWorkload,
};
use crate::library::SkillLibrary;
use crate::model::{prefit, trace_to_csv, FrozenTaskModel, LatentSkillModel, TrainItem};

pub const CONFIG_FILE: &str = "config.toml";
pub const FROZEN_FILE: &str = "frozen.json";
pub const BUNDLES_FILE: &str = "bundles.json";
pub const CARDS_FILE: &str = "cards.json";
pub const ROWS_FILE: &str = "rows.csv";
pub const SEED_TIMINGS_FILE: &str = "timings.csv";

const ARTIFACT_VERSION: u32 = 1;

/// On-disk envelope for every JSON artifact: a version, the producing
/// config's hash, the seed (for per-seed artifacts), and the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: u32,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub payload: T,
}

/// Tasks and their rollout bundles, the output of the generation stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenPayload {
    pub tasks: Vec<TaskInstance>,
    pub bundles: Vec<RolloutBundle>,
}

/// Selected cards with their selection reports, index-aligned with the
/// generation stage's bundles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CardsPayload {
    pub cards: Vec<SkillCard>,
    pub selections: Vec<SelectionReport>,
}

/// The two latent arms of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Cmib,
    Independent,
}

impl Arm {
    pub fn tag(self) -> &'static str {
        match self {
            Arm::Cmib => "cmib",
            Arm::Independent => "independent",
        }
    }

    pub fn conditioned(self) -> bool {
        matches!(self, Arm::Cmib)
    }
}

pub fn arm_file(arm: Arm) -> String {
    format!("arm-{}.json", arm.tag())
}

pub fn trace_file(arm: Arm) -> String {
    format!("trace-{}.csv", arm.tag())
}

pub fn library_file(arm: Arm) -> String {
    format!("library-{}.json", arm.tag())
}

/// Staged experiment pipeline rooted at one output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Pipeline {
    /// Validates the config and creates the output directory (and parents)
    /// if missing.
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out)?;
        Ok(Pipeline { cfg, out })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    fn report_name(&self, kind: &str, ext: &str) -> String {
        format!("{kind}-{}.{ext}", self.cfg.short_hash())
    }

    pub fn report_csv_path(&self) -> PathBuf {
        self.out.join(self.report_name("report", "csv"))
    }

    pub fn summary_json_path(&self) -> PathBuf {
        self.out.join(self.report_name("summary", "json"))
    }

    pub fn timings_csv_path(&self) -> PathBuf {
        self.out.join(self.report_name("timings", "csv"))
    }

    /// Writes the canonical form of the config next to the artifacts.
    pub fn write_config(&self) -> Result<PathBuf> {
        let path = self.out.join(CONFIG_FILE);
        std::fs::write(&path, self.cfg.canonical_toml())?;
        Ok(path)
    }

    fn save_artifact<T: Serialize>(&self, path: &Path, seed: Option<u64>, payload: &T) -> Result<()> {
        let artifact = Artifact {
            version: ARTIFACT_VERSION,
            config_hash: self.cfg.hash(),
            seed,
            payload,
        };
        let mut text =
            serde_json::to_string_pretty(&artifact).map_err(|e| CmibError::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn load_artifact<T: DeserializeOwned>(&self, path: &Path) -> Result<Artifact<T>> {
        if !path.exists() {
            return Err(CmibError::MissingArtifact(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let artifact: Artifact<T> = serde_json::from_str(&text).map_err(|e| CmibError::Parse {
            offset: e.column(),
            message: format!("{}: {e}", path.display()),
        })?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(CmibError::invalid_parameter(
                "artifact version",
                format!("{}: expected {ARTIFACT_VERSION}, got {}", path.display(), artifact.version),
            ));
        }
        if artifact.config_hash != self.cfg.hash() {
            return Err(CmibError::HashMismatch {
                artifact: path.display().to_string(),
                found: artifact.config_hash,
                expected: self.cfg.hash(),
            });
        }
        Ok(artifact)
    }

    /// Fits the frozen task model and writes `frozen.json`. Returns the
    /// model.
    pub fn stage_frozen(&self) -> Result<FrozenTaskModel> {
        let run = || -> Result<FrozenTaskModel> {
            let model = prefit(&self.cfg.env, &self.cfg.frozen)?;
            self.save_artifact(&self.out.join(FROZEN_FILE), None, &model)?;
            Ok(model)
        };
        run().map_err(|e| e.in_stage("frozen"))
    }

    /// Loads the frozen model artifact, verifying hash and checksum, or
    /// fits and saves it if the artifact does not exist yet.
    pub fn load_or_fit_frozen(&self) -> Result<FrozenTaskModel> {
        let path = self.out.join(FROZEN_FILE);
        if !path.exists() {
            return self.stage_frozen();
        }
        let run = || -> Result<FrozenTaskModel> {
            let artifact: Artifact<FrozenTaskModel> = self.load_artifact(&path)?;
            artifact.payload.verify_checksum()?;
            Ok(artifact.payload)
        };
        run().map_err(|e| e.in_stage("frozen"))
    }

    /// Generates tasks and rollout bundles for every configured seed.
    pub fn stage_gen(&self) -> Result<()> {
        let run = || -> Result<()> {
            for &seed in &self.cfg.eval.seeds {
                let dir = self.seed_dir(seed);
                std::fs::create_dir_all(&dir)?;
                // Card selection is deferred to the cards stage; generation
                // itself never consults the frozen model.
                let (tasks, bundles) = crate::eval::generate_seed_tasks(&self.cfg, seed)?;
                let payload = GenPayload { tasks, bundles };
                self.save_artifact(&dir.join(BUNDLES_FILE), Some(seed), &payload)?;
            }
            Ok(())
        };
        run().map_err(|e| e.in_stage("gen"))
    }

    /// Selects one card per bundle for every seed, reading the generation
    /// artifacts and the frozen model.
    pub fn stage_cards(&self, frozen: &FrozenTaskModel) -> Result<()> {
        let run = || -> Result<()> {
            for &seed in &self.cfg.eval.seeds {
                let dir = self.seed_dir(seed);
                let gen: Artifact<GenPayload> = self.load_artifact(&dir.join(BUNDLES_FILE))?;
                let (cards, selections) =
                    crate::eval::select_seed_cards(&self.cfg, frozen, &gen.payload.bundles)?;
                let payload = CardsPayload { cards, selections };
                self.save_artifact(&dir.join(CARDS_FILE), Some(seed), &payload)?;
            }
            Ok(())
        };
        run().map_err(|e| e.in_stage("cards"))
    }

    /// Trains both latent arms per seed, writes checkpoints, loss traces,
    /// and the realized skill libraries.
    pub fn stage_train(&self, frozen: &FrozenTaskModel) -> Result<()> {
        let run = || -> Result<()> {
            self.for_each_seed_parallel(|seed| {
                let dir = self.seed_dir(seed);
                let gen: Artifact<GenPayload> = self.load_artifact(&dir.join(BUNDLES_FILE))?;
                let cards: Artifact<CardsPayload> = self.load_artifact(&dir.join(CARDS_FILE))?;
                let items = build_items(frozen, &gen.payload.bundles, &cards.payload.cards);
                for arm in [Arm::Cmib, Arm::Independent] {
                    let artifacts = build_arm(
                        &self.cfg,
                        frozen,
                        &gen.payload.bundles,
                        &cards.payload.cards,
                        &cards.payload.selections,
                        &items,
                        seed,
                        arm.conditioned(),
                    )?;
                    self.save_artifact(&dir.join(arm_file(arm)), Some(seed), &artifacts.model)?;
                    std::fs::write(dir.join(trace_file(arm)), trace_to_csv(&artifacts.trace))?;
                    let mut library = SkillLibrary::new();
                    for skill in artifacts.skills {
                        library.add_skill(skill)?;
                    }
                    library.save(&dir.join(library_file(arm)))?;
                }
                Ok(())
            })
        };
        run().map_err(|e| e.in_stage("train"))
    }

    /// Reconstructs one seed's full workload from the staged artifacts.
    pub fn load_workload(&self, frozen: &FrozenTaskModel, seed: u64) -> Result<SeedWorkload> {
        let dir = self.seed_dir(seed);
        let gen: Artifact<GenPayload> = self.load_artifact(&dir.join(BUNDLES_FILE))?;
        let cards: Artifact<CardsPayload> = self.load_artifact(&dir.join(CARDS_FILE))?;
        let items = build_items(frozen, &gen.payload.bundles, &cards.payload.cards);
        let cmib = self.load_arm(Arm::Cmib, seed)?;
        let independent = self.load_arm(Arm::Independent, seed)?;
        Ok(SeedWorkload {
            seed,
            config_hash: self.cfg.hash(),
            tasks: gen.payload.tasks,
            bundles: gen.payload.bundles,
            cards: cards.payload.cards,
            selections: cards.payload.selections,
            items,
            cmib,
            independent,
        })
    }

    /// Loads one trained arm: checkpoint plus realized skills. The loss
    /// trace stays in its CSV artifact, so the in-memory trace is empty.
    pub fn load_arm(&self, arm: Arm, seed: u64) -> Result<ArmArtifacts> {
        let dir = self.seed_dir(seed);
        let model: Artifact<LatentSkillModel> = self.load_artifact(&dir.join(arm_file(arm)))?;
        let library_path = dir.join(library_file(arm));
        if !library_path.exists() {
            return Err(CmibError::MissingArtifact(library_path.display().to_string()));
        }
        let library = SkillLibrary::load(&library_path)?;
        for skill in library.skills() {
            if skill.provenance.config_hash != self.cfg.hash() {
                return Err(CmibError::HashMismatch {
                    artifact: format!("{} (skill {})", library_path.display(), skill.skill_id),
                    found: skill.provenance.config_hash.clone(),
                    expected: self.cfg.hash(),
                });
            }
        }
        Ok(ArmArtifacts {
            model: model.payload,
            skills: library.skills().to_vec(),
            trace: Vec::new(),
        })
    }

    /// Evaluates every configured arm on every seed, writing one rows CSV
    /// and one informational timings CSV per seed.
    pub fn stage_eval(&self, frozen: &FrozenTaskModel) -> Result<()> {
        let run = || -> Result<()> {
            let methods = self.cfg.arms()?;
            self.for_each_seed_parallel(|seed| {
                let workload = self.load_workload(frozen, seed)?;
                let mut rows = Vec::with_capacity(methods.len());
                for &method in &methods {
                    rows.push(evaluate_method_on_seed(
                        method,
                        &workload,
                        frozen,
                        self.cfg.eval.n_repeats,
                        self.cfg.env.element_count,
                    )?);
                }
                let report = Report::from_rows(&self.cfg.hash(), rows)?;
                let dir = self.seed_dir(seed);
                std::fs::write(dir.join(ROWS_FILE), report.csv())?;
                std::fs::write(dir.join(SEED_TIMINGS_FILE), report.timings_csv())?;
                Ok(())
            })
        };
        run().map_err(|e| e.in_stage("eval"))
    }

    /// Merges every seed's rows into the final report CSV and JSON summary
    /// (file names embed the config hash). Timings merge into a separate
    /// informational CSV.
    pub fn stage_report(&self) -> Result<Report> {
        self.merge_report(None)
    }

    /// [`Pipeline::stage_report`] with an optional arm filter: when given,
    /// only rows whose method tag is listed are merged and written.
    pub fn merge_report(&self, arms: Option<&[String]>) -> Result<Report> {
        let run = || -> Result<Report> {
            let mut rows: Vec<SeedRow> = Vec::new();
            for &seed in &self.cfg.eval.seeds {
                let path = self.seed_dir(seed).join(ROWS_FILE);
                if !path.exists() {
                    return Err(CmibError::MissingArtifact(path.display().to_string()));
                }
                rows.extend(Report::parse_csv(&std::fs::read_to_string(&path)?)?);
            }
            if let Some(tags) = arms {
                rows = Report::filter_arms(rows, tags)?;
            }
            let report = Report::from_rows(&self.cfg.hash(), rows)?;
            std::fs::write(self.report_csv_path(), report.csv())?;
            std::fs::write(self.summary_json_path(), report.summary_json())?;
            let mut timings = String::from("method,seed,latency_ms\n");
            for &seed in &self.cfg.eval.seeds {
                let path = self.seed_dir(seed).join(SEED_TIMINGS_FILE);
                if path.exists() {
                    for line in std::fs::read_to_string(&path)?.lines().skip(1) {
                        timings.push_str(line);
                        timings.push('\n');
                    }
                }
            }
            std::fs::write(self.timings_csv_path(), timings)?;
            Ok(report)
        };
        run().map_err(|e| e.in_stage("report"))
    }

    /// Runs every stage in order. Artifacts of completed stages persist
    /// even when a later stage fails.
    pub fn run_all(&self) -> Result<Report> {
        self.write_config()?;
        let frozen = self.stage_frozen()?;
        self.stage_gen()?;
        self.stage_cards(&frozen)?;
        self.stage_train(&frozen)?;
        self.stage_eval(&frozen)?;
        self.stage_report()
    }

    pub fn ablation_csv_path(&self) -> PathBuf {
        self.out.join(self.report_name("ablation", "csv"))
    }

    pub fn ablation_json_path(&self) -> PathBuf {
        self.out.join(self.report_name("ablation", "json"))
    }

    /// Text-routing ablation grid: rebuilds tasks, cards, and both latent
    /// arms at each routing level `alpha` (in memory; on-disk artifacts stay
    /// bound to the base config) and evaluates every configured arm. Writes
    /// the grid CSV plus a per-level JSON summary, both stamped with the
    /// base config hash, and returns the rows sorted by (alpha, method,
    /// seed).
    pub fn stage_ablate(
        &self,
        frozen: &FrozenTaskModel,
        alphas: &[f64],
    ) -> Result<Vec<(f64, SeedRow)>> {
        let run = || -> Result<Vec<(f64, SeedRow)>> {
            if alphas.is_empty() {
                return Err(CmibError::EmptyInput("ablate: no routing levels"));
            }
            let methods = self.cfg.arms()?;
            let sink = std::sync::Mutex::new(Vec::new());
            for &alpha in alphas {
                let mut derived = self.cfg.clone();
                derived.env.alpha = alpha;
                derived.validate()?;
                let derived = &derived;
                let methods = &methods;
                let sink = &sink;
                self.for_each_seed_parallel(|seed| {
                    let workload = crate::eval::build_seed_workload(derived, frozen, seed)?;
                    let mut local = Vec::with_capacity(methods.len());
                    for &method in methods {
                        local.push((
                            alpha,
                            evaluate_method_on_seed(
                                method,
                                &workload,
                                frozen,
                                self.cfg.eval.n_repeats,
                                self.cfg.env.element_count,
                            )?,
                        ));
                    }
                    sink.lock().expect("ablation row sink").extend(local);
                    Ok(())
                })?;
            }
            let mut rows = sink.into_inner().expect("ablation row sink");
            rows.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("routing levels are finite")
                    .then_with(|| a.1.method.cmp(&b.1.method))
                    .then(a.1.seed.cmp(&b.1.seed))
            });

            let mut csv = String::from(
                "alpha,method,seed,step_sr,ele_acc,step_cons,redundancy,call_count\n",
            );
            for (alpha, r) in &rows {
                let red = r.redundancy.map(|v| format!("{v:.6}")).unwrap_or_default();
                csv.push_str(&format!(
                    "{alpha},{},{},{:.6},{:.6},{:.6},{red},{}\n",
                    r.method, r.seed, r.step_sr, r.ele_acc, r.step_cons, r.call_count
                ));
            }
            std::fs::write(self.ablation_csv_path(), csv)?;

            #[derive(Serialize)]
            struct AblationLevel {
                alpha: f64,
                methods: Vec<crate::eval::MethodSummary>,
            }
            #[derive(Serialize)]
            struct AblationDoc<'a> {
                config_hash: &'a str,
                levels: Vec<AblationLevel>,
            }
            let mut levels = Vec::with_capacity(alphas.len());
            for &alpha in alphas {
                let level_rows: Vec<SeedRow> = rows
                    .iter()
                    .filter(|(a, _)| *a == alpha)
                    .map(|(_, r)| r.clone())
                    .collect();
                let report = Report::from_rows(&self.cfg.hash(), level_rows)?;
                levels.push(AblationLevel { alpha, methods: report.summary });
            }
            let doc = AblationDoc { config_hash: &self.cfg.hash(), levels };
            let mut text = serde_json::to_string_pretty(&doc)
                .map_err(|e| CmibError::Config(e.to_string()))?;
            text.push('\n');
            std::fs::write(self.ablation_json_path(), text)?;
            Ok(rows)
        };
        run().map_err(|e| e.in_stage("ablate"))
    }

    /// Runs `work` for every configured seed, fanning out across up to
    /// `config.parallelism()` scoped threads. Failures surface after every
    /// in-flight seed finished, smallest seed first, so error reporting is
    /// deterministic.
    fn for_each_seed_parallel<F>(&self, work: F) -> Result<()>
    where
        F: Fn(u64) -> Result<()> + Sync,
    {
        let seeds = &self.cfg.eval.seeds;
        let width = self.cfg.parallelism().max(1);
        if width == 1 || seeds.len() == 1 {
            for &seed in seeds {
                work(seed)?;
            }
            return Ok(());
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        let work = &work;
        for chunk in sorted.chunks(width) {
            let results: Vec<(u64, Result<()>)> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&seed| (seed, scope.spawn(move || work(seed))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(seed, h)| (seed, h.join().expect("seed worker panicked")))
                    .collect()
            });
            for (_, result) in results {
                result?;
            }
        }
        Ok(())
    }
}

fn build_items(
    frozen: &FrozenTaskModel,
    bundles: &[RolloutBundle],
    cards: &[SkillCard],
) -> Vec<TrainItem> {
    bundles
        .iter()
        .zip(cards)
        .map(|(b, c)| TrainItem::new(frozen, b, c))
        .collect()
}
