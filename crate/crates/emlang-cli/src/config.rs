//! Experiment configuration: a flat, versioned TOML file with strict keys
//! (unknown keys are errors), built-in `paper`/`desk` presets, and the
//! capacity-variant profiles.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use emlang::agents::ChannelSpec;
use emlang::analysis::stats::TestKind;
use emlang::analysis::SignificanceSpec;
use emlang::games::GameSpec;
use emlang::nn::AdamConfig;
use emlang::space::AttributeSpec;
use emlang::trainer::{ConvergenceSpec, TrainRunConfig};
use emlang::transfer::TransferConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub space: SpaceSection,
    pub channel: ChannelSection,
    pub agents: AgentsSection,
    pub training: TrainingSection,
    pub transfer: TransferSection,
    pub experiment: ExperimentSection,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub n_attributes: usize,
    pub n_values: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub message_length: usize,
    pub vocab_size: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub hidden_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    /// Batch size for reconstruction and conventional-referential games
    /// (contrastive games pin |B| = |D|).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub convergence: Option<ConvergenceSection>,
    /// Streams one record per optimisation step to `steps.tsv`. Expensive:
    /// the message-type count means a full greedy decode per step.
    #[serde(default)]
    pub log_steps: bool,
    /// Per-game overrides, keyed by game id.
    #[serde(default)]
    pub overrides: Vec<TrainingOverride>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverride {
    pub game: String,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub window: usize,
    pub min_delta: f64,
    pub patience: usize,
}

impl From<ConvergenceSection> for ConvergenceSpec {
    fn from(c: ConvergenceSection) -> Self {
        ConvergenceSpec {
            window: c.window,
            min_delta: c.min_delta,
            patience: c.patience,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub convergence: Option<ConvergenceSection>,
    pub eval_seed: u64,
    /// Train missing source languages on demand instead of failing.
    #[serde(default)]
    pub train_on_demand: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Game roster; sources and targets of the transfer experiment.
    pub games: Vec<String>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha: f64,
    /// `welch` or `mann-whitney`.
    pub test: String,
    pub top_k_components: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

/// Capacity-variant profiles applied on top of a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Message length 8, inventory 20.
    LargeChannel,
    /// Hidden size 128.
    LargeAgent,
    /// Both of the above.
    LargeBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Paper,
    Desk,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| anyhow!("{}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            );
        }
        AttributeSpec::new(self.space.n_attributes, self.space.n_values)
            .map_err(|e| anyhow!("space: {e}"))?;
        self.channel().map_err(|e| anyhow!("channel: {e}"))?;
        if self.experiment.games.is_empty() {
            bail!("experiment.games must not be empty");
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.experiment.seeds {
            if !seen.insert(*s) {
                bail!("experiment.seeds contains duplicate seed {s}");
            }
        }
        if self.experiment.seeds.is_empty() {
            bail!("experiment.seeds must not be empty");
        }
        self.significance()?;
        let space_size = self.space_size();
        for game in &self.experiment.games {
            let spec = self.game_spec(game)?;
            spec.validate(space_size)
                .map_err(|e| anyhow!("game {game}: {e}"))?;
        }
        for o in &self.training.overrides {
            self.game_spec(&o.game)
                .with_context(|| format!("training override for unknown game {}", o.game))?;
        }
        Ok(())
    }

    pub fn apply_profile(&mut self, profile: Profile) {
        match profile {
            Profile::LargeChannel => {
                self.channel.message_length = 8;
                self.channel.vocab_size = 20;
            }
            Profile::LargeAgent => {
                self.agents.hidden_size = 128;
            }
            Profile::LargeBoth => {
                self.apply_profile(Profile::LargeChannel);
                self.apply_profile(Profile::LargeAgent);
            }
        }
    }

    pub fn attribute_spec(&self) -> AttributeSpec {
        AttributeSpec::new(self.space.n_attributes, self.space.n_values)
            .expect("validated config")
    }

    pub fn space_size(&self) -> usize {
        self.attribute_spec().space_size() as usize
    }

    pub fn channel(&self) -> Result<ChannelSpec, emlang::agents::AgentError> {
        ChannelSpec::new(
            self.channel.message_length,
            self.channel.vocab_size,
            self.channel.temperature,
        )
    }

    /// Parses a game id: `recon`, `referN`, or `referN-conv`.
    pub fn game_spec(&self, id: &str) -> Result<GameSpec> {
        parse_game_id(id, self.training.batch_size).map(|mut spec| {
            if let Some(o) = self.training.overrides.iter().find(|o| o.game == id) {
                if let Some(b) = o.batch_size {
                    match &mut spec.kind {
                        emlang::games::GameKind::Reconstruction => spec.batch_size = b,
                        emlang::games::GameKind::Referential { loss, .. } => {
                            if *loss == emlang::games::LossVariant::Conventional {
                                spec.batch_size = b;
                            }
                        }
                    }
                }
            }
            spec
        })
    }

    /// Resolves the roster in canonical order.
    pub fn roster(&self) -> Result<Vec<GameSpec>> {
        let mut games = self.experiment.games.clone();
        games.sort_by_key(|n| emlang::transfer::game_sort_key(n));
        games.iter().map(|g| self.game_spec(g)).collect()
    }

    fn training_params(&self, game_id: &str) -> (f64, usize) {
        let mut lr = self.training.learning_rate;
        let mut epochs = self.training.max_epochs;
        if let Some(o) = self.training.overrides.iter().find(|o| o.game == game_id) {
            if let Some(v) = o.learning_rate {
                lr = v;
            }
            if let Some(v) = o.max_epochs {
                epochs = v;
            }
        }
        (lr, epochs)
    }

    pub fn train_run_config(&self, game_id: &str, seed: u64) -> Result<TrainRunConfig> {
        let game = self.game_spec(game_id)?;
        let (lr, max_epochs) = self.training_params(game_id);
        Ok(TrainRunConfig {
            game,
            channel: self.channel()?,
            hidden_size: self.agents.hidden_size,
            adam: AdamConfig::with_learning_rate(lr),
            max_epochs,
            convergence: self.training.convergence.clone().map(Into::into),
            seed,
        })
    }

    pub fn transfer_config(&self) -> TransferConfig {
        TransferConfig {
            hidden_size: self.agents.hidden_size,
            adam: AdamConfig::with_learning_rate(self.transfer.learning_rate),
            max_epochs: self.transfer.max_epochs,
            convergence: self.transfer.convergence.clone().map(Into::into),
            eval_seed: self.transfer.eval_seed,
        }
    }

    pub fn significance(&self) -> Result<SignificanceSpec> {
        let test = match self.analysis.test.as_str() {
            "welch" => TestKind::Welch,
            "mann-whitney" => TestKind::MannWhitney,
            other => bail!("analysis.test must be \"welch\" or \"mann-whitney\", got {other:?}"),
        };
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            bail!("analysis.alpha must lie in (0, 1)");
        }
        Ok(SignificanceSpec {
            test,
            alpha: self.analysis.alpha,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Parses a bare game id against a default batch size.
pub fn parse_game_id(id: &str, default_batch: usize) -> Result<GameSpec> {
    if id == "recon" {
        return Ok(GameSpec::reconstruction(default_batch));
    }
    if let Some(rest) = id.strip_prefix("refer") {
        let (digits, conventional) = match rest.strip_suffix("-conv") {
            Some(d) => (d, true),
            None => (rest, false),
        };
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            let n: usize = digits.parse()?;
            return Ok(if conventional {
                GameSpec::referential_conventional(n, default_batch)
            } else {
                GameSpec::referential(n)
            });
        }
    }
    bail!("unknown game id {id:?} (expected \"recon\", \"referN\", or \"referN-conv\")")
}

/// The paper-scale preset: 4×10 space, 6-token messages over a 10-token
/// inventory, hidden 256, the nine-game roster, six seeds.
pub fn paper_preset() -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        space: SpaceSection {
            n_attributes: 4,
            n_values: 10,
        },
        channel: ChannelSection {
            message_length: 6,
            vocab_size: 10,
            temperature: 1.0,
        },
        agents: AgentsSection { hidden_size: 256 },
        training: TrainingSection {
            learning_rate: 1e-4,
            batch_size: 1024,
            max_epochs: 5000,
            convergence: Some(ConvergenceSection {
                window: 20,
                min_delta: 1e-3,
                patience: 50,
            }),
            log_steps: false,
            overrides: Vec::new(),
        },
        transfer: TransferSection {
            learning_rate: 1e-4,
            max_epochs: 2000,
            convergence: Some(ConvergenceSection {
                window: 20,
                min_delta: 1e-3,
                patience: 50,
            }),
            eval_seed: 20210509,
            train_on_demand: false,
        },
        experiment: ExperimentSection {
            games: [
                "recon", "refer2", "refer10", "refer100", "refer1000", "refer2500", "refer5000",
                "refer7500", "refer10000",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            seeds: vec![0, 1, 2, 3, 4, 5],
        },
        analysis: AnalysisSection {
            alpha: 0.05,
            test: "welch".to_string(),
            top_k_components: 10,
        },
        output: OutputSection {
            dir: "out/paper".to_string(),
        },
    }
}

/// The desk-scale preset: 3×10 space (1,000 meanings), hidden 64, a
/// four-game roster, four seeds. Sized for a laptop CPU; the per-game
/// learning-rate overrides come from pilot runs.
pub fn desk_preset() -> ExperimentConfig {
    ExperimentConfig {
        version: CONFIG_VERSION,
        space: SpaceSection {
            n_attributes: 3,
            n_values: 10,
        },
        channel: ChannelSection {
            message_length: 6,
            vocab_size: 10,
            temperature: 1.0,
        },
        agents: AgentsSection { hidden_size: 64 },
        training: TrainingSection {
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 250,
            convergence: Some(ConvergenceSection {
                window: 10,
                min_delta: 1e-3,
                patience: 30,
            }),
            log_steps: false,
            overrides: vec![TrainingOverride {
                game: "recon".to_string(),
                learning_rate: Some(3e-3),
                batch_size: Some(8),
                max_epochs: Some(300),
            }],
        },
        transfer: TransferSection {
            learning_rate: 2e-3,
            max_epochs: 150,
            convergence: Some(ConvergenceSection {
                window: 10,
                min_delta: 1e-3,
                patience: 25,
            }),
            eval_seed: 20210509,
            train_on_demand: true,
        },
        experiment: ExperimentSection {
            games: ["recon", "refer2", "refer100", "refer1000"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            seeds: vec![0, 1, 2, 3],
        },
        analysis: AnalysisSection {
            alpha: 0.05,
            test: "welch".to_string(),
            top_k_components: 10,
        },
        output: OutputSection {
            dir: "out/desk".to_string(),
        },
    }
}
