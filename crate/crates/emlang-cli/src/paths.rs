//! Output directory layout: a pure function of (config hash, game id, seed).

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// First 16 hex chars of the SHA-256 of the resolved config.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(config.to_toml().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(out_dir: &Path, config: &ExperimentConfig) -> Self {
        Layout {
            root: out_dir.join(config_hash(config)),
        }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.resolved.toml")
    }

    pub fn space_export(&self) -> PathBuf {
        self.root.join("space.tsv")
    }

    pub fn run_dir(&self, game: &str, seed: u64) -> PathBuf {
        self.root.join(game).join(format!("seed{seed}"))
    }

    pub fn language(&self, game: &str, seed: u64) -> PathBuf {
        self.run_dir(game, seed).join("language.tsv")
    }

    pub fn initial_language(&self, game: &str, seed: u64) -> PathBuf {
        self.run_dir(game, seed).join("language_init.tsv")
    }

    pub fn diagnostics(&self, game: &str, seed: u64) -> PathBuf {
        self.run_dir(game, seed).join("diagnostics.tsv")
    }

    pub fn checkpoint(&self, game: &str, seed: u64) -> PathBuf {
        self.run_dir(game, seed).join("checkpoint.json")
    }

    pub fn steps(&self, game: &str, seed: u64) -> PathBuf {
        self.run_dir(game, seed).join("steps.tsv")
    }

    pub fn transfer_dir(&self) -> PathBuf {
        self.root.join("transfer")
    }

    pub fn matrix_raw(&self) -> PathBuf {
        self.transfer_dir().join("matrix_raw.tsv")
    }

    pub fn matrix_aggregate(&self) -> PathBuf {
        self.transfer_dir().join("matrix_agg.tsv")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}
