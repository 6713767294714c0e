//! Run configuration: one TOML document driving every subcommand. Unknown
//! keys are rejected so typos fail loudly before any compute starts.

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

use dnas_core::data::DatasetConfig;
use dnas_core::search::{capped_rosters, default_rosters, StageRoster, TrainConfig};

/// Environment variable naming the root under which relative `output_dir`
/// values are resolved.
pub const OUT_ROOT_ENV: &str = "DNAS_OUT";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// All outputs land here; never outside it.
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    #[serde(default)]
    pub roster: RosterConfig,
    pub dataset: DatasetConfig,
    pub search: TrainConfig,
    /// Fine-tune hyperparameters; defaults to the search settings.
    #[serde(default)]
    pub finetune: Option<TrainConfig>,
    #[serde(default)]
    pub cost: CostConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub input_channels: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterConfig {
    /// Caps candidate stack depth (and the middle stage) for small runs;
    /// absent means the full reference roster.
    #[serde(default)]
    pub max_count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// MAC/latency blend factor; 1 means MACs only.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Resolution for cost reports, [height, width].
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default)]
    pub latency_table: Option<PathBuf>,
}

fn default_eta() -> f64 {
    1.0
}

fn default_resolution() -> [usize; 2] {
    [256, 256]
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            eta: default_eta(),
            resolution: default_resolution(),
            latency_table: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        if config.output_dir.is_relative() {
            if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
                config.output_dir = PathBuf::from(root).join(&config.output_dir);
            }
        }
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.search.validate()?;
        if let Some(ft) = &self.finetune {
            ft.validate()?;
        }
        if self.network.input_channels != self.dataset.channels {
            bail!(
                "network expects {} input channels but the dataset provides {}",
                self.network.input_channels,
                self.dataset.channels
            );
        }
        if self.network.width == 0 || self.network.width % 2 != 0 {
            bail!(
                "network width must be positive and even, got {}",
                self.network.width
            );
        }
        if !(0.0..=1.0).contains(&self.cost.eta) {
            bail!("cost.eta must be in [0,1], got {}", self.cost.eta);
        }
        if self.cost.resolution.iter().any(|r| *r == 0 || r % 16 != 0) {
            bail!(
                "cost.resolution entries must be positive multiples of 16, got {:?}",
                self.cost.resolution
            );
        }
        Ok(())
    }

    pub fn rosters(&self) -> Vec<StageRoster> {
        match self.roster.max_count {
            Some(n) => capped_rosters(n),
            None => default_rosters(),
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.clone().unwrap_or_else(|| self.search.clone())
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

/// Parses a `HxW` resolution override such as `256x256`.
pub fn parse_resolution(s: &str) -> Result<[usize; 2]> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("resolution must look like 256x256, got {s}"))?;
    let h: usize = h.trim().parse().context("bad resolution height")?;
    let w: usize = w.trim().parse().context("bad resolution width")?;
    if h == 0 || w == 0 {
        bail!("resolution must be positive, got {s}");
    }
    Ok([h, w])
}
