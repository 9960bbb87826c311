use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use envforge::analytics::CostModel;
use envforge::envpool::PoolConfig;
use envforge::rollout::TrainConfig;
use envforge::synthesis::{LiveConfig, LiveProvider, MockBehavior, MockProvider, Provider, SynthConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Live,
}

/// Everything a run needs. Loaded from an optional TOML file, then overridden
/// by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bundles_dir: PathBuf,
    pub traces_path: Option<PathBuf>,
    pub tasks_path: Option<PathBuf>,
    pub provider: ProviderKind,
    /// Drives every stochastic component; copied into `train.seed`.
    pub seed: u64,
    /// Concurrent synthesis jobs.
    pub workers: usize,
    pub pool: PoolConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub cost: CostModel<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            bundles_dir: PathBuf::from("bundles"),
            traces_path: None,
            tasks_path: None,
            provider: ProviderKind::Mock,
            seed: 7,
            workers: 4,
            pool: PoolConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            cost: CostModel::default(),
        }
    }
}

/// Global flags that override the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub bundles_dir: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub max_live: Option<usize>,
    pub ports: Option<(u16, u16)>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(d) = o.bundles_dir {
            cfg.bundles_dir = d;
        }
        if let Some(p) = o.provider {
            cfg.provider = p;
        }
        if let Some(m) = o.max_live {
            cfg.pool.max_live = m;
        }
        if let Some(r) = o.ports {
            cfg.pool.port_range = r;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: String| CliError::Usage(e);
        self.pool.validate().map_err(|e| usage(e.to_string()))?;
        self.synth.constraints.validate().map_err(|e| usage(e.to_string()))?;
        self.cost.validate().map_err(usage)?;
        if self.workers == 0 {
            return Err(usage("workers must be positive".into()));
        }
        Ok(())
    }

    /// Builds the configured provider. The mock gets per-task behaviours;
    /// the live client reads its credentials from the environment.
    pub fn provider(&self, mock_tasks: &[(String, MockBehavior)]) -> Result<Box<dyn Provider>, CliError> {
        match self.provider {
            ProviderKind::Mock => {
                let mut p = MockProvider::new(self.seed);
                for (id, b) in mock_tasks {
                    p = p.with_task(id.clone(), b.clone());
                }
                Ok(Box::new(p))
            }
            ProviderKind::Live => {
                let live = LiveConfig::from_env().map_err(|e| CliError::Usage(format!("live provider: {e}")))?;
                Ok(Box::new(LiveProvider::new(live)))
            }
        }
    }
}

pub fn parse_ports(s: &str) -> Result<(u16, u16), String> {
    let (lo, hi) = s.split_once('-').ok_or("expected LO-HI")?;
    let lo: u16 = lo.trim().parse().map_err(|e| format!("bad port {lo:?}: {e}"))?;
    let hi: u16 = hi.trim().parse().map_err(|e| format!("bad port {hi:?}: {e}"))?;
    if hi < lo {
        return Err(format!("empty port range {lo}-{hi}"));
    }
    Ok((lo, hi))
}
