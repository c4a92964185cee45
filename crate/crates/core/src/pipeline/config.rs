//! Run configuration file (TOML) and the inputs it references.
//!
//! ```toml
//! seed = 42
//! output_dir = "out"            # relative paths resolve against this file's directory
//! deterministic = true
//! reflection_every = 5
//! checkpoint_every = 0          # ticks between checkpoints; 0 disables
//! # iteration_cap = 10000       # default 50 * targets.forged
//! # toolbox = "toolbox.toml"    # default: built-in toolbox
//! # real_images = "real.txt"    # one image reference per line
//! # synthetic_pool_size = 1000  # pool size when real_images is not given
//!
//! [targets]
//! real = 50
//! forged = 200
//!
//! [agents]
//! profiles = "profiles.jsonl"   # or: metadata = "table.csv"
//!
//! [ars]
//! lambda = 0.5
//! q = 0.5
//! n_warmup = 50
//! tau_warmup = 0.3
//! update_period = 10
//!
//! [social]
//! rounds = 2
//! roster = ["watcher", "explorer", "critic", "chatter", "poster", "auditor"]
//!
//! [backends.cognition]          # omit [backends] to use seeded stubs
//! endpoint_url = "http://localhost:8080"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::actions::{ChainConfig, Toolbox};
use crate::ars::ArsConfig;
use crate::backends::{BackendConfig, Backends};
use crate::profile::{self, AgentProfile, ProfileConfig, ToolWeighting};
use crate::rng::sha256_hex;
use crate::social::SocialConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    /// M: real samples to emit.
    #[serde(default)]
    pub real: u64,
    /// N: blueprints to accept.
    #[serde(default)]
    pub forged: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSource {
    /// Profiles written by `profile-extract`.
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    /// Metadata table to build profiles from at start-up.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    #[serde(default)]
    pub style_sample_size: Option<usize>,
    /// Keep only the first `limit` agents by id.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSet {
    pub cognition: BackendConfig,
    pub detector: BackendConfig,
    pub edit: BackendConfig,
}

fn default_true() -> bool {
    true
}
fn default_reflection_every() -> u64 {
    5
}
fn default_synthetic_pool_size() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub agents: AgentSource,
    #[serde(default)]
    pub toolbox: Option<PathBuf>,
    #[serde(default)]
    pub real_images: Option<PathBuf>,
    /// Synthesized pool is `real/000001.png ...`, at least `targets.real` long.
    #[serde(default = "default_synthetic_pool_size")]
    pub synthetic_pool_size: u64,
    /// R: an agent reflects after every R of its own iterations.
    #[serde(default = "default_reflection_every")]
    pub reflection_every: u64,
    #[serde(default)]
    pub iteration_cap: Option<u64>,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub weighting: ToolWeighting,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub ars: ArsConfig,
    #[serde(default)]
    pub social: SocialConfig,
    #[serde(default)]
    pub backends: Option<BackendSet>,
}

impl RunConfig {
    /// Minimal config: stub backends, default gate, output in `output_dir`.
    pub fn new(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            seed,
            deterministic: true,
            output_dir: output_dir.into(),
            targets: Targets::default(),
            agents: AgentSource::default(),
            toolbox: None,
            real_images: None,
            synthetic_pool_size: default_synthetic_pool_size(),
            reflection_every: default_reflection_every(),
            iteration_cap: None,
            checkpoint_every: 0,
            weighting: ToolWeighting::default(),
            chain: ChainConfig::default(),
            ars: ArsConfig::default(),
            social: SocialConfig::default(),
            backends: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            self.agents.profiles.as_mut(),
            self.agents.metadata.as_mut(),
            self.toolbox.as_mut(),
            self.real_images.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn iteration_cap(&self) -> u64 {
        self.iteration_cap
            .unwrap_or_else(|| self.targets.forged.saturating_mul(50))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg_err = |m: String| PipelineError::Config(m);
        self.ars.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.chain.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.social.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.weighting.validate().map_err(|e| cfg_err(e.to_string()))?;
        if self.reflection_every == 0 {
            return Err(cfg_err("reflection_every must be >= 1".into()));
        }
        if self.agents.style_sample_size == Some(0) {
            return Err(cfg_err("agents.style_sample_size must be >= 1".into()));
        }
        match (&self.agents.profiles, &self.agents.metadata) {
            (Some(_), Some(_)) => return Err(cfg_err("set only one of agents.profiles and agents.metadata".into())),
            (None, None) if self.targets.forged > 0 => {
                return Err(cfg_err("agents.profiles or agents.metadata is required".into()))
            }
            _ => {}
        }
        for p in [
            self.agents.profiles.as_ref(),
            self.agents.metadata.as_ref(),
            self.toolbox.as_ref(),
            self.real_images.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(cfg_err(format!("referenced path {} does not exist", p.display())));
            }
        }
        if let Some(b) = &self.backends {
            for (name, c) in [
                ("cognition", &b.cognition),
                ("detector", &b.detector),
                ("edit", &b.edit),
            ] {
                c.validate().map_err(|m| cfg_err(format!("backends.{name}: {m}")))?;
            }
        }
        Ok(())
    }

    /// Stub backends when forced or when no endpoints are configured.
    pub fn backends(&self, force_stub: bool) -> Result<Backends, PipelineError> {
        match (&self.backends, force_stub) {
            (Some(b), false) => Backends::http(&b.cognition, &b.detector, &b.edit).map_err(PipelineError::Config),
            _ => Ok(Backends::stub(self.seed)),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

/// Everything a run reads besides the config itself.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub profiles: Vec<AgentProfile>,
    pub toolbox: Toolbox,
    /// X_real: the pool images are drawn from.
    pub real_pool: Vec<String>,
    /// Digest of the config and the content of every referenced input.
    pub config_digest: String,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl RunInputs {
    pub fn load(cfg: &RunConfig, backends: &Backends) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let mut digests = Vec::new();

        let mut profiles = match (&cfg.agents.profiles, &cfg.agents.metadata) {
            (Some(p), _) => {
                let bytes = read_bytes(p)?;
                digests.push(("profiles", sha256_hex(&bytes)));
                profile::read_profiles(bytes.as_slice())?
            }
            (None, Some(m)) => {
                digests.push(("metadata", sha256_hex(&read_bytes(m)?)));
                let records = profile::load_metadata(m)?;
                let pcfg = ProfileConfig {
                    style_sample_size: cfg
                        .agents
                        .style_sample_size
                        .unwrap_or(ProfileConfig::default().style_sample_size),
                    rng_seed: cfg.seed,
                };
                profile::build_profiles(&records, &pcfg, backends.cognition.as_ref())?
            }
            (None, None) => Vec::new(),
        };
        profiles.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        if let Some(limit) = cfg.agents.limit {
            profiles.truncate(limit);
        }
        if cfg.targets.forged > 0 && profiles.is_empty() {
            return Err(PipelineError::Config("no agent profiles available".into()));
        }

        let toolbox = match &cfg.toolbox {
            Some(p) => {
                let bytes = read_bytes(p)?;
                digests.push(("toolbox", sha256_hex(&bytes)));
                Toolbox::from_toml(&String::from_utf8_lossy(&bytes))?
            }
            None => Toolbox::builtin(),
        };

        let real_pool: Vec<String> = match &cfg.real_images {
            Some(p) => {
                let bytes = read_bytes(p)?;
                digests.push(("real_images", sha256_hex(&bytes)));
                String::from_utf8_lossy(&bytes)
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect()
            }
            None => {
                let n = cfg.synthetic_pool_size.max(cfg.targets.real);
                (1..=n).map(|i| format!("real/{i:06}.png")).collect()
            }
        };
        if (real_pool.len() as u64) < cfg.targets.real {
            return Err(PipelineError::Config(format!(
                "{} real images available but targets.real = {}",
                real_pool.len(),
                cfg.targets.real
            )));
        }
        if cfg.targets.forged > 0 && real_pool.is_empty() {
            return Err(PipelineError::Config("no real images to forge from".into()));
        }

        // Paths and output locations are excluded; referenced files count by content.
        let mut canonical = cfg.clone();
        canonical.output_dir = PathBuf::new();
        canonical.agents.profiles = None;
        canonical.agents.metadata = None;
        canonical.toolbox = None;
        canonical.real_images = None;
        let body = serde_json::json!({
            "config": canonical,
            "inputs": digests,
            "backends": backends.label,
        });
        let config_digest = sha256_hex(body.to_string().as_bytes());

        Ok(RunInputs {
            profiles,
            toolbox,
            real_pool,
            config_digest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let cfg = RunConfig::from_toml("seed = 3\noutput_dir = \"out\"\n").unwrap();
        assert_eq!(cfg.reflection_every, 5);
        assert_eq!(cfg.ars, ArsConfig::default());
        assert_eq!(cfg.social.rounds, 2);
        assert_eq!(cfg.social.roster.len(), 6);
        assert!(cfg.deterministic);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seed = 3\noutput_dir = \"o\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn ars_rationals_parse_exactly() {
        let cfg =
            RunConfig::from_toml("seed = 1\noutput_dir = \"o\"\n[ars]\nlambda = 0.3\ntau_warmup = \"1/3\"\n").unwrap();
        assert_eq!(cfg.ars.lambda, crate::rational::Rational::new(3, 10));
        assert_eq!(cfg.ars.tau_warmup, crate::rational::Rational::new(1, 3));
    }

    #[test]
    fn default_cap_is_fifty_per_target() {
        let mut cfg = RunConfig::new(1, "o");
        cfg.targets.forged = 20;
        assert_eq!(cfg.iteration_cap(), 1000);
        cfg.iteration_cap = Some(7);
        assert_eq!(cfg.iteration_cap(), 7);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::new(9, "out");
        cfg.targets = Targets { real: 3, forged: 4 };
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
