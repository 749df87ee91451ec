//! JSON run configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use qmri_core::baselines::BlipConfig;
use qmri_core::bloch::{PulseSequence, INVERTED};
use qmri_core::dictionary::GridSpec;
use qmri_core::encoding::{MaskDescriptor, RhoMode};
use qmri_core::phantom::PhantomSpec;
use qmri_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A problem with the configuration or its referenced inputs; exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomSource {
    /// Brain-like phantom of the given size.
    Desk { n: usize },
    Spec(PhantomSpec),
    /// JSON file holding a phantom spec.
    File(PathBuf),
    /// Directory of map CSVs.
    Maps(PathBuf),
}

/// Constant-parameter IR-bSSFP sequence; angles in degrees, TR in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    #[serde(rename = "L")]
    pub len: usize,
    pub alpha: f64,
    #[serde(rename = "TR")]
    pub tr: f64,
    #[serde(default)]
    pub phi: f64,
}

impl SequenceConfig {
    pub fn build(&self) -> anyhow::Result<PulseSequence> {
        let seq = PulseSequence::new(
            vec![self.alpha.to_radians(); self.len],
            vec![self.tr; self.len],
            vec![self.phi.to_radians(); self.len],
            INVERTED,
        )
        .and_then(|s| s.validate().map(|_| s))
        .map_err(|e| config_error(format!("sequence: {e}")))?;
        Ok(seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of the real and imaginary noise parts.
    pub sigma: f64,
    /// Target SNR; the noise level is calibrated to hit it.
    pub snr: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryConfig {
    pub grid: GridSpec,
    /// Cache file; built on demand when missing or stale.
    pub path: Option<PathBuf>,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self { grid: GridSpec::FINE, path: None }
    }
}

/// Pixels reconstructed by the methods.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainConfig {
    #[default]
    All,
    /// CSV grid; non-zero entries are inside.
    Mask(PathBuf),
    /// Pixels whose zero-filled magnitude, summed over frames, exceeds this
    /// fraction of the maximum.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Directory of map CSVs used as the initial value.
    pub path: Option<PathBuf>,
    /// Dictionary for the BLIP initialization otherwise.
    pub grid: GridSpec,
    pub blip: BlipConfig,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { path: None, grid: GridSpec::COARSE, blip: BlipConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Mrf {
        #[serde(default)]
        rho_mode: RhoMode,
    },
    Blip {
        #[serde(default)]
        blip: BlipConfig,
    },
    Gn {
        #[serde(default)]
        solver: SolverConfig,
        #[serde(default)]
        init: InitConfig,
    },
    Lm {
        #[serde(default)]
        solver: SolverConfig,
        #[serde(default)]
        init: InitConfig,
    },
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mrf { .. } => "mrf",
            Self::Blip { .. } => "blip",
            Self::Gn { .. } => "gn",
            Self::Lm { .. } => "lm",
        }
    }

    pub fn with_name(name: &str) -> anyhow::Result<Self> {
        Ok(match name {
            "mrf" => Self::Mrf { rho_mode: RhoMode::Real },
            "blip" => Self::Blip { blip: BlipConfig::default() },
            "gn" => Self::Gn { solver: SolverConfig::default(), init: InitConfig::default() },
            "lm" => Self::Lm { solver: SolverConfig::default(), init: InitConfig::default() },
            other => return Err(config_error(format!("method: unknown method `{other}`"))),
        })
    }

    /// Row label used by comparison tables.
    pub fn default_label(&self) -> &'static str {
        match self {
            Self::Mrf { .. } => "MRF",
            Self::Blip { .. } => "BLIP",
            Self::Gn { .. } => "GN",
            Self::Lm { solver, .. } if solver.project => "Proposed",
            Self::Lm { .. } => "L-M",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub phantom: Option<PhantomSource>,
    /// k-space file read by `reconstruct`; defaults to `<output>/kspace.bin`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub sequence: SequenceConfig,
    #[serde(default = "full_sampling")]
    pub sampling: MaskDescriptor,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub dictionary: DictionaryConfig,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub method: Option<MethodConfig>,
    #[serde(default)]
    pub label: Option<String>,
    pub output: PathBuf,
}

fn full_sampling() -> MaskDescriptor {
    MaskDescriptor::Full
}

impl RunConfig {
    /// Parses the file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.phantom {
            Some(PhantomSource::File(p)) | Some(PhantomSource::Maps(p)) => fix(p),
            _ => {}
        }
        if let Some(p) = &mut self.data {
            fix(p);
        }
        if let Some(p) = &mut self.dictionary.path {
            fix(p);
        }
        if let DomainConfig::Mask(p) = &mut self.domain {
            fix(p);
        }
        if let Some(MethodConfig::Gn { init, .. } | MethodConfig::Lm { init, .. }) = &mut self.method {
            if let Some(p) = &mut init.path {
                fix(p);
            }
        }
        fix(&mut self.output);
    }

    pub fn method(&self) -> anyhow::Result<&MethodConfig> {
        self.method.as_ref().ok_or_else(|| config_error("missing field `method`"))
    }

    pub fn label(&self) -> anyhow::Result<String> {
        Ok(self.label.clone().unwrap_or_else(|| self.method().map(|m| m.default_label()).unwrap_or("").to_string()))
    }

    /// SHA-256 of the effective configuration as canonical JSON.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.output.join("kspace.bin"))
    }

    pub fn dictionary_path(&self) -> PathBuf {
        self.dictionary.path.clone().unwrap_or_else(|| self.output.join("dictionary.bin"))
    }
}
