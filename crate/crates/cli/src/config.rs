//! Command configurations, loaded from TOML or JSON and patched by flags.

use std::path::{Path, PathBuf};

use needlet_core::calibration::MethodSpec;
use needlet_core::coverage::CoverageModel;
use needlet_core::density::Norm;
use needlet_core::engine::FrameConfig;
use needlet_core::isotropy::TieRule;
use needlet_core::simulate::SimulationConfig;
use needlet_core::sphere::FrameOfReference;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Reads a config file; `.json` is parsed as JSON, anything else as TOML.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// SHA-256 of the canonical JSON form of a resolved configuration. Callers
/// clear the output path first so it does not affect the hash.
pub fn hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("configs serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Parses `uniform` or `auger` as given on the command line.
pub fn coverage_flag(s: &str) -> Result<CoverageModel, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "uniform" => Ok(CoverageModel::Uniform),
        "auger" => Ok(CoverageModel::auger()),
        other => Err(format!("unknown coverage '{other}' (expected uniform or auger)")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub simulation: SimulationConfig,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Frame of the written catalog.
    #[serde(default = "galactic")]
    pub frame: FrameOfReference,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn galactic() -> FrameOfReference {
    FrameOfReference::Galactic
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    pub n: Vec<usize>,
    #[serde(default = "uniform")]
    pub coverage: CoverageModel,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub frame: FrameConfig,
    pub output_dir: PathBuf,
    /// Also write every table as CSV.
    #[serde(default)]
    pub csv: bool,
}

fn uniform() -> CoverageModel {
    CoverageModel::Uniform
}

fn default_replicates() -> usize {
    1000
}

/// Tables behind the `test` report: both needlet methods for norms 1, 2⋆/2
/// and ∞ up to J* = 6, NN, and TwoPC on a 1° grid.
pub fn test_grid_methods() -> Vec<MethodSpec> {
    let mut v = Vec::new();
    for norm in [Norm::L1, Norm::L2Star, Norm::LInf] {
        v.push(MethodSpec::Multiple { norm, jmax: 6 });
    }
    for norm in [Norm::L1, Norm::L2, Norm::LInf] {
        v.push(MethodSpec::Plugin {
            norm,
            jmax: 6,
            lambda: 1.0,
            rho: 1.0,
        });
    }
    v.push(MethodSpec::Nn);
    v.push(MethodSpec::TwoPc {
        deltas_deg: (1..=30).map(f64::from).collect(),
    });
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub catalog: PathBuf,
    /// Frame assumed when the catalog has no `# frame=` header.
    #[serde(default)]
    pub catalog_frame: Option<FrameOfReference>,
    pub tables: PathBuf,
    #[serde(default)]
    pub tie: TieRule,
    /// Seed for randomized tie-breaking.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// One (sample size, mixture weight) point of a power study. `delta`
/// overrides the weight of an Ha alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n: usize,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    #[serde(flatten)]
    pub simulation: SimulationConfig,
    /// Sample sizes to study; several entries give a separation-rate sweep.
    pub runs: Vec<RunSpec>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub tables: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub tie: TieRule,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_alpha() -> Vec<f64> {
    vec![0.05]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_config_from_toml() {
        let text = r#"
            runs = [{ n = 25, delta = 0.08 }, { n = 100, delta = 0.04 }]
            tables = "tables"
            seed = 3
            [alternative]
            model = "ha"
            delta = 0.08
            theta_deg = 5.0
            [coverage]
            kind = "exposure"
            site_latitude_deg = -35.2
            max_zenith_deg = 60.0
        "#;
        let c: PowerConfig = toml::from_str(text).unwrap();
        assert_eq!(c.runs.len(), 2);
        assert_eq!(c.simulation.coverage, CoverageModel::auger());
        assert_eq!(c.replicates, 1000);
        assert_eq!(c.alpha, vec![0.05]);
        let again: PowerConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(hash(&c), hash(&again));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "n = [100]\noutput_dir = \"t\"\nreplicate = 5\n";
        assert!(toml::from_str::<CalibrateConfig>(text).is_err());
    }

    #[test]
    fn coverage_flags() {
        assert_eq!(coverage_flag("Auger").unwrap(), CoverageModel::auger());
        assert!(coverage_flag("south").is_err());
    }
}
