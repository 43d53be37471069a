//! Experiment configuration: a TOML file, optionally overridden by flags.

use loggas::{ChainOptions, ModelPreset, SolverOptions, C64};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelPreset,
    /// Particle counts, one experiment per entry.
    pub n: Vec<usize>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub observables: ObservableConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub equilibrium: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Sweeps discarded before recording; absent means 50·N².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_sweeps: Option<u64>,
    pub samples: usize,
    pub thinning_sweeps: u64,
    pub seed: u64,
    pub chains: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { burn_in_sweeps: None, samples: 10_000, thinning_sweeps: 10, seed: 0, chains: 1 }
    }
}

impl ChainConfig {
    /// Seed of chain `c` at the `i`-th particle count.
    pub fn seed_for(&self, i: usize, c: usize) -> u64 {
        self.seed.wrapping_add(1_000_003u64.wrapping_mul(i as u64)).wrapping_add(c as u64)
    }

    /// Chains split the sample budget; the first chains take the remainder.
    pub fn chain_options(&self, i: usize, c: usize) -> ChainOptions {
        let base = self.samples / self.chains;
        let extra = usize::from(c < self.samples % self.chains);
        ChainOptions {
            burn_in_sweeps: self.burn_in_sweeps,
            samples: base + extra,
            thinning_sweeps: self.thinning_sweeps,
            seed: self.seed_for(i, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    /// Coefficients in increasing degree of x = ℓ/N.
    pub polynomials: Vec<Vec<f64>>,
    /// Cauchy-kernel points as [re, im].
    pub points: Vec<[f64; 2]>,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self { polynomials: vec![vec![0.0, 1.0]], points: vec![[3.0, 0.0], [4.0, 0.0]] }
    }
}

impl ObservableConfig {
    pub fn complex_points(&self) -> Vec<C64> {
        self.points.iter().map(|p| C64::new(p[0], p[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub nekrasov_verify: bool,
    pub equilibrium: bool,
    pub covariance: bool,
    pub clt: bool,
    pub lln: bool,
    pub tails: bool,
    /// Highest cumulant order in the CLT stage (2 to 4).
    pub max_order: usize,
    /// Tail radius as a multiple of the support radius.
    pub tail_factor: f64,
    /// Samples per N entering the pseudodistance average.
    pub pseudodistance_samples: usize,
    /// Largest residue relative to the local scale of R_N.
    pub nekrasov_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            nekrasov_verify: true,
            equilibrium: true,
            covariance: true,
            clt: true,
            lln: true,
            tails: true,
            max_order: 4,
            tail_factor: 2.0,
            pseudodistance_samples: 50,
            nekrasov_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Byte offset of the first line assigning `key` inside `[table]`.
fn key_offset(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut offset = 0;
    for line in src.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        } else if current == table {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(offset);
                }
            }
        }
        offset += line.len();
    }
    None
}

impl ExperimentConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(table, key, message)| ConfigError {
            line: key_offset(src, table, key).or_else(|| key_offset(src, "", key)).map(|o| line_of(src, o)),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::parse(&src)
    }

    /// Default experiment for a preset, used when no file is given.
    pub fn for_preset(model: ModelPreset) -> Self {
        Self {
            model,
            n: vec![4],
            chain: ChainConfig::default(),
            observables: ObservableConfig::default(),
            analysis: AnalysisConfig::default(),
            equilibrium: SolverOptions::default(),
            output: OutputConfig::default(),
            manifest: None,
        }
    }

    /// Checks what the schema cannot; errors name the offending table and key.
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        if self.n.is_empty() {
            return Err(("", "n", "the list of particle counts is empty".into()));
        }
        if self.n.contains(&0) {
            return Err(("", "n", "particle counts must be positive".into()));
        }
        if self.chain.chains == 0 {
            return Err(("chain", "chains", "at least one chain is required".into()));
        }
        if self.chain.thinning_sweeps == 0 {
            return Err(("chain", "thinning_sweeps", "thinning must be at least one sweep".into()));
        }
        if self.chain.samples < self.chain.chains {
            return Err(("chain", "samples", "fewer samples than chains".into()));
        }
        if !(2..=4).contains(&self.analysis.max_order) {
            return Err(("analysis", "max_order", "cumulant order must be 2, 3 or 4".into()));
        }
        if !(self.analysis.tail_factor > 0.0) {
            return Err(("analysis", "tail_factor", "tail factor must be positive".into()));
        }
        if self.equilibrium.grid_size < 10 {
            return Err(("equilibrium", "grid_size", "grid too coarse".into()));
        }
        for p in &self.observables.points {
            if p[1] == 0.0 && p[0].abs() < 1e-12 {
                return Err(("observables", "points", "Cauchy points must avoid the origin".into()));
            }
        }
        let th = self.model.theta();
        if !(th > 0.0) {
            return Err(("model", "theta", "theta must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Replaces the model from flag values: `preset` picks the family and
/// `params` set individual fields, on top of the config's model when the
/// family matches.
pub fn override_model(base: &ModelPreset, preset: Option<&str>, params: &[(String, toml::Value)]) -> Result<ModelPreset, ConfigError> {
    let mut table = toml::Table::try_from(base).map_err(|e| ConfigError { line: None, message: e.to_string() })?;
    if let Some(p) = preset {
        if table.get("preset").and_then(|v| v.as_str()) != Some(p) {
            table = toml::Table::new();
            table.insert("preset".into(), toml::Value::String(p.into()));
        }
    }
    for (k, v) in params {
        table.insert(k.clone(), v.clone());
    }
    let model = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError { line: None, message: format!("model flags: {}", e.message()) })?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
n = [3, 4]

[model]
preset = "krawtchouk"
m = 2.0

[chain]
samples = 2000
thinning_sweeps = 2
seed = 7
chains = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.n, vec![3, 4]);
        assert_eq!(cfg.model, ModelPreset::krawtchouk(2.0));
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_reports_line() {
        let src = SAMPLE.replace("seed = 7", "seed = 7\nsede = 3");
        let err = ExperimentConfig::parse(&src).unwrap_err();
        assert_eq!(err.line, Some(12), "{err}");
    }

    #[test]
    fn unknown_preset_rejected() {
        let src = SAMPLE.replace("krawtchouk", "meixner");
        let err = ExperimentConfig::parse(&src).unwrap_err();
        assert!(err.line.is_some() && err.message.contains("meixner"), "{err}");
    }

    #[test]
    fn empty_n_reports_line() {
        let src = SAMPLE.replace("n = [3, 4]", "n = []");
        let err = ExperimentConfig::parse(&src).unwrap_err();
        assert_eq!(err.line, Some(2), "{err}");
        let src = SAMPLE.replace("chains = 2", "chains = 0");
        assert_eq!(ExperimentConfig::parse(&src).unwrap_err().line, Some(12));
    }

    #[test]
    fn chain_budget_split() {
        let cfg = ExperimentConfig::parse(&SAMPLE.replace("samples = 2000", "samples = 2001")).unwrap();
        let a = cfg.chain.chain_options(1, 0);
        let b = cfg.chain.chain_options(1, 1);
        assert_eq!(a.samples + b.samples, 2001);
        assert_ne!(a.seed, b.seed);
        assert_ne!(cfg.chain.seed_for(0, 1), cfg.chain.seed_for(1, 0));
    }

    #[test]
    fn model_override() {
        let base = ModelPreset::krawtchouk(2.0);
        let m = override_model(&base, Some("krawtchouk"), &[("m".into(), toml::Value::Float(3.0))]).unwrap();
        assert_eq!(m, ModelPreset::krawtchouk(3.0));
        let m = override_model(&base, None, &[("theta".into(), toml::Value::Float(0.5))]).unwrap();
        assert_eq!(m.theta(), 0.5);
        assert!(override_model(&base, Some("convex_potential"), &[]).is_err());
    }
}
