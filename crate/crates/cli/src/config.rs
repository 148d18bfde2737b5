//! TOML configuration: optional top-level `seed` and `out`, then one flat
//! table per experiment.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Embed,
    Riesz,
    Diagonal,
    #[value(alias = "markov-approx")]
    Markov,
    Lq,
    Starter,
    Bsde,
    ContractSpan,
    ContractTarget,
    Gram,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Embed,
        Experiment::Riesz,
        Experiment::Diagonal,
        Experiment::Markov,
        Experiment::Lq,
        Experiment::Starter,
        Experiment::Bsde,
        Experiment::ContractSpan,
        Experiment::ContractTarget,
        Experiment::Gram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Embed => "embed",
            Experiment::Riesz => "riesz",
            Experiment::Diagonal => "diagonal",
            Experiment::Markov => "markov",
            Experiment::Lq => "lq",
            Experiment::Starter => "starter",
            Experiment::Bsde => "bsde",
            Experiment::ContractSpan => "contract-span",
            Experiment::ContractTarget => "contract-target",
            Experiment::Gram => "gram",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        <Experiment as ValueEnum>::from_str(s, false).map_err(|_| {
            let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
            CliError::Config(format!(
                "unknown experiment '{s}' (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedParams {
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub n_s: usize,
    pub modes: usize,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            horizons: vec![0.5, 1.0, 2.0],
            n_paths: 1000,
            n_s: 256,
            modes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RieszParams {
    pub horizon: f64,
    pub n_s_list: Vec<usize>,
}

impl Default for RieszParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_s_list: vec![128, 256, 512, 1024, 2048],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagonalParams {
    pub preset: String,
    pub horizon: f64,
    pub x0: f64,
    pub levels: Vec<usize>,
    pub reference: usize,
    pub n_paths: usize,
}

impl Default for DiagonalParams {
    fn default() -> Self {
        Self {
            preset: "smooth-kernel".into(),
            horizon: 1.0,
            x0: 1.0,
            levels: vec![16, 32, 64, 128],
            reference: 512,
            n_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovParams {
    pub horizon: f64,
    pub x0: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub basis: usize,
    pub n_list: Vec<usize>,
    pub n_paths: usize,
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            x0: 1.0,
            n_t: 64,
            n_s: 64,
            basis: 16,
            n_list: vec![1, 2, 4, 8, 16],
            n_paths: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub phi: String,
    pub horizon: f64,
    pub n_grid: usize,
    pub x0: f64,
    pub n_paths: usize,
    pub gains: Vec<f64>,
    pub cap: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            phi: "one".into(),
            horizon: 0.5,
            n_grid: 50,
            x0: 1.0,
            n_paths: 100_000,
            gains: (0..9).map(|i| 0.25 * i as f64).collect(),
            cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarterParams {
    pub horizon: f64,
    pub x0: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub n_paths: usize,
    pub residual_levels: Vec<usize>,
}

impl Default for StarterParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            x0: 1.0,
            n_t: 1000,
            n_s: 10,
            n_paths: 100_000,
            residual_levels: vec![16, 32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsdeParams {
    pub preset: String,
    pub n_t: usize,
    pub n_s: usize,
    pub n_paths: usize,
    pub reg_degree: usize,
    pub n_coeffs: usize,
}

impl Default for BsdeParams {
    fn default() -> Self {
        Self {
            preset: "exp-kernel".into(),
            n_t: 50,
            n_s: 32,
            n_paths: 40_000,
            reg_degree: 2,
            n_coeffs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractSpanParams {
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub horizon: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub n_paths: usize,
    pub zeta: f64,
    pub lambda0: f64,
    pub injection: f64,
    pub margin: f64,
}

impl Default for ContractSpanParams {
    fn default() -> Self {
        Self {
            betas: vec![0.6, 0.4],
            rhos: vec![0.0, 1.0],
            horizon: 1.0,
            n_t: 50,
            n_s: 64,
            n_paths: 200,
            zeta: 0.8,
            lambda0: 0.5,
            injection: 0.5,
            margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractTargetParams {
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub horizon: f64,
    pub levels: Vec<usize>,
    pub n_paths: usize,
    pub zeta: f64,
    pub lambda0: f64,
}

impl Default for ContractTargetParams {
    fn default() -> Self {
        Self {
            betas: vec![0.6, 0.4],
            rhos: vec![0.0, 1.0],
            horizon: 1.0,
            levels: vec![25, 50, 100],
            n_paths: 1000,
            zeta: 0.8,
            lambda0: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GramParams {
    pub horizon: f64,
    pub n_s: usize,
    pub n_probes: usize,
}

impl Default for GramParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_s: 1000,
            n_probes: 20,
        }
    }
}

/// The whole file. Tables for other experiments may be present and are
/// ignored by a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<EmbedParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub riesz: Option<RieszParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagonal: Option<DiagonalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "markov-approx")]
    pub markov: Option<MarkovParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lq: Option<LqParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub starter: Option<StarterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bsde: Option<BsdeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "contract-span")]
    pub contract_span: Option<ContractSpanParams>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "contract-target")]
    pub contract_target: Option<ContractTargetParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<GramParams>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Embed(EmbedParams),
    Riesz(RieszParams),
    Diagonal(DiagonalParams),
    Markov(MarkovParams),
    Lq(LqParams),
    Starter(StarterParams),
    Bsde(BsdeParams),
    ContractSpan(ContractSpanParams),
    ContractTarget(ContractTargetParams),
    Gram(GramParams),
}

/// Command-line overrides; each applies only to experiments that have the
/// parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_paths: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub phi: Option<String>,
    pub horizon: Option<f64>,
    pub n_grid: Option<usize>,
    pub preset: Option<String>,
    pub reg_degree: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    pub params: Params,
}

fn not_applicable(option: &str, experiment: Experiment) -> CliError {
    CliError::Config(format!("--{option} does not apply to experiment {experiment}"))
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        Self::from_file(experiment, &ConfigFile::default())
    }

    pub fn from_file(experiment: Experiment, file: &ConfigFile) -> Self {
        let params = match experiment {
            Experiment::Embed => Params::Embed(file.embed.clone().unwrap_or_default()),
            Experiment::Riesz => Params::Riesz(file.riesz.clone().unwrap_or_default()),
            Experiment::Diagonal => Params::Diagonal(file.diagonal.clone().unwrap_or_default()),
            Experiment::Markov => Params::Markov(file.markov.clone().unwrap_or_default()),
            Experiment::Lq => Params::Lq(file.lq.clone().unwrap_or_default()),
            Experiment::Starter => Params::Starter(file.starter.clone().unwrap_or_default()),
            Experiment::Bsde => Params::Bsde(file.bsde.clone().unwrap_or_default()),
            Experiment::ContractSpan => Params::ContractSpan(file.contract_span.clone().unwrap_or_default()),
            Experiment::ContractTarget => Params::ContractTarget(file.contract_target.clone().unwrap_or_default()),
            Experiment::Gram => Params::Gram(file.gram.clone().unwrap_or_default()),
        };
        Self {
            experiment,
            seed: file.seed.unwrap_or(DEFAULT_SEED),
            out: file.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            params,
        }
    }

    /// The file holding exactly this configuration.
    pub fn to_file(&self) -> ConfigFile {
        let mut f = ConfigFile {
            seed: Some(self.seed),
            out: Some(self.out.clone()),
            ..ConfigFile::default()
        };
        match &self.params {
            Params::Embed(p) => f.embed = Some(p.clone()),
            Params::Riesz(p) => f.riesz = Some(p.clone()),
            Params::Diagonal(p) => f.diagonal = Some(p.clone()),
            Params::Markov(p) => f.markov = Some(p.clone()),
            Params::Lq(p) => f.lq = Some(p.clone()),
            Params::Starter(p) => f.starter = Some(p.clone()),
            Params::Bsde(p) => f.bsde = Some(p.clone()),
            Params::ContractSpan(p) => f.contract_span = Some(p.clone()),
            Params::ContractTarget(p) => f.contract_target = Some(p.clone()),
            Params::Gram(p) => f.gram = Some(p.clone()),
        }
        f
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(&self.to_file()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let exp = self.experiment;
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(n) = o.n_paths {
            match &mut self.params {
                Params::Embed(p) => p.n_paths = n,
                Params::Diagonal(p) => p.n_paths = n,
                Params::Markov(p) => p.n_paths = n,
                Params::Lq(p) => p.n_paths = n,
                Params::Starter(p) => p.n_paths = n,
                Params::Bsde(p) => p.n_paths = n,
                Params::ContractSpan(p) => p.n_paths = n,
                Params::ContractTarget(p) => p.n_paths = n,
                Params::Riesz(_) | Params::Gram(_) => return Err(not_applicable("n-paths", exp)),
            }
        }
        if let Some(list) = &o.n_list {
            match &mut self.params {
                Params::Markov(p) => p.n_list = list.clone(),
                _ => return Err(not_applicable("n-list", exp)),
            }
        }
        if let Some(phi) = &o.phi {
            match &mut self.params {
                Params::Lq(p) => p.phi = phi.clone(),
                _ => return Err(not_applicable("phi", exp)),
            }
        }
        if let Some(h) = o.horizon {
            match &mut self.params {
                Params::Embed(p) => p.horizons = vec![h],
                Params::Riesz(p) => p.horizon = h,
                Params::Diagonal(p) => p.horizon = h,
                Params::Markov(p) => p.horizon = h,
                Params::Lq(p) => p.horizon = h,
                Params::Starter(p) => p.horizon = h,
                Params::ContractSpan(p) => p.horizon = h,
                Params::ContractTarget(p) => p.horizon = h,
                Params::Gram(p) => p.horizon = h,
                Params::Bsde(_) => return Err(not_applicable("horizon", exp)),
            }
        }
        if let Some(n) = o.n_grid {
            match &mut self.params {
                Params::Lq(p) => p.n_grid = n,
                Params::Markov(p) => p.n_t = n,
                Params::Starter(p) => p.n_t = n,
                Params::Bsde(p) => p.n_t = n,
                Params::ContractSpan(p) => p.n_t = n,
                Params::Gram(p) => p.n_s = n,
                Params::Embed(p) => p.n_s = n,
                _ => return Err(not_applicable("n-grid", exp)),
            }
        }
        if let Some(name) = &o.preset {
            match &mut self.params {
                Params::Bsde(p) => p.preset = name.clone(),
                Params::Diagonal(p) => p.preset = name.clone(),
                _ => return Err(not_applicable("preset", exp)),
            }
        }
        if let Some(d) = o.reg_degree {
            match &mut self.params {
                Params::Bsde(p) => p.reg_degree = d,
                _ => return Err(not_applicable("reg-degree", exp)),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {} exceeds {}", self.seed, i64::MAX)));
        }
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let count = |name: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be at least {min}, got {v}")))
            }
        };
        let list = |name: &str, v: &[usize], min: usize| {
            if v.is_empty() {
                return Err(CliError::Config(format!("{name} must not be empty")));
            }
            v.iter().try_for_each(|&x| count(name, x, min))
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be finite, got {v}")))
            }
        };
        match &self.params {
            Params::Embed(p) => {
                if p.horizons.is_empty() {
                    return Err(CliError::Config("horizons must not be empty".into()));
                }
                p.horizons.iter().try_for_each(|&h| pos("horizons", h))?;
                count("n_paths", p.n_paths, 1)?;
                count("n_s", p.n_s, 2)?;
                count("modes", p.modes, 1)
            }
            Params::Riesz(p) => {
                pos("horizon", p.horizon)?;
                list("n_s_list", &p.n_s_list, 8)?;
                if p.n_s_list.iter().any(|n| n % 8 != 0) {
                    return Err(CliError::Config("n_s_list entries must be multiples of 8".into()));
                }
                Ok(())
            }
            Params::Diagonal(p) => {
                pos("horizon", p.horizon)?;
                finite("x0", p.x0)?;
                list("levels", &p.levels, 1)?;
                count("reference", p.reference, 1)?;
                count("n_paths", p.n_paths, 2)?;
                if let Some(l) = p.levels.iter().find(|&&l| p.reference % l != 0) {
                    return Err(CliError::Config(format!(
                        "levels entry {l} does not divide reference {}",
                        p.reference
                    )));
                }
                Ok(())
            }
            Params::Markov(p) => {
                pos("horizon", p.horizon)?;
                finite("x0", p.x0)?;
                count("n_t", p.n_t, 1)?;
                count("n_s", p.n_s, 2)?;
                count("basis", p.basis, 1)?;
                list("n_list", &p.n_list, 1)?;
                count("n_paths", p.n_paths, 2)?;
                if let Some(n) = p.n_list.iter().find(|&&n| n > p.basis) {
                    return Err(CliError::Config(format!(
                        "n_list entry {n} exceeds basis size {}",
                        p.basis
                    )));
                }
                Ok(())
            }
            Params::Lq(p) => {
                pos("horizon", p.horizon)?;
                count("n_grid", p.n_grid, 2)?;
                finite("x0", p.x0)?;
                count("n_paths", p.n_paths, 2)?;
                pos("cap", p.cap)?;
                p.gains.iter().try_for_each(|&g| finite("gains", g))
            }
            Params::Starter(p) => {
                pos("horizon", p.horizon)?;
                finite("x0", p.x0)?;
                count("n_t", p.n_t, 1)?;
                count("n_s", p.n_s, 2)?;
                count("n_paths", p.n_paths, 2)?;
                list("residual_levels", &p.residual_levels, 2)
            }
            Params::Bsde(p) => {
                count("n_t", p.n_t, 1)?;
                count("n_s", p.n_s, 2)?;
                count("n_paths", p.n_paths, 2)?;
                count("reg_degree", p.reg_degree, 1)?;
                count("n_coeffs", p.n_coeffs, 1)
            }
            Params::ContractSpan(p) => {
                pos("horizon", p.horizon)?;
                count("n_t", p.n_t, 1)?;
                count("n_s", p.n_s, 2)?;
                count("n_paths", p.n_paths, 1)?;
                finite("zeta", p.zeta)?;
                finite("lambda0", p.lambda0)?;
                finite("injection", p.injection)?;
                pos("margin", p.margin)
            }
            Params::ContractTarget(p) => {
                pos("horizon", p.horizon)?;
                list("levels", &p.levels, 1)?;
                count("n_paths", p.n_paths, 1)?;
                finite("zeta", p.zeta)?;
                finite("lambda0", p.lambda0)
            }
            Params::Gram(p) => {
                pos("horizon", p.horizon)?;
                count("n_s", p.n_s, 2)?;
                count("n_probes", p.n_probes, 1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_round_trips() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::defaults(e);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::from_file(e, &ConfigFile::parse(&text).unwrap());
            assert_eq!(back, cfg, "{e}");
        }
    }

    #[test]
    fn names_and_aliases() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert_eq!("markov-approx".parse::<Experiment>().unwrap(), Experiment::Markov);
        assert!(matches!("heston".parse::<Experiment>(), Err(CliError::Config(_))));
    }

    #[test]
    fn tables_are_flat_and_strict() {
        let f = ConfigFile::parse("seed = 7\n[markov-approx]\nn_paths = 10\n[contract-span]\nmargin = 0.1\n").unwrap();
        assert_eq!(f.markov.as_ref().unwrap().n_paths, 10);
        assert_eq!(f.contract_span.as_ref().unwrap().margin, 0.1);
        assert!(ConfigFile::parse("[markov]\nnpaths = 10\n").is_err());
        assert!(ConfigFile::parse("[heston]\n").is_err());
    }

    #[test]
    fn overrides_apply_or_reject() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Lq);
        cfg.apply(&Overrides {
            phi: Some("exp".into()),
            n_grid: Some(20),
            seed: Some(3),
            ..Overrides::default()
        })
        .unwrap();
        match &cfg.params {
            Params::Lq(p) => assert_eq!((p.phi.as_str(), p.n_grid), ("exp", 20)),
            _ => unreachable!(),
        }
        assert_eq!(cfg.seed, 3);
        let err = cfg
            .apply(&Overrides {
                n_list: Some(vec![1]),
                ..Overrides::default()
            })
            .unwrap_err();
        assert!(err.to_string().contains("n-list"));
    }

    #[test]
    fn validation_names_the_parameter() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Markov);
        if let Params::Markov(p) = &mut cfg.params {
            p.n_list = vec![1, 32];
        }
        assert!(cfg.validate().unwrap_err().to_string().contains("n_list"));
        let mut cfg = ExperimentConfig::defaults(Experiment::Gram);
        if let Params::Gram(p) = &mut cfg.params {
            p.horizon = -1.0;
        }
        assert!(cfg.validate().unwrap_err().to_string().contains("horizon"));
    }
}
