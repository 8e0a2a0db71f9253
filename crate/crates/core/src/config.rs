//! Experiment configuration: a single TOML file with nested sections.
//! Parsing validates every checkable precondition and reports all
//! violations with field paths, not just the first one. Reproducibility
//! rule: everything an experiment consumes is in the file plus one seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::birkhoff::Observable;
use crate::driving::{Alphabet, OmegaPath, SymbolParams};
use crate::errors::{QResult, QuenchedError};
use crate::holder::HolderParams;
use crate::operator::Dynamics;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct SymbolSpec {
    pub d: u32,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub eps: f64,
    /// Hoelder bound; derived from the rules when omitted.
    #[serde(default, rename = "H")]
    pub h: Option<f64>,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default)]
    pub c: f64,
    pub prob: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct HolderSection {
    pub alpha: f64,
    pub xi: f64,
}

impl Default for HolderSection {
    fn default() -> Self {
        HolderSection { alpha: 1.0, xi: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct RatesSection {
    pub p: f64,
    pub delta: f64,
    /// Defaults to p / (2p - 2).
    pub beta: Option<f64>,
    pub eps_blocks: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection { p: 6.0, delta: 0.05, beta: None, eps_blocks: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct InducingSection {
    pub c0: f64,
    pub l: usize,
    pub n_check: usize,
    /// Symbol-window membership width; 0 means every offset is in E.
    pub test_mode_window: usize,
    pub test_mode_symbol: usize,
    /// Scan horizon for return times.
    pub n_max: usize,
}

impl Default for InducingSection {
    fn default() -> Self {
        InducingSection {
            c0: 1000.0,
            l: 8,
            n_check: 1024,
            test_mode_window: 1,
            test_mode_symbol: 0,
            n_max: 10_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct MonteCarloSection {
    pub n: usize,
    pub seed: u64,
    /// Orbit-time checkpoints; default dyadic 2^5 .. 2^14.
    pub checkpoints: Option<Vec<usize>>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection { n: 10_000, seed: 42, checkpoints: None }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct AsipSection {
    /// Dyadic window levels [level_lo, level_hi] in induced time.
    pub level_lo: u32,
    pub level_hi: u32,
    /// Trajectories for the block harness (heavier than plain variance MC).
    pub n_traj: usize,
}

impl Default for AsipSection {
    fn default() -> Self {
        AsipSection { level_lo: 7, level_hi: 13, n_traj: 12_000 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct MeasuresSection {
    pub n_relax: usize,
    pub tol: f64,
    pub relax_cap: usize,
}

impl Default for MeasuresSection {
    fn default() -> Self {
        MeasuresSection { n_relax: 40, tol: 1e-10, relax_cap: 4096 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, Default)]
#[serde(default)]
pub struct OutputSection {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ExperimentConfig {
    pub alphabet: Vec<SymbolSpec>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub observable: ObservableKind,
    #[serde(default)]
    pub holder: HolderSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub inducing: InducingSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub asip: AsipSection,
    #[serde(default)]
    pub measures: MeasuresSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_grid() -> usize {
    1024
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    #[default]
    Trig,
    CoboundaryCos,
}

impl From<ObservableKind> for Observable {
    fn from(k: ObservableKind) -> Observable {
        match k {
            ObservableKind::Trig => Observable::Trig,
            ObservableKind::CoboundaryCos => Observable::CoboundaryCos,
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate; collects every violation.
    pub fn from_str(text: &str) -> QResult<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| QuenchedError::config(vec![format!("toml: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> QResult<(ExperimentConfig, String)> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let cfg = Self::from_str(&text)?;
        Ok((cfg, config_hash(&bytes)))
    }

    pub fn validate(&self) -> QResult<()> {
        let mut violations = Vec::new();
        if self.alphabet.is_empty() {
            violations.push("alphabet: must list at least one symbol".to_string());
        }
        let total: f64 = self.alphabet.iter().map(|s| s.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            violations.push(format!("alphabet.prob: probabilities must sum to 1, got {total}"));
        }
        for (i, s) in self.alphabet.iter().enumerate() {
            let field = format!("alphabet[{i}]");
            if s.d < 2 {
                violations.push(format!("{field}.d: must be >= 2, got {}", s.d));
            }
            if !(0.0..1.0).contains(&s.b) {
                violations.push(format!("{field}.b: must lie in [0,1), got {}", s.b));
            }
            if s.eps < 0.0 {
                violations.push(format!("{field}.eps: must be >= 0, got {}", s.eps));
            }
            if s.prob < 0.0 {
                violations.push(format!("{field}.prob: must be >= 0, got {}", s.prob));
            }
            if let Some(h) = s.h {
                if h < 1.0 {
                    violations.push(format!("{field}.H: must be >= 1, got {h}"));
                }
            }
        }
        if !self.grid.is_power_of_two() || self.grid < 8 {
            violations.push(format!("grid: must be a power of two >= 8, got {}", self.grid));
        }
        if !(self.holder.alpha > 0.0 && self.holder.alpha <= 1.0) {
            violations.push(format!("holder.alpha: must lie in (0,1], got {}", self.holder.alpha));
        }
        if !(self.holder.xi > 0.0 && self.holder.xi <= 0.25) {
            violations.push(format!("holder.xi: must lie in (0,1/4], got {}", self.holder.xi));
        }
        if 1.0 / self.grid as f64 >= self.holder.xi {
            violations.push(format!(
                "grid: spacing 1/{} must be finer than holder.xi = {}",
                self.grid, self.holder.xi
            ));
        }
        if self.rates.p < 6.0 {
            violations.push(format!("rates.p: must be >= 6, got {}", self.rates.p));
        }
        if self.rates.delta <= 0.0 {
            violations.push(format!("rates.delta: must be > 0, got {}", self.rates.delta));
        }
        let beta = self.beta();
        if !(0.0 < beta && beta < 1.0) {
            violations.push(format!("rates.beta: must lie in (0,1), got {beta}"));
        }
        if !(self.rates.eps_blocks > 0.0 && self.rates.eps_blocks < 1.0 - beta) {
            violations.push(format!(
                "rates.eps_blocks: must lie in (0, 1 - beta) = (0, {}), got {}",
                1.0 - beta,
                self.rates.eps_blocks
            ));
        }
        if self.inducing.c0 < 1.0 {
            violations.push(format!("inducing.c0: must be >= 1, got {}", self.inducing.c0));
        }
        if self.inducing.l < 1 {
            violations.push("inducing.l: must be >= 1".to_string());
        }
        if self.inducing.n_check < self.inducing.l {
            violations.push(format!(
                "inducing.n_check: must be >= inducing.l = {}, got {}",
                self.inducing.l, self.inducing.n_check
            ));
        }
        if self.inducing.test_mode_symbol >= self.alphabet.len().max(1) {
            violations.push(format!(
                "inducing.test_mode_symbol: no symbol {} in an alphabet of {}",
                self.inducing.test_mode_symbol,
                self.alphabet.len()
            ));
        }
        if self.monte_carlo.n == 0 {
            violations.push("monte_carlo.n: must be >= 1".to_string());
        }
        if let Some(cps) = &self.monte_carlo.checkpoints {
            if cps.is_empty() {
                violations.push("monte_carlo.checkpoints: must be non-empty when given".into());
            }
            if !cps.windows(2).all(|w| w[0] < w[1]) || cps.first().is_some_and(|c| *c == 0) {
                violations
                    .push("monte_carlo.checkpoints: must be strictly increasing and >= 1".into());
            }
        }
        if self.asip.level_lo < 1 || self.asip.level_hi < self.asip.level_lo {
            violations.push(format!(
                "asip: need 1 <= level_lo <= level_hi, got [{}, {}]",
                self.asip.level_lo, self.asip.level_hi
            ));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(QuenchedError::config(violations))
        }
    }

    pub fn beta(&self) -> f64 {
        self.rates.beta.unwrap_or(self.rates.p / (2.0 * self.rates.p - 2.0))
    }

    /// Hoelder bound for one symbol: the declared value, or the analytic
    /// bound max(1, v(phi), v(psi)) derived from the rules.
    pub fn holder_bound(&self, s: &SymbolSpec) -> f64 {
        s.h.unwrap_or_else(|| {
            let v_phi = TAU * s.eps;
            let v_psi = TAU * s.a.abs() + 2.0 * TAU * s.c.abs();
            1.0f64.max(v_phi).max(v_psi) * (1.0 + 1e-9)
        })
    }

    pub fn symbol_params(&self) -> Vec<SymbolParams> {
        self.alphabet
            .iter()
            .map(|s| SymbolParams {
                branch_count: s.d,
                offset: s.b,
                potential_amplitude: s.eps,
                holder_bound: self.holder_bound(s),
                obs_cos: s.a,
                obs_sin: s.c,
            })
            .collect()
    }

    pub fn alphabet_struct(&self) -> QResult<Alphabet> {
        Alphabet::new(self.symbol_params(), self.alphabet.iter().map(|s| s.prob).collect())
    }

    pub fn holder_params(&self) -> QResult<HolderParams> {
        HolderParams::new(self.holder.alpha, self.holder.xi)
    }

    /// Realize the driving path and operator context for a seed.
    pub fn dynamics(&self, seed: u64) -> QResult<Dynamics> {
        let path = OmegaPath::sample(seed, self.alphabet_struct()?);
        Dynamics::new(path, self.grid, self.holder_params()?)
    }

    /// Orbit-time checkpoints (default dyadic 2^5 .. 2^14).
    pub fn checkpoints(&self) -> Vec<usize> {
        self.monte_carlo
            .checkpoints
            .clone()
            .unwrap_or_else(|| (5..=14).map(|e| 1usize << e).collect())
    }
}

/// SHA-256 of the raw config file bytes, hex-encoded.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[alphabet]]
d = 2
prob = 1.0
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.grid, 1024);
        assert_eq!(cfg.observable, ObservableKind::Trig);
        assert!((cfg.beta() - 0.6).abs() < 1e-15);
        assert_eq!(cfg.checkpoints().first(), Some(&32));
        assert_eq!(cfg.checkpoints().last(), Some(&16384));
        // Derived H covers the cosine observable.
        let params = cfg.symbol_params();
        assert!(params[0].holder_bound >= TAU);
        // The derived parameters build a working dynamics.
        cfg.dynamics(1).unwrap();
    }

    #[test]
    fn bad_probabilities_named() {
        let text = r#"
[[alphabet]]
d = 2
prob = 0.4

[[alphabet]]
d = 3
prob = 0.4
"#;
        let err = ExperimentConfig::from_str(text).unwrap_err();
        assert!(err.to_string().contains("prob"), "{err}");
    }

    #[test]
    fn all_violations_reported_with_paths() {
        let text = r#"
grid = 100

[[alphabet]]
d = 1
b = 1.5
prob = 0.7

[holder]
alpha = 2.0
xi = 0.5

[rates]
p = 4.0
"#;
        let err = ExperimentConfig::from_str(text).unwrap_err();
        let msg = err.to_string();
        for needle in
            ["alphabet[0].d", "alphabet[0].b", "grid", "holder.alpha", "holder.xi", "rates.p"]
        {
            assert!(msg.contains(needle), "missing {needle} in:\n{msg}");
        }
    }

    #[test]
    fn beta_defaults_from_p() {
        let text = r#"
[[alphabet]]
d = 2
prob = 1.0

[rates]
p = 6.0
"#;
        let cfg = ExperimentConfig::from_str(text).unwrap();
        assert!((cfg.beta() - 0.6).abs() < 1e-15);

        let with_beta = r#"
[[alphabet]]
d = 2
prob = 1.0

[rates]
p = 6.0
beta = 0.55
"#;
        let cfg = ExperimentConfig::from_str(with_beta).unwrap();
        assert!((cfg.beta() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let h1 = config_hash(MINIMAL.as_bytes());
        let h2 = config_hash(MINIMAL.as_bytes());
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        assert_ne!(h1, config_hash(b"other"));
    }
}
