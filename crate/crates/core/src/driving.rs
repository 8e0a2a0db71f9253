//! The driving system: a two-sided i.i.d. symbol sequence over a finite
//! alphabet, together with the per-symbol dynamical parameters it carries.
//!
//! The base transformation is the left shift on realized sequences. Symbols
//! at any index (negative included) are pure functions of (seed, index) via
//! counter-based draws, so shifting is O(1) and never resamples. Working
//! with finitely many symbols keeps every parameter (expansion, branch
//! count, Hoelder bound) bounded, a deliberate strengthening that makes all
//! integrability hypotheses automatic.

use std::ops::Range;
use std::sync::Arc;

use dashmap::DashMap;

use crate::errors::{QResult, QuenchedError};
use crate::rng::CounterRng;

/// Substream tags reserved by the toolkit, so independent consumers of one
/// master seed never share counters.
pub mod stream_tags {
    pub const DRIVING: u64 = 1;
    pub const MU_SAMPLER: u64 = 2;
    pub const TRAJECTORY: u64 = 3;
    pub const DICTIONARY: u64 = 4;
    pub const TWISTS: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const SURROGATE: u64 = 7;
}

const TAU: f64 = std::f64::consts::TAU;

/// Dynamical data attached to one alphabet symbol.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SymbolParams {
    /// Branch count d >= 2 of the fiber map. Doubles as the expansion factor
    /// and the branch-count bound for the affine family.
    pub branch_count: u32,
    /// Additive offset b in [0, 1) of the fiber map x -> (d x + b) mod 1.
    pub offset: f64,
    /// Amplitude eps >= 0 of the potential perturbation.
    pub potential_amplitude: f64,
    /// Hoelder bound H >= 1 assumed for potential and observable on this symbol.
    pub holder_bound: f64,
    /// Observable cosine coefficient a.
    pub obs_cos: f64,
    /// Observable second-harmonic sine coefficient c.
    pub obs_sin: f64,
}

impl SymbolParams {
    /// Expansion factor of the fiber map (equals the branch count here).
    #[inline]
    pub fn expansion(&self) -> f64 {
        self.branch_count as f64
    }

    /// Potential phi(x) = -ln d + eps cos(2 pi x).
    #[inline]
    pub fn potential(&self, x: f64) -> f64 {
        -(self.branch_count as f64).ln() + self.potential_amplitude * (TAU * x).cos()
    }

    /// Raw (uncentered) observable psi(x) = a cos(2 pi x) + c sin(4 pi x).
    #[inline]
    pub fn observable(&self, x: f64) -> f64 {
        self.obs_cos * (TAU * x).cos() + self.obs_sin * (2.0 * TAU * x).sin()
    }

    pub fn validate(&self, field: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.branch_count < 2 {
            v.push(format!("{field}.d: branch count must be >= 2, got {}", self.branch_count));
        }
        if !(0.0..1.0).contains(&self.offset) {
            v.push(format!("{field}.b: offset must lie in [0,1), got {}", self.offset));
        }
        if self.potential_amplitude < 0.0 {
            v.push(format!("{field}.eps: amplitude must be >= 0, got {}", self.potential_amplitude));
        }
        if self.holder_bound < 1.0 {
            v.push(format!("{field}.H: Hoelder bound must be >= 1, got {}", self.holder_bound));
        }
        v
    }
}

/// A finite symbol alphabet with a probability vector.
#[derive(Clone, Debug)]
pub struct Alphabet {
    symbols: Vec<SymbolParams>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Alphabet {
    pub fn new(symbols: Vec<SymbolParams>, probabilities: Vec<f64>) -> QResult<Self> {
        let mut violations = Vec::new();
        if symbols.is_empty() {
            violations.push("alphabet: must contain at least one symbol".to_string());
        }
        if probabilities.len() != symbols.len() {
            violations.push(format!(
                "probabilities: length {} does not match alphabet size {}",
                probabilities.len(),
                symbols.len()
            ));
        }
        if probabilities.iter().any(|p| *p < 0.0) {
            violations.push("probabilities: entries must be nonnegative".to_string());
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            violations.push(format!("probabilities: must sum to 1 within 1e-12, got {total}"));
        }
        for (i, s) in symbols.iter().enumerate() {
            violations.extend(s.validate(&format!("alphabet[{i}]")));
        }
        if !violations.is_empty() {
            return Err(QuenchedError::config(violations));
        }
        let mut cumulative = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cumulative.push(acc);
        }
        *cumulative.last_mut().expect("non-empty") = 1.0;
        Ok(Alphabet { symbols, probabilities, cumulative })
    }

    pub fn single(symbol: SymbolParams) -> Self {
        Alphabet::new(vec![symbol], vec![1.0]).expect("single symbol alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, id: usize) -> &SymbolParams {
        &self.symbols[id]
    }

    pub fn symbols(&self) -> &[SymbolParams] {
        &self.symbols
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Smallest expansion factor over the alphabet (>= 2).
    pub fn min_expansion(&self) -> f64 {
        self.symbols.iter().map(|s| s.expansion()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_holder_bound(&self) -> f64 {
        self.symbols.iter().map(|s| s.holder_bound).fold(1.0, f64::max)
    }

    fn pick(&self, u: f64) -> u8 {
        match self.cumulative.iter().position(|c| u < *c) {
            Some(i) => i as u8,
            None => (self.symbols.len() - 1) as u8,
        }
    }
}

/// Products of per-step expansion factors and branch counts over a window.
///
/// `gamma` and `degree` saturate to +inf for windows long enough to overflow
/// f64; the log forms stay finite and are what downstream bounds consume.
#[derive(Clone, Copy, Debug)]
pub struct CocycleProducts {
    pub gamma: f64,
    pub degree: f64,
    pub log_gamma: f64,
    pub log_degree: f64,
}

/// A realized two-sided driving sequence.
///
/// Shifting produces a view with a displaced origin over the same underlying
/// sequence; the memo cache is shared and filled idempotently, so paths can
/// be cloned and read from parallel workers freely.
#[derive(Clone, Debug)]
pub struct OmegaPath {
    seed: u64,
    stream: CounterRng,
    alphabet: Arc<Alphabet>,
    origin: i64,
    memo: Arc<DashMap<i64, u8>>,
}

impl OmegaPath {
    /// Realize the driving sequence for a seed. Symbols are drawn i.i.d.
    /// according to the alphabet's probability vector.
    pub fn sample(seed: u64, alphabet: Alphabet) -> OmegaPath {
        OmegaPath {
            seed,
            stream: CounterRng::new(seed).substream(stream_tags::DRIVING),
            alphabet: Arc::new(alphabet),
            origin: 0,
            memo: Arc::new(DashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Current position of index 0 in absolute coordinates.
    pub fn origin(&self) -> i64 {
        self.origin
    }

    #[inline]
    fn draw(&self, absolute: i64) -> u8 {
        self.alphabet.pick(self.stream.uniform_at(absolute as u64))
    }

    /// Symbol id at relative index i (negative indices allowed).
    pub fn symbol(&self, i: i64) -> usize {
        let absolute = self.origin + i;
        if let Some(hit) = self.memo.get(&absolute) {
            return *hit as usize;
        }
        let id = self.draw(absolute);
        // Idempotent fill: concurrent writers compute the same pure value.
        self.memo.insert(absolute, id);
        id as usize
    }

    /// Parameters of the symbol at relative index i.
    pub fn params(&self, i: i64) -> &SymbolParams {
        self.alphabet.symbol(self.symbol(i))
    }

    /// Bulk symbol ids over a relative index range, bypassing the memo.
    pub fn symbols_in(&self, range: Range<i64>) -> Vec<u8> {
        range.map(|i| self.draw(self.origin + i)).collect()
    }

    /// The shifted path sigma^k(omega); k may be negative.
    pub fn shift(&self, k: i64) -> OmegaPath {
        let mut shifted = self.clone();
        shifted.origin += k;
        shifted
    }

    /// (prod gamma, prod D) over relative indices 0..n-1.
    pub fn cocycle_products(&self, n: usize) -> QResult<CocycleProducts> {
        if n == 0 {
            return Err(QuenchedError::Argument("cocycle products need n >= 1".into()));
        }
        let mut gamma = 1.0f64;
        let mut log_gamma = 0.0f64;
        for i in 0..n as i64 {
            let d = self.params(i).expansion();
            gamma *= d;
            log_gamma += d.ln();
        }
        // gamma == degree for the affine full-branch family.
        Ok(CocycleProducts { gamma, degree: gamma, log_gamma, log_degree: log_gamma })
    }

    /// exp(-alpha * ln gamma_{omega,n}); safe for arbitrarily long windows.
    pub fn gamma_pow_neg_alpha(&self, n: usize, alpha: f64) -> f64 {
        let mut log_gamma = 0.0f64;
        for i in 0..n as i64 {
            log_gamma += self.params(i).expansion().ln();
        }
        (-alpha * log_gamma).exp()
    }
}
