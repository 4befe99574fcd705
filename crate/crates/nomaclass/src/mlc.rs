//! Maximum-likelihood blind classification of the transmission mode.
//!
//! Under AWGN with a known channel, the likelihood of a received symbol `y`
//! given a candidate constellation `S` (points equiprobable) is
//!
//! ```text
//! p(y | S) = 1/(|S| * pi * v) * sum_{s in S} exp(-|y - h*s|^2 / v)
//! ```
//!
//! with `v` the complex noise variance. Frame likelihoods multiply across
//! symbols; everything is evaluated in the log domain.
//!
//! The classifier pipeline runs three steps: single-user vs. NOMA over the
//! pooled NOMA set, then the NOMA mode by per-mode likelihood, then the
//! receiver's role. The role step is skipped when the receiver's own
//! modulation order already pins it down within the decided mode. A flat
//! joint test over all `2L + 1` hypotheses is available as the
//! full-complexity reference.

use num_complex::Complex64;

use crate::channel::UserRole;
use crate::modes::{ConstellationSet, ModeTable};

/// Per-symbol exponents smaller than the running maximum by more than this
/// contribute below f64 resolution and are skipped.
const EXP_CUTOFF: f64 = -46.0;

/// One of the `2L + 1` transmission hypotheses a receiver can decide.
///
/// The derived order (single-user first, then all far hypotheses by mode,
/// then all near hypotheses by mode) is the tie-breaking order: on equal
/// likelihood the smaller hypothesis wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Hypothesis {
    /// Single-user transmission (mode 0).
    Oma,
    /// NOMA mode `l` observed by the far terminal.
    FarMode(usize),
    /// NOMA mode `l` observed by the near terminal.
    NearMode(usize),
}

impl Hypothesis {
    /// The decided mode id (0 for the single-user hypothesis).
    pub fn mode(&self) -> usize {
        match *self {
            Hypothesis::Oma => 0,
            Hypothesis::FarMode(l) | Hypothesis::NearMode(l) => l,
        }
    }

    pub fn role(&self) -> Option<UserRole> {
        match self {
            Hypothesis::Oma => None,
            Hypothesis::FarMode(_) => Some(UserRole::Far),
            Hypothesis::NearMode(_) => Some(UserRole::Near),
        }
    }

    pub fn is_noma(&self) -> bool {
        !matches!(self, Hypothesis::Oma)
    }

    /// Position in the flat hypothesis list of a table with `num_noma` modes.
    pub fn index(&self, num_noma: usize) -> usize {
        match *self {
            Hypothesis::Oma => 0,
            Hypothesis::FarMode(l) => l,
            Hypothesis::NearMode(l) => num_noma + l,
        }
    }

    /// Inverse of [`Hypothesis::index`].
    pub fn from_index(index: usize, num_noma: usize) -> Hypothesis {
        match index {
            0 => Hypothesis::Oma,
            l if l <= num_noma => Hypothesis::FarMode(l),
            l => Hypothesis::NearMode(l - num_noma),
        }
    }
}

/// A classifier verdict, with how the role was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub hypothesis: Hypothesis,
    /// True when the role followed from the receiver's own modulation order
    /// instead of a likelihood or pilot test.
    pub role_inferred: bool,
}

/// Log-likelihood of a symbol block under one constellation, maximum shifted
/// online so arbitrarily small noise variances stay finite.
pub fn log_likelihood(data: &[Complex64], h: Complex64, set: &ConstellationSet, noise_var: f64) -> f64 {
    assert!(noise_var > 0.0, "noise variance must be positive");
    let hs: Vec<Complex64> = set.points().iter().map(|s| h * s).collect();
    let norm = (set.len() as f64).ln() + (std::f64::consts::PI * noise_var).ln();
    data.iter().map(|&y| raw_lse(y, &hs, noise_var) - norm).sum()
}

/// `ln sum_s exp(-|y - hs|^2 / v)` with a single pass over precomputed `h*s`.
fn raw_lse(y: Complex64, hs: &[Complex64], noise_var: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    for &p in hs {
        let t = -(y - p).norm_sqr() / noise_var;
        if t <= max {
            if t - max > EXP_CUTOFF {
                sum += (t - max).exp();
            }
        } else {
            sum = sum * (max - t).exp() + 1.0;
            max = t;
        }
    }
    max + sum.ln()
}

/// Frame-level likelihood scorer for one channel realization.
///
/// `h * s` products per candidate set are precomputed once, and per-symbol
/// per-mode exponent sums are shared between the pooled NOMA test, the
/// per-mode test, and the near hypotheses, which are the same quantity up to
/// normalization.
pub struct ModeScorer<'a> {
    table: &'a ModeTable,
    noise_var: f64,
    /// `h * s` for each mode's data set (index 0 = single-user set).
    hs_data: Vec<Vec<Complex64>>,
    /// `h * s` for each NOMA mode's far-only set (index 0 unused).
    hs_far: Vec<Vec<Complex64>>,
    ln_norm: f64,
}

impl<'a> ModeScorer<'a> {
    pub fn new(table: &'a ModeTable, h: Complex64, noise_var: f64) -> Self {
        assert!(noise_var > 0.0, "noise variance must be positive");
        let hs_data = (0..table.len())
            .map(|l| table.data_set(l).points().iter().map(|s| h * s).collect())
            .collect();
        let hs_far = (0..table.len())
            .map(|l| match table.far_set(l) {
                Some(set) => set.points().iter().map(|s| h * s).collect(),
                None => Vec::new(),
            })
            .collect();
        let ln_norm = (std::f64::consts::PI * noise_var).ln();
        ModeScorer { table, noise_var, hs_data, hs_far, ln_norm }
    }

    /// Raw per-symbol exponent sums for every mode's data set:
    /// `raw[k][l] = ln sum_{s in set_l} exp(-|y_k - h*s|^2 / v)`.
    fn raw_matrix(&self, data: &[Complex64]) -> Vec<Vec<f64>> {
        data.iter()
            .map(|&y| self.hs_data.iter().map(|hs| raw_lse(y, hs, self.noise_var)).collect())
            .collect()
    }

    /// Joint log-likelihood of a frame under one hypothesis.
    pub fn log_lik(&self, data: &[Complex64], hyp: Hypothesis) -> f64 {
        let (hs, len) = match hyp {
            Hypothesis::Oma => (&self.hs_data[0], self.table.data_set(0).len()),
            Hypothesis::NearMode(l) => (&self.hs_data[l], self.table.data_set(l).len()),
            Hypothesis::FarMode(l) => (
                &self.hs_far[l],
                self.table.far_set(l).expect("far hypothesis needs a NOMA mode").len(),
            ),
        };
        let norm = (len as f64).ln() + self.ln_norm;
        data.iter().map(|&y| raw_lse(y, hs, self.noise_var) - norm).sum()
    }

    /// Log-likelihoods of the single-user hypothesis and of the pooled NOMA
    /// alternative (the multiset union of all NOMA data sets).
    pub fn oma_noma_scores(&self, data: &[Complex64]) -> (f64, f64) {
        let raw = self.raw_matrix(data);
        self.oma_noma_from_raw(&raw, data.len())
    }

    fn oma_noma_from_raw(&self, raw: &[Vec<f64>], num_symbols: usize) -> (f64, f64) {
        let k = num_symbols as f64;
        let oma = raw.iter().map(|r| r[0]).sum::<f64>()
            - k * ((self.table.data_set(0).len() as f64).ln() + self.ln_norm);
        // Pooled set: sum over modes of per-mode exponent sums, per symbol.
        let union_len = self.table.noma_union().len() as f64;
        let mut pooled = 0.0;
        for r in raw {
            let max = r[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = r[1..].iter().map(|&t| (t - max).exp()).sum();
            pooled += max + sum.ln();
        }
        pooled -= k * (union_len.ln() + self.ln_norm);
        (oma, pooled)
    }

    /// Single-user vs. pooled-NOMA verdict; true means NOMA. Ties prefer the
    /// single-user hypothesis.
    pub fn classify_oma_noma(&self, data: &[Complex64]) -> bool {
        let (oma, pooled) = self.oma_noma_scores(data);
        pooled > oma
    }

    /// Most likely NOMA mode by composite-set likelihood, assuming the frame
    /// was already declared NOMA. Ties break to the lowest mode id.
    pub fn classify_modulation(&self, data: &[Complex64]) -> usize {
        let raw = self.raw_matrix(data);
        self.best_mode(&raw, data.len()).0
    }

    fn best_mode(&self, raw: &[Vec<f64>], num_symbols: usize) -> (usize, f64) {
        let k = num_symbols as f64;
        let mut best = 1usize;
        let mut best_score = f64::NEG_INFINITY;
        for l in 1..self.table.len() {
            let score = raw.iter().map(|r| r[l]).sum::<f64>()
                - k * ((self.table.data_set(l).len() as f64).ln() + self.ln_norm);
            if score > best_score {
                best_score = score;
                best = l;
            }
        }
        (best, best_score)
    }

    /// Role verdict for a known mode. The receiver's own modulation order
    /// settles it without a test when the mode's far and near orders differ;
    /// otherwise the superposed and far-only likelihoods are compared, ties
    /// to far.
    pub fn classify_near_far(&self, data: &[Complex64], mode: usize, own_order: Option<u32>) -> Decision {
        let near_score = self.log_lik(data, Hypothesis::NearMode(mode));
        self.resolve_role(data, mode, near_score, own_order)
    }

    /// Three-step classification: single-user vs. NOMA, then the mode, then
    /// the role. `own_order` is the receiver's own modulation order, which
    /// resolves the role without a test when the decided mode's two orders
    /// differ. Ties prefer the single-user hypothesis, the lower mode id,
    /// and the far role, in that step order.
    pub fn classify_three_step(&self, data: &[Complex64], own_order: Option<u32>) -> Decision {
        let raw = self.raw_matrix(data);
        let (oma, pooled) = self.oma_noma_from_raw(&raw, data.len());
        if oma >= pooled {
            return Decision { hypothesis: Hypothesis::Oma, role_inferred: false };
        }
        let (best, best_score) = self.best_mode(&raw, data.len());
        self.resolve_role(data, best, best_score, own_order)
    }

    fn resolve_role(
        &self,
        data: &[Complex64],
        mode: usize,
        near_score: f64,
        own_order: Option<u32>,
    ) -> Decision {
        let spec = self.table.mode(mode);
        let near_order = spec.near_order.expect("NOMA mode");
        if let Some(own) = own_order {
            if spec.far_order != near_order {
                if own == near_order {
                    return Decision { hypothesis: Hypothesis::NearMode(mode), role_inferred: true };
                }
                if own == spec.far_order {
                    return Decision { hypothesis: Hypothesis::FarMode(mode), role_inferred: true };
                }
            }
        }
        let far_score = self.log_lik(data, Hypothesis::FarMode(mode));
        let hypothesis = if near_score > far_score {
            Hypothesis::NearMode(mode)
        } else {
            Hypothesis::FarMode(mode)
        };
        Decision { hypothesis, role_inferred: false }
    }

    /// Flat maximum-likelihood test over all `2L + 1` hypotheses. Ties go to
    /// the earlier hypothesis in [`Hypothesis`] order.
    pub fn classify_joint(&self, data: &[Complex64]) -> Decision {
        let mut best = Hypothesis::Oma;
        let mut best_score = self.log_lik(data, Hypothesis::Oma);
        for l in 1..self.table.len() {
            let score = self.log_lik(data, Hypothesis::FarMode(l));
            if score > best_score {
                best_score = score;
                best = Hypothesis::FarMode(l);
            }
        }
        for l in 1..self.table.len() {
            let score = self.log_lik(data, Hypothesis::NearMode(l));
            if score > best_score {
                best_score = score;
                best = Hypothesis::NearMode(l);
            }
        }
        Decision { hypothesis: best, role_inferred: false }
    }
}
