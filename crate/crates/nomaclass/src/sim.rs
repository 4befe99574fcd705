//! Monte Carlo experiment driver.
//!
//! Every trial draws one frame (channel, symbols, noise) and evaluates all
//! configured schemes on that same draw, so scheme comparisons are paired.
//! Trials are split into fixed blocks that may run on any number of worker
//! threads; per-trial random streams are keyed by (seed, SNR, trial index)
//! and block results merge in index order, so results are bit-identical
//! regardless of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{interference_terms, CapacityInputs, ChannelAverage, SicPolicy};
use crate::channel::{noise_var_from_snr_db, receive, synthesize, FrameDraw, UserRole};
use crate::mlc::{Decision, Hypothesis, ModeScorer};
use crate::modes::ModeTable;
use crate::prc::{self, PhasePlan};
use crate::receiver::{demodulate, symbol_errors, truth_labels};
use crate::stats::{wilson_interval, Interval, RunningMean};

/// Data symbols per frame unless configured otherwise.
pub const DEFAULT_FRAME_SYMBOLS: usize = 10;
/// Default single-user rotation for the rotated-modulation scheme.
pub const DEFAULT_PRM_ROTATION: f64 = 0.6;
/// Two-sided 95% confidence quantile used for all reported intervals.
pub const CONFIDENCE_Z: f64 = 1.96;
/// Trials per work block; population of a block is fixed so that merging in
/// block order is deterministic.
const BLOCK_TRIALS: u64 = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("at least one SNR point is required")]
    NoSnrPoints,
    #[error("trial count must be positive")]
    NoTrials,
    #[error("frames need at least one data symbol")]
    NoSymbols,
    #[error("at least one scheme is required")]
    NoSchemes,
    #[error("scheme {0:?} appears twice in the run list")]
    DuplicateScheme(Scheme),
    #[error("rotations must be finite")]
    BadRotation,
}

/// A classification scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Likelihood classification on the plain mode table.
    Mlc,
    /// Likelihood classification with the single-user constellation rotated.
    MlcPrm,
    /// Pilot-rotation classification.
    Prc,
    /// Ground-truth verdicts; the classification-free bound.
    Genie,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Mlc, Scheme::MlcPrm, Scheme::Prc, Scheme::Genie];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mlc => "mlc",
            Scheme::MlcPrm => "mlc-prm",
            Scheme::Prc => "prc",
            Scheme::Genie => "genie",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlc" => Ok(Scheme::Mlc),
            "mlc-prm" | "prm" => Ok(Scheme::MlcPrm),
            "prc" => Ok(Scheme::Prc),
            "genie" => Ok(Scheme::Genie),
            other => Err(format!("unknown scheme '{other}' (expected mlc, mlc-prm, prc, genie)")),
        }
    }
}

/// How the truth of each trial is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthModel {
    /// All modes equally likely; the receiver is the near terminal.
    NearUser,
    /// All modes equally likely; NOMA frames pick the observed side
    /// uniformly. This is the model that exercises role errors.
    MixedRoles,
    /// NOMA modes only, near terminal; the capacity experiment.
    NomaNear,
}

/// Which likelihood classifier drives the likelihood-based schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    ThreeStep,
    Joint,
}

/// Which pilot phase plan the pilot scheme uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    Uniform,
    Grouped,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub table: ModeTable,
    pub snrs_db: Vec<f64>,
    pub trials: u64,
    pub frame_symbols: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub truth: TruthModel,
    /// Single-user data rotation applied by [`Scheme::MlcPrm`].
    pub prm_rotation: f64,
    pub plan: PlanKind,
    pub classifier: ClassifierKind,
}

impl SimConfig {
    pub fn new(table: ModeTable) -> SimConfig {
        SimConfig {
            table,
            snrs_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 10_000,
            frame_symbols: DEFAULT_FRAME_SYMBOLS,
            seed: 1,
            schemes: Scheme::ALL.to_vec(),
            truth: TruthModel::NearUser,
            prm_rotation: DEFAULT_PRM_ROTATION,
            plan: PlanKind::Uniform,
            classifier: ClassifierKind::ThreeStep,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.snrs_db.is_empty() {
            return Err(SimError::NoSnrPoints);
        }
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        if self.frame_symbols == 0 {
            return Err(SimError::NoSymbols);
        }
        if self.schemes.is_empty() {
            return Err(SimError::NoSchemes);
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[i + 1..].contains(s) {
                return Err(SimError::DuplicateScheme(*s));
            }
        }
        if !self.prm_rotation.is_finite() {
            return Err(SimError::BadRotation);
        }
        Ok(())
    }
}

/// A binomial rate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub errors: u64,
    pub trials: u64,
    /// NaN when the denominator is empty.
    pub rate: f64,
    pub interval: Interval,
}

impl RateEstimate {
    fn new(errors: u64, trials: u64) -> RateEstimate {
        let rate = if trials == 0 { f64::NAN } else { errors as f64 / trials as f64 };
        RateEstimate { errors, trials, rate, interval: wilson_interval(errors, trials, CONFIDENCE_Z) }
    }
}

/// Raw tallies of one (scheme, SNR) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Counters {
    pub trials: u64,
    /// Verdict on the wrong side of the single-user/NOMA split.
    pub oma_noma_errors: u64,
    /// Trials whose truth is a NOMA mode.
    pub noma_truth: u64,
    /// Wrong role verdict (a single-user verdict counts) among NOMA truths.
    pub role_errors: u64,
    /// Trials where truth and verdict are both near.
    pub near_pairs: u64,
    /// Wrong mode among those pairs.
    pub mode_errors: u64,
    /// Frames with at least one symbol error.
    pub frame_losses: u64,
    /// Per-trial near-terminal rate; populated by the capacity experiment.
    pub capacity: RunningMean,
    /// Per-trial rate shortfall against the genie verdict.
    pub capacity_gap: RunningMean,
    /// Row-major (truth, verdict) counts over the flat hypothesis list.
    pub confusion: Vec<u64>,
}

impl Counters {
    fn new(num_hypotheses: usize) -> Counters {
        Counters {
            trials: 0,
            oma_noma_errors: 0,
            noma_truth: 0,
            role_errors: 0,
            near_pairs: 0,
            mode_errors: 0,
            frame_losses: 0,
            capacity: RunningMean::default(),
            capacity_gap: RunningMean::default(),
            confusion: vec![0; num_hypotheses * num_hypotheses],
        }
    }

    fn merge(&mut self, other: &Counters) {
        self.trials += other.trials;
        self.oma_noma_errors += other.oma_noma_errors;
        self.noma_truth += other.noma_truth;
        self.role_errors += other.role_errors;
        self.near_pairs += other.near_pairs;
        self.mode_errors += other.mode_errors;
        self.frame_losses += other.frame_losses;
        self.capacity.merge(&other.capacity);
        self.capacity_gap.merge(&other.capacity_gap);
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
    }

    /// Single-user/NOMA verdict error over all trials.
    pub fn oma_noma_error(&self) -> RateEstimate {
        RateEstimate::new(self.oma_noma_errors, self.trials)
    }

    /// Role verdict error over NOMA-truth trials.
    pub fn role_error(&self) -> RateEstimate {
        RateEstimate::new(self.role_errors, self.noma_truth)
    }

    /// Mode verdict error over trials where both truth and verdict are near.
    pub fn mode_error(&self) -> RateEstimate {
        RateEstimate::new(self.mode_errors, self.near_pairs)
    }

    /// Frame loss over all trials.
    pub fn frame_loss(&self) -> RateEstimate {
        RateEstimate::new(self.frame_losses, self.trials)
    }
}

/// Tallies of one scheme at one SNR point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub snr_db: f64,
    pub scheme: Scheme,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// SNR-major, schemes in configuration order.
    pub points: Vec<PointResult>,
    pub num_hypotheses: usize,
}

impl SweepResult {
    pub fn point(&self, snr_db: f64, scheme: Scheme) -> Option<&PointResult> {
        self.points.iter().find(|p| p.snr_db == snr_db && p.scheme == scheme)
    }
}

/// Classification and role probabilities measured from a cell's confusion
/// matrix, in the form the capacity average consumes: uniform priors over the
/// NOMA modes, `p[l][m]` the mode-verdict probability given truth `l` (column
/// 0 absorbing single-user verdicts), and `q[m]` the near-verdict probability
/// given decided mode `m`, pooled over truths.
///
/// Returns None when some NOMA truth row has no trials, since the matrix
/// cannot be normalized then.
pub fn measured_capacity_inputs(
    counters: &Counters,
    num_noma: usize,
    channel: ChannelAverage,
) -> Option<CapacityInputs> {
    let n = 2 * num_noma + 1;
    let num_modes = num_noma + 1;
    let row = |t: usize| &counters.confusion[t * n..(t + 1) * n];

    let mut priors = vec![1.0 / num_noma as f64; num_modes];
    priors[0] = 0.0;

    let mut decision_probs = vec![vec![0.0; num_modes]; num_modes];
    decision_probs[0][0] = 1.0;
    for l in 1..num_modes {
        let r = row(Hypothesis::NearMode(l).index(num_noma));
        let total: u64 = r.iter().sum();
        if total == 0 {
            return None;
        }
        decision_probs[l][0] = r[0] as f64 / total as f64;
        for m in 1..num_modes {
            let far = r[Hypothesis::FarMode(m).index(num_noma)];
            let near = r[Hypothesis::NearMode(m).index(num_noma)];
            decision_probs[l][m] = (far + near) as f64 / total as f64;
        }
    }

    let mut near_probs = vec![0.0; num_modes];
    for m in 1..num_modes {
        let mut near = 0u64;
        let mut either = 0u64;
        for l in 1..num_modes {
            let r = row(Hypothesis::NearMode(l).index(num_noma));
            near += r[Hypothesis::NearMode(m).index(num_noma)];
            either += r[Hypothesis::NearMode(m).index(num_noma)] + r[Hypothesis::FarMode(m).index(num_noma)];
        }
        if either > 0 {
            near_probs[m] = near as f64 / either as f64;
        }
    }

    Some(CapacityInputs { priors, decision_probs, near_probs, channel })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one (seed, SNR, trial) cell.
fn trial_rng(seed: u64, snr_db: f64, trial: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(snr_db.to_bits())) ^ trial);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn draw_truth<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig) -> (usize, UserRole) {
    match cfg.truth {
        TruthModel::NearUser => (rng.gen_range(0..cfg.table.len()), UserRole::Near),
        TruthModel::MixedRoles => {
            let mode = rng.gen_range(0..cfg.table.len());
            let role = if mode > 0 && rng.gen::<bool>() { UserRole::Far } else { UserRole::Near };
            (mode, role)
        }
        TruthModel::NomaNear => (rng.gen_range(1..cfg.table.len()), UserRole::Near),
    }
}

fn truth_hypothesis(mode: usize, role: UserRole) -> Hypothesis {
    if mode == 0 {
        Hypothesis::Oma
    } else {
        match role {
            UserRole::Near => Hypothesis::NearMode(mode),
            UserRole::Far => Hypothesis::FarMode(mode),
        }
    }
}

/// The modulation order the receiving terminal was scheduled with; known at
/// the receiver regardless of the classification outcome.
fn own_order(table: &ModeTable, mode: usize, role: UserRole) -> u32 {
    let spec = table.mode(mode);
    if spec.is_oma() {
        spec.far_order
    } else {
        match role {
            UserRole::Near => spec.near_order.expect("NOMA mode"),
            UserRole::Far => spec.far_order,
        }
    }
}

/// Per-scheme immutable state shared by all trials.
struct SchemeCtx {
    scheme: Scheme,
    table: ModeTable,
    plan: Option<PhasePlan>,
    /// Combined residual power `E_far + E_near` per (truth, decided) pair,
    /// row-major; zero on single-user rows/columns and the diagonal.
    e_terms: Vec<f64>,
}

impl SchemeCtx {
    fn new(cfg: &SimConfig, scheme: Scheme) -> SchemeCtx {
        let (table, plan) = match scheme {
            Scheme::Mlc | Scheme::Genie => (cfg.table.clone(), None),
            Scheme::MlcPrm => {
                let mut rotations = vec![0.0; cfg.table.len()];
                rotations[0] = cfg.prm_rotation;
                (
                    cfg.table.with_rotations(&rotations).expect("rotation list matches the table"),
                    None,
                )
            }
            Scheme::Prc => {
                let plan = match cfg.plan {
                    PlanKind::Uniform => PhasePlan::uniform(&cfg.table),
                    PlanKind::Grouped => PhasePlan::grouped(&cfg.table),
                };
                (plan.apply(&cfg.table), Some(plan))
            }
        };
        let e_terms = residual_terms(&table);
        SchemeCtx { scheme, table, plan, e_terms }
    }
}

fn residual_terms(table: &ModeTable) -> Vec<f64> {
    let n = table.len();
    let mut e = vec![0.0; n * n];
    for l in 1..n {
        for m in 1..n {
            if l != m {
                let (f, k) = interference_terms(table, l, m, SicPolicy::default());
                e[l * n + m] = f + k;
            }
        }
    }
    e
}

/// Near-terminal rate of one trial given the truth mode and the verdict.
fn rate_contribution(
    table: &ModeTable,
    e_terms: &[f64],
    truth_mode: usize,
    decided: Hypothesis,
    h_mag_sq: f64,
    noise_var: f64,
) -> f64 {
    let m = match decided {
        Hypothesis::NearMode(m) => m,
        _ => return 0.0,
    };
    if truth_mode == 0 {
        return 0.0;
    }
    let eta = if m == truth_mode {
        table.mode(m).power_near * h_mag_sq / noise_var
    } else {
        table.mode(m).power_near / (e_terms[truth_mode * table.len() + m] + noise_var / h_mag_sq)
    };
    (1.0 + eta).log2()
}

fn classify(ctx: &SchemeCtx, cfg: &SimConfig, rx: &crate::channel::RxFrame, truth: Hypothesis, own: u32) -> Decision {
    match ctx.scheme {
        Scheme::Genie => Decision { hypothesis: truth, role_inferred: false },
        Scheme::Prc => prc::classify(rx, &ctx.table, ctx.plan.as_ref().expect("pilot scheme has a plan"), Some(own)),
        Scheme::Mlc | Scheme::MlcPrm => {
            let scorer = ModeScorer::new(&ctx.table, rx.h, rx.noise_var);
            match cfg.classifier {
                ClassifierKind::ThreeStep => scorer.classify_three_step(&rx.data, Some(own)),
                ClassifierKind::Joint => scorer.classify_joint(&rx.data),
            }
        }
    }
}

fn run_block(
    cfg: &SimConfig,
    ctxs: &[SchemeCtx],
    snr_db: f64,
    noise_var: f64,
    trials: std::ops::Range<u64>,
) -> Vec<Counters> {
    let num_hypotheses = 2 * cfg.table.num_noma() + 1;
    let num_noma = cfg.table.num_noma();
    let mut counters: Vec<Counters> = ctxs.iter().map(|_| Counters::new(num_hypotheses)).collect();
    let capacity_run = cfg.truth == TruthModel::NomaNear;
    for trial in trials {
        let mut rng = trial_rng(cfg.seed, snr_db, trial);
        let (mode, role) = draw_truth(&mut rng, cfg);
        let draw = FrameDraw::sample(&mut rng, &cfg.table, cfg.frame_symbols, mode, role);
        let truth = truth_hypothesis(mode, role);
        let own = own_order(&cfg.table, mode, role);
        let h_mag_sq = draw.h.norm_sqr();
        // The genie rate is scheme-independent (rotations cancel in it).
        let genie_rate = if capacity_run {
            rate_contribution(&cfg.table, &[], mode, truth, h_mag_sq, noise_var)
        } else {
            0.0
        };
        for (ctx, counter) in ctxs.iter().zip(&mut counters) {
            let tx = synthesize(&ctx.table, &draw);
            let rx = receive(&tx, &draw, noise_var);
            let decision = classify(ctx, cfg, &rx, truth, own);
            let decided = decision.hypothesis;

            counter.trials += 1;
            if decided.is_noma() != truth.is_noma() {
                counter.oma_noma_errors += 1;
            }
            if truth.is_noma() {
                counter.noma_truth += 1;
                if decided.role() != truth.role() {
                    counter.role_errors += 1;
                }
            }
            if matches!(truth, Hypothesis::NearMode(_)) && matches!(decided, Hypothesis::NearMode(_)) {
                counter.near_pairs += 1;
                if decided.mode() != truth.mode() {
                    counter.mode_errors += 1;
                }
            }
            counter.confusion[truth.index(num_noma) * num_hypotheses + decided.index(num_noma)] += 1;

            let demod = demodulate(&rx, &ctx.table, decided);
            let labels = truth_labels(&ctx.table, &draw);
            if symbol_errors(&labels, &demod) > 0 {
                counter.frame_losses += 1;
            }

            if capacity_run {
                let rate = rate_contribution(&ctx.table, &ctx.e_terms, mode, decided, h_mag_sq, noise_var);
                counter.capacity.push(rate);
                counter.capacity_gap.push(genie_rate - rate);
            }
        }
    }
    counters
}

/// Runs the configured sweep. Results are deterministic in (config, seed)
/// and independent of the rayon worker count.
pub fn run_sweep(cfg: &SimConfig) -> Result<SweepResult, SimError> {
    cfg.validate()?;
    let ctxs: Vec<SchemeCtx> = cfg.schemes.iter().map(|&s| SchemeCtx::new(cfg, s)).collect();
    let num_hypotheses = 2 * cfg.table.num_noma() + 1;
    let mut points = Vec::with_capacity(cfg.snrs_db.len() * ctxs.len());
    for &snr_db in &cfg.snrs_db {
        let noise_var = noise_var_from_snr_db(snr_db);
        let blocks = block_ranges(cfg.trials);
        let per_block: Vec<Vec<Counters>> = blocks
            .into_par_iter()
            .map(|range| run_block(cfg, &ctxs, snr_db, noise_var, range))
            .collect();
        let mut merged: Vec<Counters> = ctxs.iter().map(|_| Counters::new(num_hypotheses)).collect();
        for block in &per_block {
            for (into, from) in merged.iter_mut().zip(block) {
                into.merge(from);
            }
        }
        for (ctx, counters) in ctxs.iter().zip(merged) {
            points.push(PointResult { snr_db, scheme: ctx.scheme, counters });
        }
    }
    Ok(SweepResult { points, num_hypotheses })
}

fn block_ranges(trials: u64) -> Vec<std::ops::Range<u64>> {
    let mut blocks = Vec::with_capacity((trials / BLOCK_TRIALS + 1) as usize);
    let mut start = 0;
    while start < trials {
        let end = (start + BLOCK_TRIALS).min(trials);
        blocks.push(start..end);
        start = end;
    }
    blocks
}

/// Measured near-terminal capacity of likelihood classification on `table`,
/// as used by the rotation search: NOMA-only truths, near role, no
/// demodulation. Deterministic in (seed, snr_db).
pub fn measure_capacity(
    table: &ModeTable,
    snr_db: f64,
    trials: u64,
    seed: u64,
    frame_symbols: usize,
) -> RunningMean {
    let noise_var = noise_var_from_snr_db(snr_db);
    let e_terms = residual_terms(table);
    let per_block: Vec<RunningMean> = block_ranges(trials)
        .into_par_iter()
        .map(|range| {
            let mut mean = RunningMean::default();
            for trial in range {
                let mut rng = trial_rng(seed, snr_db, trial);
                let mode = rng.gen_range(1..table.len());
                let draw = FrameDraw::sample(&mut rng, table, frame_symbols, mode, UserRole::Near);
                let tx = synthesize(table, &draw);
                let rx = receive(&tx, &draw, noise_var);
                let scorer = ModeScorer::new(table, rx.h, noise_var);
                let own = table.mode(mode).near_order.expect("NOMA mode");
                let decision = scorer.classify_three_step(&rx.data, Some(own));
                let rate = rate_contribution(
                    table,
                    &e_terms,
                    mode,
                    decision.hypothesis,
                    draw.h.norm_sqr(),
                    noise_var,
                );
                mean.push(rate);
            }
            mean
        })
        .collect();
    let mut total = RunningMean::default();
    for block in &per_block {
        total.merge(block);
    }
    total
}
