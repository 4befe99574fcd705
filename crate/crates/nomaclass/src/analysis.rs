//! Closed-form and semi-analytic link analysis: SINR under classification
//! errors, user capacity, pairwise mode-confusion probabilities, and the
//! rotation-list search.
//!
//! All SINR expressions describe the near terminal after SIC. A correct
//! verdict leaves only noise, giving `P_n |h|^2 / v`. A wrong mode verdict
//! leaves residual far and near mismatch power, computed by enumerating the
//! constellations; the residual terms are channel-independent, so they are
//! evaluated once per mode pair.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::modes::{min_distance, ConstellationSet, ModeTable};
use crate::stats::q_function;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("decision probability row {0} must sum to 1 (got {1})")]
    NotStochastic(usize, f64),
    #[error("priors must be non-negative and sum to 1 (got {0})")]
    BadPriors(f64),
    #[error("{0} must have one entry per mode")]
    BadLength(&'static str),
    #[error("probability out of [0, 1]: {0}")]
    BadProbability(f64),
}

/// Channel magnitude and noise level an SINR is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub h_mag_sq: f64,
    pub noise_var: f64,
}

impl LinkState {
    pub fn new(h: Complex64, noise_var: f64) -> LinkState {
        LinkState { h_mag_sq: h.norm_sqr(), noise_var }
    }

    pub fn from_mag_sq(h_mag_sq: f64, noise_var: f64) -> LinkState {
        LinkState { h_mag_sq, noise_var }
    }

    /// Channel-normalized noise power; infinite in a deep fade.
    pub fn normalized_noise(&self) -> f64 {
        self.noise_var / self.h_mag_sq
    }
}

/// How SIC regenerates the far symbol when the decided mode is wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SicPolicy {
    /// Pair points by index when the two orders match; fall back to the
    /// nearest decided point when they differ.
    #[default]
    MatchedIndex,
    /// Always pair each true point with the nearest decided point.
    NearestPoint,
}

/// Mean squared gap between a true layer and the layer the receiver assumes.
fn nearest_point_energy(truth: &ConstellationSet, assumed: &ConstellationSet) -> f64 {
    let sum: f64 = truth
        .points()
        .iter()
        .map(|a| {
            assumed
                .points()
                .iter()
                .map(|c| (a - c).norm_sqr())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / truth.len() as f64
}

fn matched_index_energy(amp_true: f64, rot_true: f64, amp_assumed: f64, rot_assumed: f64) -> f64 {
    // Index-matched points differ by a common complex factor; base sets have
    // unit average power, so the mean gap is that factor's squared modulus.
    (Complex64::from_polar(amp_true, rot_true) - Complex64::from_polar(amp_assumed, rot_assumed)).norm_sqr()
}

/// Residual far and near interference powers `(E_far, E_near)` left after
/// SIC when mode `l` is transmitted but mode `m` is decided. Both are zero
/// for `l == m`.
pub fn interference_terms(table: &ModeTable, l: usize, m: usize, policy: SicPolicy) -> (f64, f64) {
    assert!(l >= 1 && m >= 1, "interference terms are defined between NOMA modes");
    if l == m {
        return (0.0, 0.0);
    }
    let ml = table.mode(l);
    let mm = table.mode(m);
    let far = if policy == SicPolicy::MatchedIndex && ml.far_order == mm.far_order {
        matched_index_energy(
            ml.power_far.sqrt(),
            ml.data_rotation,
            mm.power_far.sqrt(),
            mm.data_rotation,
        )
    } else {
        nearest_point_energy(table.far_set(l).expect("NOMA"), table.far_set(m).expect("NOMA"))
    };
    let near = if policy == SicPolicy::MatchedIndex && ml.near_order == mm.near_order {
        matched_index_energy(
            ml.power_near.sqrt(),
            ml.data_rotation,
            mm.power_near.sqrt(),
            mm.data_rotation,
        )
    } else {
        nearest_point_energy(table.near_set(l).expect("NOMA"), table.near_set(m).expect("NOMA"))
    };
    (far, near)
}

/// Post-SIC SINR of the near terminal when the decided mode is the true one.
pub fn sinr_correct(table: &ModeTable, mode: usize, link: LinkState) -> f64 {
    assert!(link.noise_var > 0.0, "noise variance must be positive");
    table.mode(mode).power_near * link.h_mag_sq / link.noise_var
}

/// Post-SIC SINR of the near terminal when mode `l` is transmitted but mode
/// `m` is decided. Residual far and near mismatch act as extra noise.
pub fn sinr_misclassified(table: &ModeTable, l: usize, m: usize, link: LinkState, policy: SicPolicy) -> f64 {
    assert!(link.noise_var > 0.0, "noise variance must be positive");
    let (e_far, e_near) = interference_terms(table, l, m, policy);
    table.mode(m).power_near / (e_far + e_near + link.normalized_noise())
}

/// SINR for any true/decided mode pair, treating any single-user involvement
/// as zero throughput.
pub fn sinr(table: &ModeTable, l: usize, m: usize, link: LinkState) -> f64 {
    if l == 0 || m == 0 {
        0.0
    } else if l == m {
        sinr_correct(table, l, link)
    } else {
        sinr_misclassified(table, l, m, link, SicPolicy::default())
    }
}

/// Whether a correct verdict is at least as good as deciding `m`:
/// `P_{n,l} (E_far + E_near + v/|h|^2) >= P_{n,m} v/|h|^2`.
pub fn sinr_condition(table: &ModeTable, l: usize, m: usize, link: LinkState, policy: SicPolicy) -> bool {
    let (e_far, e_near) = interference_terms(table, l, m, policy);
    let scaled = link.normalized_noise();
    table.mode(l).power_near * (e_far + e_near + scaled) >= table.mode(m).power_near * scaled
}

/// All SINR figures of a table at one link state.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrReport {
    /// `eta_correct[l]`: SINR of a correct verdict (0 for the single-user mode).
    pub eta_correct: Vec<f64>,
    /// `eta_mis[l][m]`: SINR when `l` is sent and `m` decided; zero when
    /// either index is the single-user mode.
    pub eta_mis: Vec<Vec<f64>>,
    /// Residual far-layer power per `(l, m)`.
    pub e_far: Vec<Vec<f64>>,
    /// Residual near-layer power per `(l, m)`.
    pub e_near: Vec<Vec<f64>>,
}

pub fn sinr_report(table: &ModeTable, link: LinkState, policy: SicPolicy) -> SinrReport {
    let n = table.len();
    let mut eta_correct = vec![0.0; n];
    let mut eta_mis = vec![vec![0.0; n]; n];
    let mut e_far = vec![vec![0.0; n]; n];
    let mut e_near = vec![vec![0.0; n]; n];
    for l in 1..n {
        eta_correct[l] = sinr_correct(table, l, link);
        for m in 1..n {
            let (f, k) = interference_terms(table, l, m, policy);
            e_far[l][m] = f;
            e_near[l][m] = k;
            eta_mis[l][m] = if l == m {
                eta_correct[l]
            } else {
                sinr_misclassified(table, l, m, link, policy)
            };
        }
    }
    SinrReport { eta_correct, eta_mis, e_far, e_near }
}

/// Probability that noise pushes a symbol of mode `l` closer to mode `m`.
///
/// With `exact` set this is the full pairwise union bound, the average of
/// `Q(|h| d / (sqrt(2) sigma))` over all cross-mode point pairs; otherwise
/// only the minimum-distance pairs are kept.
pub fn mc_error_prob(table: &ModeTable, l: usize, m: usize, link: LinkState, exact: bool) -> f64 {
    assert!(link.noise_var > 0.0, "noise variance must be positive");
    let a = table.data_set(l);
    let b = table.data_set(m);
    let scale = link.h_mag_sq.sqrt() / (2.0 * link.noise_var).sqrt();
    if exact {
        let sum: f64 = a
            .points()
            .iter()
            .map(|x| b.points().iter().map(|y| q_function(scale * (x - y).norm())).sum::<f64>())
            .sum();
        sum / (a.len() * b.len()) as f64
    } else {
        let md = min_distance(a, b).expect("mode sets are non-empty");
        md.pairs as f64 / (a.len() * b.len()) as f64 * q_function(scale * md.d_min)
    }
}

/// Source of `|h|^2` samples for channel averaging.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelAverage {
    /// Draw this many unit-mean Rayleigh power samples from a seeded stream.
    Draws { count: usize, seed: u64 },
    /// Use the given `|h|^2` samples as-is.
    Samples(Vec<f64>),
}

impl ChannelAverage {
    fn samples(&self) -> Vec<f64> {
        match self {
            ChannelAverage::Samples(s) => s.clone(),
            ChannelAverage::Draws { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count).map(|_| crate::channel::sample_cn(&mut rng).norm_sqr()).collect()
            }
        }
    }
}

/// Everything the capacity average needs besides the table: mode priors, the
/// classification matrix, the per-mode near-verdict probabilities, and the
/// channel ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityInputs {
    /// Prior of each mode being transmitted; index 0 is the single-user mode.
    pub priors: Vec<f64>,
    /// `decision_probs[l][m]`: probability of deciding mode `m` given `l`.
    pub decision_probs: Vec<Vec<f64>>,
    /// `near_probs[m]`: probability the role verdict is "near" given mode
    /// `m` was decided.
    pub near_probs: Vec<f64>,
    pub channel: ChannelAverage,
}

impl CapacityInputs {
    /// Ideal classification: identity decisions, certain near verdicts, and
    /// uniform priors over the NOMA modes.
    pub fn perfect(num_modes: usize, channel: ChannelAverage) -> CapacityInputs {
        let num_noma = num_modes - 1;
        let mut priors = vec![1.0 / num_noma as f64; num_modes];
        priors[0] = 0.0;
        let decision_probs = (0..num_modes)
            .map(|l| (0..num_modes).map(|m| if l == m { 1.0 } else { 0.0 }).collect())
            .collect();
        CapacityInputs { priors, decision_probs, near_probs: vec![1.0; num_modes], channel }
    }

    fn validate(&self, num_modes: usize) -> Result<(), AnalysisError> {
        if self.priors.len() != num_modes {
            return Err(AnalysisError::BadLength("priors"));
        }
        if self.near_probs.len() != num_modes {
            return Err(AnalysisError::BadLength("near_probs"));
        }
        if self.decision_probs.len() != num_modes {
            return Err(AnalysisError::BadLength("decision_probs"));
        }
        let prior_sum: f64 = self.priors.iter().sum();
        if self.priors.iter().any(|&p| p < 0.0) || (prior_sum - 1.0).abs() > 1e-6 {
            return Err(AnalysisError::BadPriors(prior_sum));
        }
        for q in &self.near_probs {
            if !(0.0..=1.0).contains(q) {
                return Err(AnalysisError::BadProbability(*q));
            }
        }
        for (l, row) in self.decision_probs.iter().enumerate() {
            if row.len() != num_modes {
                return Err(AnalysisError::BadLength("decision_probs"));
            }
            for p in row {
                if !(0.0..=1.0).contains(p) {
                    return Err(AnalysisError::BadProbability(*p));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(AnalysisError::NotStochastic(l, sum));
            }
        }
        Ok(())
    }
}

/// Ergodic near-terminal capacity under imperfect classification, in
/// bits/s/Hz, averaged over the channel ensemble:
/// `sum_l prior_l E_h[ sum_m p_{l,m} q_m log2(1 + eta_{l,m}) ]`.
pub fn capacity(table: &ModeTable, inputs: &CapacityInputs, snr_db: f64) -> Result<f64, AnalysisError> {
    inputs.validate(table.len())?;
    let noise_var = crate::channel::noise_var_from_snr_db(snr_db);
    let samples = inputs.channel.samples();
    if samples.is_empty() {
        return Err(AnalysisError::BadLength("channel samples"));
    }
    // Residual terms do not depend on h; precompute per pair.
    let report = sinr_report(table, LinkState::from_mag_sq(1.0, noise_var), SicPolicy::default());
    let mut total = 0.0;
    for &h_sq in &samples {
        let link = LinkState::from_mag_sq(h_sq, noise_var);
        let scaled = link.normalized_noise();
        let mut c = 0.0;
        for l in 1..table.len() {
            if inputs.priors[l] == 0.0 {
                continue;
            }
            let mut per_mode = 0.0;
            for m in 1..table.len() {
                let p = inputs.decision_probs[l][m] * inputs.near_probs[m];
                if p == 0.0 {
                    continue;
                }
                let eta = if l == m {
                    table.mode(l).power_near * h_sq / noise_var
                } else {
                    table.mode(m).power_near / (report.e_far[l][m] + report.e_near[l][m] + scaled)
                };
                per_mode += p * (1.0 + eta).log2();
            }
            c += inputs.priors[l] * per_mode;
        }
        total += c;
    }
    Ok(total / samples.len() as f64)
}

/// Outcome of the rotation-list grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSearch {
    pub grid: Vec<f64>,
    /// Measured capacity objective per grid point.
    pub capacities: Vec<f64>,
    pub best_index: usize,
}

impl ThetaSearch {
    pub fn best_theta(&self) -> f64 {
        self.grid[self.best_index]
    }

    pub fn best_capacity(&self) -> f64 {
        self.capacities[self.best_index]
    }
}

/// Grid search for the single-user rotation that maximizes the measured
/// near-terminal capacity; all NOMA rotations stay zero.
///
/// The square symmetry of the supported constellations makes rotations
/// beyond `[0, pi/2)` redundant. Every grid point reuses the same seed, so
/// the objective differences come from the rotation alone, and ties resolve
/// to the smallest angle.
pub fn optimize_theta(
    table: &ModeTable,
    snr_db: f64,
    step: f64,
    trials_per_point: u64,
    seed: u64,
) -> ThetaSearch {
    assert!(step > 0.0, "grid resolution must be positive");
    let mut grid = Vec::new();
    let mut theta = 0.0;
    while theta < std::f64::consts::FRAC_PI_2 {
        grid.push(theta);
        theta += step;
    }
    let mut capacities = Vec::with_capacity(grid.len());
    for &theta in &grid {
        let mut rotations = vec![0.0; table.len()];
        rotations[0] = theta;
        let rotated = table.with_rotations(&rotations).expect("rotation list matches the table");
        let measured = crate::sim::measure_capacity(
            &rotated,
            snr_db,
            trials_per_point,
            seed,
            crate::sim::DEFAULT_FRAME_SYMBOLS,
        );
        capacities.push(measured.mean());
    }
    let mut best_index = 0;
    for (i, &c) in capacities.iter().enumerate() {
        if c > capacities[best_index] {
            best_index = i;
        }
    }
    ThetaSearch { grid, capacities, best_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{case1, case2};
    use approx::assert_relative_eq;

    fn link(h_sq: f64, v: f64) -> LinkState {
        LinkState::from_mag_sq(h_sq, v)
    }

    #[test]
    fn correct_sinr_examples() {
        let table = case1();
        assert_relative_eq!(sinr_correct(&table, 1, link(1.0, 0.1)), 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            sinr_correct(&table, 1, link(2.0, 0.1)),
            2.0 * sinr_correct(&table, 1, link(1.0, 0.1)),
            epsilon = 1e-12
        );
        assert_eq!(sinr_correct(&table, 0, link(1.0, 0.1)), 0.0);
    }

    #[test]
    fn misclassified_sinr_frozen_values() {
        // True mode 2 decided as 1 at |h| = 1, v = 0.01:
        // E_far = (sqrt .8621 - sqrt .8)^2, E_near = (sqrt .1379 - sqrt .2)^2,
        // eta = 0.2 / (E_far + E_near + 0.01).
        let table = case1();
        let lk = link(1.0, 0.01);
        let (e_far, e_near) = interference_terms(&table, 2, 1, SicPolicy::default());
        assert_relative_eq!(e_far, 1.1605e-3, max_relative = 1e-3);
        assert_relative_eq!(e_near, 5.7554e-3, max_relative = 1e-3);
        let eta_21 = sinr_misclassified(&table, 2, 1, lk, SicPolicy::default());
        assert_relative_eq!(eta_21, 11.823, max_relative = 1e-3);
        let eta_22 = sinr_correct(&table, 2, lk);
        assert_relative_eq!(eta_22, 13.79, max_relative = 1e-12);
        assert!(eta_22 > eta_21);

        let eta_23 = sinr_misclassified(&table, 2, 3, lk, SicPolicy::default());
        assert_relative_eq!(eta_23, 4.7674, max_relative = 1e-3);
        assert!(eta_23 < eta_22);
    }

    #[test]
    fn same_mode_reduces_to_correct_sinr() {
        let table = case1();
        let lk = link(0.7, 0.05);
        for l in 1..table.len() {
            assert_eq!(interference_terms(&table, l, l, SicPolicy::default()), (0.0, 0.0));
            assert_relative_eq!(
                sinr_misclassified(&table, l, l, lk, SicPolicy::default()),
                sinr_correct(&table, l, lk),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mixed_orders_use_nearest_point_pairing() {
        // Case 2 modes 1 (QPSK far) and 2 (16-QAM far): index pairing is
        // impossible, so the residual is the nearest-point average.
        let table = case2();
        let (e_far, e_near) = interference_terms(&table, 1, 2, SicPolicy::default());
        let direct_far =
            nearest_point_energy(table.far_set(1).unwrap(), table.far_set(2).unwrap());
        assert_relative_eq!(e_far, direct_far, epsilon = 1e-15);
        assert!(e_far > 0.0);
        // Near orders match (both 16-QAM), so that side pairs by index.
        assert_relative_eq!(
            e_near,
            (0.1347f64.sqrt() - 0.05f64.sqrt()).powi(2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn condition_matches_sinr_comparison() {
        let table = case1();
        for &v in &[1.0, 0.1, 0.01, 0.001] {
            let lk = link(1.0, v);
            for l in 1..table.len() {
                for m in 1..table.len() {
                    let cond = sinr_condition(&table, l, m, lk, SicPolicy::default());
                    let direct = sinr(&table, l, l, lk) >= sinr(&table, l, m, lk);
                    assert_eq!(cond, direct, "l={l} m={m} v={v}");
                }
            }
        }
        // More near power in the true mode always satisfies it.
        let lk = link(1.0, 0.01);
        assert!(sinr_condition(&table, 1, 2, lk, SicPolicy::default()));
        assert!(sinr_condition(&table, 1, 3, lk, SicPolicy::default()));
    }

    #[test]
    fn involvement_of_single_user_mode_zeroes_sinr() {
        let table = case1();
        let lk = link(1.0, 0.01);
        assert_eq!(sinr(&table, 0, 2, lk), 0.0);
        assert_eq!(sinr(&table, 2, 0, lk), 0.0);
        assert!(sinr(&table, 2, 2, lk) > 0.0);
    }

    #[test]
    fn pairwise_error_vanishes_with_noise() {
        let table = case1();
        for exact in [true, false] {
            let p = mc_error_prob(&table, 1, 2, link(1.0, 1e-12), exact);
            assert!(p < 1e-30, "p = {p}");
        }
    }

    #[test]
    fn approx_error_never_exceeds_exact() {
        let table = case1();
        for snr_db in [0, 3, 6, 9, 12, 15, 18, 21, 24, 27] {
            let v = crate::channel::noise_var_from_snr_db(snr_db as f64);
            for l in 1..table.len() {
                for m in 1..table.len() {
                    if l == m {
                        continue;
                    }
                    let exact = mc_error_prob(&table, l, m, link(1.0, v), true);
                    let approx = mc_error_prob(&table, l, m, link(1.0, v), false);
                    assert!(approx <= exact + 1e-15, "l={l} m={m} snr={snr_db}");
                }
            }
        }
    }

    #[test]
    fn pairwise_error_frozen_high_snr_point() {
        // Modes 1 vs 2 at 20 dB, |h| = 1. Minimum distance 0.041796 with 4
        // attaining pairs out of 256; the exact sum keeps 12 more near-minimal
        // pairs, putting it just above three times the approximation.
        let table = case1();
        let lk = link(1.0, 0.01);
        let exact = mc_error_prob(&table, 1, 2, lk, true);
        let approx = mc_error_prob(&table, 1, 2, lk, false);
        assert_relative_eq!(exact, 1.8109e-2, max_relative = 2e-3);
        assert_relative_eq!(approx, 5.9970e-3, max_relative = 2e-3);
        assert_relative_eq!(exact / approx, 3.0197, max_relative = 2e-3);
    }

    #[test]
    fn capacity_perfect_single_mode_closed_form() {
        let modes = vec![
            crate::modes::ModulationMode {
                id: 0,
                far_order: 4,
                near_order: None,
                power_far: 1.0,
                power_near: 0.0,
                data_rotation: 0.0,
                pilot_rotation: 0.0,
            },
            crate::modes::ModulationMode {
                id: 1,
                far_order: 4,
                near_order: Some(4),
                power_far: 0.8,
                power_near: 0.2,
                data_rotation: 0.0,
                pilot_rotation: 1.0,
            },
        ];
        let table = crate::modes::ModeTable::new(modes).unwrap();
        let inputs = CapacityInputs::perfect(2, ChannelAverage::Samples(vec![1.0]));
        // v = 0.1 at 10 dB: C = log2(1 + 0.2 / 0.1).
        let c = capacity(&table, &inputs, 10.0).unwrap();
        assert_relative_eq!(c, 3.0f64.log2(), epsilon = 1e-12);

        let mut zero_q = inputs;
        zero_q.near_probs = vec![0.0; 2];
        assert_eq!(capacity(&table, &zero_q, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn capacity_rejects_bad_inputs() {
        let table = case1();
        let mut inputs = CapacityInputs::perfect(table.len(), ChannelAverage::Samples(vec![1.0]));
        inputs.decision_probs[1][1] = 0.5;
        assert!(matches!(capacity(&table, &inputs, 10.0), Err(AnalysisError::NotStochastic(1, _))));

        let mut inputs = CapacityInputs::perfect(table.len(), ChannelAverage::Samples(vec![1.0]));
        inputs.priors = vec![0.25; 3];
        assert!(matches!(capacity(&table, &inputs, 10.0), Err(AnalysisError::BadLength(_))));

        let mut inputs = CapacityInputs::perfect(table.len(), ChannelAverage::Samples(vec![1.0]));
        inputs.near_probs[2] = 1.5;
        assert!(matches!(capacity(&table, &inputs, 10.0), Err(AnalysisError::BadProbability(_))));
    }

    #[test]
    fn capacity_draws_are_reproducible() {
        let table = case1();
        let inputs = CapacityInputs::perfect(
            table.len(),
            ChannelAverage::Draws { count: 2000, seed: 42 },
        );
        let a = capacity(&table, &inputs, 10.0).unwrap();
        let b = capacity(&table, &inputs, 10.0).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn theta_grid_search_returns_a_grid_maximum() {
        let table = case1();
        let search = optimize_theta(&table, 13.0, 0.5, 300, 7);
        assert_eq!(search.grid, vec![0.0, 0.5, 1.0, 1.5]);
        for &c in &search.capacities {
            assert!(search.best_capacity() >= c);
        }
        assert_eq!(
            search.grid.iter().position(|&t| t == search.best_theta()).unwrap(),
            search.best_index
        );
    }
}
