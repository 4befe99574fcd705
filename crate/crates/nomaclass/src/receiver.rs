//! Symbol detection, interference cancellation, and frame demodulation.
//!
//! Demodulation follows the classifier's verdict: a single-user or far
//! verdict detects directly on the corresponding set, a near verdict first
//! cancels the decided far component per symbol and then detects the near
//! component on the residual. Detected bit labels are compared against the
//! transmitted ones; a verdict whose alphabet size differs from the truth
//! cannot carry the user's bits at all and scores every symbol as errored.

use num_complex::Complex64;

use crate::channel::{FrameDraw, RxFrame, UserRole};
use crate::mlc::Hypothesis;
use crate::modes::{ConstellationSet, ModeTable};

/// Nearest-point decision for one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectedSymbol {
    pub index: usize,
    pub label: u32,
}

/// Minimum-distance detection of `y` against `h * s` over the set. Ties keep
/// the lowest point index.
pub fn detect(y: Complex64, h: Complex64, set: &ConstellationSet) -> DetectedSymbol {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, s) in set.points().iter().enumerate() {
        let d = (y - h * s).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    DetectedSymbol { index: best, label: set.labels()[best] }
}

/// Result of cancelling the decided far component from one symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicOutcome {
    pub far: DetectedSymbol,
    /// `y - h * far_point`, the near component plus noise if the far
    /// decision was right.
    pub residual: Complex64,
}

/// Detects the far component on `far_set` and removes it.
pub fn sic_cancel(y: Complex64, h: Complex64, far_set: &ConstellationSet) -> SicOutcome {
    let far = detect(y, h, far_set);
    SicOutcome { far, residual: y - h * far_set.points()[far.index] }
}

/// Labels recovered from one frame under a classification verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemodFrame {
    pub labels: Vec<u32>,
    /// Size of the alphabet the labels are drawn from.
    pub alphabet: usize,
    pub used_sic: bool,
}

/// Demodulates a frame as the decided hypothesis prescribes.
pub fn demodulate(rx: &RxFrame, table: &ModeTable, hypothesis: Hypothesis) -> DemodFrame {
    match hypothesis {
        Hypothesis::Oma => {
            let set = table.data_set(0);
            let labels = rx.data.iter().map(|&y| detect(y, rx.h, set).label).collect();
            DemodFrame { labels, alphabet: set.len(), used_sic: false }
        }
        Hypothesis::FarMode(l) => {
            let set = table.far_set(l).expect("far verdicts carry NOMA modes");
            let labels = rx.data.iter().map(|&y| detect(y, rx.h, set).label).collect();
            DemodFrame { labels, alphabet: set.len(), used_sic: false }
        }
        Hypothesis::NearMode(l) => {
            let far_set = table.far_set(l).expect("near verdicts carry NOMA modes");
            let near_set = table.near_set(l).expect("near verdicts carry NOMA modes");
            let labels = rx
                .data
                .iter()
                .map(|&y| {
                    let sic = sic_cancel(y, rx.h, far_set);
                    detect(sic.residual, rx.h, near_set).label
                })
                .collect();
            DemodFrame { labels, alphabet: near_set.len(), used_sic: true }
        }
    }
}

/// The bit labels the user under test actually has to recover, with their
/// alphabet size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthLabels {
    pub labels: Vec<u32>,
    pub alphabet: usize,
}

/// Ground-truth labels of a draw. Base constellations carry label == index,
/// so symbol indices are the labels directly.
pub fn truth_labels(table: &ModeTable, draw: &FrameDraw) -> TruthLabels {
    let spec = table.mode(draw.mode);
    if spec.is_oma() {
        TruthLabels {
            labels: draw.far_symbols.iter().map(|&i| i as u32).collect(),
            alphabet: spec.far_order as usize,
        }
    } else {
        match draw.role {
            UserRole::Near => TruthLabels {
                labels: draw.near_symbols.iter().map(|&i| i as u32).collect(),
                alphabet: spec.near_order.expect("NOMA mode") as usize,
            },
            UserRole::Far => TruthLabels {
                labels: draw.far_symbols.iter().map(|&i| i as u32).collect(),
                alphabet: spec.far_order as usize,
            },
        }
    }
}

/// Number of errored symbols. A demodulated alphabet that differs from the
/// truth alphabet errs on every symbol.
pub fn symbol_errors(truth: &TruthLabels, demod: &DemodFrame) -> usize {
    debug_assert_eq!(truth.labels.len(), demod.labels.len());
    if truth.alphabet != demod.alphabet {
        return truth.labels.len();
    }
    truth.labels.iter().zip(&demod.labels).filter(|(a, b)| a != b).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize, FrameDraw, UserRole};
    use crate::modes::{case1, case2, case3, ModeTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: Complex64 = Complex64::new(0.9, 0.4);

    #[test]
    fn detect_picks_nearest_and_breaks_ties_low() {
        let table = case1();
        let set = table.data_set(0);
        let d = detect(H * set.points()[2] * 1.01, H, set);
        assert_eq!(d.index, 2);
        assert_eq!(d.label, 2);
        // The origin is equidistant from all QPSK points.
        let d = detect(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0), set);
        assert_eq!(d.index, 0);
    }

    #[test]
    fn sic_recovers_both_layers_on_clean_symbols() {
        for (table, mode) in [(case1(), 1), (case2(), 1), (case3(), 1), (case3(), 4)] {
            let far_set = table.far_set(mode).unwrap();
            let near_set = table.near_set(mode).unwrap();
            let composite = table.data_set(mode);
            let near_order = near_set.len();
            for (idx, point) in composite.points().iter().enumerate() {
                let y = H * point;
                let sic = sic_cancel(y, H, far_set);
                assert_eq!(sic.far.index, idx / near_order, "far layer, mode {mode}");
                let near = detect(sic.residual, H, near_set);
                assert_eq!(near.index, idx % near_order, "near layer, mode {mode}");
            }
        }
    }

    fn draw_for(table: &ModeTable, mode: usize, role: UserRole, seed: u64) -> (FrameDraw, RxFrame) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = FrameDraw::sample(&mut rng, table, 6, mode, role);
        let tx = synthesize(table, &draw);
        let rx = RxFrame {
            data: tx.data.iter().map(|s| draw.h * s).collect(),
            pilot_plain: draw.h * tx.pilot_plain,
            pilot_rotated: draw.h * tx.pilot_rotated,
            h: draw.h,
            noise_var: 1e-9,
        };
        (draw, rx)
    }

    #[test]
    fn correct_verdicts_demodulate_cleanly() {
        let table = case2();
        let (draw, rx) = draw_for(&table, 1, UserRole::Near, 3);
        let demod = demodulate(&rx, &table, Hypothesis::NearMode(1));
        assert!(demod.used_sic);
        let truth = truth_labels(&table, &draw);
        assert_eq!(symbol_errors(&truth, &demod), 0);
        assert_eq!(truth.alphabet, 16);

        let (draw, rx) = draw_for(&table, 1, UserRole::Far, 4);
        let demod = demodulate(&rx, &table, Hypothesis::FarMode(1));
        assert!(!demod.used_sic);
        let truth = truth_labels(&table, &draw);
        assert_eq!(truth.alphabet, 4);
        assert_eq!(symbol_errors(&truth, &demod), 0);

        let (draw, rx) = draw_for(&table, 0, UserRole::Near, 5);
        let demod = demodulate(&rx, &table, Hypothesis::Oma);
        let truth = truth_labels(&table, &draw);
        assert_eq!(symbol_errors(&truth, &demod), 0);
    }

    #[test]
    fn alphabet_mismatch_scores_every_symbol() {
        let table = case2();
        let (draw, rx) = draw_for(&table, 1, UserRole::Near, 6);
        // Truth is the 16-QAM near layer; an OMA verdict demodulates 16
        // labels of the wrong alphabet semantics here (same size), while a
        // far verdict yields a 4-point alphabet and must score all errors.
        let truth = truth_labels(&table, &draw);
        let far_view = demodulate(&rx, &table, Hypothesis::FarMode(1));
        assert_eq!(symbol_errors(&truth, &far_view), truth.labels.len());
    }

    #[test]
    fn wrong_mode_same_alphabet_compares_labels() {
        let table = case1();
        let (draw, rx) = draw_for(&table, 1, UserRole::Near, 7);
        let truth = truth_labels(&table, &draw);
        // Mode 2's sets are close to mode 1's; clean symbols still decode.
        let demod = demodulate(&rx, &table, Hypothesis::NearMode(2));
        assert_eq!(demod.alphabet, truth.alphabet);
        assert_eq!(symbol_errors(&truth, &demod), 0);
    }
}
