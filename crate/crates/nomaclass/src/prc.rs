//! Pilot-rotation classification.
//!
//! Each mode rotates the second pilot of the pilot pair by a mode-specific
//! angle. The receiver estimates that angle from the two pilot observations
//! and maps it to a mode through a phase plan: a partition of the circle
//! into a single-user region and per-mode decision regions. Data symbols are
//! never touched, so classification cost is independent of constellation
//! sizes.
//!
//! Two plans are provided. The uniform plan spreads all `L + 1` rotations
//! evenly and decides by nearest rotation. The grouped plan first splits the
//! circle evenly between the single-user region and one region per far-order
//! group (so a phase error across group borders is needed to confuse far
//! orders), then spreads the group's rotations from the lower edge of its
//! region.
//!
//! The near/far role, which pilot rotations cannot carry, is resolved from
//! the pilot amplitudes: the plain pilot is compared against the two
//! role-conditioned residuals described at [`classify_near_far`].

use thiserror::Error;

use crate::channel::{RxFrame, UserRole, PILOT};
use crate::mlc::{Decision, Hypothesis};
use crate::modes::ModeTable;
use crate::stats::{circular_distance, wrap_angle};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("need one arc per far-order group ({expected} groups, {got} arcs)")]
    ArcCount { expected: usize, got: usize },
    #[error("arcs must be pairwise disjoint")]
    Overlap,
    #[error("the single-user rotation 0 must lie in the single-user arc")]
    OmaArcExcludesZero,
}

/// Half-open arc `[start, start + width)` on the circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    start: f64,
    width: f64,
}

impl Arc {
    /// `width` must be in `(0, 2*pi]`; `start` is wrapped.
    pub fn new(start: f64, width: f64) -> Arc {
        assert!(width > 0.0 && width <= std::f64::consts::TAU, "arc width out of range");
        Arc { start: wrap_angle(start), width }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn contains(&self, angle: f64) -> bool {
        wrap_angle(angle - self.start) < self.width
    }

    fn overlaps(&self, other: &Arc) -> bool {
        self.contains(other.start) || other.contains(self.start)
    }
}

/// A run of modes deciding among themselves inside one arc.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderRegion {
    pub modes: std::ops::Range<usize>,
    pub arc: Arc,
}

/// Verdict of the phase stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseDecision {
    Oma,
    Mode(usize),
}

/// Pilot rotations per mode plus the decision regions that invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    rotations: Vec<f64>,
    oma_arcs: Vec<Arc>,
    regions: Vec<OrderRegion>,
}

impl PhasePlan {
    /// Evenly spaced rotations `2*pi*l / (L+1)` with nearest-rotation
    /// regions; the single-user region is the half-cell on either side of 0.
    pub fn uniform(table: &ModeTable) -> PhasePlan {
        let n = table.len();
        let tau = std::f64::consts::TAU;
        let half = std::f64::consts::PI / n as f64;
        let rotations: Vec<f64> = (0..n).map(|l| tau * l as f64 / n as f64).collect();
        let oma_arcs = vec![Arc::new(tau - half, half), Arc::new(0.0, half)];
        let regions = (1..n)
            .map(|l| OrderRegion { modes: l..l + 1, arc: Arc::new(rotations[l] - half, 2.0 * half) })
            .collect();
        PhasePlan { rotations, oma_arcs, regions }
    }

    /// Grouped plan with default arcs: the circle is split evenly between
    /// the single-user region (centered on 0) and one region per far-order
    /// group, laid out consecutively.
    pub fn grouped(table: &ModeTable) -> PhasePlan {
        let share = std::f64::consts::TAU / (table.groups().len() + 1) as f64;
        let half = share / 2.0;
        let arcs: Vec<Arc> = (0..table.groups().len())
            .map(|i| Arc::new(half + i as f64 * share, share))
            .collect();
        Self::grouped_with(table, half, &arcs).expect("default grouped arcs are valid")
    }

    /// Grouped plan with a custom layout: the single-user arc is the
    /// `oma_half_width` neighborhood of 0, and `arcs[i]` is the region of the
    /// i-th far-order group. Rotations inside a group run from the arc's
    /// lower edge with spacing `width / group size`.
    pub fn grouped_with(table: &ModeTable, oma_half_width: f64, arcs: &[Arc]) -> Result<PhasePlan, PlanError> {
        let groups = table.groups();
        if arcs.len() != groups.len() {
            return Err(PlanError::ArcCount { expected: groups.len(), got: arcs.len() });
        }
        assert!(
            oma_half_width > 0.0 && oma_half_width <= std::f64::consts::PI,
            "single-user half width out of range"
        );
        let tau = std::f64::consts::TAU;
        let oma_arcs = vec![Arc::new(tau - oma_half_width, oma_half_width), Arc::new(0.0, oma_half_width)];
        for (i, a) in arcs.iter().enumerate() {
            for oma in &oma_arcs {
                if a.overlaps(oma) {
                    return Err(PlanError::Overlap);
                }
            }
            for b in &arcs[i + 1..] {
                if a.overlaps(b) {
                    return Err(PlanError::Overlap);
                }
            }
        }
        let mut rotations = vec![0.0; table.len()];
        let mut regions = Vec::with_capacity(groups.len());
        for (group, arc) in groups.iter().zip(arcs) {
            let step = arc.width() / group.modes.len() as f64;
            for (j, mode) in group.modes.clone().enumerate() {
                rotations[mode] = wrap_angle(arc.start() + j as f64 * step);
            }
            regions.push(OrderRegion { modes: group.modes.clone(), arc: *arc });
        }
        Ok(PhasePlan { rotations, oma_arcs, regions })
    }

    /// Pilot rotation per mode (index 0 is always 0).
    pub fn rotations(&self) -> &[f64] {
        &self.rotations
    }

    pub fn regions(&self) -> &[OrderRegion] {
        &self.regions
    }

    /// The table this plan was built for, re-keyed to the plan's rotations.
    pub fn apply(&self, table: &ModeTable) -> ModeTable {
        table
            .with_pilot_rotations(&self.rotations)
            .expect("plan rotations match the table length and are distinct")
    }

    /// Maps an estimated rotation to the mode whose region contains it.
    /// Inside a region the nearest member rotation wins, ties toward the
    /// lower mode id. An estimate outside every arc (possible only with
    /// custom arcs that leave gaps) falls back to the nearest rotation
    /// overall.
    pub fn classify_phase(&self, phi: f64) -> PhaseDecision {
        let phi = wrap_angle(phi);
        if self.oma_arcs.iter().any(|a| a.contains(phi)) {
            return PhaseDecision::Oma;
        }
        for region in &self.regions {
            if region.arc.contains(phi) {
                let best = region
                    .modes
                    .clone()
                    .min_by(|&a, &b| {
                        circular_distance(phi, self.rotations[a])
                            .partial_cmp(&circular_distance(phi, self.rotations[b]))
                            .expect("distances are finite")
                    })
                    .expect("regions are non-empty");
                return PhaseDecision::Mode(best);
            }
        }
        let best = (0..self.rotations.len())
            .min_by(|&a, &b| {
                circular_distance(phi, self.rotations[a])
                    .partial_cmp(&circular_distance(phi, self.rotations[b]))
                    .expect("distances are finite")
            })
            .expect("plans are non-empty");
        if best == 0 {
            PhaseDecision::Oma
        } else {
            PhaseDecision::Mode(best)
        }
    }
}

/// Estimated pilot rotation: the phase advance from the plain to the rotated
/// pilot observation, in `[0, 2*pi)`.
pub fn phase_estimate(rx: &RxFrame) -> f64 {
    wrap_angle((rx.pilot_plain.conj() * rx.pilot_rotated).arg())
}

/// Role decision from the plain pilot of a frame already classified as NOMA
/// mode `mode`.
///
/// Two residuals are formed against the known channel and pilot value. For
/// the far hypothesis the frame would hold only the far component, so the
/// remainder after removing it is compared against the near-composite
/// contributions `sqrt(P_n) * q` over the composite set. For the near
/// hypothesis the frame holds the full superposition, so removing the near
/// part must leave exactly the known far pilot. The smaller residual wins;
/// a tie counts as near, which is the hypothesis that explains the pilot
/// with zero residual when noiseless.
pub fn classify_near_far(rx: &RxFrame, table: &ModeTable, mode: usize) -> UserRole {
    let spec = table.mode(mode);
    debug_assert!(!spec.is_oma(), "role decisions need a NOMA mode");
    let amp_f = spec.power_far.sqrt();
    let amp_n = spec.power_near.sqrt();
    let y = rx.pilot_plain;
    let a_f = y - rx.h * amp_f * PILOT;
    let a_n = y - rx.h * amp_n * PILOT;
    let delta_f = table
        .constellation(mode)
        .points()
        .iter()
        .map(|q| (a_f - rx.h * amp_n * q).norm_sqr())
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    let delta_n = (a_n - rx.h * amp_f * PILOT).norm();
    if delta_f >= delta_n {
        UserRole::Near
    } else {
        UserRole::Far
    }
}

/// Full pilot-based classification of one frame: phase stage, then the role,
/// inferred from the receiver's own order when the decided mode's orders
/// differ and decided from the plain pilot otherwise.
pub fn classify(rx: &RxFrame, table: &ModeTable, plan: &PhasePlan, own_order: Option<u32>) -> Decision {
    match plan.classify_phase(phase_estimate(rx)) {
        PhaseDecision::Oma => Decision { hypothesis: Hypothesis::Oma, role_inferred: false },
        PhaseDecision::Mode(mode) => {
            let spec = table.mode(mode);
            let near_order = spec.near_order.expect("phase regions only contain NOMA modes");
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
            let hypothesis = match classify_near_far(rx, table, mode) {
                UserRole::Near => Hypothesis::NearMode(mode),
                UserRole::Far => Hypothesis::FarMode(mode),
            };
            Decision { hypothesis, role_inferred: false }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{receive, synthesize, FrameDraw, UserRole};
    use crate::modes::{case1, case2, case3};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn uniform_plan_case1_regions() {
        let table = case1();
        let plan = PhasePlan::uniform(&table);
        assert_eq!(plan.rotations(), &[0.0, PI / 2.0, PI, 3.0 * PI / 2.0]);
        // Half-cell width is pi/4.
        assert_eq!(plan.classify_phase(0.0), PhaseDecision::Oma);
        assert_eq!(plan.classify_phase(0.999 * PI / 4.0), PhaseDecision::Oma);
        assert_eq!(plan.classify_phase(PI / 4.0), PhaseDecision::Mode(1));
        assert_eq!(plan.classify_phase(PI / 2.0), PhaseDecision::Mode(1));
        assert_eq!(plan.classify_phase(3.0 * PI / 4.0), PhaseDecision::Mode(2));
        assert_eq!(plan.classify_phase(PI), PhaseDecision::Mode(2));
        assert_eq!(plan.classify_phase(7.0 * PI / 4.0), PhaseDecision::Oma);
        assert_eq!(plan.classify_phase(7.0 * PI / 4.0 - 1e-9), PhaseDecision::Mode(3));
        // Wrapping input.
        assert_eq!(plan.classify_phase(-0.1), PhaseDecision::Oma);
    }

    #[test]
    fn grouped_plan_case3_defaults() {
        let table = case3();
        let plan = PhasePlan::grouped(&table);
        let expect = [0.0, PI / 3.0, PI / 3.0 + 2.0 * PI / 9.0, PI / 3.0 + 4.0 * PI / 9.0, PI, 4.0 * PI / 3.0];
        for (got, want) in plan.rotations().iter().zip(expect) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(plan.regions().len(), 2);
        assert_eq!(plan.regions()[0].modes, 1..4);
        assert_relative_eq!(plan.regions()[0].arc.start(), PI / 3.0, epsilon = 1e-12);
        assert_relative_eq!(plan.regions()[0].arc.width(), 2.0 * PI / 3.0, epsilon = 1e-12);
        assert_eq!(plan.regions()[1].modes, 4..6);
        assert_relative_eq!(plan.regions()[1].arc.start(), PI, epsilon = 1e-12);

        // Nearest rotation within the containing region.
        assert_eq!(plan.classify_phase(0.9 * PI), PhaseDecision::Mode(3));
        assert_eq!(plan.classify_phase(PI / 3.0 + 0.05), PhaseDecision::Mode(1));
        assert_eq!(plan.classify_phase(PI), PhaseDecision::Mode(4));
        assert_eq!(plan.classify_phase(1.5 * PI), PhaseDecision::Mode(5));
        assert_eq!(plan.classify_phase(11.0 * PI / 6.0), PhaseDecision::Oma);
        assert_eq!(plan.classify_phase(0.2), PhaseDecision::Oma);
    }

    #[test]
    fn grouped_with_rejects_bad_layouts() {
        let table = case3();
        assert_eq!(
            PhasePlan::grouped_with(&table, 0.5, &[Arc::new(1.0, 1.0)]).unwrap_err(),
            PlanError::ArcCount { expected: 2, got: 1 }
        );
        assert_eq!(
            PhasePlan::grouped_with(&table, 0.5, &[Arc::new(1.0, 2.0), Arc::new(2.5, 1.0)]).unwrap_err(),
            PlanError::Overlap
        );
        assert_eq!(
            PhasePlan::grouped_with(&table, 1.2, &[Arc::new(1.0, 1.0), Arc::new(3.0, 1.0)]).unwrap_err(),
            PlanError::Overlap
        );
    }

    #[test]
    fn custom_arcs_leave_gaps_handled_by_nearest_rotation() {
        let table = case2();
        let plan =
            PhasePlan::grouped_with(&table, 0.3, &[Arc::new(1.0, 0.5), Arc::new(3.0, 0.5)]).unwrap();
        // 2.0 lies between the two arcs; rotation 1.0 (mode 1) is nearest.
        assert_eq!(plan.classify_phase(2.0), PhaseDecision::Mode(1));
        // 6.0 is outside the single-user arc but nearest to rotation 0.
        assert_eq!(plan.classify_phase(6.0), PhaseDecision::Oma);
    }

    fn rx_for(table: &ModeTable, mode: usize, role: UserRole, seed: u64, noise_var: f64) -> RxFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = FrameDraw::sample(&mut rng, table, 4, mode, role);
        let tx = synthesize(table, &draw);
        let mut rx = receive(&tx, &draw, noise_var);
        if noise_var == 0.0 {
            // Noiseless probe: rebuild without the noise terms.
            rx = RxFrame {
                data: tx.data.iter().map(|s| draw.h * s).collect(),
                pilot_plain: draw.h * tx.pilot_plain,
                pilot_rotated: draw.h * tx.pilot_rotated,
                h: draw.h,
                noise_var: 1e-9,
            };
        }
        rx
    }

    #[test]
    fn noiseless_phase_estimates_are_exact() {
        for (table, plan) in [
            (case1(), PhasePlan::uniform(&case1())),
            (case3(), PhasePlan::grouped(&case3())),
        ] {
            let keyed = plan.apply(&table);
            for mode in 0..keyed.len() {
                let rx = rx_for(&keyed, mode, UserRole::Near, 40 + mode as u64, 0.0);
                let est = phase_estimate(&rx);
                assert_relative_eq!(
                    circular_distance(est, plan.rotations()[mode]),
                    0.0,
                    epsilon = 1e-9
                );
                let expect = if mode == 0 { PhaseDecision::Oma } else { PhaseDecision::Mode(mode) };
                assert_eq!(plan.classify_phase(est), expect, "mode {mode}");
            }
        }
    }

    #[test]
    fn noiseless_pilot_role_rule() {
        let cases: [(crate::modes::ModeTable, usize); 4] =
            [(case1(), 1), (case1(), 3), (case2(), 2), (case3(), 5)];
        for (table, mode) in cases {
            let near = rx_for(&table, mode, UserRole::Near, 7, 0.0);
            assert_eq!(classify_near_far(&near, &table, mode), UserRole::Near);
            let far = rx_for(&table, mode, UserRole::Far, 8, 0.0);
            assert_eq!(classify_near_far(&far, &table, mode), UserRole::Far);
        }
    }

    #[test]
    fn full_classify_uses_order_when_possible() {
        let table = case2();
        let plan = PhasePlan::uniform(&table);
        let keyed = plan.apply(&table);
        let rx = rx_for(&keyed, 1, UserRole::Far, 9, 0.0);
        let d = classify(&rx, &keyed, &plan, Some(4));
        assert_eq!(d.hypothesis, Hypothesis::FarMode(1));
        assert!(d.role_inferred);
        let rx = rx_for(&keyed, 1, UserRole::Near, 10, 0.0);
        let d = classify(&rx, &keyed, &plan, Some(16));
        assert_eq!(d.hypothesis, Hypothesis::NearMode(1));
        assert!(d.role_inferred);
        // 16/16 mode: the order is ambiguous, the pilot rule decides.
        let rx = rx_for(&keyed, 2, UserRole::Far, 11, 0.0);
        let d = classify(&rx, &keyed, &plan, Some(16));
        assert_eq!(d.hypothesis, Hypothesis::FarMode(2));
        assert!(!d.role_inferred);
    }

    proptest! {
        #[test]
        fn uniform_plan_inverts_its_own_rotations(num_noma in 1usize..8) {
            let modes: Vec<_> = (0..=num_noma)
                .map(|id| crate::modes::ModulationMode {
                    id,
                    far_order: 4,
                    near_order: if id == 0 { None } else { Some(4) },
                    power_far: if id == 0 { 1.0 } else { 0.6 + 0.3 * id as f64 / num_noma as f64 },
                    power_near: if id == 0 { 0.0 } else { 1.0 - (0.6 + 0.3 * id as f64 / num_noma as f64) },
                    data_rotation: 0.0,
                    pilot_rotation: id as f64,
                })
                .collect();
            let table = crate::modes::ModeTable::new(modes).unwrap();
            let plan = PhasePlan::uniform(&table);
            for (l, &phi) in plan.rotations().iter().enumerate() {
                let expect = if l == 0 { PhaseDecision::Oma } else { PhaseDecision::Mode(l) };
                prop_assert_eq!(plan.classify_phase(phi), expect);
            }
        }

        #[test]
        fn arc_membership_matches_interval_arithmetic(start in 0.0..6.28f64, width in 0.01..3.0f64, x in 0.0..6.28f64) {
            let arc = Arc::new(start, width);
            let inside = wrap_angle(x - start) < width;
            prop_assert_eq!(arc.contains(x), inside);
        }
    }
}
