//! Modulation modes and their constellations.
//!
//! A downlink frame is sent either with a single-user (OMA) constellation at
//! full power, or as a two-user power-domain NOMA superposition: the far user
//! terminal gets the larger power share `P_f`, the near one gets `P_n`, and
//! the composite constellation is `sqrt(P_f)*a + sqrt(P_n)*b` over all pairs
//! `(a, b)` of base constellation points. A [`ModeTable`] is the finite list
//! of candidate modes a receiver must tell apart blindly.
//!
//! Base constellations are Gray-labeled square QAM with unit average power.
//! Composite labels concatenate the far bits (MSBs) with the near bits
//! (LSBs), so a composite point's label encodes both users' symbols.

use num_complex::Complex64;
use thiserror::Error;

/// Tolerance on `P_f + P_n = 1` for NOMA modes.
pub const POWER_SUM_TOL: f64 = 1e-9;

/// Relative tolerance used when counting minimum-distance pairs.
pub const DIST_REL_TOL: f64 = 1e-9;

/// Errors from constellation and mode-table construction.
#[derive(Debug, Error, PartialEq)]
pub enum ModeError {
    #[error("unsupported modulation order {0}; expected 4, 16, or 64")]
    UnsupportedOrder(u32),
    #[error("mode {0} is single-user and has no composite constellation")]
    NoComposite(usize),
    #[error("mode {0}: {1}")]
    InvalidMode(usize, String),
    #[error("mode table: {0}")]
    InvalidTable(String),
    #[error("min_distance requires non-empty sets")]
    EmptySet,
}

/// One entry of a [`ModeTable`].
///
/// Mode 0 is always the single-user (OMA) mode: full power on `far_order`,
/// no near user. Modes 1.. are NOMA modes with a far/near power split.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationMode {
    /// Position in the table; 0 is the OMA mode.
    pub id: usize,
    /// Far-user modulation order (the single user's order for mode 0).
    pub far_order: u32,
    /// Near-user modulation order; `None` for the OMA mode.
    pub near_order: Option<u32>,
    /// Far-user power share `P_f` (1.0 for the OMA mode).
    pub power_far: f64,
    /// Near-user power share `P_n` (0.0 for the OMA mode).
    pub power_near: f64,
    /// Data-path rotation in radians applied to this mode's constellation.
    pub data_rotation: f64,
    /// Pilot-path rotation in radians distinguishing this mode on pilots.
    pub pilot_rotation: f64,
}

impl ModulationMode {
    /// True for the single-user mode (id 0).
    pub fn is_oma(&self) -> bool {
        self.id == 0
    }

    fn validate(&self) -> Result<(), ModeError> {
        let err = |msg: String| Err(ModeError::InvalidMode(self.id, msg));
        bits_per_symbol(self.far_order)?;
        if self.is_oma() {
            if self.near_order.is_some() {
                return err("OMA mode must not carry a near-user order".into());
            }
            if self.power_far != 1.0 || self.power_near != 0.0 {
                return err("OMA mode must use the full power (P_f = 1, P_n = 0)".into());
            }
        } else {
            let near = self
                .near_order
                .ok_or_else(|| ModeError::InvalidMode(self.id, "NOMA mode needs a near-user order".into()))?;
            bits_per_symbol(near)?;
            if !(self.power_far > self.power_near) || self.power_near < 0.0 {
                return err(format!(
                    "power split must satisfy P_f > P_n >= 0 (got P_f = {}, P_n = {})",
                    self.power_far, self.power_near
                ));
            }
            if (self.power_far + self.power_near - 1.0).abs() > POWER_SUM_TOL {
                return err(format!(
                    "power split must satisfy P_f + P_n = 1 (got {})",
                    self.power_far + self.power_near
                ));
            }
        }
        Ok(())
    }
}

/// Number of bits carried by one symbol of a supported QAM order.
pub fn bits_per_symbol(order: u32) -> Result<u32, ModeError> {
    match order {
        4 => Ok(2),
        16 => Ok(4),
        64 => Ok(6),
        other => Err(ModeError::UnsupportedOrder(other)),
    }
}

/// A finite complex constellation with bit labels and its average power.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSet {
    points: Vec<Complex64>,
    labels: Vec<u32>,
    avg_power: f64,
}

impl ConstellationSet {
    fn new(points: Vec<Complex64>, labels: Vec<u32>) -> Self {
        debug_assert_eq!(points.len(), labels.len());
        let avg_power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        Self { points, labels, avg_power }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean of `|s|^2` over the set, fixed at construction.
    pub fn avg_power(&self) -> f64 {
        self.avg_power
    }

    /// The set scaled to average power `self.avg_power * power`.
    pub fn scaled(&self, power: f64) -> Self {
        let amp = power.sqrt();
        Self {
            points: self.points.iter().map(|p| p * amp).collect(),
            labels: self.labels.clone(),
            avg_power: self.avg_power * power,
        }
    }

    /// The set rotated by `theta` radians. Labels and average power are
    /// unchanged; rotation is an isometry.
    pub fn rotated(&self, theta: f64) -> Self {
        let rot = Complex64::from_polar(1.0, theta);
        Self {
            points: self.points.iter().map(|p| p * rot).collect(),
            labels: self.labels.clone(),
            avg_power: self.avg_power,
        }
    }

    /// Gray-labeled square QAM of the given order with unit average power.
    ///
    /// Point `k` carries label `k`; the label's upper half indexes the I axis
    /// and the lower half the Q axis, each Gray-coded along the axis.
    pub fn base(order: u32) -> Result<Self, ModeError> {
        let bits = bits_per_symbol(order)?;
        let pam_bits = bits / 2;
        let n_pam = 1usize << pam_bits;
        // Unit average power: E|s|^2 = 2 * mean of pam^2 = 1.
        let norm = match order {
            4 => 2.0f64,
            16 => 10.0,
            64 => 42.0,
            _ => unreachable!(),
        }
        .sqrt();
        // axis[label] = amplitude; Gray code makes axis-adjacent labels differ
        // in exactly one bit.
        let mut axis = vec![0.0f64; n_pam];
        for i in 0..n_pam {
            let gray = i ^ (i >> 1);
            axis[gray] = (2 * i as i32 - (n_pam as i32 - 1)) as f64 / norm;
        }
        let mut points = Vec::with_capacity(order as usize);
        let mut labels = Vec::with_capacity(order as usize);
        for label in 0..order {
            let i_part = axis[(label >> pam_bits) as usize];
            let q_part = axis[(label & (n_pam as u32 - 1)) as usize];
            points.push(Complex64::new(i_part, q_part));
            labels.push(label);
        }
        Ok(Self::new(points, labels))
    }

    /// Composite two-user constellation of a NOMA mode:
    /// `sqrt(P_f)*a + sqrt(P_n)*b` over all far/near point pairs, labeled
    /// far-bits-high, near-bits-low.
    pub fn composite(mode: &ModulationMode) -> Result<Self, ModeError> {
        if mode.is_oma() {
            return Err(ModeError::NoComposite(mode.id));
        }
        mode.validate()?;
        let far = Self::base(mode.far_order)?;
        let near = Self::base(mode.near_order.expect("validated above"))?;
        let near_bits = bits_per_symbol(near.len() as u32)?;
        let amp_f = mode.power_far.sqrt();
        let amp_n = mode.power_near.sqrt();
        let mut points = Vec::with_capacity(far.len() * near.len());
        let mut labels = Vec::with_capacity(far.len() * near.len());
        for (fa, fl) in far.points.iter().zip(&far.labels) {
            for (na, nl) in near.points.iter().zip(&near.labels) {
                points.push(amp_f * fa + amp_n * na);
                labels.push((fl << near_bits) | nl);
            }
        }
        Ok(Self::new(points, labels))
    }
}

/// Minimum distance between two sets and the number of pairs attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinDistance {
    pub d_min: f64,
    /// Pairs within relative tolerance [`DIST_REL_TOL`] of `d_min`.
    pub pairs: usize,
}

/// Exhaustive minimum distance `min |a - b|` over `a` in `a_set`, `b` in
/// `b_set`, with the count of attaining pairs.
pub fn min_distance(a_set: &ConstellationSet, b_set: &ConstellationSet) -> Result<MinDistance, ModeError> {
    if a_set.is_empty() || b_set.is_empty() {
        return Err(ModeError::EmptySet);
    }
    let mut d_min = f64::INFINITY;
    for a in a_set.points() {
        for b in b_set.points() {
            let d = (a - b).norm_sqr();
            if d < d_min {
                d_min = d;
            }
        }
    }
    let d_min = d_min.sqrt();
    let limit = d_min * (1.0 + DIST_REL_TOL);
    let limit_sq = limit * limit;
    let mut pairs = 0;
    for a in a_set.points() {
        for b in b_set.points() {
            if (a - b).norm_sqr() <= limit_sq {
                pairs += 1;
            }
        }
    }
    Ok(MinDistance { d_min, pairs })
}

/// A contiguous run of NOMA modes sharing one far-user order.
#[derive(Debug, Clone, PartialEq)]
pub struct FarGroup {
    pub far_order: u32,
    /// Mode ids in the run (always within 1..=L).
    pub modes: std::ops::Range<usize>,
}

/// Validated, immutable table of candidate modulation modes.
///
/// Index 0 is the OMA mode; NOMA modes follow, grouped contiguously by
/// far-user order. All per-mode constellations (with data rotations applied)
/// and the pooled NOMA set are precomputed at construction.
#[derive(Debug, Clone)]
pub struct ModeTable {
    modes: Vec<ModulationMode>,
    groups: Vec<FarGroup>,
    /// Unrotated per-mode constellation (OMA base or NOMA composite).
    composites: Vec<ConstellationSet>,
    /// Per-mode constellation rotated by its data rotation.
    data_sets: Vec<ConstellationSet>,
    /// Scaled far-only set `sqrt(P_f) * base(far_order)`, data-rotated. None for OMA.
    far_sets: Vec<Option<ConstellationSet>>,
    /// Scaled near-only set `sqrt(P_n) * base(near_order)`, data-rotated. None for OMA.
    near_sets: Vec<Option<ConstellationSet>>,
    /// Multiset union of all NOMA `data_sets`; duplicates are kept so each
    /// mode keeps equal prior weight per point count.
    union: ConstellationSet,
}

impl ModeTable {
    pub fn new(modes: Vec<ModulationMode>) -> Result<Self, ModeError> {
        if modes.len() < 2 {
            return Err(ModeError::InvalidTable(
                "a table needs the OMA mode and at least one NOMA mode".into(),
            ));
        }
        for (idx, mode) in modes.iter().enumerate() {
            if mode.id != idx {
                return Err(ModeError::InvalidTable(format!(
                    "mode ids must be 0..=L in order (found id {} at index {})",
                    mode.id, idx
                )));
            }
            mode.validate()?;
        }
        // Far-order runs must be contiguous so pilot decision regions can be
        // grouped by far order.
        let mut groups: Vec<FarGroup> = Vec::new();
        for mode in &modes[1..] {
            match groups.last_mut() {
                Some(g) if g.far_order == mode.far_order => g.modes.end = mode.id + 1,
                _ => {
                    if groups.iter().any(|g| g.far_order == mode.far_order) {
                        return Err(ModeError::InvalidTable(format!(
                            "modes sharing far order {} must be contiguous",
                            mode.far_order
                        )));
                    }
                    groups.push(FarGroup { far_order: mode.far_order, modes: mode.id..mode.id + 1 });
                }
            }
        }
        for (i, a) in modes.iter().enumerate() {
            for b in &modes[i + 1..] {
                if a.pilot_rotation == b.pilot_rotation {
                    return Err(ModeError::InvalidTable(format!(
                        "pilot rotations must be pairwise distinct (modes {} and {})",
                        a.id, b.id
                    )));
                }
            }
        }

        let mut composites = Vec::with_capacity(modes.len());
        let mut data_sets = Vec::with_capacity(modes.len());
        let mut far_sets = Vec::with_capacity(modes.len());
        let mut near_sets = Vec::with_capacity(modes.len());
        for mode in &modes {
            let set = if mode.is_oma() {
                ConstellationSet::base(mode.far_order)?
            } else {
                ConstellationSet::composite(mode)?
            };
            data_sets.push(set.rotated(mode.data_rotation));
            composites.push(set);
            if mode.is_oma() {
                far_sets.push(None);
                near_sets.push(None);
            } else {
                let far = ConstellationSet::base(mode.far_order)?
                    .scaled(mode.power_far)
                    .rotated(mode.data_rotation);
                let near = ConstellationSet::base(mode.near_order.expect("NOMA mode"))?
                    .scaled(mode.power_near)
                    .rotated(mode.data_rotation);
                far_sets.push(Some(far));
                near_sets.push(Some(near));
            }
        }
        let mut union_points = Vec::new();
        let mut union_labels = Vec::new();
        for set in &data_sets[1..] {
            union_points.extend_from_slice(set.points());
            union_labels.extend_from_slice(set.labels());
        }
        let union = ConstellationSet::new(union_points, union_labels);

        Ok(Self { modes, groups, composites, data_sets, far_sets, near_sets, union })
    }

    /// Number of modes including the OMA mode (`L + 1`).
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of NOMA modes (`L`).
    pub fn num_noma(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn mode(&self, id: usize) -> &ModulationMode {
        &self.modes[id]
    }

    pub fn modes(&self) -> &[ModulationMode] {
        &self.modes
    }

    /// Contiguous far-order groups over the NOMA modes.
    pub fn groups(&self) -> &[FarGroup] {
        &self.groups
    }

    /// Unrotated constellation of mode `id` (base set for OMA, composite otherwise).
    pub fn constellation(&self, id: usize) -> &ConstellationSet {
        &self.composites[id]
    }

    /// Constellation of mode `id` with its data rotation applied. This is the
    /// set actually transmitted and the one likelihoods are evaluated on.
    pub fn data_set(&self, id: usize) -> &ConstellationSet {
        &self.data_sets[id]
    }

    /// Data-rotated far-only set of NOMA mode `id` at power `P_f`.
    pub fn far_set(&self, id: usize) -> Option<&ConstellationSet> {
        self.far_sets[id].as_ref()
    }

    /// Data-rotated near-only set of NOMA mode `id` at power `P_n`.
    pub fn near_set(&self, id: usize) -> Option<&ConstellationSet> {
        self.near_sets[id].as_ref()
    }

    /// Multiset union of all NOMA data sets (duplicates kept).
    pub fn noma_union(&self) -> &ConstellationSet {
        &self.union
    }

    /// The same table with per-mode data rotations replaced by `thetas`
    /// (one angle per mode, OMA first).
    pub fn with_rotations(&self, thetas: &[f64]) -> Result<Self, ModeError> {
        if thetas.len() != self.modes.len() {
            return Err(ModeError::InvalidTable(format!(
                "need one rotation per mode ({} modes, {} rotations)",
                self.modes.len(),
                thetas.len()
            )));
        }
        let modes = self
            .modes
            .iter()
            .zip(thetas)
            .map(|(m, &theta)| ModulationMode { data_rotation: theta, ..m.clone() })
            .collect();
        Self::new(modes)
    }

    /// The same table with per-mode pilot rotations replaced by `phis`.
    pub fn with_pilot_rotations(&self, phis: &[f64]) -> Result<Self, ModeError> {
        if phis.len() != self.modes.len() {
            return Err(ModeError::InvalidTable(format!(
                "need one pilot rotation per mode ({} modes, {} rotations)",
                self.modes.len(),
                phis.len()
            )));
        }
        let modes = self
            .modes
            .iter()
            .zip(phis)
            .map(|(m, &phi)| ModulationMode { pilot_rotation: phi, ..m.clone() })
            .collect();
        Self::new(modes)
    }
}

/// Evenly spaced pilot rotations `2*pi*l / (L+1)` used by preset tables.
fn uniform_pilot_rotations(num_modes: usize) -> Vec<f64> {
    (0..num_modes)
        .map(|l| 2.0 * std::f64::consts::PI * l as f64 / num_modes as f64)
        .collect()
}

fn preset(rows: &[(u32, Option<u32>, f64)]) -> ModeTable {
    let phis = uniform_pilot_rotations(rows.len());
    let modes = rows
        .iter()
        .enumerate()
        .map(|(id, &(far, near, power_far))| ModulationMode {
            id,
            far_order: far,
            near_order: near,
            power_far,
            power_near: if near.is_some() { 1.0 - power_far } else { 0.0 },
            data_rotation: 0.0,
            pilot_rotation: phis[id],
        })
        .collect();
    ModeTable::new(modes).expect("preset tables are valid")
}

/// QPSK OMA plus three QPSK/QPSK NOMA splits.
pub fn case1() -> ModeTable {
    preset(&[
        (4, None, 1.0),
        (4, Some(4), 0.8),
        (4, Some(4), 0.8621),
        (4, Some(4), 0.9163),
    ])
}

/// 16-QAM OMA, one QPSK/16-QAM split and one 16-QAM/16-QAM split.
pub fn case2() -> ModeTable {
    preset(&[
        (16, None, 1.0),
        (4, Some(16), 0.8653),
        (16, Some(16), 0.95),
    ])
}

/// 16-QAM OMA, three QPSK/16-QAM splits and two 16-QAM/16-QAM splits.
pub fn case3() -> ModeTable {
    preset(&[
        (16, None, 1.0),
        (4, Some(16), 0.7619),
        (4, Some(16), 0.8653),
        (4, Some(16), 0.9275),
        (16, Some(16), 0.95),
        (16, Some(16), 0.97),
    ])
}
