//! Block-fading channel model, frame synthesis, and reception.
//!
//! One frame spans a fixed channel realization `h ~ CN(0, 1)` (Rayleigh
//! magnitude) and carries `K` data symbols plus one pilot pair: a plain pilot
//! and the same pilot rotated by the mode's pilot rotation. Receiver-side
//! channel knowledge is perfect (`h_hat = h`).
//!
//! A frame is transmitted in one of three shapes:
//! * single-user (mode 0): the full-power base constellation point;
//! * NOMA seen by the near terminal: the two-user composite
//!   `sqrt(P_f)*a + sqrt(P_n)*b`;
//! * NOMA seen by the far terminal: only the far component `sqrt(P_f)*a`
//!   (the near user's downlink is not present in the far user's frame).
//!
//! Data rotations apply to data symbols only; pilots carry the pilot
//! rotation on the second pilot slot and are otherwise unrotated, so the
//! pilot pair's phase difference identifies the mode regardless of any data
//! rotation.

use num_complex::Complex64;
use rand::Rng;

use crate::modes::ModeTable;

/// Common pilot value for both users.
pub const PILOT: Complex64 = Complex64::new(1.0, 0.0);

/// Noise variance of unit-average-power signaling at the given SNR in dB.
pub fn noise_var_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One draw of a standard circularly symmetric complex Gaussian `CN(0, 1)`.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    // |z|^2 ~ Exp(1), phase uniform.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let mag = (-(1.0 - u1).ln()).sqrt();
    Complex64::from_polar(mag, std::f64::consts::TAU * u2)
}

/// Which side of the two-user link a frame is observed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UserRole {
    Near,
    Far,
}

/// All randomness of one trial, drawn once so that competing schemes can be
/// evaluated on identical channels, symbols, and noise.
#[derive(Debug, Clone)]
pub struct FrameDraw {
    pub mode: usize,
    pub role: UserRole,
    /// Per-symbol indices into the far-user base constellation.
    pub far_symbols: Vec<usize>,
    /// Per-symbol indices into the near-user base constellation (all zero
    /// for the single-user mode).
    pub near_symbols: Vec<usize>,
    pub h: Complex64,
    /// Unit-variance data noise, scaled by the noise amplitude at reception.
    pub data_noise: Vec<Complex64>,
    /// Unit-variance noise on the plain and rotated pilot slots.
    pub pilot_noise: [Complex64; 2],
}

impl FrameDraw {
    /// Draws channel, symbol indices, and noise for a frame of
    /// `num_symbols` data symbols in the given truth mode and role.
    ///
    /// The draw order is fixed (h, far symbols, near symbols, data noise,
    /// pilot noise) so seeded streams reproduce exactly.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        table: &ModeTable,
        num_symbols: usize,
        mode: usize,
        role: UserRole,
    ) -> FrameDraw {
        let spec = table.mode(mode);
        let h = sample_cn(rng);
        let far_symbols = (0..num_symbols)
            .map(|_| rng.gen_range(0..spec.far_order as usize))
            .collect();
        let near_symbols = match spec.near_order {
            Some(order) => (0..num_symbols).map(|_| rng.gen_range(0..order as usize)).collect(),
            None => vec![0; num_symbols],
        };
        let data_noise = (0..num_symbols).map(|_| sample_cn(rng)).collect();
        let pilot_noise = [sample_cn(rng), sample_cn(rng)];
        FrameDraw { mode, role, far_symbols, near_symbols, h, data_noise, pilot_noise }
    }
}

/// Noiseless transmitted symbols of one frame under a concrete mode table.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub data: Vec<Complex64>,
    pub pilot_plain: Complex64,
    pub pilot_rotated: Complex64,
}

/// Builds the transmitted frame for a draw under `table`'s rotations and
/// powers. The same draw synthesized under differently rotated tables yields
/// the paired waveforms the comparison experiments need.
pub fn synthesize(table: &ModeTable, draw: &FrameDraw) -> TxFrame {
    let spec = table.mode(draw.mode);
    let (data, pilot_amp): (Vec<Complex64>, f64) = if spec.is_oma() {
        let set = table.data_set(0);
        (draw.far_symbols.iter().map(|&i| set.points()[i]).collect(), 1.0)
    } else {
        match draw.role {
            UserRole::Near => {
                // Composite points are laid out far-major, so the pair
                // (far index, near index) addresses one point directly.
                let set = table.data_set(draw.mode);
                let near_order = spec.near_order.expect("NOMA mode") as usize;
                let data = draw
                    .far_symbols
                    .iter()
                    .zip(&draw.near_symbols)
                    .map(|(&f, &n)| set.points()[f * near_order + n])
                    .collect();
                (data, spec.power_far.sqrt() + spec.power_near.sqrt())
            }
            UserRole::Far => {
                let set = table.far_set(draw.mode).expect("NOMA mode");
                (draw.far_symbols.iter().map(|&i| set.points()[i]).collect(), spec.power_far.sqrt())
            }
        }
    };
    let pilot_plain = PILOT * pilot_amp;
    let pilot_rotated = pilot_plain * Complex64::from_polar(1.0, spec.pilot_rotation);
    TxFrame { data, pilot_plain, pilot_rotated }
}

/// One received frame with the receiver-known channel state.
#[derive(Debug, Clone)]
pub struct RxFrame {
    pub data: Vec<Complex64>,
    pub pilot_plain: Complex64,
    pub pilot_rotated: Complex64,
    /// Perfect channel estimate.
    pub h: Complex64,
    pub noise_var: f64,
}

/// Applies the channel and scaled noise of `draw` to a transmitted frame.
pub fn receive(tx: &TxFrame, draw: &FrameDraw, noise_var: f64) -> RxFrame {
    let sigma = noise_var.sqrt();
    let data = tx
        .data
        .iter()
        .zip(&draw.data_noise)
        .map(|(s, n)| draw.h * s + sigma * n)
        .collect();
    RxFrame {
        data,
        pilot_plain: draw.h * tx.pilot_plain + sigma * draw.pilot_noise[0],
        pilot_rotated: draw.h * tx.pilot_rotated + sigma * draw.pilot_noise[1],
        h: draw.h,
        noise_var,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::case1;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_var_from_snr() {
        assert_relative_eq!(noise_var_from_snr_db(0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(noise_var_from_snr_db(10.0), 0.1, epsilon = 1e-15);
        assert_relative_eq!(noise_var_from_snr_db(20.0), 0.01, epsilon = 1e-15);
        assert_relative_eq!(noise_var_from_snr_db(-3.0), 10f64.powf(0.3), epsilon = 1e-12);
    }

    #[test]
    fn complex_gaussian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut mean = Complex64::new(0.0, 0.0);
        let mut power = 0.0;
        let mut pseudo = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let z = sample_cn(&mut rng);
            mean += z;
            power += z.norm_sqr();
            pseudo += z * z;
        }
        let n = n as f64;
        assert!((mean / n).norm() < 0.02, "mean should vanish");
        assert_relative_eq!(power / n, 1.0, epsilon = 0.02);
        // Circular symmetry: E[z^2] = 0.
        assert!((pseudo / n).norm() < 0.02);
    }

    #[test]
    fn rayleigh_tail() {
        // |h|^2 is Exp(1): P(|h|^2 > 1) = 1/e.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let over = (0..n).filter(|_| sample_cn(&mut rng).norm_sqr() > 1.0).count();
        assert_relative_eq!(over as f64 / n as f64, (-1.0f64).exp(), epsilon = 0.01);
    }

    #[test]
    fn near_frame_carries_composite_points() {
        let table = case1();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = FrameDraw::sample(&mut rng, &table, 6, 1, UserRole::Near);
        let tx = synthesize(&table, &draw);
        let set = table.data_set(1);
        for (k, s) in tx.data.iter().enumerate() {
            let idx = draw.far_symbols[k] * 4 + draw.near_symbols[k];
            assert_eq!(*s, set.points()[idx]);
        }
        let amp = 0.8f64.sqrt() + 0.2f64.sqrt();
        assert_relative_eq!(tx.pilot_plain.re, amp, epsilon = 1e-12);
        assert_relative_eq!(tx.pilot_plain.im, 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            (tx.pilot_rotated / tx.pilot_plain).arg(),
            crate::stats::wrap_angle(table.mode(1).pilot_rotation),
            epsilon = 1e-12
        );
        // Plain pilot magnitude for the 0.8 / 0.2 split.
        assert_relative_eq!(tx.pilot_plain.norm(), 1.3416407864998738, epsilon = 1e-12);
    }

    #[test]
    fn far_frame_carries_only_the_far_component() {
        let table = case1();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draw = FrameDraw::sample(&mut rng, &table, 6, 2, UserRole::Far);
        let tx = synthesize(&table, &draw);
        let far = table.far_set(2).unwrap();
        for (k, s) in tx.data.iter().enumerate() {
            assert_eq!(*s, far.points()[draw.far_symbols[k]]);
            assert_relative_eq!(s.norm(), 0.8621f64.sqrt(), epsilon = 1e-12);
        }
        assert_relative_eq!(tx.pilot_plain.norm(), 0.8621f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn oma_frame_uses_the_full_power_base_set() {
        let table = case1();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draw = FrameDraw::sample(&mut rng, &table, 4, 0, UserRole::Near);
        assert!(draw.near_symbols.iter().all(|&n| n == 0));
        let tx = synthesize(&table, &draw);
        for (k, s) in tx.data.iter().enumerate() {
            assert_eq!(*s, table.data_set(0).points()[draw.far_symbols[k]]);
        }
        assert_eq!(tx.pilot_plain, PILOT);
    }

    #[test]
    fn reception_applies_channel_and_scaled_noise() {
        let table = case1();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draw = FrameDraw::sample(&mut rng, &table, 5, 1, UserRole::Near);
        let tx = synthesize(&table, &draw);
        let noise_var = 0.04;
        let rx = receive(&tx, &draw, noise_var);
        for k in 0..tx.data.len() {
            let expect = draw.h * tx.data[k] + noise_var.sqrt() * draw.data_noise[k];
            assert!((rx.data[k] - expect).norm() < 1e-15);
        }
        assert_eq!(rx.h, draw.h);
        let expect_pilot = draw.h * tx.pilot_plain + noise_var.sqrt() * draw.pilot_noise[0];
        assert!((rx.pilot_plain - expect_pilot).norm() < 1e-15);
    }

    #[test]
    fn synthesis_under_rotated_table_rotates_data_not_pilots() {
        let table = case1();
        let rotated = table.with_rotations(&[0.6, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draw = FrameDraw::sample(&mut rng, &table, 8, 0, UserRole::Near);
        let plain = synthesize(&table, &draw);
        let rot = synthesize(&rotated, &draw);
        let spin = Complex64::from_polar(1.0, 0.6);
        for (a, b) in plain.data.iter().zip(&rot.data) {
            assert!((a * spin - b).norm() < 1e-15);
        }
        assert_eq!(plain.pilot_plain, rot.pilot_plain);
        assert_eq!(plain.pilot_rotated, rot.pilot_rotated);
    }
}
