use serde::{Deserialize, Serialize};

use crate::error::{Result, TimeCfError};
use crate::tensor::{Tape, Var};

/// Values of the blended loss and of its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub freq: f64,
    pub mse: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.freq.is_finite() && self.mse.is_finite()
    }

    /// `self + weight * other`, term by term.
    pub fn add_weighted(&mut self, other: &LossBreakdown, weight: f64) {
        self.total += weight * other.total;
        self.freq += weight * other.freq;
        self.mse += weight * other.mse;
    }
}

/// Tape handles of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub freq: Var,
    pub mse: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.value(self.total).data()[0],
            freq: tape.value(self.freq).data()[0],
            mse: tape.value(self.mse).data()[0],
        }
    }
}

/// `alpha * mean_{b,k} |rfft(pred_b)_k - rfft(target_b)_k| + (1 - alpha) * mse`
/// for `[B x F]` forecasts.
pub fn samfre_loss(tape: &mut Tape, pred: Var, target: Var, alpha: f64) -> Result<LossVars> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TimeCfError::Parameter(format!(
            "loss blend must lie in [0, 1], got {alpha}"
        )));
    }
    if tape.shape(pred) != tape.shape(target) {
        return Err(TimeCfError::dim(
            "samfre_loss",
            format!(
                "prediction {:?} vs target {:?}",
                tape.shape(pred),
                tape.shape(target)
            ),
        ));
    }
    let sp = tape.rfft(pred)?;
    let st = tape.rfft(target)?;
    let ds = tape.sub(sp, st)?;
    let modulus = tape.complex_modulus(ds)?;
    let freq = tape.mean(modulus);

    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let mse = tape.mean(sq);

    let a = tape.scale(freq, alpha);
    let b = tape.scale(mse, 1.0 - alpha);
    let total = tape.add(a, b)?;
    Ok(LossVars { total, freq, mse })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::{Tensor, MODULUS_EPS};

    fn eval(pred: &Tensor, target: &Tensor, alpha: f64) -> LossBreakdown {
        let mut tape = Tape::new();
        let p = tape.constant(pred.clone());
        let t = tape.constant(target.clone());
        samfre_loss(&mut tape, p, t, alpha)
            .unwrap()
            .breakdown(&tape)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    /// Mean smoothed modulus of the O(n^2) DFT of `pred - target`, one-sided.
    fn direct_freq(pred: &Tensor, target: &Tensor) -> f64 {
        let n = pred.last_dim();
        let bins = n / 2 + 1;
        let mut total = 0.0;
        let mut count = 0;
        for (p, t) in pred.data().chunks(n).zip(target.data().chunks(n)) {
            for k in 0..bins {
                let (mut re, mut im) = (0.0, 0.0);
                for j in 0..n {
                    let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += (p[j] - t[j]) * ang.cos();
                    im += (p[j] - t[j]) * ang.sin();
                }
                if k == 0 || 2 * k == n {
                    im = 0.0;
                }
                total += (re * re + im * im + MODULUS_EPS * MODULUS_EPS).sqrt();
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random(3, 16, &mut rng);
        let l = eval(&p, &p, 0.5);
        assert_eq!(l.mse, 0.0);
        // only the smoothing floor remains
        assert!(l.freq <= MODULUS_EPS * 1.000001);
    }

    #[test]
    fn freq_term_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [16, 15, 96] {
            let p = random(4, n, &mut rng);
            let t = random(4, n, &mut rng);
            let l = eval(&p, &t, 1.0);
            assert!((l.freq - direct_freq(&p, &t)).abs() < 1e-9);
            assert_eq!(l.total, l.freq);
        }
    }

    #[test]
    fn pure_mse_when_alpha_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(5, 8, &mut rng);
        let t = random(5, 8, &mut rng);
        let l = eval(&p, &t, 0.0);
        let mse = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 40.0;
        assert!((l.total - mse).abs() <= 1e-12);
    }

    #[test]
    fn blend_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random(2, 24, &mut rng);
        let t = random(2, 24, &mut rng);
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let l = eval(&p, &t, alpha);
            assert!((l.total - (alpha * l.freq + (1.0 - alpha) * l.mse)).abs() <= 1e-12);
            assert!(l.freq >= 0.0 && l.mse >= 0.0);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros(&[2, 8]));
        let t = tape.constant(Tensor::zeros(&[2, 7]));
        assert!(matches!(
            samfre_loss(&mut tape, p, t, 0.5),
            Err(TimeCfError::Dimension { .. })
        ));
    }

    #[test]
    fn blend_outside_unit_interval_rejected() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros(&[2, 8]));
        assert!(samfre_loss(&mut tape, p, p, 1.5).is_err());
    }
}
