// SPDX-License-Identifier: Apache-2.0

//! Training objective: masked MSE plus a spectrally weighted frequency term.

use crate::error::{Error, Result};
use crate::spectral::{dft2d_var, SpectralField, SpectralVar};
use crate::tensor::{lit, Real, Tape, Tensor, Var};

/// Floor on `|F_g − F_p|` inside the log of the spectral weights.
pub const LOG_EPS: f64 = 1e-8;
pub const DEFAULT_LAMBDA: f64 = 0.1;

fn mask_weight<F: Real>(shape: &[usize], mask: &Tensor<F>) -> Result<F> {
    let ms = mask.shape();
    if shape.len() < 2 || ms.len() != 2 || shape[shape.len() - 2..] != *ms {
        return Err(Error::dim(format!("mask {ms:?} does not cover grid of {shape:?}")));
    }
    let active: f64 = mask.data().iter().map(|v| v.to_f64().unwrap()).sum();
    if active == 0.0 {
        return Err(Error::usage("prediction loss over an empty mask"));
    }
    let planes = shape.iter().product::<usize>() / mask.len();
    Ok(lit(active * planes as f64))
}

/// Mean of `(pred − truth)²` over ocean cells; `mask` is `[H, W]` of 0/1.
pub fn pred_loss<F: Real>(pred: &Tensor<F>, truth: &Tensor<F>, mask: &Tensor<F>) -> Result<F> {
    if pred.shape() != truth.shape() {
        return Err(Error::dim(format!("pred {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let n = mask_weight(pred.shape(), mask)?;
    let hw = mask.len();
    let mut acc = 0.0f64;
    for (i, (p, t)) in pred.data().iter().zip(truth.data()).enumerate() {
        let d = (*p - *t).to_f64().unwrap();
        acc += mask.data()[i % hw].to_f64().unwrap() * d * d;
    }
    Ok(lit::<F>(acc) / n)
}

pub fn pred_loss_var<F: Real>(tape: &mut Tape<F>, pred: Var, truth: Var, mask: &Tensor<F>) -> Result<Var> {
    if tape.shape(pred) != tape.shape(truth) {
        return Err(Error::dim(format!(
            "pred {:?} vs truth {:?}",
            tape.shape(pred),
            tape.shape(truth)
        )));
    }
    let n = mask_weight(tape.shape(pred), mask)?;
    let m = tape.constant(mask.clone());
    let d = tape.sub(pred, truth)?;
    let d2 = tape.square(d)?;
    let masked = tape.mul(d2, m)?;
    let s = tape.sum(masked)?;
    tape.scale(s, 1.0 / n.to_f64().unwrap())
}

/// `|F_g − F_p|²` per bin.
pub fn freq_distance<F: Real>(g: &SpectralField<F>, p: &SpectralField<F>) -> Result<Tensor<F>> {
    if g.shape() != p.shape() {
        return Err(Error::dim(format!("spectra {:?} vs {:?}", g.shape(), p.shape())));
    }
    let data = g
        .re
        .data()
        .iter()
        .zip(g.im.data())
        .zip(p.re.data().iter().zip(p.im.data()))
        .map(|((&gr, &gi), (&pr, &pi))| (gr - pr) * (gr - pr) + (gi - pi) * (gi - pi))
        .collect();
    Tensor::new(g.shape(), data)
}

/// Per-plane weights `|ln max(|F_g − F_p|, eps)|`, divided by their plane
/// maximum. Plain tensors: they never enter a tape as anything but constants.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralWeights<F = f32> {
    pub w: Tensor<F>,
}

impl<F: Real> SpectralWeights<F> {
    /// Always true; the weights are gradient-locked by construction.
    pub fn detached(&self) -> bool {
        true
    }
}

pub fn spectral_weights<F: Real>(g: &SpectralField<F>, p: &SpectralField<F>, eps: f64) -> Result<SpectralWeights<F>> {
    if eps <= 0.0 {
        return Err(Error::config(format!("log floor must be positive, got {eps}")));
    }
    let dist = freq_distance(g, p)?;
    Ok(SpectralWeights {
        w: weights_from_distance(&dist, eps),
    })
}

fn weights_from_distance<F: Real>(dist: &Tensor<F>, eps: f64) -> Tensor<F> {
    let s = dist.shape();
    let hw = s[s.len() - 2] * s[s.len() - 1];
    let mut w: Vec<F> = dist
        .data()
        .iter()
        .map(|&d| lit(d.to_f64().unwrap().sqrt().max(eps).ln().abs()))
        .collect();
    for plane in w.chunks_mut(hw) {
        let max = plane.iter().copied().fold(F::zero(), F::max);
        if max > F::zero() {
            plane.iter_mut().for_each(|v| *v = *v / max);
        }
    }
    Tensor::new(s, w).expect("same shape")
}

/// Weighted mean of the frequency distance over bins and planes.
pub fn freq_loss<F: Real>(g: &SpectralField<F>, p: &SpectralField<F>) -> Result<F> {
    let dist = freq_distance(g, p)?;
    let w = weights_from_distance(&dist, LOG_EPS);
    let acc: f64 = dist
        .data()
        .iter()
        .zip(w.data())
        .map(|(&d, &w)| (d * w).to_f64().unwrap())
        .sum();
    Ok(lit(acc / dist.len() as f64))
}

/// Differentiable frequency loss; gradient flows through `p` only, the
/// weights enter as constants.
pub fn freq_loss_var<F: Real>(tape: &mut Tape<F>, g: SpectralVar, p: SpectralVar) -> Result<Var> {
    let dr = tape.sub(g.re, p.re)?;
    let di = tape.sub(g.im, p.im)?;
    let r2 = tape.square(dr)?;
    let i2 = tape.square(di)?;
    let dist = tape.add(r2, i2)?;
    let w = weights_from_distance(tape.value(dist), LOG_EPS);
    let wc = tape.constant(w);
    let weighted = tape.mul(dist, wc)?;
    tape.mean(weighted)
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub pred: Var,
    /// `None` when the frequency term is switched off or `λ = 0`.
    pub freq: Option<Var>,
}

/// `pred_loss(pred, truth) + λ · freq_loss(dft(truth), dft(target))`, where
/// `target` is normally the frequency-branch output.
pub fn total_loss_var<F: Real>(
    tape: &mut Tape<F>,
    pred: Var,
    truth: Var,
    freq_target: Option<Var>,
    mask: &Tensor<F>,
    lambda: f64,
) -> Result<LossParts> {
    if !(lambda >= 0.0) {
        return Err(Error::config(format!("λ must be non-negative, got {lambda}")));
    }
    let p = pred_loss_var(tape, pred, truth, mask)?;
    let target = match freq_target {
        Some(t) if lambda > 0.0 => t,
        _ => {
            return Ok(LossParts {
                total: p,
                pred: p,
                freq: None,
            })
        }
    };
    let fg = dft2d_var(tape, truth)?;
    let fp = dft2d_var(tape, target)?;
    let f = freq_loss_var(tape, fg, fp)?;
    let scaled = tape.scale(f, lambda)?;
    Ok(LossParts {
        total: tape.add(p, scaled)?,
        pred: p,
        freq: Some(f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pred_loss_examples() {
        let mask = Tensor::<f64>::ones(&[2, 2]);
        let t = Tensor::new(&[1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(pred_loss(&t, &t, &mask).unwrap(), 0.0);
        let off = t.map(|v| v + 0.1);
        assert!((pred_loss(&off, &t, &mask).unwrap() - 0.01).abs() < 1e-12);
        let half = Tensor::new(&[1, 2, 2], vec![0.3, 0.4, 0.3, 0.4]).unwrap();
        assert!((pred_loss(&half, &t, &mask).unwrap() - 0.02).abs() < 1e-12);
        assert!(matches!(pred_loss(&t, &t, &Tensor::zeros(&[2, 2])), Err(Error::Usage(_))));
    }

    #[test]
    fn land_cells_do_not_count() {
        let mask = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let p = Tensor::new(&[1, 2], vec![0.5, 9.0]).unwrap();
        let t = Tensor::new(&[1, 2], vec![0.5, 0.0]).unwrap();
        assert_eq!(pred_loss(&p, &t, &mask).unwrap(), 0.0);
    }

    #[test]
    fn distance_examples() {
        let g = SpectralField::new(Tensor::new(&[1, 2], vec![3.0, 1.0]).unwrap(), Tensor::new(&[1, 2], vec![4.0, 0.0]).unwrap()).unwrap();
        let p = SpectralField::<f64>::zeros(&[1, 2]);
        assert_eq!(freq_distance(&g, &p).unwrap().data(), &[25.0, 1.0]);
        assert!(freq_distance(&g, &g).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_examples() {
        let e = std::f64::consts::E;
        let g = SpectralField::new(
            Tensor::new(&[1, 2], vec![e.powi(-1), e.powi(-3)]).unwrap(),
            Tensor::zeros(&[1, 2]),
        )
        .unwrap();
        let p = SpectralField::<f64>::zeros(&[1, 2]);
        let w = spectral_weights(&g, &p, LOG_EPS).unwrap();
        assert!((w.w.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w.w.data()[1] - 1.0).abs() < 1e-12);
        let same = spectral_weights(&g, &g, LOG_EPS).unwrap();
        assert!(same.w.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_bin_loss() {
        let mut re = Tensor::<f64>::zeros(&[4, 4]);
        re.data_mut()[5] = 1.0;
        let g = SpectralField::new(re, Tensor::zeros(&[4, 4])).unwrap();
        let p = SpectralField::zeros(&[4, 4]);
        // |ln 1| = 0, so a unit-modulus miss carries no weight
        assert_eq!(freq_loss(&g, &p).unwrap(), 0.0);
        let dist = freq_distance(&g, &p).unwrap();
        assert_eq!(dist.data().iter().sum::<f64>() / 16.0, 1.0 / 16.0);
        let mut big = g.clone();
        big.re.data_mut()[5] = std::f64::consts::E;
        let w = spectral_weights(&big, &p, LOG_EPS).unwrap();
        assert!((w.w.data()[5] - 1.0 / LOG_EPS.ln().abs()).abs() < 1e-12);
        assert_eq!(freq_loss(&g, &g).unwrap(), 0.0);
    }
}
