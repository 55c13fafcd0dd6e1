// SPDX-License-Identifier: Apache-2.0

//! 2D discrete Fourier transform pair over the last two axes.
//!
//! Spectra are kept as full complex planes split into real and imaginary
//! tensors, so the tape never needs a complex scalar type. The forward
//! transform is unnormalized, `f(u,v) = Σ E(x,y)·e^{−j2π(ux/H + vy/W)}`, and
//! the inverse carries the `1/(H·W)` factor.

pub mod fft;

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tape, Tensor, Var};

/// Largest tolerated imaginary residue when a real output is expected is
/// `RESIDUE_TOL · (1 + |re|)`.
pub const RESIDUE_TOL: f64 = 1e-3;

/// Complex spectrum as paired real/imaginary tensors of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<F = f32> {
    pub re: Tensor<F>,
    pub im: Tensor<F>,
}

impl<F: Real> SpectralField<F> {
    pub fn new(re: Tensor<F>, im: Tensor<F>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::dim(format!(
                "spectrum parts differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(SpectralField { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        SpectralField {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(format!("2D transform needs rank ≥ 2, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h == 0 || w == 0 {
        return Err(Error::dim("2D transform over an empty plane"));
    }
    Ok((shape.iter().product::<usize>() / (h * w), h, w))
}

fn transform<F: Real>(re: &Tensor<F>, im: Option<&Tensor<F>>, inverse: bool, direct: bool) -> Result<SpectralField<F>> {
    let (p, h, w) = plane_dims(re.shape())?;
    let mut r = re.data().to_vec();
    let mut i = match im {
        Some(t) => t.data().to_vec(),
        None => vec![F::zero(); r.len()],
    };
    if direct {
        fft::dft2_planes_direct(&mut r, &mut i, p, h, w, inverse);
    } else {
        fft::fft2_planes(&mut r, &mut i, p, h, w, inverse);
    }
    if inverse {
        let s = lit::<F>(1.0 / (h * w) as f64);
        r.iter_mut().chain(i.iter_mut()).for_each(|v| *v *= s);
    }
    SpectralField::new(Tensor::new(re.shape(), r)?, Tensor::new(re.shape(), i)?)
}

/// Forward DFT of a real field.
pub fn dft2d<F: Real>(spatial: &Tensor<F>) -> Result<SpectralField<F>> {
    transform(spatial, None, false, false)
}

/// Forward DFT through direct summation regardless of extent.
pub fn dft2d_direct<F: Real>(spatial: &Tensor<F>) -> Result<SpectralField<F>> {
    transform(spatial, None, false, true)
}

/// Inverse DFT keeping the complex result.
pub fn idft2d_complex<F: Real>(spectrum: &SpectralField<F>) -> Result<SpectralField<F>> {
    transform(&spectrum.re, Some(&spectrum.im), true, false)
}

fn check_residue<F: Real>(re: &[F], im: &[F]) -> Result<()> {
    let tol = lit::<F>(RESIDUE_TOL);
    for (k, (&r, &i)) in re.iter().zip(im).enumerate() {
        if i.abs() >= tol * (F::one() + r.abs()) {
            return Err(Error::numeric(format!(
                "inverse DFT left imaginary residue {:e} at element {k}; spectrum is not Hermitian",
                i.to_f64().unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(())
}

/// Inverse DFT back to a real field. Fails when the spectrum is far from
/// Hermitian, i.e. the reconstruction has a material imaginary part.
pub fn idft2d<F: Real>(spectrum: &SpectralField<F>) -> Result<Tensor<F>> {
    let out = idft2d_complex(spectrum)?;
    check_residue(out.re.data(), out.im.data())?;
    Ok(out.re)
}

/// `|f|²` per bin.
pub fn power<F: Real>(spectrum: &SpectralField<F>) -> Tensor<F> {
    let data = spectrum
        .re
        .data()
        .iter()
        .zip(spectrum.im.data())
        .map(|(&r, &i)| r * r + i * i)
        .collect();
    Tensor::new(spectrum.re.shape(), data).expect("same shape")
}

/// A spectrum living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpectralVar {
    pub re: Var,
    pub im: Var,
}

impl SpectralVar {
    pub fn value<F: Real>(&self, tape: &Tape<F>) -> SpectralField<F> {
        SpectralField {
            re: tape.value(self.re).clone(),
            im: tape.value(self.im).clone(),
        }
    }
}

/// Differentiable forward DFT of a real field.
pub fn dft2d_var<F: Real>(tape: &mut Tape<F>, x: Var) -> Result<SpectralVar> {
    plane_dims(tape.shape(x))?;
    let packed = tape.dft2(x, None, false)?;
    Ok(SpectralVar {
        re: tape.select(packed, 0)?,
        im: tape.select(packed, 1)?,
    })
}

/// Differentiable forward DFT of a complex field.
pub fn dft2d_complex_var<F: Real>(tape: &mut Tape<F>, s: SpectralVar) -> Result<SpectralVar> {
    plane_dims(tape.shape(s.re))?;
    let packed = tape.dft2(s.re, Some(s.im), false)?;
    Ok(SpectralVar {
        re: tape.select(packed, 0)?,
        im: tape.select(packed, 1)?,
    })
}

/// Differentiable inverse DFT with the real-output residue check.
pub fn idft2d_var<F: Real>(tape: &mut Tape<F>, s: SpectralVar) -> Result<Var> {
    plane_dims(tape.shape(s.re))?;
    let packed = tape.dft2(s.re, Some(s.im), true)?;
    let re = tape.select(packed, 0)?;
    let im = tape.select(packed, 1)?;
    check_residue(tape.value(re).data(), tape.value(im).data())?;
    Ok(re)
}

/// Differentiable `|f|²`.
pub fn power_var<F: Real>(tape: &mut Tape<F>, s: SpectralVar) -> Result<Var> {
    let r2 = tape.square(s.re)?;
    let i2 = tape.square(s.im)?;
    tape.add(r2, i2)
}

/// Complex elementwise product `a ⊙ b`, broadcasting like real ops.
pub fn complex_mul_var<F: Real>(tape: &mut Tape<F>, a: SpectralVar, b: SpectralVar) -> Result<SpectralVar> {
    let rr = tape.mul(a.re, b.re)?;
    let ii = tape.mul(a.im, b.im)?;
    let ri = tape.mul(a.re, b.im)?;
    let ir = tape.mul(a.im, b.re)?;
    Ok(SpectralVar {
        re: tape.sub(rr, ii)?,
        im: tape.add(ri, ir)?,
    })
}

/// Hermitian-symmetric part `(f(u,v) + conj f(−u,−v)) / 2`. A filter passed
/// through this map keeps real fields real under filtering.
pub fn hermitian_part_var<F: Real>(tape: &mut Tape<F>, s: SpectralVar) -> Result<SpectralVar> {
    let fr = tape.flip2(s.re)?;
    let fi = tape.flip2(s.im)?;
    let re = tape.add(s.re, fr)?;
    let im = tape.sub(s.im, fi)?;
    Ok(SpectralVar {
        re: tape.scale(re, 0.5)?,
        im: tape.scale(im, 0.5)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_2x2_is_dc_only() {
        let x = Tensor::<f64>::ones(&[2, 2]);
        let f = dft2d(&x).unwrap();
        assert_eq!(f.re.data(), &[4.0, 0.0, 0.0, 0.0]);
        assert!(f.im.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn identity_pattern_2x2() {
        let x = Tensor::<f64>::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = dft2d(&x).unwrap();
        let expect = [2.0, 0.0, 0.0, 2.0];
        for (a, b) in f.re.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_spectrum_inverts_to_ones() {
        let (h, w) = (4, 8);
        let mut re = Tensor::<f32>::zeros(&[h, w]);
        re.data_mut()[0] = (h * w) as f32;
        let out = idft2d(&SpectralField::new(re, Tensor::zeros(&[h, w])).unwrap()).unwrap();
        assert!(out.data().iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn non_hermitian_spectrum_rejected() {
        let mut im = Tensor::<f32>::zeros(&[4, 4]);
        im.data_mut()[1] = 5.0;
        let s = SpectralField::new(Tensor::zeros(&[4, 4]), im).unwrap();
        assert!(matches!(idft2d(&s), Err(Error::Numeric(_))));
    }

    #[test]
    fn power_of_unit_bin() {
        let mut re = Tensor::<f32>::zeros(&[2, 2]);
        re.data_mut()[3] = 1.0;
        let p = power(&SpectralField::new(re, Tensor::zeros(&[2, 2])).unwrap());
        assert_eq!(p.data(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(power(&SpectralField::<f32>::zeros(&[3, 3])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_extent_uses_direct_path() {
        assert!(!fft::is_fast_path(6, 8));
        let x = Tensor::<f64>::from_fn(&[3, 5], |i| (i as f64 * 0.37).sin());
        let a = dft2d(&x).unwrap();
        let back = idft2d(&a).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }
}
