// SPDX-License-Identifier: Apache-2.0

//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use fcnet_core::{Real, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<F: Real>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<F> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| F::from_f64(r.random_range(lo..hi)).unwrap())
}

/// Scalar probe `Σ r ⊙ y` with fixed random weights, so every output element
/// contributes a distinct direction to the gradient.
pub fn project<F: Real>(tape: &mut Tape<F>, y: Var, seed: u64) -> Result<Var> {
    let r = uniform::<F>(tape.shape(y), -1.0, 1.0, seed);
    let rc = tape.constant(r);
    let p = tape.mul(y, rc)?;
    tape.sum(p)
}

#[derive(Debug)]
pub struct GradReport {
    pub checked: usize,
    pub within_1e3: usize,
    pub max_rel: f64,
}

impl GradReport {
    pub fn fraction_within(&self) -> f64 {
        self.within_1e3 as f64 / self.checked.max(1) as f64
    }

    /// ≥95% of coordinates below 1e-3 relative error and all below 1e-2.
    pub fn passes(&self) -> bool {
        self.fraction_within() >= 0.95 && self.max_rel < 1e-2
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.within_1e3 += other.within_1e3;
        self.max_rel = self.max_rel.max(other.max_rel);
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compare tape gradients of `f` against central differences in f64.
/// At most `max_coords` coordinates per input are probed (chosen at random).
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    max_coords: usize,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> GradReport {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.value(out).item()
    };
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars).expect("forward");
    tape.backward(loss).expect("backward");
    let grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut r = rng(0xfd);
    let mut report = GradReport {
        checked: 0,
        within_1e3: 0,
        max_rel: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.len();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            (0..max_coords).map(|_| r.random_range(0..n)).collect()
        };
        for c in coords {
            let orig = t.data()[c];
            work[ti].data_mut()[c] = orig + FD_EPS;
            let up = eval(&work);
            work[ti].data_mut()[c] = orig - FD_EPS;
            let down = eval(&work);
            work[ti].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let e = rel_err(grads[ti].data()[c], numeric);
            report.checked += 1;
            if e < 1e-3 {
                report.within_1e3 += 1;
            }
            report.max_rel = report.max_rel.max(e);
        }
    }
    report
}

/// [`gradcheck`] over every tensor of `params` followed by `extra` inputs.
pub fn gradcheck_params(
    params: &fcnet_core::ModelParams,
    extra: &[Tensor<f64>],
    max_coords: usize,
    f: impl Fn(&mut Tape<f64>, &fcnet_core::model::Bound, &[Var]) -> Result<Var>,
) -> GradReport {
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| params.get(n).unwrap().cast()).collect();
    inputs.extend(extra.iter().cloned());
    let k = names.len();
    gradcheck(&inputs, max_coords, |tape, vars| {
        let bound = fcnet_core::model::Bound::from_pairs(names.iter().cloned().zip(vars[..k].iter().copied()));
        f(tape, &bound, &vars[k..])
    })
}

/// Small configuration used by the branch and model suites.
pub fn tiny_config() -> fcnet_core::FcnetConfig {
    fcnet_core::FcnetConfig {
        t: 2,
        t_prime: 2,
        h: 8,
        w: 8,
        patch: 4,
        embed_dim: 8,
        affb_blocks: 2,
        hfeb_blocks: 2,
        encoder_depth: 2,
        hidden: 8,
        norm_groups: 2,
        reduction: 4,
        ..Default::default()
    }
}
