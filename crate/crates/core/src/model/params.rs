// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::fnv1a;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// How a parameter tensor starts out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal { mean: f64, std: f64 },
    Const(f64),
    /// `[C, C, 1, 1]` identity plus N(0, std) noise.
    Identity { std: f64 },
}

impl Init {
    pub fn normal(std: f64) -> Self {
        Init::Normal { mean: 0.0, std }
    }

    /// N(0, 1/√fan_in).
    pub fn fan_in(fan_in: usize) -> Self {
        Init::normal(1.0 / (fan_in.max(1) as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    fn materialize(&self, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((fnv1a(self.name.as_bytes()) as u64) << 17));
        match self.init {
            Init::Const(v) => Tensor::full(&self.shape, v as f32),
            Init::Normal { mean, std } => {
                let n = Normal::new(mean, std).expect("finite init");
                Tensor::from_fn(&self.shape, |_| n.sample(&mut rng) as f32)
            }
            Init::Identity { std } => {
                let c = self.shape[0];
                let n = Normal::new(0.0, std).expect("finite init");
                Tensor::from_fn(&self.shape, |i| {
                    let (o, k) = (i / c, i % c);
                    (if o == k { 1.0 } else { 0.0 } + n.sample(&mut rng)) as f32
                })
            }
        }
    }
}

/// Named model parameters plus the fingerprint of the config they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor<f32>>,
    fingerprint: u32,
}

impl ModelParams {
    pub fn new(fingerprint: u32) -> Self {
        ModelParams {
            tensors: BTreeMap::new(),
            fingerprint,
        }
    }

    pub fn from_specs(specs: &[ParamSpec], seed: u64, fingerprint: u32) -> Result<Self> {
        let mut p = ModelParams::new(fingerprint);
        for s in specs {
            p.insert(&s.name, s.materialize(seed))?;
        }
        Ok(p)
    }

    pub fn insert(&mut self, name: &str, t: Tensor<f32>) -> Result<()> {
        if self.tensors.insert(name.to_string(), t).is_some() {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn fingerprint(&self) -> u32 {
        self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    /// Check names and shapes against a spec list.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for s in specs {
            let t = self.get(&s.name)?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Register every tensor as a trainable leaf.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>) -> Bound {
        self.bind_with(tape, true)
    }

    /// Register every tensor as a constant, for inference.
    pub fn bind_frozen<F: Real>(&self, tape: &mut Tape<F>) -> Bound {
        self.bind_with(tape, false)
    }

    fn bind_with<F: Real>(&self, tape: &mut Tape<F>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { tape.leaf(t.cast()) } else { tape.constant(t.cast()) };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameter names resolved to tape variables.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
