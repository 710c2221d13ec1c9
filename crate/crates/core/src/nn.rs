//! Network building blocks: parameterized layers and the factory that
//! either draws fresh weights or rebinds tensors loaded from a checkpoint.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self as tn, Conv2dSpec, Tape, Tensor};
use std::collections::BTreeMap;

/// Where layer parameters come from.
pub enum ParamSource<'a> {
    /// Fresh fan-in-scaled uniform initialization.
    Init(&'a mut Rng),
    /// Named tensors from a checkpoint; values become trainable leaves.
    Load(&'a BTreeMap<String, Tensor>),
}

pub struct ParamFactory<'a> {
    source: ParamSource<'a>,
}

impl<'a> ParamFactory<'a> {
    pub fn new(source: ParamSource<'a>) -> Self {
        ParamFactory { source }
    }

    /// Fetch or initialize one named parameter tensor. `bound` is the
    /// half-width of the uniform init range.
    pub fn tensor(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<Tensor> {
        match &mut self.source {
            ParamSource::Init(rng) => {
                let t = Tensor::rand_uniform(rng, shape, -bound, bound);
                Tensor::param(shape, t.to_vec())
            }
            ParamSource::Load(map) => {
                let t = map.get(name).ok_or_else(|| {
                    Error::invalid("load_params", format!("missing tensor '{name}'"))
                })?;
                if t.shape() != shape {
                    return Err(Error::ShapeMismatch {
                        op: "load_params",
                        lhs: t.shape().to_vec(),
                        rhs: shape.to_vec(),
                    });
                }
                Tensor::param(shape, t.to_vec())
            }
        }
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: Conv2dSpec,
    ) -> Result<Conv2dLayer> {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        Ok(Conv2dLayer {
            weight: self.tensor(&format!("{name}.weight"), &[cout, cin, k, k], bound)?,
            bias: self.tensor(&format!("{name}.bias"), &[cout], bound)?,
            spec,
        })
    }

    pub fn linear(&mut self, name: &str, into: usize, out: usize) -> Result<Linear> {
        let bound = 1.0 / (into as f32).sqrt();
        Ok(Linear {
            weight: self.tensor(&format!("{name}.weight"), &[into, out], bound)?,
            bias: self.tensor(&format!("{name}.bias"), &[out], bound)?,
        })
    }

    pub fn group_norm(&mut self, name: &str, channels: usize, groups: usize) -> Result<GroupNorm> {
        let gamma = match &mut self.source {
            ParamSource::Init(_) => Tensor::param(&[channels], vec![1.0; channels])?,
            ParamSource::Load(_) => self.tensor(&format!("{name}.gamma"), &[channels], 0.0)?,
        };
        let beta = match &mut self.source {
            ParamSource::Init(_) => Tensor::param(&[channels], vec![0.0; channels])?,
            ParamSource::Load(_) => self.tensor(&format!("{name}.beta"), &[channels], 0.0)?,
        };
        Ok(GroupNorm {
            gamma,
            beta,
            groups,
            eps: 1e-5,
        })
    }
}

pub struct Conv2dLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub spec: Conv2dSpec,
}

impl Conv2dLayer {
    pub fn forward(&self, tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
        tn::conv2d(tape, x, &self.weight, Some(&self.bias), self.spec)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{name}.weight"), &self.weight);
        f(format!("{name}.bias"), &self.bias);
    }
}

pub struct Linear {
    /// (in, out) layout so `forward` is `x @ w + b`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn forward(&self, tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
        let y = tn::matmul(tape, x, &self.weight)?;
        tn::add(tape, &y, &self.bias)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{name}.weight"), &self.weight);
        f(format!("{name}.bias"), &self.bias);
    }
}

pub struct GroupNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub groups: usize,
    pub eps: f32,
}

impl GroupNorm {
    pub fn forward(&self, tape: Option<&Tape>, x: &Tensor) -> Result<Tensor> {
        let c = self.gamma.shape()[0];
        let normed = tn::group_normalize(tape, x, self.groups, self.eps)?;
        let scale_shape: Vec<usize> = match x.shape().len() {
            3 => vec![c, 1, 1],
            _ => vec![1, c, 1, 1],
        };
        let g = tn::reshape(tape, &self.gamma, &scale_shape)?;
        let b = tn::reshape(tape, &self.beta, &scale_shape)?;
        let scaled = tn::mul(tape, &normed, &g)?;
        tn::add(tape, &scaled, &b)
    }

    pub fn visit(&self, name: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{name}.gamma"), &self.gamma);
        f(format!("{name}.beta"), &self.beta);
    }
}

/// Collect a model's named parameters into an ordered list.
pub fn collect_params(visit: impl FnOnce(&mut dyn FnMut(String, &Tensor))) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    visit(&mut |name, t| out.push((name, t.clone())));
    out
}

/// FNV-1a checksum over shapes and payload bits; order-sensitive.
/// Used to assert parameter immutability (frozen VAE, checkpoints).
pub fn params_checksum(params: &[(String, Tensor)]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (name, t) in params {
        feed(name.as_bytes());
        for &d in t.shape() {
            feed(&(d as u64).to_le_bytes());
        }
        for &v in t.data().iter() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn factory_init_is_seed_deterministic() {
        let make = |seed| {
            let mut rng = rng_from(seed);
            let mut f = ParamFactory::new(ParamSource::Init(&mut rng));
            f.conv("c", 3, 8, 3, Conv2dSpec::same(3)).unwrap()
        };
        let a = make(5);
        let b = make(5);
        let c = make(6);
        assert_eq!(a.weight.to_vec(), b.weight.to_vec());
        assert_ne!(a.weight.to_vec(), c.weight.to_vec());
    }

    #[test]
    fn factory_load_checks_presence_and_shape() {
        let mut map = BTreeMap::new();
        map.insert("c.weight".to_string(), Tensor::zeros(&[8, 3, 3, 3]));
        let mut f = ParamFactory::new(ParamSource::Load(&map));
        assert!(f.conv("c", 3, 8, 3, Conv2dSpec::same(3)).is_err()); // bias missing
        map.insert("c.bias".to_string(), Tensor::zeros(&[9]));
        let mut f = ParamFactory::new(ParamSource::Load(&map));
        assert!(f.conv("c", 3, 8, 3, Conv2dSpec::same(3)).is_err()); // bias shape
        map.insert("c.bias".to_string(), Tensor::zeros(&[8]));
        let mut f = ParamFactory::new(ParamSource::Load(&map));
        assert!(f.conv("c", 3, 8, 3, Conv2dSpec::same(3)).is_ok());
    }

    #[test]
    fn group_norm_affine_applies_after_normalization() {
        let mut rng = rng_from(8);
        let x = Tensor::rand_uniform(&mut rng, &[2, 4, 3, 3], -2.0, 5.0);
        let mut f = ParamFactory::new(ParamSource::Init(&mut rng));
        let gn = f.group_norm("g", 4, 2).unwrap();
        gn.beta.set_data(&[1.0, 1.0, 1.0, 1.0]);
        let y = gn.forward(None, &x).unwrap();
        let m = tn::mean_all(None, &y).item();
        assert!((m - 1.0).abs() < 1e-4, "mean {m}");
    }

    #[test]
    fn checksum_detects_single_bit_change() {
        let t = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let params = vec![("p".to_string(), t.clone())];
        let before = params_checksum(&params);
        assert_eq!(before, params_checksum(&params));
        t.update_data(|d| d[2] = f32::from_bits(d[2].to_bits() ^ 1));
        assert_ne!(before, params_checksum(&params));
    }
}
