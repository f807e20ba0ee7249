use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DEPENDENT_WIDTH, INVARIANT_WIDTH};
use crate::synth::rng_for;

/// Layer widths of the graph model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub invariant_width: usize,
    pub dependent_width: usize,
    pub invariant_embed: usize,
    pub dependent_embed: usize,
    pub conv_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            invariant_width: INVARIANT_WIDTH,
            dependent_width: DEPENDENT_WIDTH,
            invariant_embed: 220,
            dependent_embed: 60,
            conv_layers: 2,
        }
    }
}

impl Architecture {
    /// Width of a node embedding.
    pub fn embed(&self) -> usize {
        self.invariant_embed + self.dependent_embed
    }

    /// Width of the pooled graph vector: one block per embedding depth.
    pub fn readout(&self) -> usize {
        self.embed() * (self.conv_layers + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// All tensors of the graph model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub w_inv: Array2<f64>,
    pub b_inv: Array1<f64>,
    pub w_dep: Array2<f64>,
    pub b_dep: Array1<f64>,
    pub conv: Vec<ConvLayer>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (1.0 / rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

pub(crate) fn uniform_vector(rng: &mut impl Rng, fan_in: usize, len: usize) -> Array1<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.gen_range(-bound..=bound))
}

impl ModelParams {
    /// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights and biases; batch-norm
    /// scale 1, shift 0, running statistics 0/1.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng_for(seed, 4);
        let e = arch.embed();
        let w_inv = uniform_matrix(&mut rng, arch.invariant_width, arch.invariant_embed);
        let b_inv = uniform_vector(&mut rng, arch.invariant_width, arch.invariant_embed);
        let w_dep = uniform_matrix(&mut rng, arch.dependent_width, arch.dependent_embed);
        let b_dep = uniform_vector(&mut rng, arch.dependent_width, arch.dependent_embed);
        let conv = (0..arch.conv_layers)
            .map(|_| ConvLayer {
                weight: uniform_matrix(&mut rng, e, e),
                bias: uniform_vector(&mut rng, e, e),
                bn_gamma: Array1::ones(e),
                bn_beta: Array1::zeros(e),
                running_mean: Array1::zeros(e),
                running_var: Array1::ones(e),
            })
            .collect();
        let w_out = uniform_matrix(&mut rng, arch.readout(), 1);
        let b_out = uniform_vector(&mut rng, arch.readout(), 1);
        Self {
            arch,
            w_inv,
            b_inv,
            w_dep,
            b_dep,
            conv,
            w_out,
            b_out,
        }
    }

    /// Same shapes, every entry zero (the layout used for gradients).
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        Self {
            arch: self.arch,
            w_inv: z2(&self.w_inv),
            b_inv: z1(&self.b_inv),
            w_dep: z2(&self.w_dep),
            b_dep: z1(&self.b_dep),
            conv: self
                .conv
                .iter()
                .map(|c| ConvLayer {
                    weight: z2(&c.weight),
                    bias: z1(&c.bias),
                    bn_gamma: z1(&c.bn_gamma),
                    bn_beta: z1(&c.bn_beta),
                    running_mean: z1(&c.running_mean),
                    running_var: z1(&c.running_var),
                })
                .collect(),
            w_out: z2(&self.w_out),
            b_out: z1(&self.b_out),
        }
    }

    /// Learnable tensors in a fixed order: name, data, and whether weight
    /// decay applies (weights only).
    pub fn learnables(&self) -> Vec<(String, &[f64], bool)> {
        let mut v: Vec<(String, &[f64], bool)> = vec![
            ("w_inv".into(), slice2(&self.w_inv), true),
            ("b_inv".into(), self.b_inv.as_slice().expect("contiguous"), false),
            ("w_dep".into(), slice2(&self.w_dep), true),
            ("b_dep".into(), self.b_dep.as_slice().expect("contiguous"), false),
        ];
        for (k, c) in self.conv.iter().enumerate() {
            v.push((format!("conv{k}.weight"), slice2(&c.weight), true));
            v.push((format!("conv{k}.bias"), c.bias.as_slice().expect("contiguous"), false));
            v.push((
                format!("conv{k}.bn_gamma"),
                c.bn_gamma.as_slice().expect("contiguous"),
                false,
            ));
            v.push((
                format!("conv{k}.bn_beta"),
                c.bn_beta.as_slice().expect("contiguous"),
                false,
            ));
        }
        v.push(("w_out".into(), slice2(&self.w_out), true));
        v.push(("b_out".into(), self.b_out.as_slice().expect("contiguous"), false));
        v
    }

    pub fn learnables_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut v: Vec<(&mut [f64], bool)> = vec![
            (self.w_inv.as_slice_mut().expect("standard layout"), true),
            (self.b_inv.as_slice_mut().expect("contiguous"), false),
            (self.w_dep.as_slice_mut().expect("standard layout"), true),
            (self.b_dep.as_slice_mut().expect("contiguous"), false),
        ];
        for c in self.conv.iter_mut() {
            v.push((c.weight.as_slice_mut().expect("standard layout"), true));
            v.push((c.bias.as_slice_mut().expect("contiguous"), false));
            v.push((c.bn_gamma.as_slice_mut().expect("contiguous"), false));
            v.push((c.bn_beta.as_slice_mut().expect("contiguous"), false));
        }
        v.push((self.w_out.as_slice_mut().expect("standard layout"), true));
        v.push((self.b_out.as_slice_mut().expect("contiguous"), false));
        v
    }

    /// Checks every tensor against the architecture and for finiteness.
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        let e = a.embed();
        let check2 = |name: &str, m: &Array2<f64>, r: usize, c: usize| -> Result<()> {
            if m.dim() != (r, c) {
                return Err(Error::Incompatible {
                    what: "parameter shape",
                    left: format!("{name} {:?}", m.dim()),
                    right: format!("({r}, {c})"),
                });
            }
            Ok(())
        };
        let check1 = |name: &str, v: &Array1<f64>, n: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::Incompatible {
                    what: "parameter shape",
                    left: format!("{name} ({})", v.len()),
                    right: format!("({n})"),
                });
            }
            Ok(())
        };
        check2("w_inv", &self.w_inv, a.invariant_width, a.invariant_embed)?;
        check1("b_inv", &self.b_inv, a.invariant_embed)?;
        check2("w_dep", &self.w_dep, a.dependent_width, a.dependent_embed)?;
        check1("b_dep", &self.b_dep, a.dependent_embed)?;
        if self.conv.len() != a.conv_layers {
            return Err(Error::Incompatible {
                what: "conv layer count",
                left: self.conv.len().to_string(),
                right: a.conv_layers.to_string(),
            });
        }
        for c in &self.conv {
            check2("conv.weight", &c.weight, e, e)?;
            for (n, v) in [
                ("conv.bias", &c.bias),
                ("conv.bn_gamma", &c.bn_gamma),
                ("conv.bn_beta", &c.bn_beta),
                ("conv.running_mean", &c.running_mean),
                ("conv.running_var", &c.running_var),
            ] {
                check1(n, v, e)?;
            }
            if c.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::Invalid("negative running variance".into()));
            }
        }
        check2("w_out", &self.w_out, a.readout(), 1)?;
        check1("b_out", &self.b_out, 1)?;
        let finite = self
            .learnables()
            .iter()
            .all(|(_, d, _)| d.iter().all(|x| x.is_finite()))
            && self
                .conv
                .iter()
                .all(|c| c.running_mean.iter().chain(c.running_var.iter()).all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        Ok(())
    }
}
