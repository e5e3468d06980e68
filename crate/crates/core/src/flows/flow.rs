use std::f64::consts::PI;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, MlpLayout, MlpTape};
use crate::error::{check_dim, check_finite, Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const ACTNORM_MIN_STD: f64 = 1e-4;

/// Architecture of a [`ConditionalFlow`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub dim: usize,
    pub cond_dim: usize,
    pub n_blocks: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub cond_hidden: usize,
    pub cond_hidden_layers: usize,
    pub cond_features: usize,
    /// Bound on each coupling scale exponent.
    pub clamp: f64,
}

impl FlowSpec {
    /// Desk-scale architecture: 6 coupling blocks, 48 hidden units.
    pub fn desk(dim: usize, cond_dim: usize, clamp: f64) -> Self {
        Self {
            dim,
            cond_dim,
            n_blocks: 6,
            hidden: 48,
            hidden_layers: 2,
            cond_hidden: 48,
            cond_hidden_layers: 2,
            cond_features: 32,
            clamp,
        }
    }

    /// Full-size architecture with 16 blocks; `hidden` is used for both the
    /// condition encoder and the coupling subnets.
    pub fn full(dim: usize, cond_dim: usize, hidden: usize, clamp: f64) -> Self {
        Self {
            n_blocks: 16,
            hidden,
            cond_hidden: hidden,
            ..Self::desk(dim, cond_dim, clamp)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("flow dimension must be positive".into()));
        }
        if self.n_blocks == 0 || self.hidden == 0 || self.hidden_layers == 0 {
            return Err(Error::Config(format!("degenerate flow spec {self:?}")));
        }
        if !(self.clamp > 0.0) {
            return Err(Error::Config(format!(
                "clamp must be positive, got {}",
                self.clamp
            )));
        }
        if self.cond_dim > 0 && (self.cond_features == 0 || self.cond_hidden == 0) {
            return Err(Error::Config(
                "conditional flow needs condition features".into(),
            ));
        }
        Ok(())
    }
}

/// A network living at `offset` inside the flow's flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SubNet {
    layout: MlpLayout,
    offset: usize,
}

impl SubNet {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.layout.n_params()
    }
}

/// One GLOW-style coupling block followed by an activation-normalization layer.
///
/// The `first` coordinates are transformed conditioned on the `second` ones,
/// then the `second` coordinates are transformed conditioned on the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    first: Vec<usize>,
    second: Vec<usize>,
    head: Option<SubNet>,
    first_net: SubNet,
    second_net: Option<SubNet>,
    actnorm_offset: usize,
}

/// Per-dimension affine normalization `y = x * exp(log_scale) + shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActNorm {
    pub log_scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Conditional RealNVP density `p(x | cond)` with a standard-normal base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFlow {
    spec: FlowSpec,
    params: Vec<f64>,
    encoder: Option<SubNet>,
    blocks: Vec<Block>,
    actnorm_initialized: bool,
}

struct BlockTape {
    head: Option<MlpTape>,
    features: Array2<f64>,
    x_first: Array2<f64>,
    x_second: Array2<f64>,
    first_tape: MlpTape,
    first_raw: Array2<f64>,
    first_scale: Array2<f64>,
    second_tape: Option<MlpTape>,
    second_raw: Array2<f64>,
    second_scale: Array2<f64>,
    coupled: Array2<f64>,
}

pub(crate) struct FlowTape {
    encoder: Option<MlpTape>,
    blocks: Vec<BlockTape>,
}

#[inline]
fn soft_clamp(raw: f64, clamp: f64) -> f64 {
    clamp * (2.0 / PI) * (raw / clamp).atan()
}

#[inline]
fn soft_clamp_grad(raw: f64, clamp: f64) -> f64 {
    let r = raw / clamp;
    (2.0 / PI) / (1.0 + r * r)
}

fn split_for_block(dim: usize, block: usize) -> (Vec<usize>, Vec<usize>) {
    let parity = block % 2;
    let (mut first, mut second): (Vec<usize>, Vec<usize>) = (0..dim).partition(|i| i % 2 == parity);
    if first.is_empty() {
        std::mem::swap(&mut first, &mut second);
    }
    (first, second)
}

fn write_columns(dst: &mut Array2<f64>, cols: &[usize], src: &Array2<f64>) {
    for (j, &c) in cols.iter().enumerate() {
        dst.column_mut(c).assign(&src.column(j));
    }
}

impl ConditionalFlow {
    /// Builds a flow with random subnet weights, zero-initialized coupling
    /// outputs (so every block starts as the identity) and unit ActNorm.
    pub fn new<R: Rng + ?Sized>(spec: FlowSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let alloc = |offset: &mut usize, layout: MlpLayout| {
            let net = SubNet {
                layout,
                offset: *offset,
            };
            *offset += net.layout.n_params();
            net
        };
        let features = if spec.cond_dim > 0 {
            spec.cond_features
        } else {
            0
        };
        let encoder = if spec.cond_dim > 0 {
            let mut widths = vec![spec.cond_dim];
            widths.extend(std::iter::repeat_n(
                spec.cond_hidden,
                spec.cond_hidden_layers,
            ));
            widths.push(spec.cond_features);
            Some(alloc(
                &mut offset,
                MlpLayout::new(widths, Activation::Relu)?,
            ))
        } else {
            None
        };
        let hidden = vec![spec.hidden; spec.hidden_layers];
        let subnet = |inputs: usize, outputs: usize| {
            let mut widths = vec![inputs];
            widths.extend(&hidden);
            widths.push(outputs);
            MlpLayout::new(widths, Activation::Relu)
        };
        let mut blocks = Vec::with_capacity(spec.n_blocks);
        for k in 0..spec.n_blocks {
            let (first, second) = split_for_block(spec.dim, k);
            let head = if features > 0 {
                Some(alloc(
                    &mut offset,
                    MlpLayout::new(vec![features, features], Activation::Relu)?,
                ))
            } else {
                None
            };
            let first_net = alloc(
                &mut offset,
                subnet(second.len() + features, 2 * first.len())?,
            );
            let second_net = if second.is_empty() {
                None
            } else {
                Some(alloc(
                    &mut offset,
                    subnet(first.len() + features, 2 * second.len())?,
                ))
            };
            let actnorm_offset = offset;
            offset += 2 * spec.dim;
            blocks.push(Block {
                first,
                second,
                head,
                first_net,
                second_net,
                actnorm_offset,
            });
        }
        let mut params = vec![0.0; offset];
        if let Some(enc) = &encoder {
            enc.layout.init(rng, &mut params[enc.range()], false);
        }
        for b in &blocks {
            if let Some(h) = &b.head {
                h.layout.init(rng, &mut params[h.range()], false);
            }
            b.first_net
                .layout
                .init(rng, &mut params[b.first_net.range()], true);
            if let Some(n) = &b.second_net {
                n.layout.init(rng, &mut params[n.range()], true);
            }
        }
        Ok(Self {
            spec,
            params,
            encoder,
            blocks,
            actnorm_initialized: false,
        })
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.spec.cond_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn actnorm(&self, block: usize) -> ActNorm {
        let d = self.spec.dim;
        let off = self.blocks[block].actnorm_offset;
        ActNorm {
            log_scale: self.params[off..off + d].to_vec(),
            shift: self.params[off + d..off + 2 * d].to_vec(),
        }
    }

    pub fn set_actnorm(&mut self, block: usize, actnorm: &ActNorm) -> Result<()> {
        let d = self.spec.dim;
        check_dim("actnorm log scale", d, actnorm.log_scale.len())?;
        check_dim("actnorm shift", d, actnorm.shift.len())?;
        let off = self.blocks[block].actnorm_offset;
        self.params[off..off + d].copy_from_slice(&actnorm.log_scale);
        self.params[off + d..off + 2 * d].copy_from_slice(&actnorm.shift);
        self.actnorm_initialized = true;
        Ok(())
    }

    /// The coordinate partition `(first, second)` used by a coupling block.
    pub fn block_split(&self, block: usize) -> (&[usize], &[usize]) {
        let b = &self.blocks[block];
        (&b.first, &b.second)
    }

    fn check_inputs(&self, x: &ArrayView2<f64>, cond: &ArrayView2<f64>) -> Result<()> {
        check_dim("flow input width", self.spec.dim, x.ncols())?;
        check_dim("flow condition width", self.spec.cond_dim, cond.ncols())?;
        check_dim("flow condition rows", x.nrows(), cond.nrows())?;
        if let Some(s) = x.as_slice() {
            check_finite("flow input", s)?;
        } else {
            check_finite("flow input", &x.iter().copied().collect::<Vec<_>>())?;
        }
        check_finite("flow condition", &cond.iter().copied().collect::<Vec<_>>())
    }

    fn encode(&self, cond: ArrayView2<f64>, tape: bool) -> Result<(Array2<f64>, Option<MlpTape>)> {
        match &self.encoder {
            None => Ok((Array2::zeros((cond.nrows(), 0)), None)),
            Some(enc) => {
                let p = &self.params[enc.range()];
                if tape {
                    let (h, t) = enc.layout.forward_tape(p, cond)?;
                    Ok((h, Some(t)))
                } else {
                    Ok((enc.layout.forward(p, cond)?, None))
                }
            }
        }
    }

    fn block_features(
        &self,
        block: &Block,
        encoded: &Array2<f64>,
        tape: bool,
    ) -> Result<(Array2<f64>, Option<MlpTape>)> {
        match &block.head {
            None => Ok((encoded.clone(), None)),
            Some(h) => {
                let p = &self.params[h.range()];
                if tape {
                    let (f, t) = h.layout.forward_tape(p, encoded.view())?;
                    Ok((f, Some(t)))
                } else {
                    Ok((h.layout.forward(p, encoded.view())?, None))
                }
            }
        }
    }

    /// Runs the subnet and returns `(raw_scale, clamped_scale, translation, tape)`.
    #[allow(clippy::type_complexity)]
    fn coupling_params(
        &self,
        net: &SubNet,
        passive: &Array2<f64>,
        features: &Array2<f64>,
        tape: bool,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Option<MlpTape>)> {
        let input = concatenate![Axis(1), passive.view(), features.view()];
        let p = &self.params[net.range()];
        let (out, t) = if tape {
            let (o, t) = net.layout.forward_tape(p, input.view())?;
            (o, Some(t))
        } else {
            (net.layout.forward(p, input.view())?, None)
        };
        let half = out.ncols() / 2;
        let raw = out.slice(s![.., ..half]).to_owned();
        let clamp = self.spec.clamp;
        let scale = raw.mapv(|r| soft_clamp(r, clamp));
        let shift = out.slice(s![.., half..]).to_owned();
        Ok((raw, scale, shift, t))
    }

    fn run(
        &self,
        x: ArrayView2<f64>,
        cond: ArrayView2<f64>,
        keep_tape: bool,
    ) -> Result<(Array2<f64>, Array1<f64>, Option<FlowTape>)> {
        self.check_inputs(&x, &cond)?;
        let n = x.nrows();
        let d = self.spec.dim;
        let (encoded, enc_tape) = self.encode(cond, keep_tape)?;
        let mut h = x.to_owned();
        let mut logdet = Array1::<f64>::zeros(n);
        let mut block_tapes = Vec::new();
        for block in &self.blocks {
            let (features, head_tape) = self.block_features(block, &encoded, keep_tape)?;
            let x_first = h.select(Axis(1), &block.first);
            let x_second = h.select(Axis(1), &block.second);

            let (first_raw, first_scale, first_shift, first_tape) =
                self.coupling_params(&block.first_net, &x_second, &features, keep_tape)?;
            let y_first = &x_first * &first_scale.mapv(f64::exp) + &first_shift;
            logdet += &first_scale.sum_axis(Axis(1));

            let (second_raw, second_scale, y_second, second_tape) = match &block.second_net {
                Some(net) => {
                    let (raw, scale, shift, t) =
                        self.coupling_params(net, &y_first, &features, keep_tape)?;
                    let y = &x_second * &scale.mapv(f64::exp) + &shift;
                    logdet += &scale.sum_axis(Axis(1));
                    (raw, scale, y, t)
                }
                None => (
                    Array2::zeros((n, 0)),
                    Array2::zeros((n, 0)),
                    x_second.clone(),
                    None,
                ),
            };

            let mut coupled = Array2::zeros((n, d));
            write_columns(&mut coupled, &block.first, &y_first);
            write_columns(&mut coupled, &block.second, &y_second);

            let off = block.actnorm_offset;
            let log_scale = ndarray::ArrayView1::from(&self.params[off..off + d]);
            let shift = ndarray::ArrayView1::from(&self.params[off + d..off + 2 * d]);
            h = &coupled * &log_scale.mapv(f64::exp) + shift;
            logdet += log_scale.sum();

            if keep_tape {
                block_tapes.push(BlockTape {
                    head: head_tape,
                    features,
                    x_first,
                    x_second,
                    first_tape: first_tape.expect("tape requested"),
                    first_raw,
                    first_scale,
                    second_tape,
                    second_raw,
                    second_scale,
                    coupled,
                });
            }
        }
        check_finite(
            "flow output",
            h.as_slice().expect("owned arrays are contiguous"),
        )?;
        check_finite(
            "flow log-determinant",
            logdet.as_slice().expect("contiguous"),
        )?;
        let tape = keep_tape.then(|| FlowTape {
            encoder: enc_tape,
            blocks: block_tapes,
        });
        Ok((h, logdet, tape))
    }

    /// Maps data to the latent space: returns `z` and `log |det dz/dx|` per row.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        cond: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let (z, logdet, _) = self.run(x, cond, false)?;
        Ok((z, logdet))
    }

    pub fn inverse(&self, z: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&z, &cond)?;
        let n = z.nrows();
        let d = self.spec.dim;
        let (encoded, _) = self.encode(cond, false)?;
        let mut h = z.to_owned();
        for block in self.blocks.iter().rev() {
            let off = block.actnorm_offset;
            let log_scale = ndarray::ArrayView1::from(&self.params[off..off + d]);
            let shift = ndarray::ArrayView1::from(&self.params[off + d..off + 2 * d]);
            let coupled = (&h - &shift) * &log_scale.mapv(|v| (-v).exp());
            let (features, _) = self.block_features(block, &encoded, false)?;
            let y_first = coupled.select(Axis(1), &block.first);
            let y_second = coupled.select(Axis(1), &block.second);
            let x_second = match &block.second_net {
                Some(net) => {
                    let (_, scale, shift, _) =
                        self.coupling_params(net, &y_first, &features, false)?;
                    (&y_second - &shift) * &scale.mapv(|v| (-v).exp())
                }
                None => y_second,
            };
            let (_, scale, shift, _) =
                self.coupling_params(&block.first_net, &x_second, &features, false)?;
            let x_first = (&y_first - &shift) * &scale.mapv(|v| (-v).exp());
            h = Array2::zeros((n, d));
            write_columns(&mut h, &block.first, &x_first);
            write_columns(&mut h, &block.second, &x_second);
        }
        check_finite(
            "flow inverse",
            h.as_slice().expect("owned arrays are contiguous"),
        )?;
        Ok(h)
    }

    /// Exact `log p(x | cond)` per row.
    pub fn log_prob(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.forward(x, cond)?;
        Ok(standard_normal_logpdf(&z) + &logdet)
    }

    pub fn log_prob_one(&self, x: &[f64], cond: &[f64]) -> Result<f64> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let cv = ArrayView2::from_shape((1, cond.len()), cond).expect("row view");
        Ok(self.log_prob(xv, cv)?[0])
    }

    /// Draws one sample per condition row.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        cond: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let z = Array2::from_shape_fn((cond.nrows(), self.spec.dim), |_| {
            rng.sample(StandardNormal)
        });
        self.inverse(z.view(), cond)
    }

    /// Every clamped scale exponent the coupling blocks produce on this batch.
    pub fn scale_exponents(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (_, _, tape) = self.run(x, cond, true)?;
        let tape = tape.expect("tape requested");
        Ok(tape
            .blocks
            .iter()
            .flat_map(|b| b.first_scale.iter().chain(b.second_scale.iter()).copied())
            .collect())
    }

    /// Data-dependent ActNorm initialization: each layer maps this batch to
    /// zero mean and unit variance per dimension.
    pub fn initialize_actnorm(&mut self, x: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<()> {
        let d = self.spec.dim;
        for k in 0..self.blocks.len() {
            let off = self.blocks[k].actnorm_offset;
            self.params[off..off + 2 * d]
                .iter_mut()
                .for_each(|p| *p = 0.0);
        }
        for k in 0..self.blocks.len() {
            // Blocks after k are still identity ActNorm, so the full forward
            // pass exposes the coupling output of block k through its tape.
            let (_, _, tape) = self.run(x, cond, true)?;
            let coupled = &tape.expect("tape requested").blocks[k].coupled;
            let mean = coupled.mean_axis(Axis(0)).expect("non-empty batch");
            let std = coupled.std_axis(Axis(0), 0.0);
            let off = self.blocks[k].actnorm_offset;
            for j in 0..d {
                let log_scale = -std[j].max(ACTNORM_MIN_STD).ln();
                self.params[off + j] = log_scale;
                self.params[off + d + j] = -mean[j] * log_scale.exp();
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    /// Mean negative log-likelihood of the batch and its parameter gradient.
    pub fn nll_and_grad(
        &self,
        x: ArrayView2<f64>,
        cond: ArrayView2<f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let (z, logdet, tape) = self.run(x, cond, true)?;
        let log_prob = standard_normal_logpdf(&z) + &logdet;
        let nll = -log_prob.mean().expect("non-empty");
        let inv_n = 1.0 / n as f64;
        let grad_z = &z * inv_n;
        let grad_logdet = Array1::from_elem(n, -inv_n);
        let mut grads = vec![0.0; self.params.len()];
        self.backward(
            &tape.expect("tape requested"),
            grad_z,
            &grad_logdet,
            &mut grads,
        );
        check_finite("flow gradient", &grads)?;
        Ok((nll, grads))
    }

    /// Reverse pass from `dL/dz` and `dL/dlogdet`; accumulates parameter
    /// gradients and returns `dL/dx`.
    fn backward(
        &self,
        tape: &FlowTape,
        grad_z: Array2<f64>,
        grad_logdet: &Array1<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let d = self.spec.dim;
        let n = grad_z.nrows();
        let clamp = self.spec.clamp;
        let w = grad_logdet.view().insert_axis(Axis(1));
        let features_width = tape.blocks.first().map_or(0, |b| b.features.ncols());
        let encoded_width = self.encoder.as_ref().map_or(0, |e| e.layout.output_dim());
        let mut grad_encoded = Array2::<f64>::zeros((n, encoded_width));
        let mut g = grad_z;
        for (block, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            // ActNorm.
            let off = block.actnorm_offset;
            let scale = ndarray::ArrayView1::from(&self.params[off..off + d]).mapv(f64::exp);
            let scaled = &bt.coupled * &scale;
            let g_log_scale = (&g * &scaled).sum_axis(Axis(0)) + grad_logdet.sum();
            let g_shift = g.sum_axis(Axis(0));
            for j in 0..d {
                grads[off + j] += g_log_scale[j];
                grads[off + d + j] += g_shift[j];
            }
            g = &g * &scale;

            let mut g_first = g.select(Axis(1), &block.first);
            let mut g_second = g.select(Axis(1), &block.second);
            let mut g_features = Array2::<f64>::zeros((n, features_width));
            let n_first = block.first.len();
            let n_second = block.second.len();

            // Second half: y2 = x2 * exp(s2) + t2, (s2, t2) = net([y1, features]).
            if let Some(net) = &block.second_net {
                let e = bt.second_scale.mapv(f64::exp);
                let g_scale = &g_second * &bt.x_second * &e + w;
                let g_raw = &g_scale * &bt.second_raw.mapv(|r| soft_clamp_grad(r, clamp));
                let g_out = concatenate![Axis(1), g_raw, g_second];
                let range = net.range();
                let (p, gp) = (&self.params[range.clone()], &mut grads[range]);
                let g_in = net.layout.backward(
                    p,
                    bt.second_tape.as_ref().expect("second tape"),
                    g_out.view(),
                    gp,
                );
                g_second = &g_second * &e;
                g_first += &g_in.slice(s![.., ..n_first]);
                g_features += &g_in.slice(s![.., n_first..]);
            }

            // First half: y1 = x1 * exp(s1) + t1, (s1, t1) = net([x2, features]).
            {
                let net = &block.first_net;
                let e = bt.first_scale.mapv(f64::exp);
                let g_scale = &g_first * &bt.x_first * &e + w;
                let g_raw = &g_scale * &bt.first_raw.mapv(|r| soft_clamp_grad(r, clamp));
                let g_out = concatenate![Axis(1), g_raw, g_first];
                let range = net.range();
                let (p, gp) = (&self.params[range.clone()], &mut grads[range]);
                let g_in = net.layout.backward(p, &bt.first_tape, g_out.view(), gp);
                g_first = &g_first * &e;
                g_second += &g_in.slice(s![.., ..n_second]);
                g_features += &g_in.slice(s![.., n_second..]);
            }

            if let (Some(head), Some(head_tape)) = (&block.head, &bt.head) {
                let range = head.range();
                let (p, gp) = (&self.params[range.clone()], &mut grads[range]);
                grad_encoded += &head.layout.backward(p, head_tape, g_features.view(), gp);
            }

            let mut g_x = Array2::zeros((n, d));
            write_columns(&mut g_x, &block.first, &g_first);
            write_columns(&mut g_x, &block.second, &g_second);
            g = g_x;
        }
        if let (Some(enc), Some(enc_tape)) = (&self.encoder, &tape.encoder) {
            let range = enc.range();
            let (p, gp) = (&self.params[range.clone()], &mut grads[range]);
            enc.layout.backward(p, enc_tape, grad_encoded.view(), gp);
        }
        g
    }
}

/// `log N(z; 0, I)` per row.
pub fn standard_normal_logpdf(z: &Array2<f64>) -> Array1<f64> {
    let d = z.ncols() as f64;
    z.map_axis(Axis(1), |row| {
        -0.5 * row.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * LOG_2PI
    })
}
