use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{check_dim, check_finite, Error, Result};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MLPCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::LeakyRelu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Shape of a dense feed-forward network. The output layer is linear; every
/// hidden layer applies `activation`.
///
/// Parameters live outside the layout in a flat slice, laid out layer by layer
/// as a row-major `(in, out)` weight block followed by `out` biases. That lets
/// a model keep several networks inside one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayout {
    widths: Vec<usize>,
    activation: Activation,
}

/// Intermediate values recorded by [`MlpLayout::forward_tape`].
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// `inputs[l]` is the input of layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl MlpLayout {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths[1..].contains(&0) {
            return Err(Error::Config(format!(
                "hidden and output widths must be positive, got {widths:?}"
            )));
        }
        Ok(Self { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(fan_in, fan_out, weight_offset, bias_offset)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_off = offset;
            let b_off = w_off + fan_in * fan_out;
            offset = b_off + fan_out;
            (fan_in, fan_out, w_off, b_off)
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    /// With `zero_last` the output layer starts at exactly zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64], zero_last: bool) {
        debug_assert_eq!(params.len(), self.n_params());
        let n_layers = self.n_layers();
        for (idx, (fan_in, fan_out, w_off, b_off)) in self.layers().enumerate() {
            let block = &mut params[w_off..b_off + fan_out];
            if (zero_last && idx + 1 == n_layers) || fan_in == 0 {
                block.iter_mut().for_each(|p| *p = 0.0);
                continue;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in block.iter_mut() {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    fn check_input(&self, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        check_dim("mlp parameters", self.n_params(), params.len())?;
        check_dim("mlp input width", self.input_dim(), x.ncols())
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(params, &x)?;
        let n_layers = self.n_layers();
        let mut h = x.to_owned();
        for (idx, (fan_in, fan_out, w_off, b_off)) in self.layers().enumerate() {
            h = self.affine(params, h.view(), fan_in, fan_out, w_off, b_off);
            if idx + 1 < n_layers {
                let act = self.activation;
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    /// Forward pass that keeps what [`MlpLayout::backward`] needs.
    pub fn forward_tape(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, MlpTape)> {
        self.check_input(params, &x)?;
        let n_layers = self.n_layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut h = x.to_owned();
        for (idx, (fan_in, fan_out, w_off, b_off)) in self.layers().enumerate() {
            let z = self.affine(params, h.view(), fan_in, fan_out, w_off, b_off);
            inputs.push(h);
            if idx + 1 < n_layers {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpTape { inputs, pre }))
    }

    fn affine(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        fan_in: usize,
        fan_out: usize,
        w_off: usize,
        b_off: usize,
    ) -> Array2<f64> {
        let weight = ArrayView2::from_shape((fan_in, fan_out), &params[w_off..b_off])
            .expect("layout offsets are consistent");
        let bias = ndarray::ArrayView1::from(&params[b_off..b_off + fan_out]);
        let mut out = Array2::zeros((x.nrows(), fan_out));
        if fan_in > 0 {
            general_mat_mul(1.0, &x, &weight, 0.0, &mut out);
        }
        out += &bias;
        out
    }

    /// Reverse pass. Accumulates (adds) parameter gradients into `grad_params`
    /// and returns the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &MlpTape,
        grad_out: ArrayView2<f64>,
        grad_params: &mut [f64],
    ) -> Array2<f64> {
        debug_assert_eq!(grad_params.len(), self.n_params());
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let mut g = grad_out.to_owned();
        for idx in (0..n_layers).rev() {
            let (fan_in, fan_out, w_off, b_off) = layers[idx];
            if idx + 1 < n_layers {
                let act = self.activation;
                let pre = &tape.pre[idx];
                let post = &tape.inputs[idx + 1];
                ndarray::Zip::from(&mut g)
                    .and(pre)
                    .and(post)
                    .for_each(|g, &p, &q| *g *= act.derivative(p, q));
            }
            let input = &tape.inputs[idx];
            {
                let (w_grad, rest) =
                    grad_params[w_off..b_off + fan_out].split_at_mut(fan_in * fan_out);
                if fan_in > 0 {
                    let mut w_grad = ArrayViewMut2::from_shape((fan_in, fan_out), w_grad)
                        .expect("layout offsets are consistent");
                    general_mat_mul(1.0, &input.t(), &g, 1.0, &mut w_grad);
                }
                for (b, col) in rest.iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
                    *b += col;
                }
            }
            let weight = ArrayView2::from_shape((fan_in, fan_out), &params[w_off..b_off])
                .expect("layout offsets are consistent");
            let mut g_in = Array2::zeros((g.nrows(), fan_in));
            if fan_in > 0 {
                general_mat_mul(1.0, &g, &weight.t(), 0.0, &mut g_in);
            }
            g = g_in;
        }
        g
    }
}

/// A layout bundled with its own parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layout: MlpLayout,
    params: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(layout: MlpLayout, rng: &mut R) -> Self {
        let mut params = vec![0.0; layout.n_params()];
        layout.init(rng, &mut params, false);
        Self { layout, params }
    }

    pub fn zeros(layout: MlpLayout) -> Self {
        let params = vec![0.0; layout.n_params()];
        Self { layout, params }
    }

    pub fn from_params(layout: MlpLayout, params: Vec<f64>) -> Result<Self> {
        check_dim("mlp parameters", layout.n_params(), params.len())?;
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &MlpLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .expect("a slice is always a valid 1 x n view");
        let out = self.layout.forward(&self.params, x)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.layout.forward(&self.params, x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        // Writing to a Vec cannot fail.
        let _ = self.write_to(&mut out);
        out
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        codec::write_u32(w, CHECKPOINT_VERSION)?;
        codec::write_u32(w, self.layout.activation.tag())?;
        codec::write_u32(w, self.layout.widths.len() as u32)?;
        for &width in &self.layout.widths {
            codec::write_u64(w, width as u64)?;
        }
        codec::write_u64(w, self.params.len() as u64)?;
        codec::write_f64s(w, &self.params)
    }

    pub fn read_from<R: std::io::Read>(r: &mut R) -> Result<Self> {
        codec::expect_magic(r, CHECKPOINT_MAGIC)?;
        let version = codec::read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported MLP checkpoint version {version}"
            )));
        }
        let activation = Activation::from_tag(codec::read_u32(r)?)?;
        let n_widths = codec::read_u32(r)? as usize;
        let widths = (0..n_widths)
            .map(|_| codec::read_u64(r).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let layout = MlpLayout::new(widths, activation)?;
        let n_params = codec::read_u64(r)? as usize;
        check_dim("mlp checkpoint parameters", layout.n_params(), n_params)?;
        let params = codec::read_f64s(r, n_params)?;
        Ok(Self { layout, params })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }
}

/// Runs `net` on `input`, evaluates `loss_fn` on the output and returns the
/// loss with its gradient with respect to the network parameters.
///
/// `loss_fn` returns the scalar loss and its gradient with respect to the
/// network output.
pub fn gradients<F>(net: &Mlp, input: ArrayView2<f64>, loss_fn: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    let (out, tape) = net.layout.forward_tape(&net.params, input)?;
    let (loss, grad_out) = loss_fn(out.view());
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: "loss",
            value: loss,
        });
    }
    check_dim("loss gradient rows", out.nrows(), grad_out.nrows())?;
    check_dim("loss gradient cols", out.ncols(), grad_out.ncols())?;
    let mut grads = vec![0.0; net.layout.n_params()];
    net.layout
        .backward(&net.params, &tape, grad_out.view(), &mut grads);
    check_finite("parameter gradient", &grads)?;
    Ok((loss, grads))
}
