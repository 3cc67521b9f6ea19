//! Parameterized building blocks. Layers only hold [`ParamId`]s; the values
//! live in a [`ParamStore`] passed to every forward call.

use rand::Rng;

use crate::error::{shape_err, NumericsError, Result};
use crate::graph::{Graph, Var};
use crate::ops::Padding3;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform initialization.
pub fn glorot_uniform<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..limit)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingMode {
    Valid,
    Same,
}

impl PaddingMode {
    pub fn resolve(self, kernel: [usize; 3]) -> Padding3 {
        match self {
            PaddingMode::Valid => Padding3::valid(),
            PaddingMode::Same => Padding3::same(kernel),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: [usize; 3],
    pub padding: PaddingMode,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv3d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        padding: PaddingMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.iter().any(|&k| k == 0) || in_channels == 0 || out_channels == 0 {
            return Err(NumericsError::Config(format!(
                "{name}: kernel {kernel:?}, channels {in_channels}->{out_channels}"
            )));
        }
        let taps: usize = kernel.iter().product();
        let w = glorot_uniform(
            &[kernel[0], kernel[1], kernel[2], in_channels, out_channels],
            taps * in_channels,
            taps * out_channels,
            rng,
        );
        Ok(Self {
            weight: store.add(&format!("{name}.weight"), w)?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]))?,
            kernel,
            padding,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv3d(x, w, Some(b), self.padding.resolve(self.kernel))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the previous running statistic in each update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            momentum: 0.9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub config: BatchNormConfig,
}

impl BatchNorm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        config: BatchNormConfig,
    ) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::ones(&[channels]))?,
            config,
        })
    }

    /// Batch statistics (and a running-stat update) when `training`,
    /// running statistics otherwise.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        training: bool,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        if !training {
            let mean = store.value(self.running_mean).data().to_vec();
            let var = store.value(self.running_var).data().to_vec();
            return g.batch_norm_infer(x, gamma, beta, &mean, &var, self.config.eps);
        }
        let (y, stats) = g.batch_norm_train(x, gamma, beta, self.config.eps)?;
        let m = T::of(self.config.momentum);
        let one_m = T::one() - m;
        let unbias = if stats.count > 1 {
            T::of(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, &b) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + one_m * b * unbias;
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvBlockConfig {
    pub kernel: [usize; 3],
    pub padding: PaddingMode,
    pub channels: usize,
    pub dropout: f64,
    pub batch_norm: BatchNormConfig,
}

/// Convolution, batch normalization, ReLU, dropout.
///
/// A block whose parameters are frozen runs in inference mode: running
/// statistics are used and left untouched, and dropout is off.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: Conv3d,
    pub bn: BatchNorm,
    pub dropout: f64,
}

impl ConvBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        cfg: ConvBlockConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv3d::new(
                store,
                &format!("{name}.conv"),
                in_channels,
                cfg.channels,
                cfg.kernel,
                cfg.padding,
                rng,
            )?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cfg.channels, cfg.batch_norm)?,
            dropout: cfg.dropout,
        })
    }

    pub fn is_frozen<T: Real>(&self, store: &ParamStore<T>) -> bool {
        store.entry(self.conv.weight).frozen
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var) -> Result<Var> {
        let active = g.is_training() && !self.is_frozen(store);
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y, active)?;
        let y = g.relu(y);
        Ok(if active { g.dropout(y, self.dropout) } else { y })
    }
}

/// `inner(x) + x` with `inner` two shape-preserving conv blocks.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub first: ConvBlock,
    pub second: ConvBlock,
}

impl ResidualBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        first: ConvBlockConfig,
        second: ConvBlockConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if first.padding != PaddingMode::Same
            || second.padding != PaddingMode::Same
            || first.channels != channels
            || second.channels != channels
        {
            return Err(NumericsError::Config(format!(
                "{name}: residual blocks need same padding and {channels} channels"
            )));
        }
        Ok(Self {
            first: ConvBlock::new(store, &format!("{name}.0"), channels, first, rng)?,
            second: ConvBlock::new(store, &format!("{name}.1"), channels, second, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        let h = self.second.forward(g, store, h)?;
        if g.shape(h) != g.shape(x) {
            return shape_err(
                "residual_block",
                format!("inner {:?} vs shortcut {:?}", g.shape(h), g.shape(x)),
            );
        }
        g.add(h, x)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(
                &format!("{name}.weight"),
                glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            )?,
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[outputs]))?,
            inputs,
            outputs,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

/// One recurrent layer. Input projections for all time steps are computed
/// in a single matrix product before the time loop.
#[derive(Clone, Debug)]
pub struct RecurrentLayer {
    pub kind: CellKind,
    pub hidden: usize,
    /// `[in, G*H]` with `G` = 3 (GRU: z, r, n) or 4 (LSTM: i, f, g, o).
    pub w_input: ParamId,
    /// GRU: `[H, 2H]` for z and r. LSTM: `[H, 4H]`.
    pub w_hidden: ParamId,
    /// GRU only: `[H, H]` applied to `r ⊙ h` for the candidate.
    pub w_candidate: Option<ParamId>,
    pub bias: ParamId,
}

impl RecurrentLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: CellKind,
        inputs: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = hidden;
        match kind {
            CellKind::Gru => Ok(Self {
                kind,
                hidden,
                w_input: store.add(
                    &format!("{name}.w_input"),
                    glorot_uniform(&[inputs, 3 * h], inputs, 3 * h, rng),
                )?,
                w_hidden: store.add(
                    &format!("{name}.w_hidden"),
                    glorot_uniform(&[h, 2 * h], h, 2 * h, rng),
                )?,
                w_candidate: Some(store.add(
                    &format!("{name}.w_candidate"),
                    glorot_uniform(&[h, h], h, h, rng),
                )?),
                bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[3 * h]))?,
            }),
            CellKind::Lstm => {
                // Forget-gate bias starts at one.
                let bias = Tensor::from_fn(&[4 * h], |i| if (h..2 * h).contains(&i) { T::one() } else { T::zero() });
                Ok(Self {
                    kind,
                    hidden,
                    w_input: store.add(
                        &format!("{name}.w_input"),
                        glorot_uniform(&[inputs, 4 * h], inputs, 4 * h, rng),
                    )?,
                    w_hidden: store.add(
                        &format!("{name}.w_hidden"),
                        glorot_uniform(&[h, 4 * h], h, 4 * h, rng),
                    )?,
                    w_candidate: None,
                    bias: store.add(&format!("{name}.bias"), bias)?,
                })
            }
        }
    }

    /// Runs the layer over `seq: [B, T, F]` and returns the hidden state
    /// after every step, each `[B, H]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, seq: Var) -> Result<Vec<Var>> {
        let shape = g.shape(seq).to_vec();
        if shape.len() != 3 {
            return shape_err("recurrent", format!("sequence must be [B, T, F], got {shape:?}"));
        }
        let (b, t, f) = (shape[0], shape[1], shape[2]);
        let gates = match self.kind {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        };
        let h = self.hidden;
        let w = g.param(store, self.w_input);
        let bias = g.param(store, self.bias);
        let u = g.param(store, self.w_hidden);
        let uc = self.w_candidate.map(|id| g.param(store, id));
        let flat = g.reshape(seq, &[b * t, f])?;
        let proj = g.linear(flat, w, Some(bias))?;
        let proj = g.reshape(proj, &[b, t, gates * h])?;

        let mut hidden = g.input(Tensor::zeros(&[b, h]));
        let mut cell = g.input(Tensor::zeros(&[b, h]));
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let xt = g.slice_axis(proj, 1, step, 1)?;
            let xt = g.reshape(xt, &[b, gates * h])?;
            hidden = match self.kind {
                CellKind::Gru => gru_step(g, xt, hidden, u, uc.expect("GRU candidate weights"), h)?,
                CellKind::Lstm => {
                    let (nh, nc) = lstm_step(g, xt, hidden, cell, u, h)?;
                    cell = nc;
                    nh
                }
            };
            outputs.push(hidden);
        }
        Ok(outputs)
    }
}

/// z = σ(xz + h Uz), r = σ(xr + h Ur), n = tanh(xn + (r ⊙ h) Un),
/// h' = z ⊙ h + (1 - z) ⊙ n.
fn gru_step<T: Real>(g: &mut Graph<T>, xt: Var, h: Var, u: Var, uc: Var, hs: usize) -> Result<Var> {
    let hu = g.matmul(h, u)?;
    let xz = g.slice_axis(xt, 1, 0, hs)?;
    let xr = g.slice_axis(xt, 1, hs, hs)?;
    let xn = g.slice_axis(xt, 1, 2 * hs, hs)?;
    let hz = g.slice_axis(hu, 1, 0, hs)?;
    let hr = g.slice_axis(hu, 1, hs, hs)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, h)?;
    let rhu = g.matmul(rh, uc)?;
    let n = g.add(xn, rhu)?;
    let n = g.tanh(n);
    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}

/// Standard LSTM step; returns `(h', c')`.
fn lstm_step<T: Real>(
    g: &mut Graph<T>,
    xt: Var,
    h: Var,
    c: Var,
    u: Var,
    hs: usize,
) -> Result<(Var, Var)> {
    let hu = g.matmul(h, u)?;
    let pre = g.add(xt, hu)?;
    let i = g.slice_axis(pre, 1, 0, hs)?;
    let f = g.slice_axis(pre, 1, hs, hs)?;
    let cand = g.slice_axis(pre, 1, 2 * hs, hs)?;
    let o = g.slice_axis(pre, 1, 3 * hs, hs)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Stacked recurrent layers; layer `l` consumes the hidden sequence of
/// layer `l - 1`.
#[derive(Clone, Debug)]
pub struct StackedRecurrent {
    pub layers: Vec<RecurrentLayer>,
}

impl StackedRecurrent {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: CellKind,
        inputs: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if depth == 0 || hidden == 0 {
            return Err(NumericsError::Config(format!("{name}: depth {depth}, hidden {hidden}")));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { inputs } else { hidden };
            layers.push(RecurrentLayer::new(store, &format!("{name}.{l}"), kind, fan_in, hidden, rng)?);
        }
        Ok(Self { layers })
    }

    /// `seq: [B, T, F]` to the last layer's final hidden state `[B, H]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, seq: Var) -> Result<Var> {
        let mut seq = seq;
        let mut last = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let outs = layer.forward(g, store, seq)?;
            last = outs.last().copied();
            if l + 1 < self.layers.len() {
                let b = g.shape(outs[0])[0];
                let mut steps = Vec::with_capacity(outs.len());
                for o in outs {
                    steps.push(g.reshape(o, &[b, 1, layer.hidden])?);
                }
                seq = g.concat(&steps, 1)?;
            }
        }
        last.ok_or_else(|| NumericsError::Config("empty sequence".into()))
    }
}
