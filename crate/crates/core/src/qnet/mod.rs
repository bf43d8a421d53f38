//! Q-network: twin convolutional encoders, a recurrent core over spatial
//! tokens, attention pooling and a dense head emitting one value per action.
//!
//! Forward pass:
//!
//! 1. local and global stacks each pass through `conv_layers` same-padded
//!    ReLU convolutions with `filters` output channels;
//! 2. each feature map is read row-major as a sequence of `filters`-wide
//!    tokens, local tokens first, then global tokens;
//! 3. the recurrent core scans the tokens (identity for [`CoreKind::None`],
//!    forward+backward concatenation for the bidirectional cores);
//! 4. attention pooling (or a plain mean when attention is off) reduces the
//!    sequence to one vector, which is concatenated with the battery scalar;
//! 5. `hidden_layers` ReLU dense layers and a linear output of 6 Q-values.
//!
//! [`QNetwork::backward`] returns exact reverse-mode gradients for every
//! parameter array.

pub mod checkpoint;
pub mod layers;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Action;
use crate::observation::{ObsParams, Observation, CHANNELS};
use crate::scalar::Scalar;
use layers::{
    AttentionCache, AttentionGrads, AttentionWeights, CellGrads, CellWeights, ConvGeom, GruGrads, GruWeights,
    LstmGrads, LstmWeights, ScanCache,
};
pub use params::{ParamTensor, Params};

pub const ACTIONS: usize = Action::COUNT;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoreKind {
    None,
    #[default]
    Lstm,
    BiLstm,
    Gru,
    BiGru,
}

impl CoreKind {
    pub const ALL: [CoreKind; 5] = [CoreKind::None, CoreKind::Lstm, CoreKind::BiLstm, CoreKind::Gru, CoreKind::BiGru];

    pub fn name(self) -> &'static str {
        match self {
            CoreKind::None => "none",
            CoreKind::Lstm => "lstm",
            CoreKind::BiLstm => "bilstm",
            CoreKind::Gru => "gru",
            CoreKind::BiGru => "bigru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, CoreKind::BiLstm | CoreKind::BiGru)
    }

    fn is_lstm(self) -> bool {
        matches!(self, CoreKind::Lstm | CoreKind::BiLstm)
    }
}

impl std::fmt::Display for CoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub core: CoreKind,
    pub attention: bool,
    pub conv_layers: usize,
    /// Odd kernel side.
    pub kernel: usize,
    pub filters: usize,
    /// Recurrent units per direction.
    pub units: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            core: CoreKind::Lstm,
            attention: true,
            conv_layers: 2,
            kernel: 5,
            filters: 16,
            units: 16,
            hidden: 256,
            hidden_layers: 3,
        }
    }
}

/// Input geometry of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub local_side: usize,
    pub global_side: usize,
    pub channels: usize,
}

impl NetShape {
    pub fn for_grid(grid: usize, obs: &ObsParams) -> Self {
        Self {
            local_side: obs.local_size,
            global_side: obs.global_side(grid),
            channels: CHANNELS,
        }
    }

    /// Sequence length: local plus global pixels.
    pub fn tokens(&self) -> usize {
        self.local_side * self.local_side + self.global_side * self.global_side
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("shape mismatch at {stage}: expected {expected:?}, got {actual:?}")]
    Shape {
        stage: &'static str,
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    w: usize,
    b: usize,
    geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
enum CellIdx {
    Lstm { w: usize, u: usize, b: usize },
    Gru { w: usize, u_zr: usize, u_h: usize, b: usize },
}

#[derive(Clone, Copy, Debug)]
struct AttIdx {
    w: usize,
    b: usize,
    context: usize,
}

#[derive(Clone, Copy, Debug)]
struct DenseIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    conv_local: Vec<ConvIdx>,
    conv_global: Vec<ConvIdx>,
    token_width: usize,
    cells: Vec<CellIdx>,
    seq_width: usize,
    attention: Option<AttIdx>,
    dense: Vec<DenseIdx>,
}

fn build_layout<T: Scalar>(cfg: &NetConfig, shape: &NetShape, params: &mut Params<T>) -> Layout {
    let conv_stack = |prefix: &str, side: usize, params: &mut Params<T>| {
        let mut cin = shape.channels;
        (0..cfg.conv_layers)
            .map(|l| {
                let geom = ConvGeom {
                    rows: side,
                    cols: side,
                    in_channels: cin,
                    out_channels: cfg.filters,
                    kernel: cfg.kernel,
                };
                cin = cfg.filters;
                ConvIdx {
                    w: params.push(
                        format!("{prefix}.{l}.weight"),
                        vec![cfg.kernel, cfg.kernel, geom.in_channels, cfg.filters],
                    ),
                    b: params.push(format!("{prefix}.{l}.bias"), vec![cfg.filters]),
                    geom,
                }
            })
            .collect::<Vec<_>>()
    };
    let conv_local = conv_stack("conv_local", shape.local_side, params);
    let conv_global = conv_stack("conv_global", shape.global_side, params);
    let token_width = if cfg.conv_layers == 0 {
        shape.channels
    } else {
        cfg.filters
    };

    let n = cfg.units;
    let directions: &[&str] = match cfg.core {
        CoreKind::None => &[],
        CoreKind::Lstm | CoreKind::Gru => &["fwd"],
        CoreKind::BiLstm | CoreKind::BiGru => &["fwd", "bwd"],
    };
    let cells = directions
        .iter()
        .map(|dir| {
            if cfg.core.is_lstm() {
                CellIdx::Lstm {
                    w: params.push(format!("lstm.{dir}.w"), vec![token_width, 4 * n]),
                    u: params.push(format!("lstm.{dir}.u"), vec![n, 4 * n]),
                    b: params.push(format!("lstm.{dir}.b"), vec![4 * n]),
                }
            } else {
                CellIdx::Gru {
                    w: params.push(format!("gru.{dir}.w"), vec![token_width, 3 * n]),
                    u_zr: params.push(format!("gru.{dir}.u_zr"), vec![n, 2 * n]),
                    u_h: params.push(format!("gru.{dir}.u_h"), vec![n, n]),
                    b: params.push(format!("gru.{dir}.b"), vec![3 * n]),
                }
            }
        })
        .collect::<Vec<_>>();
    let seq_width = if cells.is_empty() { token_width } else { n * cells.len() };

    let attention = cfg.attention.then(|| AttIdx {
        w: params.push("attention.w", vec![seq_width, n]),
        b: params.push("attention.b", vec![n]),
        context: params.push("attention.context", vec![n]),
    });

    let mut width = seq_width + 1;
    let mut dense = Vec::new();
    for l in 0..cfg.hidden_layers {
        dense.push(DenseIdx {
            w: params.push(format!("dense.{l}.weight"), vec![width, cfg.hidden]),
            b: params.push(format!("dense.{l}.bias"), vec![cfg.hidden]),
        });
        width = cfg.hidden;
    }
    dense.push(DenseIdx {
        w: params.push("q.weight", vec![width, ACTIONS]),
        b: params.push("q.bias", vec![ACTIONS]),
    });

    Layout {
        conv_local,
        conv_global,
        token_width,
        cells,
        seq_width,
        attention,
        dense,
    }
}

/// Activations kept by [`QNetwork::forward_cached`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input then the output of every conv layer.
    local_acts: Vec<Vec<T>>,
    global_acts: Vec<Vec<T>>,
    tokens: Vec<T>,
    scans: Vec<(Vec<T>, ScanCache<T>)>,
    seq: Vec<T>,
    attention: Option<AttentionCache<T>>,
    /// Input then the output of every dense layer.
    dense_acts: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    /// Pooling weights over the token sequence (attention or uniform).
    pub fn pooling_weights(&self) -> Option<&[T]> {
        self.attention.as_ref().map(|a| &a.weights[..])
    }
}

#[derive(Clone, Debug)]
pub struct QNetwork<T> {
    config: NetConfig,
    shape: NetShape,
    layout: Layout,
    pub params: Params<T>,
}

impl<T: Scalar> QNetwork<T> {
    /// Network with every parameter zero.
    pub fn zeros(config: NetConfig, shape: NetShape) -> Result<Self, NetError> {
        validate_config(&config, &shape)?;
        let mut params = Params::default();
        let layout = build_layout(&config, &shape, &mut params);
        Ok(Self {
            config,
            shape,
            layout,
            params,
        })
    }

    /// Fan-in uniform weights, zero biases, LSTM forget-gate bias of one.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, shape: NetShape, rng: &mut R) -> Result<Self, NetError> {
        let mut net = Self::zeros(config, shape)?;
        let n = config.units;
        for t in &mut net.params.tensors {
            let is_bias = t.name.ends_with(".bias") || t.name.ends_with(".b");
            if is_bias {
                if t.name.starts_with("lstm.") {
                    t.data[..n].iter_mut().for_each(|v| *v = T::one());
                }
                continue;
            }
            let fan_in = if t.name == "attention.context" {
                t.shape[0]
            } else {
                t.shape[..t.shape.len() - 1].iter().product()
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    /// Replaces the parameters; the layout must match.
    pub fn with_params(mut self, params: Params<T>) -> Result<Self, NetError> {
        if !self.params.same_layout(&params) {
            return Err(NetError::Layout("parameter arrays do not match the network layout".into()));
        }
        self.params = params;
        Ok(self)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn t(&self, i: usize) -> &[T] {
        &self.params.tensors[i].data
    }

    fn cell_weights(&self, idx: &CellIdx) -> CellWeights<'_, T> {
        let (input, units) = (self.layout.token_width, self.config.units);
        match *idx {
            CellIdx::Lstm { w, u, b } => CellWeights::Lstm(LstmWeights {
                w: self.t(w),
                u: self.t(u),
                b: self.t(b),
                input,
                units,
            }),
            CellIdx::Gru { w, u_zr, u_h, b } => CellWeights::Gru(GruWeights {
                w: self.t(w),
                u_zr: self.t(u_zr),
                u_h: self.t(u_h),
                b: self.t(b),
                input,
                units,
            }),
        }
    }

    fn attention_weights(&self, idx: &AttIdx) -> AttentionWeights<'_, T> {
        AttentionWeights {
            w: self.t(idx.w),
            b: self.t(idx.b),
            context: self.t(idx.context),
            width: self.layout.seq_width,
            units: self.config.units,
        }
    }

    fn check_obs(&self, obs: &Observation<T>) -> Result<(), NetError> {
        let s = &self.shape;
        let want_local = (s.local_side, s.local_side, s.channels);
        if obs.local.shape() != want_local {
            return Err(NetError::Shape {
                stage: "local map",
                expected: want_local,
                actual: obs.local.shape(),
            });
        }
        let want_global = (s.global_side, s.global_side, s.channels);
        if obs.global.shape() != want_global {
            return Err(NetError::Shape {
                stage: "global map",
                expected: want_global,
                actual: obs.global.shape(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, obs: &Observation<T>) -> Result<[T; ACTIONS], NetError> {
        self.forward_cached(obs).map(|(q, _)| q)
    }

    pub fn forward_cached(&self, obs: &Observation<T>) -> Result<([T; ACTIONS], ForwardCache<T>), NetError> {
        self.check_obs(obs)?;
        let lay = &self.layout;
        let run_stack = |input: &[T], stack: &[ConvIdx]| {
            let mut acts = vec![input.to_vec()];
            for c in stack {
                let next = layers::conv_forward(&c.geom, acts.last().unwrap(), self.t(c.w), self.t(c.b));
                acts.push(next);
            }
            acts
        };
        let local_acts = run_stack(&obs.local.data, &lay.conv_local);
        let global_acts = run_stack(&obs.global.data, &lay.conv_global);
        let mut tokens = local_acts.last().unwrap().clone();
        tokens.extend_from_slice(global_acts.last().unwrap());
        let len = self.shape.tokens();

        let scans: Vec<(Vec<T>, ScanCache<T>)> = lay
            .cells
            .iter()
            .enumerate()
            .map(|(dir, idx)| layers::scan(&self.cell_weights(idx), &tokens, len, dir == 1))
            .collect();
        let seq = match scans.len() {
            0 => tokens.clone(),
            1 => scans[0].0.clone(),
            _ => interleave(&scans[0].0, &scans[1].0, self.config.units, len),
        };

        let (pooled, attention) = match &lay.attention {
            Some(idx) => {
                let (v, cache) = layers::attention_pool(&self.attention_weights(idx), &seq, len);
                (v, Some(cache))
            }
            None => {
                let uniform = vec![T::one() / T::of(len as f64); len];
                (layers::weighted_sum(&seq, &uniform, lay.seq_width), None)
            }
        };

        let mut x = pooled;
        x.push(obs.battery_frac);
        let mut dense_acts = vec![x];
        let last = lay.dense.len() - 1;
        for (l, d) in lay.dense.iter().enumerate() {
            let y = layers::dense_forward(dense_acts.last().unwrap(), self.t(d.w), self.t(d.b), l < last);
            dense_acts.push(y);
        }
        let out = dense_acts.last().unwrap();
        let mut q = [T::zero(); ACTIONS];
        q.copy_from_slice(out);
        Ok((
            q,
            ForwardCache {
                local_acts,
                global_acts,
                tokens,
                scans,
                seq,
                attention,
                dense_acts,
            },
        ))
    }

    /// Accumulates `∂(d_q · Q)/∂θ` into `grads` and returns the gradient with
    /// respect to the battery input.
    pub fn backward(&self, cache: &ForwardCache<T>, d_q: &[T; ACTIONS], grads: &mut Params<T>) -> T {
        let lay = &self.layout;
        let len = self.shape.tokens();

        // dense head, last layer first
        let mut d_y = d_q.to_vec();
        let last = lay.dense.len() - 1;
        for l in (0..lay.dense.len()).rev() {
            let d = &lay.dense[l];
            let x = &cache.dense_acts[l];
            let y = &cache.dense_acts[l + 1];
            let mut d_x = vec![T::zero(); x.len()];
            let (gw, gb) = two_mut(&mut grads.tensors, d.w, d.b);
            layers::dense_backward(x, y, self.t(d.w), &d_y, l < last, &mut gw.data, &mut gb.data, Some(&mut d_x));
            d_y = d_x;
        }
        let d_battery = d_y[lay.seq_width];
        let d_pooled = &d_y[..lay.seq_width];

        // pooling
        let mut d_seq = vec![T::zero(); cache.seq.len()];
        match (&lay.attention, &cache.attention) {
            (Some(idx), Some(att)) => {
                let p = self.attention_weights(idx);
                let [gw, gb, gc] = three_mut(&mut grads.tensors, idx.w, idx.b, idx.context);
                let mut g = AttentionGrads {
                    w: &mut gw.data,
                    b: &mut gb.data,
                    context: &mut gc.data,
                };
                layers::attention_backward(&p, &mut g, &cache.seq, len, att, d_pooled, &mut d_seq);
            }
            _ => {
                let w = T::one() / T::of(len as f64);
                for k in 0..len {
                    for (d, &g) in d_seq[k * lay.seq_width..(k + 1) * lay.seq_width].iter_mut().zip(d_pooled) {
                        *d += w * g;
                    }
                }
            }
        }

        // recurrent core
        let d_tokens = if lay.cells.is_empty() {
            d_seq
        } else {
            let n = self.config.units;
            let mut d_tokens = vec![T::zero(); cache.tokens.len()];
            let per_dir: Vec<Vec<T>> = if lay.cells.len() == 1 {
                vec![d_seq]
            } else {
                deinterleave(&d_seq, n, len)
            };
            for (dir, idx) in lay.cells.iter().enumerate() {
                let p = self.cell_weights(idx);
                let mut g = cell_grads(&mut grads.tensors, idx);
                let (_, scan_cache) = &cache.scans[dir];
                layers::scan_backward(&p, &mut g, &cache.tokens, len, dir == 1, scan_cache, &per_dir[dir], &mut d_tokens);
            }
            d_tokens
        };

        // conv stacks; the split point is the end of the local feature map
        let split = cache.local_acts.last().unwrap().len();
        self.conv_stack_backward(&lay.conv_local, &cache.local_acts, &d_tokens[..split], grads);
        self.conv_stack_backward(&lay.conv_global, &cache.global_acts, &d_tokens[split..], grads);
        d_battery
    }

    fn conv_stack_backward(&self, stack: &[ConvIdx], acts: &[Vec<T>], d_out: &[T], grads: &mut Params<T>) {
        let mut d = d_out.to_vec();
        for l in (0..stack.len()).rev() {
            let c = &stack[l];
            let mut d_in = (l > 0).then(|| vec![T::zero(); acts[l].len()]);
            let (gw, gb) = two_mut(&mut grads.tensors, c.w, c.b);
            layers::conv_backward(
                &c.geom,
                &acts[l],
                &acts[l + 1],
                self.t(c.w),
                &d,
                &mut gw.data,
                &mut gb.data,
                d_in.as_deref_mut(),
            );
            match d_in {
                Some(v) => d = v,
                None => break,
            }
        }
    }

    /// Gradient of `d_q · Q(obs)` for every parameter, plus the battery input gradient.
    pub fn gradient(&self, obs: &Observation<T>, d_q: &[T; ACTIONS]) -> Result<(Params<T>, T), NetError> {
        let (_, cache) = self.forward_cached(obs)?;
        let mut grads = self.params.zeros_like();
        let db = self.backward(&cache, d_q, &mut grads);
        Ok((grads, db))
    }
}

/// Q-values for one observation.
pub fn q_forward<T: Scalar>(obs: &Observation<T>, net: &QNetwork<T>) -> Result<[T; ACTIONS], NetError> {
    net.forward(obs)
}

/// Parameter gradients of `output_gradient · Q(obs)`.
pub fn q_backward<T: Scalar>(obs: &Observation<T>, net: &QNetwork<T>, output_gradient: &[T; ACTIONS]) -> Result<Params<T>, NetError> {
    net.gradient(obs, output_gradient).map(|(g, _)| g)
}

fn validate_config(cfg: &NetConfig, shape: &NetShape) -> Result<(), NetError> {
    let bad = |m: String| Err(NetError::Config(m));
    if cfg.kernel % 2 == 0 {
        return bad(format!("kernel size must be odd, got {}", cfg.kernel));
    }
    if cfg.conv_layers > 0 && cfg.filters == 0 {
        return bad("filters must be positive".into());
    }
    if cfg.units == 0 {
        return bad("recurrent units must be positive".into());
    }
    if cfg.hidden_layers > 0 && cfg.hidden == 0 {
        return bad("hidden width must be positive".into());
    }
    if shape.local_side == 0 || shape.global_side == 0 || shape.channels == 0 {
        return bad(format!("degenerate input shape {shape:?}"));
    }
    Ok(())
}

/// `[fwd_t ; bwd_t]` per position.
fn interleave<T: Scalar>(a: &[T], b: &[T], n: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * n * len);
    for t in 0..len {
        out.extend_from_slice(&a[t * n..(t + 1) * n]);
        out.extend_from_slice(&b[t * n..(t + 1) * n]);
    }
    out
}

fn deinterleave<T: Scalar>(v: &[T], n: usize, len: usize) -> Vec<Vec<T>> {
    let mut a = Vec::with_capacity(n * len);
    let mut b = Vec::with_capacity(n * len);
    for t in 0..len {
        a.extend_from_slice(&v[2 * n * t..2 * n * t + n]);
        b.extend_from_slice(&v[2 * n * t + n..2 * n * (t + 1)]);
    }
    vec![a, b]
}

fn two_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}

fn three_mut<T>(v: &mut [T], i: usize, j: usize, k: usize) -> [&mut T; 3] {
    v.get_disjoint_mut([i, j, k]).expect("distinct parameter indices")
}

fn cell_grads<'a, T>(tensors: &'a mut [ParamTensor<T>], idx: &CellIdx) -> CellGrads<'a, T> {
    match *idx {
        CellIdx::Lstm { w, u, b } => {
            let [w, u, b] = tensors.get_disjoint_mut([w, u, b]).expect("distinct parameter indices");
            CellGrads::Lstm(LstmGrads {
                w: &mut w.data,
                u: &mut u.data,
                b: &mut b.data,
            })
        }
        CellIdx::Gru { w, u_zr, u_h, b } => {
            let [w, u_zr, u_h, b] = tensors
                .get_disjoint_mut([w, u_zr, u_h, b])
                .expect("distinct parameter indices");
            CellGrads::Gru(GruGrads {
                w: &mut w.data,
                u_zr: &mut u_zr.data,
                u_h: &mut u_h.data,
                b: &mut b.data,
            })
        }
    }
}

/// Runs the recurrent core of `net` over an arbitrary token sequence.
pub fn run_recurrent<T: Scalar>(net: &QNetwork<T>, tokens: &[T], len: usize) -> Result<Vec<T>, NetError> {
    if len == 0 {
        return Err(NetError::Config("recurrent core needs a nonempty sequence".into()));
    }
    let width = net.layout.token_width;
    if tokens.len() != len * width {
        return Err(NetError::Shape {
            stage: "recurrent input",
            expected: (len, width, 1),
            actual: (tokens.len() / width.max(1), width, 1),
        });
    }
    let outs: Vec<Vec<T>> = net
        .layout
        .cells
        .iter()
        .enumerate()
        .map(|(dir, idx)| layers::scan(&net.cell_weights(idx), tokens, len, dir == 1).0)
        .collect();
    Ok(match outs.len() {
        0 => tokens.to_vec(),
        1 => outs.into_iter().next().unwrap(),
        _ => interleave(&outs[0], &outs[1], net.config.units, len),
    })
}

impl<T: Scalar> QNetwork<T> {
    /// Width of the recurrent core's input tokens.
    pub fn token_width(&self) -> usize {
        self.layout.token_width
    }

    /// Width of the sequence fed to pooling.
    pub fn sequence_width(&self) -> usize {
        self.layout.seq_width
    }
}
