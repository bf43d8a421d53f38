//! Forward and reverse-mode kernels for each layer type, on flat row-major slices.
//!
//! Weight matrices are stored input-major (`[in][out]`) so the inner loops
//! run over contiguous output lanes.

use crate::scalar::{sigmoid, Scalar};

/// `out[j] += Σ_k x[k] · w[k][j]`
#[inline]
pub(crate) fn acc_xw<T: Scalar>(x: &[T], w: &[T], out: &mut [T]) {
    let m = out.len();
    debug_assert_eq!(w.len(), x.len() * m);
    for (k, &xk) in x.iter().enumerate() {
        if xk == T::zero() {
            continue;
        }
        let row = &w[k * m..(k + 1) * m];
        for (o, &wk) in out.iter_mut().zip(row) {
            *o += xk * wk;
        }
    }
}

/// `dx[k] += Σ_j w[k][j] · dz[j]`
#[inline]
pub(crate) fn acc_wdz<T: Scalar>(w: &[T], dz: &[T], dx: &mut [T]) {
    let m = dz.len();
    for (k, d) in dx.iter_mut().enumerate() {
        let row = &w[k * m..(k + 1) * m];
        let mut s = T::zero();
        for (&wk, &g) in row.iter().zip(dz) {
            s += wk * g;
        }
        *d += s;
    }
}

/// `dw[k][j] += x[k] · dz[j]`
#[inline]
pub(crate) fn acc_outer<T: Scalar>(x: &[T], dz: &[T], dw: &mut [T]) {
    let m = dz.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk == T::zero() {
            continue;
        }
        let row = &mut dw[k * m..(k + 1) * m];
        for (d, &g) in row.iter_mut().zip(dz) {
            *d += xk * g;
        }
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---------------------------------------------------------------- convolution

/// Same-padded, stride-1 2D cross-correlation followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub rows: usize,
    pub cols: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel side.
    pub kernel: usize,
}

impl ConvGeom {
    pub fn input_len(&self) -> usize {
        self.rows * self.cols * self.in_channels
    }

    pub fn output_len(&self) -> usize {
        self.rows * self.cols * self.out_channels
    }

    /// Weight layout `[ki][kj][in][out]`.
    pub fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }

    fn taps(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let pad = self.kernel / 2;
        let (rows, cols, k) = (self.rows as isize, self.cols as isize, self.kernel);
        (0..k * k).filter_map(move |t| {
            let (di, dj) = (t / k, t % k);
            let ii = i as isize + di as isize - pad as isize;
            let jj = j as isize + dj as isize - pad as isize;
            (ii >= 0 && ii < rows && jj >= 0 && jj < cols).then(|| (t, ii as usize * cols as usize + jj as usize))
        })
    }
}

/// Returns the post-ReLU output, `rows × cols × out_channels`.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, input: &[T], weights: &[T], bias: &[T]) -> Vec<T> {
    assert_eq!(input.len(), g.input_len(), "conv input shape");
    assert_eq!(weights.len(), g.weight_len(), "conv weight shape");
    assert_eq!(bias.len(), g.out_channels, "conv bias shape");
    let (cin, cout) = (g.in_channels, g.out_channels);
    let mut out = vec![T::zero(); g.output_len()];
    for i in 0..g.rows {
        for j in 0..g.cols {
            let o = &mut out[(i * g.cols + j) * cout..][..cout];
            o.copy_from_slice(bias);
            for (tap, src) in g.taps(i, j) {
                let x = &input[src * cin..][..cin];
                let w = &weights[tap * cin * cout..][..cin * cout];
                acc_xw(x, w, o);
            }
            for v in o.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
/// `d_out` is the gradient with respect to the post-ReLU output.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    output: &[T],
    weights: &[T],
    d_out: &[T],
    d_weights: &mut [T],
    d_bias: &mut [T],
    mut d_input: Option<&mut [T]>,
) {
    let (cin, cout) = (g.in_channels, g.out_channels);
    let mut dz = vec![T::zero(); cout];
    for i in 0..g.rows {
        for j in 0..g.cols {
            let base = (i * g.cols + j) * cout;
            let mut any = false;
            for o in 0..cout {
                dz[o] = if output[base + o] > T::zero() {
                    any = true;
                    d_out[base + o]
                } else {
                    T::zero()
                };
            }
            if !any {
                continue;
            }
            add_into(d_bias, &dz);
            for (tap, src) in g.taps(i, j) {
                let x = &input[src * cin..][..cin];
                let wrange = tap * cin * cout..(tap + 1) * cin * cout;
                acc_outer(x, &dz, &mut d_weights[wrange.clone()]);
                if let Some(dx) = d_input.as_deref_mut() {
                    acc_wdz(&weights[wrange], &dz, &mut dx[src * cin..][..cin]);
                }
            }
        }
    }
}

// ----------------------------------------------------------------------- LSTM

/// LSTM weights. Gate blocks are ordered forget, input, output, candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a, T> {
    /// `[input][4·units]`
    pub w: &'a [T],
    /// `[units][4·units]`
    pub u: &'a [T],
    /// `[4·units]`
    pub b: &'a [T],
    pub input: usize,
    pub units: usize,
}

pub struct LstmGrads<'a, T> {
    pub w: &'a mut [T],
    pub u: &'a mut [T],
    pub b: &'a mut [T],
}

/// Gate activations of one step: `[f, i, o, c̃]`, each `units` wide.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep<T> {
    pub gates: Vec<T>,
    pub h: Vec<T>,
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
}

pub fn lstm_step<T: Scalar>(p: &LstmWeights<'_, T>, x: &[T], h_prev: &[T], c_prev: &[T]) -> LstmStep<T> {
    let n = p.units;
    let mut z = p.b.to_vec();
    acc_xw(x, p.w, &mut z);
    acc_xw(h_prev, p.u, &mut z);
    for v in &mut z[..3 * n] {
        *v = sigmoid(*v);
    }
    for v in &mut z[3 * n..] {
        *v = v.tanh();
    }
    let mut c = vec![T::zero(); n];
    let mut tanh_c = vec![T::zero(); n];
    let mut h = vec![T::zero(); n];
    for k in 0..n {
        let (f, i, o, g) = (z[k], z[n + k], z[2 * n + k], z[3 * n + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    LstmStep { gates: z, h, c, tanh_c }
}

// ------------------------------------------------------------------------ GRU

/// GRU weights. Input blocks are ordered update, reset, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights<'a, T> {
    /// `[input][3·units]`
    pub w: &'a [T],
    /// `[units][2·units]`, update and reset gates.
    pub u_zr: &'a [T],
    /// `[units][units]`, candidate.
    pub u_h: &'a [T],
    /// `[3·units]`
    pub b: &'a [T],
    pub input: usize,
    pub units: usize,
}

pub struct GruGrads<'a, T> {
    pub w: &'a mut [T],
    pub u_zr: &'a mut [T],
    pub u_h: &'a mut [T],
    pub b: &'a mut [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruStep<T> {
    pub z: Vec<T>,
    pub r: Vec<T>,
    /// Candidate state.
    pub cand: Vec<T>,
    /// `r ⊙ h_prev`
    pub rh: Vec<T>,
    pub h: Vec<T>,
}

pub fn gru_step<T: Scalar>(p: &GruWeights<'_, T>, x: &[T], h_prev: &[T]) -> GruStep<T> {
    let n = p.units;
    let mut a = p.b.to_vec();
    acc_xw(x, p.w, &mut a);
    acc_xw(h_prev, p.u_zr, &mut a[..2 * n]);
    let z: Vec<T> = a[..n].iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<T> = a[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&r, &h)| r * h).collect();
    let mut ah = a[2 * n..].to_vec();
    acc_xw(&rh, p.u_h, &mut ah);
    let cand: Vec<T> = ah.iter().map(|v| v.tanh()).collect();
    let h = (0..n).map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * cand[k]).collect();
    GruStep { z, r, cand, rh, h }
}

// ------------------------------------------------------------------ sequences

/// Recurrent weights for one scan direction.
#[derive(Clone, Copy, Debug)]
pub enum CellWeights<'a, T> {
    Lstm(LstmWeights<'a, T>),
    Gru(GruWeights<'a, T>),
}

pub enum CellGrads<'a, T> {
    Lstm(LstmGrads<'a, T>),
    Gru(GruGrads<'a, T>),
}

impl<T> CellWeights<'_, T> {
    pub fn units(&self) -> usize {
        match self {
            CellWeights::Lstm(p) => p.units,
            CellWeights::Gru(p) => p.units,
        }
    }

    pub fn input(&self) -> usize {
        match self {
            CellWeights::Lstm(p) => p.input,
            CellWeights::Gru(p) => p.input,
        }
    }
}

/// Cached activations of one scan, in step order.
#[derive(Clone, Debug)]
pub enum ScanCache<T> {
    Lstm(Vec<LstmStep<T>>),
    Gru(Vec<GruStep<T>>),
}

fn step_order(len: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    }
}

/// Runs one direction over `len` tokens from a zero state. Hidden states are
/// returned by token position (`len × units`), whatever the scan direction.
pub fn scan<T: Scalar>(p: &CellWeights<'_, T>, tokens: &[T], len: usize, reverse: bool) -> (Vec<T>, ScanCache<T>) {
    let (d, n) = (p.input(), p.units());
    assert_eq!(tokens.len(), len * d, "recurrent input shape");
    let mut hs = vec![T::zero(); len * n];
    let zeros = vec![T::zero(); n];
    let order = step_order(len, reverse);
    let cache = match p {
        CellWeights::Lstm(w) => {
            let mut steps: Vec<LstmStep<T>> = Vec::with_capacity(len);
            for &pos in &order {
                let x = &tokens[pos * d..(pos + 1) * d];
                let (h_prev, c_prev) = match steps.last() {
                    Some(s) => (&s.h[..], &s.c[..]),
                    None => (&zeros[..], &zeros[..]),
                };
                let s = lstm_step(w, x, h_prev, c_prev);
                hs[pos * n..(pos + 1) * n].copy_from_slice(&s.h);
                steps.push(s);
            }
            ScanCache::Lstm(steps)
        }
        CellWeights::Gru(w) => {
            let mut steps: Vec<GruStep<T>> = Vec::with_capacity(len);
            for &pos in &order {
                let x = &tokens[pos * d..(pos + 1) * d];
                let h_prev = steps.last().map_or(&zeros[..], |s| &s.h[..]);
                let s = gru_step(w, x, h_prev);
                hs[pos * n..(pos + 1) * n].copy_from_slice(&s.h);
                steps.push(s);
            }
            ScanCache::Gru(steps)
        }
    };
    (hs, cache)
}

/// Backpropagation through time for one scan direction.
///
/// `d_hs` holds the gradient of each position's hidden state (`len × units`);
/// token gradients are accumulated into `d_tokens`.
#[allow(clippy::too_many_arguments)]
pub fn scan_backward<T: Scalar>(
    p: &CellWeights<'_, T>,
    grads: &mut CellGrads<'_, T>,
    tokens: &[T],
    len: usize,
    reverse: bool,
    cache: &ScanCache<T>,
    d_hs: &[T],
    d_tokens: &mut [T],
) {
    let (d, n) = (p.input(), p.units());
    let order = step_order(len, reverse);
    let zeros = vec![T::zero(); n];
    let mut dh_next = vec![T::zero(); n];
    match (p, grads, cache) {
        (CellWeights::Lstm(w), CellGrads::Lstm(g), ScanCache::Lstm(steps)) => {
            let mut dc_next = vec![T::zero(); n];
            let mut dz = vec![T::zero(); 4 * n];
            for s in (0..len).rev() {
                let pos = order[s];
                let st = &steps[s];
                let (h_prev, c_prev) = if s > 0 {
                    (&steps[s - 1].h[..], &steps[s - 1].c[..])
                } else {
                    (&zeros[..], &zeros[..])
                };
                let x = &tokens[pos * d..(pos + 1) * d];
                for k in 0..n {
                    let dh = d_hs[pos * n + k] + dh_next[k];
                    let (f, i, o, gc) = (st.gates[k], st.gates[n + k], st.gates[2 * n + k], st.gates[3 * n + k]);
                    let tc = st.tanh_c[k];
                    let dc = dh * o * (T::one() - tc * tc) + dc_next[k];
                    dz[k] = dc * c_prev[k] * f * (T::one() - f);
                    dz[n + k] = dc * gc * i * (T::one() - i);
                    dz[2 * n + k] = dh * tc * o * (T::one() - o);
                    dz[3 * n + k] = dc * i * (T::one() - gc * gc);
                    dc_next[k] = dc * f;
                }
                add_into(g.b, &dz);
                acc_outer(x, &dz, g.w);
                acc_outer(h_prev, &dz, g.u);
                acc_wdz(w.w, &dz, &mut d_tokens[pos * d..(pos + 1) * d]);
                dh_next.iter_mut().for_each(|v| *v = T::zero());
                acc_wdz(w.u, &dz, &mut dh_next);
            }
        }
        (CellWeights::Gru(w), CellGrads::Gru(g), ScanCache::Gru(steps)) => {
            let mut da = vec![T::zero(); 3 * n];
            let mut d_rh = vec![T::zero(); n];
            for s in (0..len).rev() {
                let pos = order[s];
                let st = &steps[s];
                let h_prev = if s > 0 { &steps[s - 1].h[..] } else { &zeros[..] };
                let x = &tokens[pos * d..(pos + 1) * d];
                let dh: Vec<T> = (0..n).map(|k| d_hs[pos * n + k] + dh_next[k]).collect();
                // candidate pre-activation
                for k in 0..n {
                    da[2 * n + k] = dh[k] * st.z[k] * (T::one() - st.cand[k] * st.cand[k]);
                }
                d_rh.iter_mut().for_each(|v| *v = T::zero());
                acc_wdz(w.u_h, &da[2 * n..], &mut d_rh);
                acc_outer(&st.rh, &da[2 * n..], g.u_h);
                for k in 0..n {
                    let dzg = dh[k] * (st.cand[k] - h_prev[k]);
                    da[k] = dzg * st.z[k] * (T::one() - st.z[k]);
                    let dr = d_rh[k] * h_prev[k];
                    da[n + k] = dr * st.r[k] * (T::one() - st.r[k]);
                    dh_next[k] = dh[k] * (T::one() - st.z[k]) + d_rh[k] * st.r[k];
                }
                add_into(g.b, &da);
                acc_outer(x, &da, g.w);
                acc_outer(h_prev, &da[..2 * n], g.u_zr);
                acc_wdz(w.w, &da, &mut d_tokens[pos * d..(pos + 1) * d]);
                acc_wdz(w.u_zr, &da[..2 * n], &mut dh_next);
            }
        }
        _ => panic!("recurrent cache does not match the cell type"),
    }
}

// ------------------------------------------------------------------ attention

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'a, T> {
    /// `[width][units]`
    pub w: &'a [T],
    pub b: &'a [T],
    /// Context vector, `units`.
    pub context: &'a [T],
    pub width: usize,
    pub units: usize,
}

pub struct AttentionGrads<'a, T> {
    pub w: &'a mut [T],
    pub b: &'a mut [T],
    pub context: &'a mut [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache<T> {
    /// `tanh(W h_k + b)`, `len × units`.
    pub u: Vec<T>,
    /// Softmax weights.
    pub weights: Vec<T>,
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Attention scores `u_kᵀ u_s` for a sequence of `len` vectors.
pub fn attention_scores<T: Scalar>(p: &AttentionWeights<'_, T>, hs: &[T], len: usize) -> (Vec<T>, Vec<T>) {
    let (d, m) = (p.width, p.units);
    assert_eq!(hs.len(), len * d, "attention input shape");
    let mut u = vec![T::zero(); len * m];
    let mut scores = vec![T::zero(); len];
    for k in 0..len {
        let uk = &mut u[k * m..(k + 1) * m];
        uk.copy_from_slice(p.b);
        acc_xw(&hs[k * d..(k + 1) * d], p.w, uk);
        for v in uk.iter_mut() {
            *v = v.tanh();
        }
        scores[k] = uk.iter().zip(p.context).map(|(&a, &b)| a * b).sum();
    }
    (u, scores)
}

pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    let mut v = scores.to_vec();
    softmax_in_place(&mut v);
    v
}

/// Softmax-weighted sum of the sequence.
pub fn attention_pool<T: Scalar>(p: &AttentionWeights<'_, T>, hs: &[T], len: usize) -> (Vec<T>, AttentionCache<T>) {
    assert!(len > 0, "attention over an empty sequence");
    let (u, mut a) = attention_scores(p, hs, len);
    softmax_in_place(&mut a);
    let v = weighted_sum(hs, &a, p.width);
    (v, AttentionCache { u, weights: a })
}

pub fn weighted_sum<T: Scalar>(hs: &[T], a: &[T], width: usize) -> Vec<T> {
    let mut v = vec![T::zero(); width];
    for (k, &ak) in a.iter().enumerate() {
        for (o, &h) in v.iter_mut().zip(&hs[k * width..(k + 1) * width]) {
            *o += ak * h;
        }
    }
    v
}

pub fn attention_backward<T: Scalar>(
    p: &AttentionWeights<'_, T>,
    g: &mut AttentionGrads<'_, T>,
    hs: &[T],
    len: usize,
    cache: &AttentionCache<T>,
    d_v: &[T],
    d_hs: &mut [T],
) {
    let (d, m) = (p.width, p.units);
    let a = &cache.weights;
    let da: Vec<T> = (0..len)
        .map(|k| hs[k * d..(k + 1) * d].iter().zip(d_v).map(|(&h, &g)| h * g).sum())
        .collect();
    let mean: T = a.iter().zip(&da).map(|(&w, &x)| w * x).sum();
    let mut dpre = vec![T::zero(); m];
    for k in 0..len {
        for (dh, &g) in d_hs[k * d..(k + 1) * d].iter_mut().zip(d_v) {
            *dh += a[k] * g;
        }
        let ds = a[k] * (da[k] - mean);
        let uk = &cache.u[k * m..(k + 1) * m];
        for j in 0..m {
            g.context[j] += ds * uk[j];
            dpre[j] = ds * p.context[j] * (T::one() - uk[j] * uk[j]);
        }
        add_into(g.b, &dpre);
        acc_outer(&hs[k * d..(k + 1) * d], &dpre, g.w);
        acc_wdz(p.w, &dpre, &mut d_hs[k * d..(k + 1) * d]);
    }
}

// ---------------------------------------------------------------------- dense

pub fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], relu: bool) -> Vec<T> {
    assert_eq!(w.len(), x.len() * b.len(), "dense weight shape");
    let mut y = b.to_vec();
    acc_xw(x, w, &mut y);
    if relu {
        for v in &mut y {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    y
}

/// `d_y` is the gradient of the (post-activation) output.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    x: &[T],
    y: &[T],
    w: &[T],
    d_y: &[T],
    relu: bool,
    d_w: &mut [T],
    d_b: &mut [T],
    d_x: Option<&mut [T]>,
) {
    let dz: Vec<T> = if relu {
        y.iter().zip(d_y).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect()
    } else {
        d_y.to_vec()
    };
    add_into(d_b, &dz);
    acc_outer(x, &dz, d_w);
    if let Some(dx) = d_x {
        acc_wdz(w, &dz, dx);
    }
}
