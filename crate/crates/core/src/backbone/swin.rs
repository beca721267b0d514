//! Window attention over a period grid with a shifted second layer.
//!
//! The grid is zero-padded to multiples of the window size `M` and split
//! into non-overlapping `M×M` windows. The shifted layer rolls the padded
//! grid by `⌊M/2⌋` in both axes before partitioning; pixels that land in
//! the same window without being neighbours in the unrolled grid are kept
//! apart by an additive mask. Padding pixels get their own region so they
//! never leak into real pixels. Results are rolled back and cropped.

use rand::Rng;

use crate::autodiff::{Tape, Var, GATHER_ZERO};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive score for blocked query/key pairs.
pub const MASK_VALUE: f64 = -1e9;

const LN_EPS: f64 = 1e-5;

/// Width multiplier of the MLP hidden layer.
pub const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwinLayerParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub attn: AttentionParams,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwinParams {
    /// Layer 0 uses plain windows, layer 1 shifted windows.
    pub layers: [SwinLayerParams; 2],
    pub window: usize,
    pub heads: usize,
    pub channels: usize,
}

impl SwinParams {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        window: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window size must be >= 1".into()));
        }
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide d_model {channels}"
            )));
        }
        let d = channels;
        let hidden = MLP_RATIO * d;
        let mut layer = |l: usize, rng: &mut _| {
            let p = format!("{prefix}.swin.l{l}");
            let mut lin = |name: &str, fan_in: usize, fan_out: usize, rng: &mut _| {
                (
                    store.add_uniform(format!("{p}.{name}.weight"), &[fan_in, fan_out], fan_in, rng),
                    store.add_zeros(format!("{p}.{name}.bias"), &[fan_out]),
                )
            };
            let (wq, bq) = lin("q", d, d, rng);
            let (wk, bk) = lin("k", d, d, rng);
            let (wv, bv) = lin("v", d, d, rng);
            let (wo, bo) = lin("out", d, d, rng);
            let (mlp_w1, mlp_b1) = lin("mlp1", d, hidden, rng);
            let (mlp_w2, mlp_b2) = lin("mlp2", hidden, d, rng);
            SwinLayerParams {
                ln1_gain: store.add_full(format!("{p}.ln1.gain"), &[d], 1.0),
                ln1_bias: store.add_zeros(format!("{p}.ln1.bias"), &[d]),
                attn: AttentionParams {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                },
                ln2_gain: store.add_full(format!("{p}.ln2.gain"), &[d], 1.0),
                ln2_bias: store.add_zeros(format!("{p}.ln2.bias"), &[d]),
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            }
        };
        let l0 = layer(0, rng);
        let l1 = layer(1, rng);
        Ok(SwinParams {
            layers: [l0, l1],
            window,
            heads,
            channels,
        })
    }
}

/// Additive attention mask of one window (`M²×M²`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMask {
    pub size: usize,
    pub data: Vec<f64>,
}

impl ShiftMask {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn is_open(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn blocked(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Token layout of a (possibly shifted) window partition.
#[derive(Debug, Clone)]
struct WindowLayout {
    h: usize,
    w: usize,
    hp: usize,
    wp: usize,
    m: usize,
    shift: usize,
    windows: usize,
    /// Padded-grid pixel `(row, col)` feeding each token.
    source: Vec<(usize, usize)>,
    /// Region label of each token.
    labels: Vec<(isize, isize, bool)>,
}

/// Region of padded pixel `(r, c)`: the shifted window band it falls in
/// along each axis (without wrap-around), and whether it is padding.
fn region_label(r: usize, c: usize, h: usize, w: usize, m: usize, shift: usize) -> (isize, isize, bool) {
    let band = |x: usize| (x as isize - shift as isize).div_euclid(m as isize);
    (band(r), band(c), r >= h || c >= w)
}

impl WindowLayout {
    fn new(h: usize, w: usize, m: usize, shift: usize) -> Self {
        let hp = h.div_ceil(m) * m;
        let wp = w.div_ceil(m) * m;
        let (wr, wc) = (hp / m, wp / m);
        let mut source = Vec::with_capacity(hp * wp);
        let mut labels = Vec::with_capacity(hp * wp);
        for a in 0..wr {
            for b in 0..wc {
                for u in 0..m {
                    for v in 0..m {
                        let r = (a * m + u + shift) % hp;
                        let c = (b * m + v + shift) % wp;
                        source.push((r, c));
                        labels.push(region_label(r, c, h, w, m, shift));
                    }
                }
            }
        }
        WindowLayout {
            h,
            w,
            hp,
            wp,
            m,
            shift,
            windows: wr * wc,
            source,
            labels,
        }
    }

    fn tokens_per_window(&self) -> usize {
        self.m * self.m
    }

    fn masks(&self) -> Vec<ShiftMask> {
        let n = self.tokens_per_window();
        (0..self.windows)
            .map(|win| {
                let lab = &self.labels[win * n..(win + 1) * n];
                let data = (0..n * n)
                    .map(|ij| if lab[ij / n] == lab[ij % n] { 0.0 } else { MASK_VALUE })
                    .collect();
                ShiftMask { size: n, data }
            })
            .collect()
    }

    /// Gather indices from `x[H×W×d]` into tokens `[windows·M² × d]`.
    fn partition_index(&self, d: usize) -> Vec<usize> {
        let mut index = Vec::with_capacity(self.source.len() * d);
        for &(r, c) in &self.source {
            for ch in 0..d {
                index.push(if r < self.h && c < self.w {
                    (r * self.w + c) * d + ch
                } else {
                    GATHER_ZERO
                });
            }
        }
        index
    }

    /// Gather indices from tokens back to `[H×W×d]`, undoing roll and padding.
    fn merge_index(&self, d: usize) -> Vec<usize> {
        let (m, wc) = (self.m, self.wp / self.m);
        let mut index = Vec::with_capacity(self.h * self.w * d);
        for r in 0..self.h {
            for c in 0..self.w {
                let i = (r + self.hp - self.shift) % self.hp;
                let j = (c + self.wp - self.shift) % self.wp;
                let token = ((i / m) * wc + j / m) * m * m + (i % m) * m + j % m;
                debug_assert_eq!(self.source[token], (r, c));
                index.extend((0..d).map(|ch| token * d + ch));
            }
        }
        index
    }
}

/// Masks for every window of a shifted partition of a `rows×cols` grid.
pub fn build_shift_masks(rows: usize, cols: usize, m: usize) -> Result<Vec<ShiftMask>> {
    if m == 0 || rows % m != 0 || cols % m != 0 {
        return Err(Error::Contract(format!(
            "grid {rows}×{cols} is not a multiple of window {m}"
        )));
    }
    Ok(WindowLayout::new(rows, cols, m, m / 2).masks())
}

/// Masks for any grid (padded internally), shifted or not.
pub fn window_masks(rows: usize, cols: usize, m: usize, shifted: bool) -> Vec<ShiftMask> {
    WindowLayout::new(rows, cols, m, if shifted { m / 2 } else { 0 }).masks()
}

fn linear<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Window attention on the tape. Returns the output grid and the attention
/// weights `[windows·heads × M² × M²]`.
pub fn window_attention_detailed<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ParamVars,
    p: &AttentionParams,
    x: Var,
    window: usize,
    heads: usize,
    shifted: bool,
) -> Result<(Var, Var)> {
    let (h, w, d) = match *tape.shape(x) {
        [h, w, d] => (h, w, d),
        _ => return Err(Error::Contract(format!("attention expects H×W×d, got {:?}", tape.shape(x)))),
    };
    if window == 0 || heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("window {window}, heads {heads}, d_model {d}")));
    }
    let layout = WindowLayout::new(h, w, window, if shifted { window / 2 } else { 0 });
    let n = layout.tokens_per_window();
    let tokens = layout.windows * n;
    let dh = d / heads;

    let xt = tape.gather(x, layout.partition_index(d), &[tokens, d])?;
    let q = linear(tape, xt, vars.var(p.wq), vars.var(p.bq))?;
    let k = linear(tape, xt, vars.var(p.wk), vars.var(p.bk))?;
    let v = linear(tape, xt, vars.var(p.wv), vars.var(p.bv))?;

    // [tokens × d] → [windows·heads × M² × dh]
    let mut split = Vec::with_capacity(tokens * d);
    for win in 0..layout.windows {
        for head in 0..heads {
            for tok in 0..n {
                split.extend((0..dh).map(|e| (win * n + tok) * d + head * dh + e));
            }
        }
    }
    let bh = layout.windows * heads;
    let q = tape.gather(q, split.clone(), &[bh, n, dh])?;
    let k = tape.gather(k, split.clone(), &[bh, n, dh])?;
    let v = tape.gather(v, split.clone(), &[bh, n, dh])?;

    let scores = tape.batch_matmul(q, k, true)?;
    let mut scores = tape.scale(scores, S::one() / S::lit(d as f64).sqrt());
    let masks = layout.masks();
    if masks.iter().any(|m| !m.is_open()) {
        let mut data = Vec::with_capacity(bh * n * n);
        for m in &masks {
            for _ in 0..heads {
                data.extend(m.data.iter().map(|&x| S::lit(x)));
            }
        }
        let mask = tape.constant(Tensor::new(&[bh, n, n], data)?);
        scores = tape.add(scores, mask)?;
    }
    let attn = tape.softmax(scores, 2)?;
    let out = tape.batch_matmul(attn, v, false)?;

    // inverse of `split`
    let mut merge_heads = vec![0; tokens * d];
    for (dst, &src) in split.iter().enumerate() {
        merge_heads[src] = dst;
    }
    let out = tape.gather(out, merge_heads, &[tokens, d])?;
    let out = linear(tape, out, vars.var(p.wo), vars.var(p.bo))?;
    let out = tape.gather(out, layout.merge_index(d), &[h, w, d])?;
    Ok((out, attn))
}

pub fn window_attention<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ParamVars,
    p: &AttentionParams,
    x: Var,
    window: usize,
    heads: usize,
    shifted: bool,
) -> Result<Var> {
    window_attention_detailed(tape, vars, p, x, window, heads, shifted).map(|(out, _)| out)
}

fn sublayer<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ParamVars,
    lp: &SwinLayerParams,
    params: &SwinParams,
    x: Var,
    shifted: bool,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let d = shape[2];
    let eps = S::lit(LN_EPS);
    let h = tape.layer_norm(x, vars.var(lp.ln1_gain), vars.var(lp.ln1_bias), eps)?;
    let a = window_attention(tape, vars, &lp.attn, h, params.window, params.heads, shifted)?;
    let x1 = tape.add(a, x)?;
    let h = tape.layer_norm(x1, vars.var(lp.ln2_gain), vars.var(lp.ln2_bias), eps)?;
    let flat = tape.reshape(h, &[shape[0] * shape[1], d])?;
    let m = linear(tape, flat, vars.var(lp.mlp_w1), vars.var(lp.mlp_b1))?;
    let m = tape.gelu(m);
    let m = linear(tape, m, vars.var(lp.mlp_w2), vars.var(lp.mlp_b2))?;
    let m = tape.reshape(m, &shape)?;
    tape.add(m, x1)
}

/// Plain-window layer followed by shifted-window layer, each with
/// pre-norm attention and MLP residual branches.
pub fn swin_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &ParamVars,
    params: &SwinParams,
    grid: Var,
) -> Result<Var> {
    let shape = tape.shape(grid);
    if shape.len() != 3 || shape[2] != params.channels {
        return Err(Error::dim("swin_forward", shape, &[params.channels]));
    }
    let x1 = sublayer(tape, vars, &params.layers[0], params, grid, false)?;
    sublayer(tape, vars, &params.layers[1], params, x1, true)
}
