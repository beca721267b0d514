use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::period;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gather index that produces a zero instead of reading the source.
pub const GATHER_ZERO: usize = usize::MAX;

impl<S: Scalar> Tape<S> {
    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&b).map(|(&p, &q)| p + q))
            .collect();
        let out = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&p| p * factor).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(S::zero(), |acc, &p| acc + p);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Mean squared difference between `pred` and a same-shaped `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    ///
    /// Covers padding, cropping, rolling, window partitioning and transposes.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != index.len() {
            return Err(Error::Contract(format!(
                "gather shape {shape:?} needs {numel} indices, got {}",
                index.len()
            )));
        }
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i != GATHER_ZERO && i >= src.len()) {
            return Err(Error::Index { index: bad, len: src.len() });
        }
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { S::zero() } else { src[i] })
            .collect();
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x, index }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::Contract("transpose needs rank >= 2".into()));
        }
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let batch: usize = shape[..r - 2].iter().product();
        let mut index = Vec::with_capacity(batch * m * n);
        for b in 0..batch {
            for j in 0..n {
                for i in 0..m {
                    index.push(b * m * n + i * n + j);
                }
            }
        }
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        self.gather(x, index, &out_shape)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched product `a[b×m×k] · b[b×k×n]`, or `a · bᵀ` with `b[b×n×k]`
    /// when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::dim("batch_matmul", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::dim("batch_matmul", &sa, &sb));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![S::zero(); batch * m * n];
        for bi in 0..batch {
            let ab = &av[bi * m * k..(bi + 1) * m * k];
            let bb = &bv[bi * k * n..(bi + 1) * k * n];
            let ob = &mut data[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = S::zero();
                        for p in 0..k {
                            acc += ab[i * k + p] * bb[j * k + p];
                        }
                        ob[i * n + j] = acc;
                    }
                }
            } else {
                ob.copy_from_slice(&matmul_raw(ab, bb, m, k, n));
            }
        }
        let out = Tensor::new(&[batch, m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            rg,
        ))
    }

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for rank {}",
                shape.len()
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let out = softmax_raw(self.value(x).data(), outer, len, inner);
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// Standardises the last axis, then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Contract("layer_norm on scalar".into()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", &shape, self.shape(gain)));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let dn = S::lit(d as f64);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d) {
            let mean = row.iter().fold(S::zero(), |a, &p| a + p) / dn;
            let var = row.iter().fold(S::zero(), |a, &p| a + (p - mean) * (p - mean)) / dn;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &p) in row.iter().enumerate() {
                let h = (p - mean) * is;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        debug_assert_eq!(inv_std.len(), rows);
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&p| gelu(p)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// 2-D convolution of `x[H×W×Cin]` with `kernel[k×k×Cin×Cout]`, zero
    /// padded by `(k-1)/2` so the spatial shape is preserved.
    pub fn conv2d_same(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sk[0] != sk[1] || sk[2] != sx[2] {
            return Err(Error::dim("conv2d_same", &sx, &sk));
        }
        let k = sk[0];
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv2d_same needs an odd kernel, got {k}")));
        }
        let (h, w, cin, cout) = (sx[0], sx[1], sx[2], sk[3]);
        let data = conv2d_raw(self.value(x).data(), self.value(kernel).data(), h, w, cin, cout, k);
        let out = Tensor::new(&[h, w, cout], data)?;
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                kernel,
                h,
                w,
                cin,
                cout,
                k,
            },
            rg,
        ))
    }

    /// Zero-pads a `k×k×Cin×Cout` kernel to `k_big×k_big×Cin×Cout`, centred.
    pub fn embed_kernel(&mut self, small: Var, k_big: usize) -> Result<Var> {
        let s = self.shape(small).to_vec();
        if s.len() != 4 || s[0] != s[1] || s[0] > k_big || (k_big - s[0]) % 2 != 0 {
            return Err(Error::dim("embed_kernel", &s, &[k_big, k_big]));
        }
        let (k_small, channels) = (s[0], s[2] * s[3]);
        let off = (k_big - k_small) / 2;
        let src = self.value(small).data();
        let mut data = vec![S::zero(); k_big * k_big * channels];
        for dy in 0..k_small {
            for dx in 0..k_small {
                let from = (dy * k_small + dx) * channels;
                let to = ((dy + off) * k_big + dx + off) * channels;
                data[to..to + channels].copy_from_slice(&src[from..from + channels]);
            }
        }
        let out = Tensor::new(&[k_big, k_big, s[2], s[3]], data)?;
        let rg = self.rg(small);
        Ok(self.push(
            out,
            Op::EmbedKernel {
                small,
                k_small,
                k_big,
                channels,
            },
            rg,
        ))
    }

    /// `Σ_j weights[j] · branches[j]` over same-shaped branches.
    pub fn weighted_sum(&mut self, branches: &[Var], weights: Var) -> Result<Var> {
        let first = *branches
            .first()
            .ok_or_else(|| Error::Contract("weighted_sum of no branches".into()))?;
        if self.shape(weights) != [branches.len()] {
            return Err(Error::dim("weighted_sum", &[branches.len()], self.shape(weights)));
        }
        let shape = self.shape(first).to_vec();
        let mut acc = vec![S::zero(); self.value(first).numel()];
        for (j, &b) in branches.iter().enumerate() {
            if self.shape(b) != shape.as_slice() {
                return Err(Error::dim("weighted_sum", &shape, self.shape(b)));
            }
            let wj = self.value(weights).data()[j];
            for (a, &p) in acc.iter_mut().zip(self.value(b).data()) {
                *a += wj * p;
            }
        }
        let rg = self.rg(weights) || branches.iter().any(|&b| self.rg(b));
        let out = Tensor::new(&shape, acc)?;
        Ok(self.push(
            out,
            Op::WeightedSum {
                branches: branches.to_vec(),
                weights,
            },
            rg,
        ))
    }

    /// Channel-averaged DFT magnitude of `x[T×d]` at the requested bins.
    pub fn amplitude(&mut self, x: Var, bins: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::Contract(format!("amplitude expects T×d, got {shape:?}")));
        }
        let (t, d) = (shape[0], shape[1]);
        if let Some(&bad) = bins.iter().find(|&&b| b > t / 2) {
            return Err(Error::Index { index: bad, len: t / 2 + 1 });
        }
        let spectra = period::channel_spectra(self.value(x));
        let mut re = Vec::with_capacity(bins.len() * d);
        let mut im = Vec::with_capacity(bins.len() * d);
        let mut out = Vec::with_capacity(bins.len());
        let dn = S::lit(d as f64);
        for &f in bins {
            let mut acc = S::zero();
            for c in 0..d {
                let z = spectra[c * t + f];
                re.push(z.re);
                im.push(z.im);
                acc += z.norm();
            }
            out.push(acc / dn);
        }
        let out = Tensor::new(&[bins.len()], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::Amplitude {
                x,
                t,
                d,
                bins: bins.to_vec(),
                re,
                im,
            },
            rg,
        ))
    }
}

pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    S::lit(0.5) * x * (S::one() + (x / S::SQRT_2()).erf())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let cdf = S::lit(0.5) * (S::one() + (x / S::SQRT_2()).erf());
    let pdf = (-(x * x) / S::lit(2.0)).exp() / (S::lit(2.0) * S::PI()).sqrt();
    cdf + x * pdf
}

pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
    c
}

pub(crate) fn softmax_raw<S: Scalar>(x: &[S], outer: usize, len: usize, inner: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..len {
                out[at(j)] /= z;
            }
        }
    }
    out
}

/// Valid kernel-tap range along one axis for output position `pos`.
#[inline]
pub(crate) fn tap_range(pos: usize, extent: usize, k: usize) -> (usize, usize) {
    let r = k / 2;
    let lo = r.saturating_sub(pos);
    let hi = (extent + r - pos).min(k);
    (lo, hi)
}

pub(crate) fn conv2d_raw<S: Scalar>(
    x: &[S],
    kernel: &[S],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
) -> Vec<S> {
    let r = k / 2;
    let mut out = vec![S::zero(); h * w * cout];
    for y in 0..h {
        let (dy0, dy1) = tap_range(y, h, k);
        for xx in 0..w {
            let (dx0, dx1) = tap_range(xx, w, k);
            let o = &mut out[(y * w + xx) * cout..(y * w + xx + 1) * cout];
            for dy in dy0..dy1 {
                let sy = y + dy - r;
                for dx in dx0..dx1 {
                    let sx = xx + dx - r;
                    let xin = &x[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                    let kb = (dy * k + dx) * cin * cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        let krow = &kernel[kb + ci * cout..kb + (ci + 1) * cout];
                        for (oc, &kv) in o.iter_mut().zip(krow) {
                            *oc += xv * kv;
                        }
                    }
                }
            }
        }
    }
    out
}
