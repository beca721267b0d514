use super::ops::{gelu_grad, matmul_raw, tap_range};
use super::{accumulate, Node, Op, Var};
use crate::scalar::Scalar;

/// Pushes the upstream gradient `g` of node `i` into its inputs.
pub(super) fn propagate<S: Scalar>(
    nodes: &[Node<S>],
    i: usize,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let val = |v: Var| nodes[v.0].value.data();
    let rg = |v: Var| nodes[v.0].requires_grad;
    let mut send = |v: Var, contrib: Vec<S>| {
        if nodes[v.0].requires_grad {
            accumulate(&mut grads[v.0], contrib);
        }
    };

    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            send(*a, g.to_vec());
            send(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            send(*a, g.to_vec());
            send(*b, g.iter().map(|&p| -p).collect());
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                send(*a, g.iter().zip(val(*b)).map(|(&p, &q)| p * q).collect());
            }
            if rg(*b) {
                send(*b, g.iter().zip(val(*a)).map(|(&p, &q)| p * q).collect());
            }
        }
        Op::AddBias { x, bias } => {
            send(*x, g.to_vec());
            if rg(*bias) {
                let d = nodes[bias.0].value.numel();
                let mut gb = vec![S::zero(); d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, &p)| *a += p);
                }
                send(*bias, gb);
            }
        }
        Op::Scale(x, f) => send(*x, g.iter().map(|&p| p * *f).collect()),
        Op::Sum(x) => send(*x, vec![g[0]; nodes[x.0].value.numel()]),
        Op::Reshape(x) => send(*x, g.to_vec()),
        Op::Gather { x, index } => {
            let mut gx = vec![S::zero(); nodes[x.0].value.numel()];
            for (&src, &p) in index.iter().zip(g) {
                if src != super::GATHER_ZERO {
                    gx[src] += p;
                }
            }
            send(*x, gx);
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if rg(*a) {
                // g[m×n] · bᵀ[n×k]
                let bt = transpose(val(*b), k, n);
                send(*a, matmul_raw(g, &bt, m, n, k));
            }
            if rg(*b) {
                // aᵀ[k×m] · g[m×n]
                let at = transpose(val(*a), m, k);
                send(*b, matmul_raw(&at, g, k, m, n));
            }
        }
        Op::BatchMatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            let (batch, m, k, n, trans_b) = (*batch, *m, *k, *n, *trans_b);
            let (av, bv) = (val(*a), val(*b));
            let mut ga = vec![S::zero(); batch * m * k];
            let mut gb = vec![S::zero(); batch * k * n];
            for bi in 0..batch {
                let gs = &g[bi * m * n..(bi + 1) * m * n];
                let ab = &av[bi * m * k..(bi + 1) * m * k];
                let bb = &bv[bi * k * n..(bi + 1) * k * n];
                // b as a k×n matrix
                let b_kn = if trans_b { transpose(bb, n, k) } else { bb.to_vec() };
                if rg(*a) {
                    let bt = transpose(&b_kn, k, n);
                    ga[bi * m * k..(bi + 1) * m * k].copy_from_slice(&matmul_raw(gs, &bt, m, n, k));
                }
                if rg(*b) {
                    let at = transpose(ab, m, k);
                    let gkn = matmul_raw(&at, gs, k, m, n);
                    let gslot = &mut gb[bi * k * n..(bi + 1) * k * n];
                    if trans_b {
                        gslot.copy_from_slice(&transpose(&gkn, k, n));
                    } else {
                        gslot.copy_from_slice(&gkn);
                    }
                }
            }
            if rg(*a) {
                send(*a, ga);
            }
            if rg(*b) {
                send(*b, gb);
            }
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = nodes[i].value.data();
            let mut gx = vec![S::zero(); y.len()];
            for o in 0..*outer {
                for c in 0..*inner {
                    let at = |j: usize| o * len * inner + j * inner + c;
                    let dot = (0..*len).fold(S::zero(), |acc, j| acc + g[at(j)] * y[at(j)]);
                    for j in 0..*len {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            send(*x, gx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gv = val(*gain);
            let d = gv.len();
            let dn = S::lit(d as f64);
            if rg(*x) {
                let mut gx = vec![S::zero(); g.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let row = r * d..(r + 1) * d;
                    let dxhat: Vec<S> = g[row.clone()].iter().zip(gv).map(|(&p, &q)| p * q).collect();
                    let sum_d = dxhat.iter().fold(S::zero(), |a, &p| a + p);
                    let sum_dx = dxhat
                        .iter()
                        .zip(&xhat[row.clone()])
                        .fold(S::zero(), |a, (&p, &q)| a + p * q);
                    for j in 0..d {
                        gx[r * d + j] =
                            *is / dn * (dn * dxhat[j] - sum_d - xhat[r * d + j] * sum_dx);
                    }
                }
                send(*x, gx);
            }
            if rg(*gain) {
                let mut gg = vec![S::zero(); d];
                for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += row_g[j] * row_h[j];
                    }
                }
                send(*gain, gg);
            }
            if rg(*bias) {
                let mut gb = vec![S::zero(); d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, &p)| *a += p);
                }
                send(*bias, gb);
            }
        }
        Op::Gelu(x) => {
            let gx = g.iter().zip(val(*x)).map(|(&p, &q)| p * gelu_grad(q)).collect();
            send(*x, gx);
        }
        Op::Conv2d {
            x,
            kernel,
            h,
            w,
            cin,
            cout,
            k,
        } => {
            let (h, w, cin, cout, k) = (*h, *w, *cin, *cout, *k);
            let (xv, kv) = (val(*x), val(*kernel));
            let (need_x, need_k) = (rg(*x), rg(*kernel));
            let mut gx = vec![S::zero(); if need_x { xv.len() } else { 0 }];
            let mut gk = vec![S::zero(); if need_k { kv.len() } else { 0 }];
            let r = k / 2;
            for y in 0..h {
                let (dy0, dy1) = tap_range(y, h, k);
                for xx in 0..w {
                    let (dx0, dx1) = tap_range(xx, w, k);
                    let go = &g[(y * w + xx) * cout..(y * w + xx + 1) * cout];
                    for dy in dy0..dy1 {
                        let sy = y + dy - r;
                        for dx in dx0..dx1 {
                            let sx = xx + dx - r;
                            let xb = (sy * w + sx) * cin;
                            let kb = (dy * k + dx) * cin * cout;
                            for ci in 0..cin {
                                let krow = kb + ci * cout..kb + (ci + 1) * cout;
                                if need_x {
                                    let acc = go
                                        .iter()
                                        .zip(&kv[krow.clone()])
                                        .fold(S::zero(), |a, (&p, &q)| a + p * q);
                                    gx[xb + ci] += acc;
                                }
                                if need_k {
                                    let xv_ci = xv[xb + ci];
                                    for (gkv, &p) in gk[krow].iter_mut().zip(go) {
                                        *gkv += xv_ci * p;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if need_x {
                send(*x, gx);
            }
            if need_k {
                send(*kernel, gk);
            }
        }
        Op::EmbedKernel {
            small,
            k_small,
            k_big,
            channels,
        } => {
            let (ks, kb, c) = (*k_small, *k_big, *channels);
            let off = (kb - ks) / 2;
            let mut gs = vec![S::zero(); ks * ks * c];
            for dy in 0..ks {
                for dx in 0..ks {
                    let from = ((dy + off) * kb + dx + off) * c;
                    let to = (dy * ks + dx) * c;
                    gs[to..to + c].copy_from_slice(&g[from..from + c]);
                }
            }
            send(*small, gs);
        }
        Op::WeightedSum { branches, weights } => {
            let wv = val(*weights);
            if rg(*weights) {
                let gw = branches
                    .iter()
                    .map(|&b| g.iter().zip(val(b)).fold(S::zero(), |a, (&p, &q)| a + p * q))
                    .collect();
                send(*weights, gw);
            }
            for (j, &b) in branches.iter().enumerate() {
                if rg(b) {
                    send(b, g.iter().map(|&p| p * wv[j]).collect());
                }
            }
        }
        Op::Amplitude {
            x,
            t,
            d,
            bins,
            re,
            im,
        } => {
            let (t, d) = (*t, *d);
            let dn = S::lit(d as f64);
            let tn = S::lit(t as f64);
            let mut gx = vec![S::zero(); t * d];
            for (bi, &f) in bins.iter().enumerate() {
                let scale = g[bi] / dn;
                for c in 0..d {
                    let (zr, zi) = (re[bi * d + c], im[bi * d + c]);
                    let mag = (zr * zr + zi * zi).sqrt();
                    if mag <= S::epsilon() {
                        continue;
                    }
                    for tt in 0..t {
                        let theta = S::TAU() * S::lit(((f * tt) % t) as f64) / tn;
                        // X = Σ x·e^{-iθ}  ⇒  ∂|X|/∂x_t = (re·cosθ − im·sinθ)/|X|
                        gx[tt * d + c] += scale * (zr * theta.cos() - zi * theta.sin()) / mag;
                    }
                }
            }
            send(*x, gx);
        }
    }
}

fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
