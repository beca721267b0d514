//! Frequency-domain period detection and 1-D ⇄ 2-D period grids.
//!
//! A length-`T` sequence with a dominant frequency `f` (cycles per sequence)
//! has period `p = ⌊T/f⌋`. Folding the sequence into rows of length `p`
//! puts intra-period variation along each row and inter-period variation
//! down each column.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autodiff::GATHER_ZERO;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One selected frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    /// Cycles per sequence, in `1..=⌊T/2⌋`.
    pub frequency: usize,
    /// `⌊T / frequency⌋` time steps.
    pub period: usize,
    pub amplitude: f64,
}

/// Top-k frequency bins of a sequence, sorted by descending amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodDecomposition {
    pub entries: Vec<PeriodEntry>,
    /// Sequence length the periods were detected on.
    pub length: usize,
}

impl PeriodDecomposition {
    pub fn frequencies(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frequency).collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }
}

/// Zero-padded row-major fold of a `T×d` sequence into `rows×cols×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D<S> {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub pad_len: usize,
    pub data: Tensor<S>,
}

/// Complex DFT of every channel of `x[T×d]`, laid out channel-major
/// (`out[c*T + f]`).
pub(crate) fn channel_spectra<S: Scalar>(x: &Tensor<S>) -> Vec<Complex<S>> {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    let mut buf: Vec<Complex<S>> = Vec::with_capacity(t * d);
    for c in 0..d {
        buf.extend((0..t).map(|i| Complex::new(x.data()[i * d + c], S::zero())));
    }
    if t > 0 {
        let fft = FftPlanner::new().plan_fft_forward(t);
        fft.process(&mut buf);
    }
    buf
}

fn check_sequence<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize)> {
    match *x.shape() {
        [t, d] if t >= 4 && d >= 1 => Ok((t, d)),
        [t, _] => Err(Error::Contract(format!("sequence length {t} < 4"))),
        _ => Err(Error::Contract(format!("expected a T×d sequence, got {:?}", x.shape()))),
    }
}

/// Channel-averaged DFT magnitudes of bins `1..=⌊T/2⌋` (DC excluded);
/// entry `i` belongs to frequency `i + 1`.
pub fn amplitude_spectrum<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, d) = check_sequence(x)?;
    let spectra = channel_spectra(x);
    let dn = S::lit(d as f64);
    let amps = (1..=t / 2)
        .map(|f| (0..d).fold(S::zero(), |acc, c| acc + spectra[c * t + f].norm()) / dn)
        .collect();
    Tensor::new(&[t / 2], amps)
}

/// Picks the `k` strongest frequency bins. Ties go to the lower frequency.
pub fn detect_periods<S: Scalar>(x: &Tensor<S>, k: usize) -> Result<PeriodDecomposition> {
    let (t, _) = check_sequence(x)?;
    if k == 0 || k > t / 2 {
        return Err(Error::Config(format!("top_k {k} must lie in 1..={}", t / 2)));
    }
    let amps = amplitude_spectrum(x)?;
    let mut order: Vec<usize> = (0..t / 2).collect();
    let a = amps.data();
    // stable sort keeps ascending frequency among equal amplitudes
    order.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap_or(std::cmp::Ordering::Equal));
    let entries = order
        .into_iter()
        .take(k)
        .map(|i| {
            let frequency = i + 1;
            PeriodEntry {
                frequency,
                period: t / frequency,
                amplitude: a[i].to_f64_lossy(),
            }
        })
        .collect();
    Ok(PeriodDecomposition { entries, length: t })
}

/// Number of rows needed to fold `t` steps with period `p`.
pub fn grid_rows(t: usize, p: usize) -> usize {
    t.div_ceil(p)
}

/// Gather indices folding `x[T×d]` into `rows×p×d` with trailing zeros.
pub(crate) fn fold_index(t: usize, p: usize, d: usize) -> Vec<usize> {
    let cells = grid_rows(t, p) * p;
    (0..cells * d)
        .map(|i| if i / d < t { i } else { GATHER_ZERO })
        .collect()
}

/// Gather indices reading the first `t` cells of a grid back as `T×d`.
pub(crate) fn unfold_index(t: usize, d: usize) -> Vec<usize> {
    (0..t * d).collect()
}

/// Folds `x[T×d]` into a grid of rows of length `p`, padding with zeros.
pub fn to_2d<S: Scalar>(x: &Tensor<S>, p: usize) -> Result<Grid2D<S>> {
    let (t, d) = match *x.shape() {
        [t, d] => (t, d),
        _ => return Err(Error::Contract(format!("to_2d expects T×d, got {:?}", x.shape()))),
    };
    if p == 0 || p > t {
        return Err(Error::Contract(format!("period {p} outside 1..={t}")));
    }
    let rows = grid_rows(t, p);
    let mut data = x.data().to_vec();
    data.resize(rows * p * d, S::zero());
    Ok(Grid2D {
        rows,
        cols: p,
        channels: d,
        pad_len: rows * p - t,
        data: Tensor::new(&[rows, p, d], data)?,
    })
}

/// Flattens a grid row-major and drops everything past step `t`.
pub fn to_1d<S: Scalar>(g: &Grid2D<S>, t: usize) -> Result<Tensor<S>> {
    if t > g.rows * g.cols {
        return Err(Error::Contract(format!(
            "cannot read {t} steps from a {}×{} grid",
            g.rows, g.cols
        )));
    }
    Tensor::new(&[t, g.channels], g.data.data()[..t * g.channels].to_vec())
}
