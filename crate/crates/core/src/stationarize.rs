//! Parameter-free per-window normalisation and its inverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor added to every channel's standard deviation.
pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one input window.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<S> {
    pub mean: Vec<S>,
    /// Population standard deviation plus [`NORM_EPS`].
    pub std: Vec<S>,
}

impl<S: Scalar> NormStats<S> {
    pub fn channel_count(&self) -> usize {
        self.mean.len()
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.mean.len() {
            return Err(Error::Index {
                index: channel,
                len: self.mean.len(),
            });
        }
        Ok(())
    }

    /// Maps raw values of `channel` into the normalised space.
    pub fn normalize_channel(&self, values: &[S], channel: usize) -> Result<Vec<S>> {
        self.check_channel(channel)?;
        let (m, s) = (self.mean[channel], self.std[channel]);
        Ok(values.iter().map(|&v| (v - m) / s).collect())
    }
}

/// Standardises each channel of `window[N_p×C]` over the time axis.
pub fn normalize<S: Scalar>(window: &Tensor<S>) -> Result<(Tensor<S>, NormStats<S>)> {
    let (n, c) = match *window.shape() {
        [n, c] if n >= 2 => (n, c),
        _ => {
            return Err(Error::Contract(format!(
                "normalize needs an N_p×C window with N_p >= 2, got {:?}",
                window.shape()
            )))
        }
    };
    let x = window.data();
    let nn = S::lit(n as f64);
    let mut mean = vec![S::zero(); c];
    for row in x.chunks(c) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= nn);
    let mut var = vec![S::zero(); c];
    for row in x.chunks(c) {
        for j in 0..c {
            let dv = row[j] - mean[j];
            var[j] += dv * dv;
        }
    }
    let std: Vec<S> = var.iter().map(|&v| (v / nn).sqrt() + S::lit(NORM_EPS)).collect();
    let out = x
        .chunks(c)
        .flat_map(|row| (0..c).map(|j| (row[j] - mean[j]) / std[j]).collect::<Vec<_>>())
        .collect();
    Ok((Tensor::new(&[n, c], out)?, NormStats { mean, std }))
}

/// Maps a normalised prediction of `channel` back to raw units.
pub fn denormalize<S: Scalar>(pred: &Tensor<S>, stats: &NormStats<S>, channel: usize) -> Result<Tensor<S>> {
    stats.check_channel(channel)?;
    let (m, s) = (stats.mean[channel], stats.std[channel]);
    Tensor::new(pred.shape(), pred.data().iter().map(|&v| s * v + m).collect())
}

/// Inverse of [`normalize`] for a whole window.
pub fn denormalize_window<S: Scalar>(x: &Tensor<S>, stats: &NormStats<S>) -> Result<Tensor<S>> {
    let c = stats.channel_count();
    if x.rank() != 2 || x.shape()[1] != c {
        return Err(Error::dim("denormalize_window", x.shape(), &[c]));
    }
    let data = x
        .data()
        .chunks(c)
        .flat_map(|row| (0..c).map(|j| stats.std[j] * row[j] + stats.mean[j]).collect::<Vec<_>>())
        .collect();
    Tensor::new(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn population_statistics() {
        let w = Tensor::<f64>::from_f64(&[3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let (_, st) = normalize(&w).unwrap();
        assert!((st.mean[0] - 2.0).abs() < 1e-12);
        assert!((st.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-4);
        assert!((st.std[0] - (2.0f64 / 3.0).sqrt() - NORM_EPS).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_zeroed() {
        let w = Tensor::<f64>::from_f64(&[4, 2], &[5., 1., 5., 2., 5., 3., 5., 4.]).unwrap();
        let (n, st) = normalize(&w).unwrap();
        for r in 0..4 {
            assert_eq!(n.at(&[r, 0]), 0.0);
        }
        assert!(st.std[0] > 0.0);
    }

    #[test]
    fn short_window_rejected() {
        assert!(normalize(&Tensor::<f64>::zeros(&[1, 5])).is_err());
    }

    #[test]
    fn denormalize_examples() {
        let st = NormStats { mean: vec![0.0, 10.0], std: vec![1.0, 2.0] };
        let zero = Tensor::<f64>::zeros(&[4]);
        assert_eq!(denormalize(&zero, &st, 1).unwrap().data(), &[10.0; 4]);
        let p = Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap();
        assert_eq!(denormalize(&p, &st, 1).unwrap().data(), &[12.0, 8.0]);
        assert!(matches!(denormalize(&p, &st, 2), Err(Error::Index { .. })));
    }

    proptest! {
        #[test]
        fn normalized_channels_are_standard(
            vals in proptest::collection::vec(-500.0f64..500.0, 10 * 5),
        ) {
            let w = Tensor::from_f64(&[10, 5], &vals).unwrap();
            let (n, st) = normalize(&w).unwrap();
            for c in 0..5 {
                let col: Vec<f64> = (0..10).map(|r| n.at(&[r, c])).collect();
                let m = col.iter().sum::<f64>() / 10.0;
                let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 10.0;
                prop_assert!(m.abs() < 1e-9);
                let raw_std = st.std[c] - NORM_EPS;
                if raw_std > 1e-3 {
                    // the eps floor shrinks the variance slightly
                    let expect = (raw_std / st.std[c]).powi(2);
                    prop_assert!((v - expect).abs() < 1e-9);
                    prop_assert!((v - 1.0).abs() < 1e-6 + 2.0 * NORM_EPS / raw_std);
                }
            }
            let back = denormalize_window(&n, &st).unwrap();
            prop_assert!(back.max_abs_diff(&w) < 1e-9);
            let delay = denormalize(
                &Tensor::new(&[10], (0..10).map(|r| n.at(&[r, 2])).collect()).unwrap(),
                &st,
                2,
            ).unwrap();
            for r in 0..10 {
                prop_assert!((delay.data()[r] - w.at(&[r, 2])).abs() < 1e-9);
            }
        }
    }
}
