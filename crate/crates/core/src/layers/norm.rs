use crate::error::{shape_err, Error, Result};
use crate::layers::{LayerGrad, Mode};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel batch normalisation over every non-channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<F = f32> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub momentum: F,
    pub epsilon: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad<F = f32> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

/// Everything the backward pass needs, plus the batch moments that feed the
/// running statistics.
#[derive(Debug, Clone)]
pub struct BnCache<F = f32> {
    pub mode: Mode,
    normalized: Tensor<F>,
    inv_std: Vec<F>,
    /// Batch mean and unbiased batch variance (train mode only).
    pub batch_mean: Vec<F>,
    pub batch_var: Vec<F>,
}

impl<F: Scalar> BatchNormState<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: F::from_f64_lossy(DEFAULT_MOMENTUM),
            epsilon: F::from_f64_lossy(DEFAULT_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Exponential moving average: `running ← (1 − m)·running + m·batch`.
    pub fn update_running(&mut self, cache: &BnCache<F>) -> Result<()> {
        if cache.mode != Mode::Train {
            return Ok(());
        }
        if cache.batch_mean.len() != self.channels() {
            return Err(Error::CorruptedState(format!(
                "cache has {} channels, state has {}",
                cache.batch_mean.len(),
                self.channels()
            )));
        }
        let m = self.momentum;
        let keep = F::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = keep * *r + m * b;
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> BnGrad<F> {
        BnGrad { gamma: Tensor::zeros_like(&self.gamma), beta: Tensor::zeros_like(&self.beta) }
    }
}

fn planes<F: Scalar>(x: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let s = x.shape5()?;
    Ok((s.n, s.c, s.volume()))
}

pub fn batchnorm_forward<F: Scalar>(
    x: &Tensor<F>,
    s: &BatchNormState<F>,
    mode: Mode,
) -> Result<(Tensor<F>, BnCache<F>)> {
    let (n, c, vol) = planes(x)?;
    if c != s.channels() {
        return Err(shape_err(format!(
            "batchnorm over {} channels given input {:?}",
            s.channels(),
            x.shape()
        )));
    }
    let count = n * vol;
    let (mean, var_biased, var_unbiased) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "train-mode batchnorm needs ≥ 2 values per channel, input {:?} has {count}",
                    x.shape()
                )));
            }
            let cnt = F::from_usize(count).unwrap();
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for ch in 0..c {
                let values = (0..n).flat_map(|i| {
                    let base = (i * c + ch) * vol;
                    x.data()[base..base + vol].iter().copied()
                });
                let mu = values.clone().sum::<F>() / cnt;
                let ss: F = values.map(|v| (v - mu) * (v - mu)).sum();
                mean[ch] = mu;
                var[ch] = ss / cnt;
            }
            let unbias = cnt / (cnt - F::one());
            let unbiased = var.iter().map(|&v| v * unbias).collect();
            (mean, var, unbiased)
        }
        Mode::Eval => {
            (s.running_mean.data().to_vec(), s.running_var.data().to_vec(), Vec::new())
        }
    };
    let inv_std: Vec<F> = var_biased.iter().map(|&v| F::one() / (v + s.epsilon).sqrt()).collect();
    let mut normalized = vec![F::zero(); x.numel()];
    let mut out = vec![F::zero(); x.numel()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * vol;
            let (g, b) = (s.gamma.data()[ch], s.beta.data()[ch]);
            for j in base..base + vol {
                let xh = (x.data()[j] - mean[ch]) * inv_std[ch];
                normalized[j] = xh;
                out[j] = g * xh + b;
            }
        }
    }
    let (batch_mean, batch_var) = match mode {
        Mode::Train => (mean, var_unbiased),
        Mode::Eval => (Vec::new(), Vec::new()),
    };
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        BnCache { mode, normalized: Tensor::from_vec(x.shape(), normalized)?, inv_std, batch_mean, batch_var },
    ))
}

pub fn batchnorm_backward<F: Scalar>(
    cache: &BnCache<F>,
    s: &BatchNormState<F>,
    d_out: &Tensor<F>,
) -> Result<LayerGrad<F, BnGrad<F>>> {
    if d_out.shape() != cache.normalized.shape() {
        return Err(shape_err(format!(
            "batchnorm d_out {:?} does not match {:?}",
            d_out.shape(),
            cache.normalized.shape()
        )));
    }
    let (n, c, vol) = planes(d_out)?;
    let xh = cache.normalized.data();
    let dy = d_out.data();
    let mut d_gamma = vec![F::zero(); c];
    let mut d_beta = vec![F::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * vol;
            for j in base..base + vol {
                d_gamma[ch] += dy[j] * xh[j];
                d_beta[ch] += dy[j];
            }
        }
    }
    let cnt = F::from_usize(n * vol).unwrap();
    let mut dx = vec![F::zero(); d_out.numel()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * vol;
            let scale = s.gamma.data()[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let mean_dy = d_beta[ch] / cnt;
                    let mean_dy_xh = d_gamma[ch] / cnt;
                    for j in base..base + vol {
                        dx[j] = scale * (dy[j] - mean_dy - xh[j] * mean_dy_xh);
                    }
                }
                Mode::Eval => {
                    for j in base..base + vol {
                        dx[j] = scale * dy[j];
                    }
                }
            }
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::from_vec(d_out.shape(), dx)?,
        d_params: BnGrad {
            gamma: Tensor::from_vec(&[c], d_gamma)?,
            beta: Tensor::from_vec(&[c], d_beta)?,
        },
    })
}
