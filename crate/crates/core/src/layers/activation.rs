use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient gate `x > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<F: Scalar>(x: &Tensor<F>, d_out: &Tensor<F>) -> Result<Tensor<F>> {
    x.zip_map(d_out, |v, g| if v > F::zero() { g } else { F::zero() })
}

/// Softmax over the `h·w` positions of every `(sample, time)` slice of a
/// single-channel map `(n, 1, t, h, w)`. Time slices are normalised independently.
pub fn spatial_softmax<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let s = a.shape5()?;
    if a.rank() != 5 || s.c != 1 {
        return Err(shape_err(format!("spatial softmax expects (n,1,t,h,w), got {:?}", a.shape())));
    }
    if !a.all_finite() {
        return Err(Error::InvalidValue("non-finite attention logits".into()));
    }
    let mut out = a.data().to_vec();
    for slice in out.chunks_mut(s.h * s.w) {
        let max = slice.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in slice.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in slice.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_vec(a.shape(), out)
}

/// Jacobian-vector product of the spatial softmax:
/// `dA_i = Â_i (dÂ_i − Σ_j Â_j dÂ_j)` per slice.
pub fn spatial_softmax_backward<F: Scalar>(
    normalized: &Tensor<F>,
    d_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if normalized.shape() != d_out.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", normalized.shape(), d_out.shape())));
    }
    let s = normalized.shape5()?;
    let plane = s.h * s.w;
    let mut dx = Vec::with_capacity(d_out.numel());
    for (p, g) in normalized.data().chunks(plane).zip(d_out.data().chunks(plane)) {
        let dot: F = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_vec(d_out.shape(), dx)
}

/// Mean over `(t, h, w)`, producing `(n, c)`.
pub fn global_avg_pool<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let s = x.shape5()?;
    let denom = F::from_usize(s.volume()).unwrap();
    let data = x.data().chunks(s.volume()).map(|p| p.iter().copied().sum::<F>() / denom).collect();
    Tensor::from_vec(&[s.n, s.c], data)
}

pub fn global_avg_pool_backward<F: Scalar>(
    input_shape: &[usize],
    d_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if input_shape.len() < 2 || d_out.shape() != &input_shape[..2] {
        return Err(shape_err(format!(
            "avg-pool d_out {:?} does not match input {input_shape:?}",
            d_out.shape()
        )));
    }
    let vol: usize = input_shape[2..].iter().product();
    let denom = F::from_usize(vol).unwrap();
    let mut dx = Vec::with_capacity(vol * d_out.numel());
    for &g in d_out.data() {
        dx.extend(std::iter::repeat_n(g / denom, vol));
    }
    Tensor::from_vec(input_shape, dx)
}

/// Inverted dropout. Returns the output and, in train mode, the per-element
/// multiplier (0 or `1/(1−rate)`) for the backward pass.
pub fn dropout<F: Scalar, R: Rng + ?Sized>(
    x: &Tensor<F>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<F>, Option<Tensor<F>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), mask)?;
    let out = x.zip_map(&mask, |v, m| v * m)?;
    Ok((out, Some(mask)))
}

pub fn dropout_backward<F: Scalar>(mask: Option<&Tensor<F>>, d_out: &Tensor<F>) -> Result<Tensor<F>> {
    match mask {
        Some(m) => d_out.zip_map(m, |g, k| g * k),
        None => Ok(d_out.clone()),
    }
}
