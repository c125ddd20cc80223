use crate::error::{shape_err, Result};
use crate::layers::LayerGrad;
use crate::tensor::{matmul, Scalar, Shape5, Tensor};

/// Stride-1 cross-correlation with zero padding. Weight layout is
/// `(out_c, in_c, kt, kh, kw)`; the static model uses `kt = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F = f32> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub padding: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad<F = f32> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> ConvParams<F> {
    pub fn new(weight: Tensor<F>, bias: Tensor<F>, padding: [usize; 3]) -> Result<Self> {
        if weight.rank() != 5 {
            return Err(shape_err(format!("conv weight must be rank 5, got {:?}", weight.shape())));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(shape_err(format!(
                "bias {:?} does not match {} output channels",
                bias.shape(),
                weight.shape()[0]
            )));
        }
        Ok(Self { weight, bias, padding })
    }

    /// Zero-initialised layer; `kernel` is `(kt, kh, kw)`.
    pub fn zeros(out_c: usize, in_c: usize, kernel: [usize; 3], padding: [usize; 3]) -> Self {
        Self {
            weight: Tensor::zeros(&[out_c, in_c, kernel[0], kernel[1], kernel[2]]),
            bias: Tensor::zeros(&[out_c]),
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    pub fn zero_grad(&self) -> ConvGrad<F> {
        ConvGrad { weight: Tensor::zeros_like(&self.weight), bias: Tensor::zeros_like(&self.bias) }
    }

    fn geometry(&self, x: &Tensor<F>) -> Result<Geometry> {
        let input = x.shape5()?;
        if input.c != self.in_channels() {
            return Err(shape_err(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input.c
            )));
        }
        let k = self.kernel();
        let p = self.padding;
        let out = |extent: usize, axis: usize| -> Result<usize> {
            let padded = extent + 2 * p[axis];
            if padded < k[axis] {
                return Err(shape_err(format!(
                    "padded extent {padded} smaller than kernel {} on axis {axis}",
                    k[axis]
                )));
            }
            Ok(padded - k[axis] + 1)
        };
        if x.rank() != 5 && (k[0] != 1 || p[0] != 0) {
            return Err(shape_err(format!(
                "rank-{} input needs a kernel without temporal extent, got {k:?}",
                x.rank()
            )));
        }
        let output = Shape5::new(
            input.n,
            self.out_channels(),
            out(input.t, 0)?,
            out(input.h, 1)?,
            out(input.w, 2)?,
        );
        Ok(Geometry { input, output, kernel: k, padding: p })
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    input: Shape5,
    output: Shape5,
    kernel: [usize; 3],
    padding: [usize; 3],
}

impl Geometry {
    /// Output shape at the rank of the input: `(n, c)`, `(n, c, h, w)` or 5-D.
    fn output_dims(&self, rank: usize) -> Vec<usize> {
        let o = self.output;
        match rank {
            2 => vec![o.n, o.c],
            4 => vec![o.n, o.c, o.h, o.w],
            _ => o.dims().to_vec(),
        }
    }

    fn rows(&self) -> usize {
        self.input.c * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.output.volume()
    }

    /// 1×1×1 kernels without padding need no patch matrix: the input plane is it.
    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    /// For kernel offset `k` on an axis, the range of output positions whose
    /// source index `o + k - pad` lands inside `[0, extent)`.
    fn valid(out_extent: usize, extent: usize, k: usize, pad: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k);
        let hi = (extent + pad).saturating_sub(k).min(out_extent);
        (lo, hi.max(lo))
    }

    fn im2col<F: Scalar>(&self, x: &[F], cols: &mut [F]) {
        let Shape5 { c, t, h, w, .. } = self.input;
        let Shape5 { t: ot, h: oh, w: ow, .. } = self.output;
        let [kt, kh, kw] = self.kernel;
        let [pt, ph, pw] = self.padding;
        let l = ot * oh * ow;
        let mut row = 0;
        for ch in 0..c {
            let plane = &x[ch * t * h * w..(ch + 1) * t * h * w];
            for dt in 0..kt {
                let (t0, t1) = Self::valid(ot, t, dt, pt);
                for dh in 0..kh {
                    let (h0, h1) = Self::valid(oh, h, dh, ph);
                    for dw in 0..kw {
                        let (w0, w1) = Self::valid(ow, w, dw, pw);
                        let dst = &mut cols[row * l..(row + 1) * l];
                        dst.fill(F::zero());
                        for o_t in t0..t1 {
                            let it = o_t + dt - pt;
                            for o_h in h0..h1 {
                                let ih = o_h + dh - ph;
                                let src = (it * h + ih) * w;
                                let out = (o_t * oh + o_h) * ow;
                                for o_w in w0..w1 {
                                    dst[out + o_w] = plane[src + o_w + dw - pw];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im<F: Scalar>(&self, cols: &[F], dx: &mut [F]) {
        let Shape5 { c, t, h, w, .. } = self.input;
        let Shape5 { t: ot, h: oh, w: ow, .. } = self.output;
        let [kt, kh, kw] = self.kernel;
        let [pt, ph, pw] = self.padding;
        let l = ot * oh * ow;
        let mut row = 0;
        for ch in 0..c {
            let plane = &mut dx[ch * t * h * w..(ch + 1) * t * h * w];
            for dt in 0..kt {
                let (t0, t1) = Self::valid(ot, t, dt, pt);
                for dh in 0..kh {
                    let (h0, h1) = Self::valid(oh, h, dh, ph);
                    for dw in 0..kw {
                        let (w0, w1) = Self::valid(ow, w, dw, pw);
                        let src = &cols[row * l..(row + 1) * l];
                        for o_t in t0..t1 {
                            let it = o_t + dt - pt;
                            for o_h in h0..h1 {
                                let ih = o_h + dh - ph;
                                let dst = (it * h + ih) * w;
                                let out = (o_t * oh + o_h) * ow;
                                for o_w in w0..w1 {
                                    plane[dst + o_w + dw - pw] += src[out + o_w];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Convolution via im2col and a matrix multiply, one sample at a time.
pub fn conv_forward<F: Scalar>(x: &Tensor<F>, p: &ConvParams<F>) -> Result<Tensor<F>> {
    let g = p.geometry(x)?;
    let (k, l, oc) = (g.rows(), g.cols(), g.output.c);
    let in_per = g.input.c * g.input.volume();
    let mut out = vec![F::zero(); g.output.numel()];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); k * l] };
    for i in 0..g.input.n {
        let xs = &x.data()[i * in_per..(i + 1) * in_per];
        let patches: &[F] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        let dst = &mut out[i * oc * l..(i + 1) * oc * l];
        for (o, row) in dst.chunks_mut(l).enumerate() {
            row.fill(p.bias.data()[o]);
        }
        matmul(oc, k, l, p.weight.data(), false, patches, false, F::one(), dst);
    }
    Tensor::from_vec(&g.output_dims(x.rank()), out)
}

pub fn conv_backward<F: Scalar>(
    x: &Tensor<F>,
    p: &ConvParams<F>,
    d_out: &Tensor<F>,
) -> Result<LayerGrad<F, ConvGrad<F>>> {
    let g = p.geometry(x)?;
    let expected = g.output_dims(x.rank());
    if d_out.shape() != expected.as_slice() {
        return Err(shape_err(format!(
            "conv d_out {:?} does not match forward output {expected:?}",
            d_out.shape()
        )));
    }
    let (k, l, oc) = (g.rows(), g.cols(), g.output.c);
    let in_per = g.input.c * g.input.volume();
    let mut d_weight = vec![F::zero(); oc * k];
    let mut d_bias = vec![F::zero(); oc];
    let mut d_input = vec![F::zero(); x.numel()];
    let mut cols = vec![F::zero(); if g.is_pointwise() { 0 } else { k * l }];
    let mut d_cols = vec![F::zero(); k * l];
    for i in 0..g.input.n {
        let xs = &x.data()[i * in_per..(i + 1) * in_per];
        let dy = &d_out.data()[i * oc * l..(i + 1) * oc * l];
        for (o, row) in dy.chunks(l).enumerate() {
            d_bias[o] += row.iter().copied().sum::<F>();
        }
        let patches: &[F] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        matmul(oc, l, k, dy, false, patches, true, F::one(), &mut d_weight);
        // dcols = Wᵀ · dY
        let dx = &mut d_input[i * in_per..(i + 1) * in_per];
        if g.is_pointwise() {
            matmul(k, oc, l, p.weight.data(), true, dy, false, F::zero(), dx);
        } else {
            matmul(k, oc, l, p.weight.data(), true, dy, false, F::zero(), &mut d_cols);
            g.col2im(&d_cols, dx);
        }
    }
    Ok(LayerGrad {
        d_input: Tensor::from_vec(x.shape(), d_input)?,
        d_params: ConvGrad {
            weight: Tensor::from_vec(p.weight.shape(), d_weight)?,
            bias: Tensor::from_vec(p.bias.shape(), d_bias)?,
        },
    })
}

/// Direct nested-loop convolution. Slow; kept as the oracle the im2col path is
/// tested against.
pub fn conv_forward_reference<F: Scalar>(x: &Tensor<F>, p: &ConvParams<F>) -> Result<Tensor<F>> {
    let g = p.geometry(x)?;
    let Shape5 { n, c, t, h, w } = g.input;
    let o = g.output;
    let [kt, kh, kw] = g.kernel;
    let [pt, ph, pw] = g.padding.map(|v| v as isize);
    let xd = x.data();
    let wd = p.weight.data();
    let mut out = Vec::with_capacity(o.numel());
    for i in 0..n {
        for oc in 0..o.c {
            for ot in 0..o.t {
                for oh in 0..o.h {
                    for ow in 0..o.w {
                        let mut acc = p.bias.data()[oc];
                        for ic in 0..c {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let it = (ot + dt) as isize - pt;
                                        let ih = (oh + dh) as isize - ph;
                                        let iw = (ow + dw) as isize - pw;
                                        if it < 0
                                            || ih < 0
                                            || iw < 0
                                            || it >= t as isize
                                            || ih >= h as isize
                                            || iw >= w as isize
                                        {
                                            continue;
                                        }
                                        let xi = ((((i * c + ic) * t + it as usize) * h
                                            + ih as usize)
                                            * w)
                                            + iw as usize;
                                        let wi = (((oc * c + ic) * kt + dt) * kh + dh) * kw + dw;
                                        acc += xd[xi] * wd[wi];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&g.output_dims(x.rank()), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let x = Tensor::<f32>::ones(&[1, 1, 1, 3, 3]);
        let p = ConvParams::new(Tensor::ones(&[1, 1, 1, 3, 3]), Tensor::zeros(&[1]), [0, 1, 1])
            .unwrap();
        let y = conv_forward(&x, &p).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn matches_reference_on_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 2, 1, 4, 4], &mut rng);
        let p = ConvParams::new(random(&[3, 2, 1, 3, 3], &mut rng), random(&[3], &mut rng), [0, 1, 1])
            .unwrap();
        let fast = conv_forward(&x, &p).unwrap();
        let slow = conv_forward_reference(&x, &p).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rank4_input_is_a_single_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 2, 5, 4], &mut rng);
        let p = ConvParams::new(random(&[3, 2, 1, 3, 3], &mut rng), random(&[3], &mut rng), [0, 1, 1])
            .unwrap();
        let y = conv_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5, 4]);
        let y5 = conv_forward(&x.reshape(&[2, 2, 1, 5, 4]).unwrap(), &p).unwrap();
        assert_eq!(y.data(), y5.data());
        let temporal = ConvParams::<f64>::zeros(3, 2, [3, 3, 3], [1, 1, 1]);
        assert!(conv_forward(&x, &temporal).is_err());
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 3, 3]);
        let p = ConvParams::<f32>::zeros(4, 3, [1, 3, 3], [0, 1, 1]);
        assert!(conv_forward(&x, &p).is_err());
        let ok = ConvParams::<f32>::zeros(4, 2, [1, 3, 3], [0, 1, 1]);
        assert!(conv_backward(&x, &ok, &Tensor::zeros(&[1, 4, 1, 2, 3])).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 2, 3, 4, 4], &mut rng);
        let p = ConvParams::new(random(&[2, 2, 3, 3, 3], &mut rng), random(&[2], &mut rng), [1, 1, 1])
            .unwrap();
        let g = conv_backward(&x, &p, &Tensor::zeros(&[2, 2, 3, 4, 4])).unwrap();
        assert_eq!(g.d_input.max_abs(), 0.0);
        assert_eq!(g.d_params.weight.max_abs(), 0.0);
        assert_eq!(g.d_params.bias.max_abs(), 0.0);
    }

    #[test]
    fn bias_gradient_is_sum_of_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random(&[2, 2, 3, 4, 4], &mut rng);
        let p = ConvParams::new(random(&[2, 2, 3, 3, 3], &mut rng), random(&[2], &mut rng), [1, 1, 1])
            .unwrap();
        let dy = random(&[2, 2, 3, 4, 4], &mut rng);
        let g = conv_backward(&x, &p, &dy).unwrap();
        for o in 0..2 {
            let expected: f64 = (0..2)
                .map(|i| dy.data()[(i * 2 + o) * 48..(i * 2 + o + 1) * 48].iter().sum::<f64>())
                .sum();
            assert!((g.d_params.bias.data()[o] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn production_context_conv1_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 16, 112, 112]);
        let p = ConvParams::<f32>::zeros(32, 3, [3, 3, 3], [1, 1, 1]);
        assert_eq!(conv_forward(&x, &p).unwrap().shape(), &[1, 32, 16, 112, 112]);
    }
}
