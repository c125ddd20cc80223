//! Dense row-major tensors and the handful of shape primitives the networks need.
//!
//! Activations use the canonical `(n, c, t, h, w)` layout. The static model
//! runs the same code with `t = 1`; pooled feature vectors are `(n, c)`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

use crate::error::{shape_err, Result};

pub const MAX_RANK: usize = 5;

/// Scalar type the layers are generic over. Production runs in `f32`;
/// the gradient checker re-runs the identical code in `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output buffer too short");
                // SAFETY: every strided access is bounded by the spans asserted above,
                // and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix product `c (m×n) = op(a) · op(b) + beta·c`, where `op`
/// optionally transposes a stored row-major matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_transposed: bool,
    b: &[F],
    b_transposed: bool,
    beta: F,
    c: &mut [F],
) {
    // a is stored (m×k) or, when transposed, (k×m); likewise for b.
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    F::gemm_strided(m, k, n, F::one(), a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// Canonical activation geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { n, c, t, h, w }
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.t, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }

    /// Elements per (sample, channel) plane: `t·h·w`.
    pub fn volume(&self) -> usize {
        self.t * self.h * self.w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(shape_err(format!("rank {} outside 1..={MAX_RANK}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(shape_err(format!("zero extent in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let numel = check_shape(shape).expect("valid tensor shape");
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, F::one())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// View of the tensor as `(n, c, t, h, w)`. Rank-2 `(n, c)` tensors map to
    /// `t = h = w = 1`.
    pub fn shape5(&self) -> Result<Shape5> {
        match *self.shape.as_slice() {
            [n, c, t, h, w] => Ok(Shape5::new(n, c, t, h, w)),
            [n, c, h, w] => Ok(Shape5::new(n, c, 1, h, w)),
            [n, c] => Ok(Shape5::new(n, c, 1, 1, 1)),
            _ => Err(shape_err(format!("expected rank 2, 4 or 5, got {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let numel = check_shape(new_shape)?;
        if numel != self.numel() {
            return Err(shape_err(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({numel})",
                self.shape,
                self.numel()
            )));
        }
        Ok(Self { shape: new_shape.to_vec(), data: self.data.clone() })
    }

    pub fn into_reshaped(mut self, new_shape: &[usize]) -> Result<Self> {
        let numel = check_shape(new_shape)?;
        if numel != self.numel() {
            return Err(shape_err(format!(
                "cannot reshape {:?} to {new_shape:?}",
                self.shape
            )));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{:?} += {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Copies sample `i` of the leading axis out as a tensor with leading extent 1.
    pub fn sample(&self, i: usize) -> Result<Self> {
        let n = self.shape[0];
        if i >= n {
            return Err(shape_err(format!("sample {i} out of range for batch {n}")));
        }
        let per = self.numel() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Self { shape, data: self.data[i * per..(i + 1) * per].to_vec() })
    }

    /// Stacks tensors of identical shape with leading extent 1 along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| shape_err("cannot stack zero tensors"))?;
        let mut shape = first.shape.clone();
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for item in items {
            if item.shape[1..] != first.shape[1..] {
                return Err(shape_err(format!("stack {:?} with {:?}", first.shape, item.shape)));
            }
            n += item.shape[0];
            data.extend_from_slice(&item.data);
        }
        shape[0] = n;
        Ok(Self { shape, data })
    }
}

/// Elementwise product with broadcasting of `b` over the channel axis
/// (`b` may carry a single channel).
pub fn elementwise_mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.shape() == b.shape() {
        return a.zip_map(b, |x, y| x * y);
    }
    let broadcastable = a.rank() >= 2
        && a.rank() == b.rank()
        && b.shape()[1] == 1
        && a.shape()[0] == b.shape()[0]
        && a.shape()[2..] == b.shape()[2..];
    if !broadcastable {
        return Err(shape_err(format!(
            "cannot multiply {:?} by {:?} (only channel broadcast is supported)",
            a.shape(),
            b.shape()
        )));
    }
    let (n, c) = (a.shape()[0], a.shape()[1]);
    let plane = a.numel() / (n * c);
    let mut out = Vec::with_capacity(a.numel());
    for i in 0..n {
        let gate = &b.data()[i * plane..(i + 1) * plane];
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            out.extend(a.data()[base..base + plane].iter().zip(gate).map(|(&x, &g)| x * g));
        }
    }
    Tensor::from_vec(a.shape(), out)
}

/// Concatenates along axis 1; `a`'s channels come first.
pub fn concat_channels<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let compatible = a.rank() >= 2
        && a.rank() == b.rank()
        && a.shape()[0] == b.shape()[0]
        && a.shape()[2..] == b.shape()[2..];
    if !compatible {
        return Err(shape_err(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.shape()[0];
    let (ca, cb) = (a.numel() / n, b.numel() / n);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
        data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] += b.shape()[1];
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat_channels`]: splits axis 1 at `first_channels`.
pub fn split_channels<F: Scalar>(
    x: &Tensor<F>,
    first_channels: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let c = *x.shape().get(1).ok_or_else(|| shape_err("split needs rank ≥ 2"))?;
    if first_channels == 0 || first_channels >= c {
        return Err(shape_err(format!("cannot split {c} channels at {first_channels}")));
    }
    let n = x.shape()[0];
    let plane = x.numel() / (n * c);
    let (ka, kb) = (first_channels * plane, (c - first_channels) * plane);
    let (mut a, mut b) = (Vec::with_capacity(n * ka), Vec::with_capacity(n * kb));
    for chunk in x.data().chunks(ka + kb) {
        a.extend_from_slice(&chunk[..ka]);
        b.extend_from_slice(&chunk[ka..]);
    }
    let mut sa = x.shape().to_vec();
    sa[1] = first_channels;
    let mut sb = x.shape().to_vec();
    sb[1] = c - first_channels;
    Ok((Tensor::from_vec(&sa, a)?, Tensor::from_vec(&sb, b)?))
}
