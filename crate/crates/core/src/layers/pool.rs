use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Shape5, Tensor};

/// Winner positions recorded by [`maxpool_forward`], consumed by [`maxpool_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndex {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    winners: Vec<usize>,
}

impl PoolIndex {
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Max pooling over `(t, h, w)`. Ties go to the lowest flat input index.
pub fn maxpool_forward<F: Scalar>(
    x: &Tensor<F>,
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Result<(Tensor<F>, PoolIndex)> {
    if x.rank() != 5 {
        return Err(shape_err(format!("maxpool expects rank 5, got {:?}", x.shape())));
    }
    let s = x.shape5()?;
    let extents = [s.t, s.h, s.w];
    let mut out_ext = [0usize; 3];
    for axis in 0..3 {
        let (e, k, st) = (extents[axis], kernel[axis], stride[axis]);
        if k == 0 || st == 0 || e < k || (e - k) % st != 0 {
            return Err(Error::PoolingGeometry(format!(
                "extent {e} on axis {axis} cannot be tiled by kernel {k} stride {st}"
            )));
        }
        out_ext[axis] = (e - k) / st + 1;
    }
    let o = Shape5::new(s.n, s.c, out_ext[0], out_ext[1], out_ext[2]);
    let mut out = Vec::with_capacity(o.numel());
    let mut winners = Vec::with_capacity(o.numel());
    let xd = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.volume();
        for ot in 0..o.t {
            for oh in 0..o.h {
                for ow in 0..o.w {
                    let mut best = usize::MAX;
                    let mut best_v = F::neg_infinity();
                    for kt in 0..kernel[0] {
                        for kh in 0..kernel[1] {
                            for kw in 0..kernel[2] {
                                let it = ot * stride[0] + kt;
                                let ih = oh * stride[1] + kh;
                                let iw = ow * stride[2] + kw;
                                let idx = base + (it * s.h + ih) * s.w + iw;
                                // Strict comparison keeps the earliest (lowest index) maximum.
                                if best == usize::MAX || xd[idx] > best_v {
                                    best = idx;
                                    best_v = xd[idx];
                                }
                            }
                        }
                    }
                    out.push(best_v);
                    winners.push(best);
                }
            }
        }
    }
    let output_shape = o.dims().to_vec();
    Ok((
        Tensor::from_vec(&output_shape, out)?,
        PoolIndex { input_shape: x.shape().to_vec(), output_shape, winners },
    ))
}

pub fn maxpool_backward<F: Scalar>(index: &PoolIndex, d_out: &Tensor<F>) -> Result<Tensor<F>> {
    if d_out.shape() != index.output_shape.as_slice() {
        return Err(shape_err(format!(
            "maxpool d_out {:?} does not match forward output {:?}",
            d_out.shape(),
            index.output_shape
        )));
    }
    let mut dx = Tensor::zeros(&index.input_shape);
    let numel = dx.numel();
    let dxd = dx.data_mut();
    for (&w, &g) in index.winners.iter().zip(d_out.data()) {
        if w >= numel {
            return Err(Error::CorruptedState(format!(
                "pool winner index {w} outside input of {numel} elements"
            )));
        }
        dxd[w] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_maximum() {
        let x = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1f32, 2., 3., 4.]).unwrap();
        let (y, idx) = maxpool_forward(&x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(y.data(), &[4.]);
        let dx = maxpool_backward(&idx, &Tensor::<f32>::ones(&[1, 1, 1, 1, 1])).unwrap();
        assert_eq!(dx.data(), &[0., 0., 0., 1.]);
    }

    #[test]
    fn first_pool_keeps_time() {
        let x = Tensor::<f32>::zeros(&[1, 32, 16, 96, 96]);
        let (y, _) = maxpool_forward(&x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 32, 16, 48, 48]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let x = Tensor::from_vec(&[1, 1, 2, 2, 2], vec![5f32; 8]).unwrap();
        let (_, idx) = maxpool_forward(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert_eq!(idx.winners(), &[0]);
        let x = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![0f32, 7., 7., 1.]).unwrap();
        let (_, idx) = maxpool_forward(&x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(idx.winners(), &[1]);
    }

    #[test]
    fn non_divisible_geometry_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4, 4]);
        assert!(matches!(
            maxpool_forward(&x, [2, 2, 2], [2, 2, 2]),
            Err(Error::PoolingGeometry(_))
        ));
    }

    #[test]
    fn backward_conserves_mass_and_rejects_bad_shapes() {
        let x = Tensor::from_vec(&[1, 1, 2, 4, 4], (0..32).map(|i| ((i * 7) % 11) as f32).collect())
            .unwrap();
        let (_, idx) = maxpool_forward(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        let d = Tensor::from_vec(&[1, 1, 1, 2, 2], vec![1f32, 2., 3., 4.]).unwrap();
        assert_eq!(maxpool_backward(&idx, &d).unwrap().sum(), 10.);
        assert!(maxpool_backward(&idx, &Tensor::<f32>::zeros(&[1, 1, 1, 1, 2])).is_err());
    }
}
