//! Face and context encoding streams.
//!
//! Both streams are five conv→BN→ReLU blocks with max pooling after the first
//! four, followed by global average pooling. The context stream additionally
//! runs an attention module on its final feature volume `X_C`: two convs
//! produce a one-channel map `A`, a spatial softmax per time slice turns it
//! into `Â`, and the pooled output is taken from `Â ⊙ X_C`.

use crate::config::Variant;
use crate::error::{shape_err, Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, conv_backward, conv_forward, global_avg_pool,
    global_avg_pool_backward, maxpool_backward, maxpool_forward, relu, relu_backward,
    spatial_softmax, spatial_softmax_backward, BatchNormState, BnCache, BnGrad, ConvGrad,
    ConvParams, Mode, PoolIndex,
};
use crate::params::{join, Entry, EntryMut, Visit, VisitMut};
use crate::tensor::{elementwise_mul, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Face,
    Context,
}

/// conv → BN → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<F = f32> {
    pub conv: ConvParams<F>,
    pub bn: BatchNormState<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad<F = f32> {
    pub conv: ConvGrad<F>,
    pub bn: BnGrad<F>,
}

/// Attention inference module: conv-BN-ReLU to a hidden width, then a conv to
/// one channel with no activation (raw `A` is unbounded).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F = f32> {
    pub hidden: ConvBlock<F>,
    pub out: ConvParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<F = f32> {
    pub hidden: BlockGrad<F>,
    pub out: ConvGrad<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams<F = f32> {
    pub kind: StreamKind,
    pub variant: Variant,
    pub blocks: Vec<ConvBlock<F>>,
    /// Context stream only. `None` on a context stream means uniform attention
    /// `1/(H·W)` (the ablation without the attention module).
    pub attention: Option<AttentionParams<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamGrads<F = f32> {
    pub blocks: Vec<BlockGrad<F>>,
    pub attention: Option<AttentionGrads<F>>,
}

/// Raw and normalised attention, each `(n, 1, t, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<F = f32> {
    pub raw: Tensor<F>,
    pub normalized: Tensor<F>,
}

impl<F: Scalar> AttentionMap<F> {
    pub fn height(&self) -> usize {
        self.normalized.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.normalized.shape()[4]
    }
}

#[derive(Debug, Clone)]
struct BlockCache<F> {
    input: Tensor<F>,
    bn: BnCache<F>,
    /// BN output, i.e. the ReLU input.
    pre_relu: Tensor<F>,
    pool: Option<PoolIndex>,
}

#[derive(Debug, Clone)]
struct AttentionCache<F> {
    hidden: BlockCache<F>,
    hidden_out: Tensor<F>,
}

/// Everything retained by a stream forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct StreamActivations<F = f32> {
    blocks: Vec<BlockCache<F>>,
    /// Final conv feature volume (`X_F` before pooling, or `X_C`).
    pub feature_map: Tensor<F>,
    attention_cache: Option<AttentionCache<F>>,
    pub attention: Option<AttentionMap<F>>,
    gated_shape: Vec<usize>,
    /// Pooled stream feature `(n, C)`.
    pub output: Tensor<F>,
}

fn block_forward<F: Scalar>(
    block: &ConvBlock<F>,
    x: &Tensor<F>,
    pool: Option<[usize; 3]>,
    mode: Mode,
) -> Result<(Tensor<F>, BlockCache<F>)> {
    let conv_out = conv_forward(x, &block.conv)?;
    let (pre_relu, bn) = batchnorm_forward(&conv_out, &block.bn, mode)?;
    let act = relu(&pre_relu);
    let (out, pool) = match pool {
        Some(k) => {
            let (y, idx) = maxpool_forward(&act, k, k)?;
            (y, Some(idx))
        }
        None => (act, None),
    };
    Ok((out, BlockCache { input: x.clone(), bn, pre_relu, pool }))
}

fn block_backward<F: Scalar>(
    block: &ConvBlock<F>,
    cache: &BlockCache<F>,
    d_out: &Tensor<F>,
) -> Result<(Tensor<F>, BlockGrad<F>)> {
    let d_act = match &cache.pool {
        Some(idx) => maxpool_backward(idx, d_out)?,
        None => d_out.clone(),
    };
    let d_bn_out = relu_backward(&cache.pre_relu, &d_act)?;
    let bn = batchnorm_backward(&cache.bn, &block.bn, &d_bn_out)?;
    let conv = conv_backward(&cache.input, &block.conv, &bn.d_input)?;
    Ok((conv.d_input, BlockGrad { conv: conv.d_params, bn: bn.d_params }))
}

impl<F: Scalar> StreamParams<F> {
    /// Zero-weight stream with the given channel plan; see `model::init_params`
    /// for the random initialisation.
    pub fn new(
        kind: StreamKind,
        variant: Variant,
        channels: [usize; 5],
        attention_hidden: Option<usize>,
    ) -> Self {
        let kernel = variant.conv_kernel();
        let padding = variant.conv_padding();
        let mut in_c = 3;
        let blocks = channels
            .iter()
            .map(|&out_c| {
                let block = ConvBlock {
                    conv: ConvParams::zeros(out_c, in_c, kernel, padding),
                    bn: BatchNormState::new(out_c),
                };
                in_c = out_c;
                block
            })
            .collect();
        let attention = match (kind, attention_hidden) {
            (StreamKind::Context, Some(hidden)) => Some(AttentionParams {
                hidden: ConvBlock {
                    conv: ConvParams::zeros(hidden, channels[4], kernel, padding),
                    bn: BatchNormState::new(hidden),
                },
                out: ConvParams::zeros(1, hidden, kernel, padding),
            }),
            _ => None,
        };
        Self { kind, variant, blocks, attention }
    }

    pub fn output_width(&self) -> usize {
        self.blocks.last().map(|b| b.conv.out_channels()).unwrap_or(0)
    }

    pub fn forward(&self, x: &Tensor<F>, mode: Mode) -> Result<StreamActivations<F>> {
        if x.rank() != 5 || x.shape()[1] != 3 {
            return Err(shape_err(format!("stream input must be (n,3,t,h,w), got {:?}", x.shape())));
        }
        if self.variant == Variant::Static && x.shape()[2] != 1 {
            return Err(shape_err(format!("static model takes t = 1, got {:?}", x.shape())));
        }
        let pools = self.variant.pools();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, cache) = block_forward(block, &h, pools.get(i).copied(), mode)?;
            caches.push(cache);
            h = y;
        }
        let feature_map = h;
        let (gated, attention, attention_cache) = match (self.kind, &self.attention) {
            (StreamKind::Face, _) => (feature_map.clone(), None, None),
            (StreamKind::Context, Some(att)) => {
                let (hidden_out, hidden) = block_forward(&att.hidden, &feature_map, None, mode)?;
                let raw = conv_forward(&hidden_out, &att.out)?;
                let normalized = spatial_softmax(&raw)?;
                let gated = elementwise_mul(&feature_map, &normalized)?;
                (
                    gated,
                    Some(AttentionMap { raw, normalized }),
                    Some(AttentionCache { hidden, hidden_out }),
                )
            }
            (StreamKind::Context, None) => {
                let uniform = uniform_attention(&feature_map)?;
                let gated = elementwise_mul(&feature_map, &uniform.normalized)?;
                (gated, Some(uniform), None)
            }
        };
        let output = global_avg_pool(&gated)?;
        Ok(StreamActivations {
            blocks: caches,
            feature_map,
            attention_cache,
            attention,
            gated_shape: gated.shape().to_vec(),
            output,
        })
    }

    pub fn backward(
        &self,
        acts: &StreamActivations<F>,
        d_output: &Tensor<F>,
    ) -> Result<(Tensor<F>, StreamGrads<F>)> {
        let learned = self.kind == StreamKind::Context && self.attention.is_some();
        if acts.blocks.len() != self.blocks.len() || learned != acts.attention_cache.is_some() {
            return Err(Error::CorruptedState(
                "stream activations were produced by a different architecture".into(),
            ));
        }
        if d_output.shape() != acts.output.shape() {
            return Err(shape_err(format!(
                "stream d_output {:?} does not match output {:?}",
                d_output.shape(),
                acts.output.shape()
            )));
        }
        let d_gated = global_avg_pool_backward(&acts.gated_shape, d_output)?;
        let mut attention_grads = None;
        let mut d_h = match (&acts.attention, &self.attention, &acts.attention_cache) {
            (None, _, _) => d_gated,
            (Some(map), None, _) => elementwise_mul(&d_gated, &map.normalized)?,
            (Some(map), Some(att), Some(cache)) => {
                let mut d_x = elementwise_mul(&d_gated, &map.normalized)?;
                let d_norm = attention_weight_grad(&d_gated, &acts.feature_map)?;
                let d_raw = spatial_softmax_backward(&map.normalized, &d_norm)?;
                let out = conv_backward(&cache.hidden_out, &att.out, &d_raw)?;
                let (d_from_att, hidden) = block_backward(&att.hidden, &cache.hidden, &out.d_input)?;
                d_x.add_assign(&d_from_att)?;
                attention_grads = Some(AttentionGrads { hidden, out: out.d_params });
                d_x
            }
            (Some(_), Some(_), None) => {
                return Err(Error::CorruptedState("missing attention cache".into()))
            }
        };
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, cache) in self.blocks.iter().zip(&acts.blocks).rev() {
            let (d_in, g) = block_backward(block, cache, &d_h)?;
            block_grads.push(g);
            d_h = d_in;
        }
        block_grads.reverse();
        Ok((d_h, StreamGrads { blocks: block_grads, attention: attention_grads }))
    }

    /// Folds the batch statistics of a train-mode forward pass into the running stats.
    pub fn update_running_stats(&mut self, acts: &StreamActivations<F>) -> Result<()> {
        if acts.blocks.len() != self.blocks.len() {
            return Err(Error::CorruptedState("activation/parameter block count differs".into()));
        }
        for (block, cache) in self.blocks.iter_mut().zip(&acts.blocks) {
            block.bn.update_running(&cache.bn)?;
        }
        if let (Some(att), Some(cache)) = (&mut self.attention, &acts.attention_cache) {
            att.hidden.bn.update_running(&cache.hidden.bn)?;
        }
        Ok(())
    }
}

/// `Â = 1/(H·W)` everywhere, with the raw map taken as zeros.
fn uniform_attention<F: Scalar>(feature_map: &Tensor<F>) -> Result<AttentionMap<F>> {
    let s = feature_map.shape5()?;
    let shape = [s.n, 1, s.t, s.h, s.w];
    let value = F::one() / F::from_usize(s.h * s.w).unwrap();
    Ok(AttentionMap { raw: Tensor::zeros(&shape), normalized: Tensor::full(&shape, value) })
}

/// Gradient w.r.t. the one-channel gate of `Â ⊙ X`: sum over channels of `dY·X`.
fn attention_weight_grad<F: Scalar>(d_gated: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let s = x.shape5()?;
    let vol = s.volume();
    let mut out = vec![F::zero(); s.n * vol];
    for i in 0..s.n {
        let dst = &mut out[i * vol..(i + 1) * vol];
        for ch in 0..s.c {
            let base = (i * s.c + ch) * vol;
            let (g, v) = (&d_gated.data()[base..base + vol], &x.data()[base..base + vol]);
            for j in 0..vol {
                dst[j] += g[j] * v[j];
            }
        }
    }
    Tensor::from_vec(&[s.n, 1, s.t, s.h, s.w], out)
}

impl<F: Scalar> Visit<F> for ConvBlock<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        self.conv.visit(&join(prefix, "conv"), out);
        self.bn.visit(&join(prefix, "bn"), out);
    }
}

impl<F: Scalar> VisitMut<F> for ConvBlock<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        self.conv.visit_mut(&join(prefix, "conv"), out);
        self.bn.visit_mut(&join(prefix, "bn"), out);
    }
}

impl<F: Scalar> Visit<F> for BlockGrad<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        self.conv.visit(&join(prefix, "conv"), out);
        self.bn.visit(&join(prefix, "bn"), out);
    }
}

impl<F: Scalar> Visit<F> for StreamParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), out);
        }
        if let Some(att) = &self.attention {
            att.hidden.visit(&join(prefix, "attention.hidden"), out);
            att.out.visit(&join(prefix, "attention.out"), out);
        }
    }
}

impl<F: Scalar> VisitMut<F> for StreamParams<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), out);
        }
        if let Some(att) = &mut self.attention {
            att.hidden.visit_mut(&join(prefix, "attention.hidden"), out);
            att.out.visit_mut(&join(prefix, "attention.out"), out);
        }
    }
}

impl<F: Scalar> Visit<F> for StreamGrads<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), out);
        }
        if let Some(att) = &self.attention {
            att.hidden.visit(&join(prefix, "attention.hidden"), out);
            att.out.visit(&join(prefix, "attention.out"), out);
        }
    }
}
