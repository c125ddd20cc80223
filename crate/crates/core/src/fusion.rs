//! Adaptive fusion of the two stream features.
//!
//! Each stream feature passes through its own two-layer 1×1 gate to a scalar
//! score; a two-way softmax over the scores gives `λF + λC = 1`. The scaled
//! features are concatenated into `X_A` and classified by two more 1×1 layers
//! with ReLU and dropout in between.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::layers::{
    conv_backward, conv_forward, dropout, dropout_backward, relu, relu_backward, ConvGrad,
    ConvParams, Mode,
};
use crate::params::{join, Entry, EntryMut, Visit, VisitMut};
use crate::tensor::{concat_channels, split_channels, Scalar, Tensor};

/// Two 1×1 layers with a ReLU between them, ending in one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<F = f32> {
    pub hidden: ConvParams<F>,
    pub out: ConvParams<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGrads<F = f32> {
    pub hidden: ConvGrad<F>,
    pub out: ConvGrad<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<F = f32> {
    /// `W_D`; absent when fusion attention is ablated or only one stream is used.
    pub face_gate: Option<GateParams<F>>,
    /// `W_E`.
    pub context_gate: Option<GateParams<F>>,
    pub classifier_hidden: ConvParams<F>,
    pub classifier_out: ConvParams<F>,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads<F = f32> {
    pub face_gate: Option<GateGrads<F>>,
    pub context_gate: Option<GateGrads<F>>,
    pub classifier_hidden: ConvGrad<F>,
    pub classifier_out: ConvGrad<F>,
}

/// Per-sample fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<F = f32> {
    pub lambda_f: Vec<F>,
    pub lambda_c: Vec<F>,
}

#[derive(Debug, Clone)]
struct GateCache<F> {
    input: Tensor<F>,
    pre_relu: Tensor<F>,
    hidden: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct FusionCache<F = f32> {
    face: Option<Tensor<F>>,
    context: Option<Tensor<F>>,
    gates: Option<(GateCache<F>, GateCache<F>)>,
    weights: Option<FusionWeights<F>>,
    fused: Tensor<F>,
    hidden_pre_relu: Tensor<F>,
    dropped: Tensor<F>,
    mask: Option<Tensor<F>>,
}

#[derive(Debug, Clone)]
pub struct FusionOutput<F = f32> {
    pub logits: Tensor<F>,
    /// `None` when only one stream is present.
    pub weights: Option<FusionWeights<F>>,
    pub cache: FusionCache<F>,
}

impl<F: Scalar> GateParams<F> {
    pub fn new(in_width: usize, hidden: usize) -> Self {
        Self {
            hidden: ConvParams::zeros(hidden, in_width, [1, 1, 1], [0, 0, 0]),
            out: ConvParams::zeros(1, hidden, [1, 1, 1], [0, 0, 0]),
        }
    }

    fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, GateCache<F>)> {
        let pre_relu = conv_forward(x, &self.hidden)?;
        let hidden = relu(&pre_relu);
        let score = conv_forward(&hidden, &self.out)?;
        Ok((score, GateCache { input: x.clone(), pre_relu, hidden }))
    }

    fn backward(&self, cache: &GateCache<F>, d_score: &Tensor<F>) -> Result<(Tensor<F>, GateGrads<F>)> {
        let out = conv_backward(&cache.hidden, &self.out, d_score)?;
        let d_pre = relu_backward(&cache.pre_relu, &out.d_input)?;
        let hidden = conv_backward(&cache.input, &self.hidden, &d_pre)?;
        Ok((hidden.d_input, GateGrads { hidden: hidden.d_params, out: out.d_params }))
    }
}

/// Closed-form two-way softmax `(λF, λC)` of per-sample scores.
pub fn fusion_softmax<F: Scalar>(s_f: &[F], s_c: &[F]) -> FusionWeights<F> {
    let (lambda_f, lambda_c) = s_f
        .iter()
        .zip(s_c)
        .map(|(&a, &b)| {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let z = ea + eb;
            (ea / z, eb / z)
        })
        .unzip();
    FusionWeights { lambda_f, lambda_c }
}

fn scale_rows<F: Scalar>(x: &Tensor<F>, factors: &[F]) -> Result<Tensor<F>> {
    let n = x.shape()[0];
    if factors.len() != n {
        return Err(shape_err(format!("{} factors for {n} rows", factors.len())));
    }
    let width = x.numel() / n;
    let data = x
        .data()
        .chunks(width)
        .zip(factors)
        .flat_map(|(row, &f)| row.iter().map(move |&v| v * f))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

fn row_dots<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let width = a.numel() / a.shape()[0];
    a.data()
        .chunks(width)
        .zip(b.data().chunks(width))
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
        .collect()
}

impl<F: Scalar> FusionParams<F> {
    /// Zero-weight fusion head. `face_width`/`context_width` of 0 disable that input.
    pub fn new(
        face_width: usize,
        context_width: usize,
        adaptive: bool,
        hidden: usize,
        classes: usize,
        dropout_rate: f64,
    ) -> Self {
        let both = face_width > 0 && context_width > 0;
        let gate = |w| (adaptive && both).then(|| GateParams::new(w, hidden));
        Self {
            face_gate: gate(face_width),
            context_gate: gate(context_width),
            classifier_hidden: ConvParams::zeros(hidden, face_width + context_width, [1, 1, 1], [0, 0, 0]),
            classifier_out: ConvParams::zeros(classes, hidden, [1, 1, 1], [0, 0, 0]),
            dropout_rate,
        }
    }

    /// General fusion entry point; at least one stream feature must be present.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x_f: Option<&Tensor<F>>,
        x_c: Option<&Tensor<F>>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<FusionOutput<F>> {
        let (fused, gates, weights) = match (x_f, x_c) {
            (Some(f), Some(c)) => {
                if f.shape()[0] != c.shape()[0] {
                    return Err(shape_err(format!("face {:?} vs context {:?}", f.shape(), c.shape())));
                }
                let (gates, weights) = match (&self.face_gate, &self.context_gate) {
                    (Some(gf), Some(gc)) => {
                        let (s_f, cf) = gf.forward(f)?;
                        let (s_c, cc) = gc.forward(c)?;
                        (Some((cf, cc)), fusion_softmax(s_f.data(), s_c.data()))
                    }
                    (None, None) => {
                        let half = F::from_f64_lossy(0.5);
                        let n = f.shape()[0];
                        (None, FusionWeights { lambda_f: vec![half; n], lambda_c: vec![half; n] })
                    }
                    _ => return Err(Error::CorruptedState("only one fusion gate present".into())),
                };
                let fused = concat_channels(
                    &scale_rows(f, &weights.lambda_f)?,
                    &scale_rows(c, &weights.lambda_c)?,
                )?;
                (fused, gates, Some(weights))
            }
            (Some(f), None) => (f.clone(), None, None),
            (None, Some(c)) => (c.clone(), None, None),
            (None, None) => {
                return Err(Error::InvalidConfig("fusion needs at least one stream".into()))
            }
        };
        if fused.shape()[1] != self.classifier_hidden.in_channels() {
            return Err(shape_err(format!(
                "classifier expects width {}, got {:?}",
                self.classifier_hidden.in_channels(),
                fused.shape()
            )));
        }
        let hidden_pre_relu = conv_forward(&fused, &self.classifier_hidden)?;
        let (dropped, mask) = dropout(&relu(&hidden_pre_relu), self.dropout_rate, mode, rng)?;
        let logits = conv_forward(&dropped, &self.classifier_out)?;
        Ok(FusionOutput {
            logits,
            weights: weights.clone(),
            cache: FusionCache {
                face: x_f.cloned(),
                context: x_c.cloned(),
                gates,
                weights,
                fused,
                hidden_pre_relu,
                dropped,
                mask,
            },
        })
    }

    /// Returns `(d x_f, d x_c, grads)`.
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &self,
        cache: &FusionCache<F>,
        d_logits: &Tensor<F>,
    ) -> Result<(Option<Tensor<F>>, Option<Tensor<F>>, FusionGrads<F>)> {
        let out = conv_backward(&cache.dropped, &self.classifier_out, d_logits)?;
        let d_relu = dropout_backward(cache.mask.as_ref(), &out.d_input)?;
        let d_pre = relu_backward(&cache.hidden_pre_relu, &d_relu)?;
        let hidden = conv_backward(&cache.fused, &self.classifier_hidden, &d_pre)?;
        let d_fused = hidden.d_input;
        let mut grads = FusionGrads {
            face_gate: None,
            context_gate: None,
            classifier_hidden: hidden.d_params,
            classifier_out: out.d_params,
        };
        let (d_f, d_c) = match (&cache.face, &cache.context, &cache.weights) {
            (Some(f), Some(c), Some(w)) => {
                let (d_sf, d_sc) = split_channels(&d_fused, f.shape()[1])?;
                let mut d_f = scale_rows(&d_sf, &w.lambda_f)?;
                let mut d_c = scale_rows(&d_sc, &w.lambda_c)?;
                if let (Some(gf), Some(gc), Some((cf, cc))) =
                    (&self.face_gate, &self.context_gate, &cache.gates)
                {
                    let d_lf = row_dots(&d_sf, f);
                    let d_lc = row_dots(&d_sc, c);
                    // Two-way softmax Jacobian.
                    let mut d_score_f = Vec::with_capacity(d_lf.len());
                    let mut d_score_c = Vec::with_capacity(d_lf.len());
                    for i in 0..d_lf.len() {
                        let (lf, lc) = (w.lambda_f[i], w.lambda_c[i]);
                        let avg = lf * d_lf[i] + lc * d_lc[i];
                        d_score_f.push(lf * (d_lf[i] - avg));
                        d_score_c.push(lc * (d_lc[i] - avg));
                    }
                    let n = d_lf.len();
                    let (gx_f, g_f) = gf.backward(cf, &Tensor::from_vec(&[n, 1], d_score_f)?)?;
                    let (gx_c, g_c) = gc.backward(cc, &Tensor::from_vec(&[n, 1], d_score_c)?)?;
                    d_f.add_assign(&gx_f)?;
                    d_c.add_assign(&gx_c)?;
                    grads.face_gate = Some(g_f);
                    grads.context_gate = Some(g_c);
                }
                (Some(d_f), Some(d_c))
            }
            (Some(_), None, _) => (Some(d_fused), None),
            (None, Some(_), _) => (None, Some(d_fused)),
            _ => return Err(Error::CorruptedState("fusion cache is inconsistent".into())),
        };
        Ok((d_f, d_c, grads))
    }
}

/// Two-stream fusion: returns logits `(n, K)` and the fusion weights.
pub fn fuse<F: Scalar, R: Rng + ?Sized>(
    x_f: &Tensor<F>,
    x_c_bar: &Tensor<F>,
    p: &FusionParams<F>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<F>, FusionWeights<F>)> {
    let out = p.forward(Some(x_f), Some(x_c_bar), mode, rng)?;
    let weights = out.weights.expect("two-stream fusion always reports weights");
    Ok((out.logits, weights))
}

impl<F: Scalar> Visit<F> for GateParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.out.visit(&join(prefix, "out"), out);
    }
}

impl<F: Scalar> VisitMut<F> for GateParams<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        self.hidden.visit_mut(&join(prefix, "hidden"), out);
        self.out.visit_mut(&join(prefix, "out"), out);
    }
}

impl<F: Scalar> Visit<F> for GateGrads<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.out.visit(&join(prefix, "out"), out);
    }
}

impl<F: Scalar> Visit<F> for FusionParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        if let Some(g) = &self.face_gate {
            g.visit(&join(prefix, "face_gate"), out);
        }
        if let Some(g) = &self.context_gate {
            g.visit(&join(prefix, "context_gate"), out);
        }
        self.classifier_hidden.visit(&join(prefix, "classifier.hidden"), out);
        self.classifier_out.visit(&join(prefix, "classifier.out"), out);
    }
}

impl<F: Scalar> VisitMut<F> for FusionParams<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        if let Some(g) = &mut self.face_gate {
            g.visit_mut(&join(prefix, "face_gate"), out);
        }
        if let Some(g) = &mut self.context_gate {
            g.visit_mut(&join(prefix, "context_gate"), out);
        }
        self.classifier_hidden.visit_mut(&join(prefix, "classifier.hidden"), out);
        self.classifier_out.visit_mut(&join(prefix, "classifier.out"), out);
    }
}

impl<F: Scalar> Visit<F> for FusionGrads<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        if let Some(g) = &self.face_gate {
            g.visit(&join(prefix, "face_gate"), out);
        }
        if let Some(g) = &self.context_gate {
            g.visit(&join(prefix, "context_gate"), out);
        }
        self.classifier_hidden.visit(&join(prefix, "classifier.hidden"), out);
        self.classifier_out.visit(&join(prefix, "classifier.out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn filled(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 50.0 - 0.9).collect())
            .unwrap()
    }

    fn head(seed: u64) -> FusionParams<f64> {
        let mut p = FusionParams::new(4, 4, true, 3, 7, 0.5);
        for (i, (_, t)) in crate::params::learnable_mut(&mut p).into_iter().enumerate() {
            let shape = t.shape().to_vec();
            *t = filled(&shape, seed + i as u64);
        }
        p
    }

    #[test]
    fn symmetric_gates_split_evenly() {
        let mut p = head(1);
        p.context_gate = p.face_gate.clone();
        let x = filled(&[3, 4], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, w) = fuse(&x, &x, &p, Mode::Eval, &mut rng).unwrap();
        assert!(w.lambda_f.iter().chain(&w.lambda_c).all(|&l| l == 0.5));
    }

    #[test]
    fn engineered_scores_give_closed_form_weight() {
        let w = fusion_softmax(&[9f64.ln()], &[0.0]);
        assert!((w.lambda_f[0] - 0.9).abs() < 1e-12);
        assert!((w.lambda_c[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        let p = head(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (logits, w) = fuse(&filled(&[5, 4], 1), &filled(&[5, 4], 9), &p, Mode::Train, &mut rng).unwrap();
        assert_eq!(logits.shape(), &[5, 7]);
        for (a, b) in w.lambda_f.iter().zip(&w.lambda_c) {
            assert!((a + b - 1.0).abs() < 1e-12);
            assert!(*a > 0.0 && *b > 0.0);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let p = head(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(fuse(&filled(&[1, 5], 1), &filled(&[1, 4], 1), &p, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = head(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = p.forward(Some(&filled(&[2, 4], 1)), Some(&filled(&[2, 4], 2)), Mode::Train, &mut rng).unwrap();
        let (df, dc, g) = p.backward(&out.cache, &Tensor::zeros(&[2, 7])).unwrap();
        assert_eq!(df.unwrap().max_abs(), 0.0);
        assert_eq!(dc.unwrap().max_abs(), 0.0);
        let mut list = Vec::new();
        g.visit("", &mut list);
        assert!(list.iter().all(|(_, _, t)| t.max_abs() == 0.0));
    }

    #[test]
    fn lambda_derivative_is_lambda_f_times_lambda_c() {
        // d λF / d s_f by central difference against the closed form λF·λC.
        for s in [-2.0f64, -0.3, 0.0, 1.1, 3.0] {
            let h = 1e-6;
            let w = fusion_softmax(&[s], &[0.4]);
            let up = fusion_softmax(&[s + h], &[0.4]).lambda_f[0];
            let down = fusion_softmax(&[s - h], &[0.4]).lambda_f[0];
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - w.lambda_f[0] * w.lambda_c[0]).abs() < 1e-8);
        }
    }
}
