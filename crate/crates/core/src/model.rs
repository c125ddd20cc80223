//! Whole-model assembly: face stream + context stream + adaptive fusion.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::error::{shape_err, Error, Result};
use crate::fusion::{FusionCache, FusionGrads, FusionParams, FusionWeights};
use crate::layers::Mode;
use crate::params::{entries_mut, join, Entry, EntryMut, Role, Visit, VisitMut};
use crate::streams::{AttentionMap, StreamActivations, StreamGrads, StreamKind, StreamParams};
use crate::tensor::{Scalar, Tensor};

/// Which components are active. Mirrors the ablation table's F / C / cA / fA columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub face: bool,
    pub context: bool,
    pub context_attention: bool,
    pub fusion_attention: bool,
}

impl AblationFlags {
    pub const FULL: Self =
        Self { face: true, context: true, context_attention: true, fusion_attention: true };
    pub const FACE_ONLY: Self =
        Self { face: true, context: false, context_attention: false, fusion_attention: false };

    pub fn validate(&self) -> Result<()> {
        if !self.face && !self.context {
            return Err(Error::InvalidConfig("at least one stream must be enabled".into()));
        }
        Ok(())
    }

    /// Flags with settings that have no effect (attention on a missing stream) cleared.
    pub fn normalized(self) -> Self {
        Self {
            context_attention: self.context && self.context_attention,
            fusion_attention: self.face && self.context && self.fusion_attention,
            ..self
        }
    }

    /// The six rows of the dynamic-model ablation, in table order.
    pub fn table_rows() -> Vec<Self> {
        let f = |face, context, ca, fa| Self {
            face,
            context,
            context_attention: ca,
            fusion_attention: fa,
        };
        vec![
            f(true, false, false, false),
            f(false, true, true, false),
            f(true, true, false, false),
            f(true, true, true, false),
            f(true, true, false, true),
            f(true, true, true, true),
        ]
    }

    /// Short label such as `F+C+cA`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.face {
            parts.push("F");
        }
        if self.context {
            parts.push("C");
        }
        if self.context_attention {
            parts.push("cA");
        }
        if self.fusion_attention {
            parts.push("fA");
        }
        parts.join("+")
    }

    pub fn parse(label: &str) -> Result<Self> {
        let mut flags =
            Self { face: false, context: false, context_attention: false, fusion_attention: false };
        for part in label.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "F" => flags.face = true,
                "C" => flags.context = true,
                "cA" => flags.context_attention = true,
                "fA" => flags.fusion_attention = true,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown ablation flag {other:?} (expected F, C, cA, fA)"
                    )))
                }
            }
        }
        flags.validate()?;
        Ok(flags)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F = f32> {
    pub config: ModelConfig,
    pub flags: AblationFlags,
    /// `W_F`.
    pub face: Option<StreamParams<F>>,
    /// `W_C` plus the attention module.
    pub context: Option<StreamParams<F>>,
    /// `W_D`, `W_E`, `W_G`.
    pub fusion: FusionParams<F>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<F = f32> {
    pub face: Option<StreamGrads<F>>,
    pub context: Option<StreamGrads<F>>,
    pub fusion: FusionGrads<F>,
}

/// Forward-pass state needed by [`model_backward`] and the running-stat update.
#[derive(Debug, Clone)]
pub struct ForwardCache<F = f32> {
    pub face: Option<StreamActivations<F>>,
    pub context: Option<StreamActivations<F>>,
    pub fusion: FusionCache<F>,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<F = f32> {
    pub logits: Tensor<F>,
    pub attention: Option<AttentionMap<F>>,
    pub fusion_weights: Option<FusionWeights<F>>,
    pub cache: ForwardCache<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Zero-weight model with the architecture implied by `config` and `flags`.
    pub fn zeros(config: &ModelConfig, flags: AblationFlags) -> Result<Self> {
        config.validate()?;
        flags.validate()?;
        let flags = flags.normalized();
        let arch = &config.arch;
        let face = flags
            .face
            .then(|| StreamParams::new(StreamKind::Face, config.variant, arch.face_channels, None));
        let context = flags.context.then(|| {
            StreamParams::new(
                StreamKind::Context,
                config.variant,
                arch.context_channels,
                flags.context_attention.then_some(arch.attention_hidden),
            )
        });
        let fusion = FusionParams::new(
            face.as_ref().map_or(0, StreamParams::output_width),
            context.as_ref().map_or(0, StreamParams::output_width),
            flags.fusion_attention,
            arch.fusion_hidden,
            arch.classes,
            arch.dropout,
        );
        Ok(Self { config: config.clone(), flags, face, context, fusion, step: 0 })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn classes(&self) -> usize {
        self.config.arch.classes
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros(&self.config, self.flags)
            .expect("an existing model's config is valid");
        out.step = self.step;
        out.fusion.dropout_rate = self.fusion.dropout_rate;
        let src = crate::params::entries(self);
        for ((_, _, dst), (_, _, s)) in entries_mut(&mut out).into_iter().zip(src) {
            *dst = s.cast();
        }
        out
    }

    pub fn learnable_count(&self) -> usize {
        crate::params::learnable(self).iter().map(|(_, t)| t.numel()).sum()
    }

    /// Applies the batch statistics recorded in a train-mode forward pass.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<F>) -> Result<()> {
        if let (Some(p), Some(a)) = (&mut self.face, &cache.face) {
            p.update_running_stats(a)?;
        }
        if let (Some(p), Some(a)) = (&mut self.context, &cache.context) {
            p.update_running_stats(a)?;
        }
        Ok(())
    }
}

/// He-normal initialisation (`std = sqrt(2 / fan_in)`), zero biases, unit BN
/// scale, running statistics `(0, 1)`. Deterministic per seed.
pub fn init_params<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    let mut params = ModelParams::zeros(config, AblationFlags::FULL)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, role, t) in entries_mut(&mut params) {
        if role != Role::Learnable || !name.ends_with(".weight") {
            continue;
        }
        let fan_in: usize = t.shape()[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        t.data_mut().iter_mut().for_each(|v| *v = F::from_f64_lossy(normal.sample(&mut rng)));
    }
    Ok(params)
}

/// Derives an ablated model from a full one, sharing every weight the two
/// architectures have in common. Single-stream classifiers keep the columns
/// of the shared classifier that belonged to that stream.
pub fn ablation_variant<F: Scalar>(params: &ModelParams<F>, flags: AblationFlags) -> Result<ModelParams<F>> {
    flags.validate()?;
    let flags = flags.normalized();
    let mut out = ModelParams::zeros(&params.config, flags)?;
    let missing = |what: &str| Error::InvalidConfig(format!("source model has no {what}"));
    if flags.face {
        out.face = Some(params.face.clone().ok_or_else(|| missing("face stream"))?);
    }
    if flags.context {
        let mut ctx = params.context.clone().ok_or_else(|| missing("context stream"))?;
        if !flags.context_attention {
            ctx.attention = None;
        } else if ctx.attention.is_none() {
            return Err(missing("context attention"));
        }
        out.context = Some(ctx);
    }
    if flags.fusion_attention {
        out.fusion.face_gate = Some(params.fusion.face_gate.clone().ok_or_else(|| missing("fusion gates"))?);
        out.fusion.context_gate = params.fusion.context_gate.clone();
    }
    out.fusion.classifier_out = params.fusion.classifier_out.clone();
    out.fusion.dropout_rate = params.fusion.dropout_rate;
    let src = &params.fusion.classifier_hidden;
    let face_w = params.face.as_ref().map_or(0, StreamParams::output_width);
    let columns = match (flags.face, flags.context) {
        (true, true) => 0..src.in_channels(),
        (true, false) => 0..face_w,
        (false, true) => face_w..src.in_channels(),
        (false, false) => unreachable!("validated above"),
    };
    let dst = &mut out.fusion.classifier_hidden;
    if dst.in_channels() != columns.len() {
        return Err(shape_err(format!(
            "classifier width {} cannot be sliced to {:?}",
            src.in_channels(),
            columns
        )));
    }
    let (rows, width) = (src.out_channels(), src.in_channels());
    let sliced: Vec<F> = (0..rows)
        .flat_map(|r| src.weight.data()[r * width + columns.start..r * width + columns.end].to_vec())
        .collect();
    dst.weight = Tensor::from_vec(dst.weight.shape(), sliced)?;
    dst.bias = src.bias.clone();
    out.step = params.step;
    Ok(out)
}

fn check_input<F: Scalar>(x: &Tensor<F>, expected: [usize; 5], what: &str) -> Result<()> {
    if x.shape()[1..] != expected[1..] || x.rank() != 5 {
        return Err(shape_err(format!(
            "{what} input {:?} does not match configured geometry {:?}",
            x.shape(),
            &expected[1..]
        )));
    }
    Ok(())
}

/// Full forward pass. Disabled streams ignore their input.
pub fn model_forward<F: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    face: &Tensor<F>,
    context: &Tensor<F>,
    mode: Mode,
    rng: &mut R,
) -> Result<ModelOutput<F>> {
    let cfg = &params.config;
    let n = face.shape()[0];
    let face_acts = match &params.face {
        Some(p) => {
            check_input(face, cfg.face_input_shape(n), "face")?;
            Some(p.forward(face, mode)?)
        }
        None => None,
    };
    let context_acts = match &params.context {
        Some(p) => {
            check_input(context, cfg.context_input_shape(context.shape()[0]), "context")?;
            Some(p.forward(context, mode)?)
        }
        None => None,
    };
    let fused = params.fusion.forward(
        face_acts.as_ref().map(|a| &a.output),
        context_acts.as_ref().map(|a| &a.output),
        mode,
        rng,
    )?;
    Ok(ModelOutput {
        logits: fused.logits,
        attention: context_acts.as_ref().and_then(|a| a.attention.clone()),
        fusion_weights: fused.weights,
        cache: ForwardCache { face: face_acts, context: context_acts, fusion: fused.cache },
    })
}

pub fn model_backward<F: Scalar>(
    params: &ModelParams<F>,
    cache: &ForwardCache<F>,
    d_logits: &Tensor<F>,
) -> Result<ModelGrads<F>> {
    if params.face.is_some() != cache.face.is_some()
        || params.context.is_some() != cache.context.is_some()
    {
        return Err(Error::CorruptedState("forward cache does not match model streams".into()));
    }
    let (d_f, d_c, fusion) = params.fusion.backward(&cache.fusion, d_logits)?;
    let stream = |p: &Option<StreamParams<F>>, a: &Option<StreamActivations<F>>, d: Option<Tensor<F>>| {
        match (p, a, d) {
            (Some(p), Some(a), Some(d)) => p.backward(a, &d).map(|(_, g)| Some(g)),
            (None, None, None) => Ok(None),
            _ => Err(Error::CorruptedState("stream gradient routing mismatch".into())),
        }
    };
    Ok(ModelGrads {
        face: stream(&params.face, &cache.face, d_f)?,
        context: stream(&params.context, &cache.context, d_c)?,
        fusion,
    })
}

impl<F: Scalar> Visit<F> for ModelParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        if let Some(s) = &self.face {
            s.visit(&join(prefix, "face"), out);
        }
        if let Some(s) = &self.context {
            s.visit(&join(prefix, "context"), out);
        }
        self.fusion.visit(&join(prefix, "fusion"), out);
    }
}

impl<F: Scalar> VisitMut<F> for ModelParams<F> {
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<EntryMut<'a, F>>) {
        if let Some(s) = &mut self.face {
            s.visit_mut(&join(prefix, "face"), out);
        }
        if let Some(s) = &mut self.context {
            s.visit_mut(&join(prefix, "context"), out);
        }
        self.fusion.visit_mut(&join(prefix, "fusion"), out);
    }
}

impl<F: Scalar> Visit<F> for ModelGrads<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<Entry<'a, F>>) {
        if let Some(s) = &self.face {
            s.visit(&join(prefix, "face"), out);
        }
        if let Some(s) = &self.context {
            s.visit(&join(prefix, "context"), out);
        }
        self.fusion.visit(&join(prefix, "fusion"), out);
    }
}
