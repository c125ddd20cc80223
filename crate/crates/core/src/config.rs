//! Model variants and the input/channel geometry each one runs at.
//!
//! `full` scale is the reference architecture. `desk` scale keeps the exact
//! topology with narrow channels and small frames so full training fits on a
//! single CPU core; `tiny` is small enough for finite-difference checking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Dynamic = 3D convolutions over 16-frame clips; static = 2D convolutions over
/// single frames (temporal extent 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dynamic,
    Static,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Dynamic => 0,
            Variant::Static => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Dynamic),
            1 => Some(Variant::Static),
            _ => None,
        }
    }

    /// Stream and attention conv kernel `(kt, kh, kw)`.
    pub fn conv_kernel(self) -> [usize; 3] {
        match self {
            Variant::Dynamic => [3, 3, 3],
            Variant::Static => [1, 3, 3],
        }
    }

    pub fn conv_padding(self) -> [usize; 3] {
        match self {
            Variant::Dynamic => [1, 1, 1],
            Variant::Static => [0, 1, 1],
        }
    }

    /// Kernel (= stride) of the four pooling layers. The first never pools time.
    pub fn pools(self) -> [[usize; 3]; 4] {
        let later = match self {
            Variant::Dynamic => [2, 2, 2],
            Variant::Static => [1, 2, 2],
        };
        [[1, 2, 2], later, later, later]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dynamic => "dynamic",
            Variant::Static => "static",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(Variant::Dynamic),
            "static" => Ok(Variant::Static),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Full,
    Desk,
    Tiny,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            "tiny" => Ok(Scale::Tiny),
            other => Err(Error::InvalidConfig(format!("unknown scale {other:?}"))),
        }
    }
}

/// Input geometry. Extents are `[height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    /// Frames per clip fed to the network (1 for the static model).
    pub frames: usize,
    pub face: [usize; 2],
    /// Frame size the context path is resized to before cropping. The static
    /// model resizes straight to `context`, so the two are equal there.
    pub context_resize: [usize; 2],
    /// Context crop fed to the network.
    pub context: [usize; 2],
}

impl Geometry {
    pub fn full(variant: Variant) -> Self {
        match variant {
            Variant::Dynamic => Self {
                frames: 16,
                face: [96, 96],
                context_resize: [128, 171],
                context: [112, 112],
            },
            Variant::Static => Self {
                frames: 1,
                face: [224, 224],
                context_resize: [224, 224],
                context: [224, 224],
            },
        }
    }

    pub fn desk(variant: Variant) -> Self {
        match variant {
            Variant::Dynamic => Self {
                frames: 16,
                face: [16, 16],
                context_resize: [36, 48],
                context: [32, 32],
            },
            Variant::Static => Self {
                frames: 1,
                face: [32, 32],
                context_resize: [32, 32],
                context: [32, 32],
            },
        }
    }

    pub fn tiny(variant: Variant) -> Self {
        // Every final map keeps at least two positions so the attention softmax
        // and the last batch norm are non-degenerate at batch size 2.
        match variant {
            Variant::Dynamic => Self {
                frames: 8,
                face: [16, 32],
                context_resize: [20, 40],
                context: [16, 32],
            },
            Variant::Static => Self {
                frames: 1,
                face: [32, 32],
                context_resize: [32, 32],
                context: [32, 32],
            },
        }
    }

    /// Window stride used for sliding-window video inference.
    pub fn window_stride(&self) -> usize {
        (self.frames / 2).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub face_channels: [usize; 5],
    pub context_channels: [usize; 5],
    pub attention_hidden: usize,
    pub fusion_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl ArchConfig {
    pub fn full(classes: usize) -> Self {
        Self {
            face_channels: [32, 64, 128, 256, 256],
            context_channels: [32, 64, 128, 256, 256],
            attention_hidden: 128,
            fusion_hidden: 128,
            classes,
            dropout: 0.5,
        }
    }

    pub fn desk(classes: usize) -> Self {
        Self {
            face_channels: [8, 16, 16, 32, 32],
            context_channels: [8, 16, 16, 32, 32],
            attention_hidden: 16,
            fusion_hidden: 32,
            classes,
            dropout: 0.5,
        }
    }

    pub fn tiny(classes: usize) -> Self {
        Self {
            face_channels: [2, 3, 3, 4, 4],
            context_channels: [2, 3, 3, 4, 4],
            attention_hidden: 3,
            fusion_hidden: 6,
            classes,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub geometry: Geometry,
    pub arch: ArchConfig,
}

pub const NUM_CLASSES: usize = 7;

impl ModelConfig {
    pub fn new(variant: Variant, scale: Scale) -> Self {
        Self::with_classes(variant, scale, NUM_CLASSES)
    }

    pub fn with_classes(variant: Variant, scale: Scale, classes: usize) -> Self {
        let (geometry, arch) = match scale {
            Scale::Full => (Geometry::full(variant), ArchConfig::full(classes)),
            Scale::Desk => (Geometry::desk(variant), ArchConfig::desk(classes)),
            Scale::Tiny => (Geometry::tiny(variant), ArchConfig::tiny(classes)),
        };
        Self { variant, geometry, arch }
    }

    pub fn face_input_shape(&self, n: usize) -> [usize; 5] {
        let g = &self.geometry;
        [n, 3, g.frames, g.face[0], g.face[1]]
    }

    pub fn context_input_shape(&self, n: usize) -> [usize; 5] {
        let g = &self.geometry;
        [n, 3, g.frames, g.context[0], g.context[1]]
    }

    /// Closed-form conv5 activation shape: spatial extent / 16, temporal / 8
    /// (dynamic) after the four pools.
    pub fn final_feature_shape(&self, n: usize, channels: usize, spatial: [usize; 2]) -> [usize; 5] {
        let t = match self.variant {
            Variant::Dynamic => self.geometry.frames / 8,
            Variant::Static => 1,
        };
        [n, channels, t, spatial[0] / 16, spatial[1] / 16]
    }

    pub fn validate(&self) -> crate::Result<()> {
        let g = &self.geometry;
        if self.arch.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        let temporal_ok = match self.variant {
            Variant::Dynamic => g.frames >= 8 && g.frames % 8 == 0,
            Variant::Static => g.frames == 1,
        };
        if !temporal_ok {
            return Err(Error::InvalidConfig(format!(
                "{} model cannot pool {} frames",
                self.variant, g.frames
            )));
        }
        for (name, [h, w]) in [("face", g.face), ("context", g.context)] {
            if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} extent {h}x{w} must be a positive multiple of 16"
                )));
            }
        }
        if g.context_resize[0] < g.context[0] || g.context_resize[1] < g.context[1] {
            return Err(Error::InvalidConfig("context crop larger than resized frame".into()));
        }
        if !(0.0..1.0).contains(&self.arch.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {}", self.arch.dropout)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for v in [Variant::Dynamic, Variant::Static] {
            for s in [Scale::Full, Scale::Desk, Scale::Tiny] {
                ModelConfig::new(v, s).validate().unwrap();
            }
        }
    }

    #[test]
    fn full_final_shapes() {
        let c = ModelConfig::new(Variant::Dynamic, Scale::Full);
        assert_eq!(c.final_feature_shape(1, 256, c.geometry.face), [1, 256, 2, 6, 6]);
        assert_eq!(c.final_feature_shape(1, 256, c.geometry.context), [1, 256, 2, 7, 7]);
        let s = ModelConfig::new(Variant::Static, Scale::Full);
        assert_eq!(s.final_feature_shape(1, 256, s.geometry.context), [1, 256, 1, 14, 14]);
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut c = ModelConfig::new(Variant::Dynamic, Scale::Tiny);
        c.geometry.frames = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Variant::Static, Scale::Tiny);
        c.geometry.face = [20, 20];
        assert!(c.validate().is_err());
    }
}
