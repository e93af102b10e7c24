use std::path::Path;

use super::container::{NamedTensor, TensorArchive};
use super::FeatureError;
use crate::Matrix;

pub const OBJECT: &str = "object";
pub const OBJECT_MASK: &str = "object_mask";
pub const ACTION: &str = "action";
pub const VISUAL_TEXT: &str = "visual_text";

/// Per-frame object slots: `frames × slots × dim` features and a presence
/// mask of `frames × slots`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatures {
    frames: usize,
    slots: usize,
    dim: usize,
    data: Vec<f64>,
    present: Vec<bool>,
}

impl ObjectFeatures {
    pub fn new(
        frames: usize,
        slots: usize,
        dim: usize,
        data: Vec<f64>,
        present: Vec<bool>,
    ) -> Result<Self, FeatureError> {
        if data.len() != frames * slots * dim || present.len() != frames * slots {
            return Err(FeatureError::DimMismatch(format!(
                "object tensor {frames}x{slots}x{dim} with {} values and {} mask entries",
                data.len(),
                present.len()
            )));
        }
        Ok(Self {
            frames,
            slots,
            dim,
            data,
            present,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, frame: usize, slot: usize) -> &[f64] {
        let start = (frame * self.slots + slot) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn is_present(&self, frame: usize, slot: usize) -> bool {
        self.present[frame * self.slots + slot]
    }

    pub fn present_count(&self, frame: usize) -> usize {
        (0..self.slots).filter(|&n| self.is_present(frame, n)).count()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.present
    }
}

/// Precomputed features of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub video_id: String,
    pub objects: ObjectFeatures,
    /// Latent action features, `frames × d_m`.
    pub action: Matrix,
    /// Visual-text features, `frames × d_c`.
    pub visual_text: Matrix,
}

impl FeatureBundle {
    pub fn frames(&self) -> usize {
        self.action.rows()
    }

    /// Checks shapes and finiteness of present objects.
    pub fn validate(&self) -> Result<(), FeatureError> {
        let t = self.action.rows();
        if t == 0 {
            return Err(FeatureError::DimMismatch("bundle has zero frames".into()));
        }
        if self.objects.slots == 0 {
            return Err(FeatureError::DimMismatch("bundle has zero object slots".into()));
        }
        if self.objects.frames != t || self.visual_text.rows() != t {
            return Err(FeatureError::DimMismatch(format!(
                "frame counts disagree: object {}, action {}, visual_text {}",
                self.objects.frames,
                t,
                self.visual_text.rows()
            )));
        }
        for f in 0..t {
            for n in 0..self.objects.slots {
                if self.objects.is_present(f, n)
                    && self.objects.feature(f, n).iter().any(|v| !v.is_finite())
                {
                    return Err(FeatureError::NonFiniteValue(OBJECT.into()));
                }
            }
        }
        if !self.action.is_finite() {
            return Err(FeatureError::NonFiniteValue(ACTION.into()));
        }
        if !self.visual_text.is_finite() {
            return Err(FeatureError::NonFiniteValue(VISUAL_TEXT.into()));
        }
        Ok(())
    }

    pub fn to_archive(&self) -> Result<TensorArchive, FeatureError> {
        self.validate()?;
        let o = &self.objects;
        let dims2 = |m: &Matrix| vec![m.rows() as u32, m.cols() as u32];
        let mask: Vec<f64> = o.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        let mut a = TensorArchive::new();
        a.push(NamedTensor::from_f64(
            OBJECT,
            vec![o.frames as u32, o.slots as u32, o.dim as u32],
            &o.data,
        ));
        a.push(NamedTensor::from_f64(
            OBJECT_MASK,
            vec![o.frames as u32, o.slots as u32],
            &mask,
        ));
        a.push(NamedTensor::from_f64(ACTION, dims2(&self.action), self.action.data()));
        a.push(NamedTensor::from_f64(
            VISUAL_TEXT,
            dims2(&self.visual_text),
            self.visual_text.data(),
        ));
        Ok(a)
    }

    pub fn from_archive(video_id: &str, archive: &TensorArchive) -> Result<Self, FeatureError> {
        let object = archive.require(OBJECT)?;
        let mask = archive.require(OBJECT_MASK)?;
        let action = matrix_tensor(archive.require(ACTION)?)?;
        let visual_text = matrix_tensor(archive.require(VISUAL_TEXT)?)?;
        if object.dims.len() != 3 {
            return Err(FeatureError::DimMismatch(format!(
                "object tensor must be rank 3, got {:?}",
                object.dims
            )));
        }
        let (t, n, d) = (
            object.dims[0] as usize,
            object.dims[1] as usize,
            object.dims[2] as usize,
        );
        if mask.dims != [t as u32, n as u32] {
            return Err(FeatureError::DimMismatch(format!(
                "object_mask dims {:?} do not match object dims {:?}",
                mask.dims, object.dims
            )));
        }
        let present = mask
            .data
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                v => Err(FeatureError::DimMismatch(format!("object_mask value {v} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bundle = Self {
            video_id: video_id.to_string(),
            objects: ObjectFeatures::new(t, n, d, object.to_f64(), present)?,
            action,
            visual_text,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Reads a rank-2 tensor as a matrix.
pub fn matrix_tensor(t: &NamedTensor) -> Result<Matrix, FeatureError> {
    if t.dims.len() != 2 {
        return Err(FeatureError::DimMismatch(format!(
            "tensor {:?} must be rank 2, got {:?}",
            t.name, t.dims
        )));
    }
    Matrix::new(t.dims[0] as usize, t.dims[1] as usize, t.to_f64())
        .map_err(|_| FeatureError::NonFiniteValue(t.name.clone()))
}

/// Video id of a bundle file: its file stem.
pub fn video_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads and validates a bundle; the video id is taken from the file stem.
pub fn load_bundle(path: &Path) -> Result<FeatureBundle, FeatureError> {
    let archive = TensorArchive::read(path)?;
    FeatureBundle::from_archive(&video_id_from_path(path), &archive)
}

/// Writes a bundle in the VFT1 layout, tensors in the fixed order
/// object, object_mask, action, visual_text.
pub fn save_bundle(bundle: &FeatureBundle, path: &Path) -> Result<(), FeatureError> {
    bundle.to_archive()?.write(path)
}
