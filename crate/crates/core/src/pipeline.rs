//! Loaded generator and codec pair, plus the protect (embed) flow.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, Checkpoint, CheckpointKind};
use crate::datasets::prepare_carrier;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureExtractor, FeatureVector};
use crate::godwgm::Generator;
use crate::image::{GrayImage, RgbImage, CANONICAL_SIZE};
use crate::wvs::WvsModel;

pub const EMBED_RECORD_SCHEMA: &str = "faceprotect-embed/1";

/// A generator and codec trained against the same feature extractor.
/// Immutable once built, so it can be shared across threads.
#[derive(Clone, Debug)]
pub struct Models {
    pub generator: Generator,
    pub wvs: WvsModel,
    pub godwgm_id: String,
    pub wvs_id: String,
    pub extractor_id: String,
}

impl Models {
    pub fn from_checkpoints(godwgm: &Checkpoint, wvs: &Checkpoint) -> Result<Self> {
        godwgm.expect_kind(CheckpointKind::Godwgm)?;
        wvs.expect_kind(CheckpointKind::Wvs)?;
        if godwgm.meta.extractor_id != wvs.meta.extractor_id {
            return Err(Error::SchemaMismatch(format!(
                "generator was trained with extractor {:?} but codec with {:?}",
                godwgm.meta.extractor_id, wvs.meta.extractor_id
            )));
        }
        Ok(Self {
            generator: Generator::from_checkpoint(godwgm)?,
            wvs: WvsModel::from_checkpoint(wvs)?,
            godwgm_id: godwgm.id().to_string(),
            wvs_id: wvs.id().to_string(),
            extractor_id: godwgm.meta.extractor_id.clone(),
        })
    }

    pub fn load(godwgm_dir: impl AsRef<Path>, wvs_dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoints(&Checkpoint::load(godwgm_dir)?, &Checkpoint::load(wvs_dir)?)
    }

    pub fn check_extractor(&self, extractor: &dyn FeatureExtractor) -> Result<()> {
        if extractor.id() != self.extractor_id {
            return Err(Error::SchemaMismatch(format!(
                "checkpoints expect extractor {:?}, got {:?}",
                self.extractor_id,
                extractor.id()
            )));
        }
        Ok(())
    }

    /// Watermark for `fv` at the canonical hiding resolution.
    pub fn mapped_watermark(&self, fv: &FeatureVector) -> Result<GrayImage> {
        self.generator.generate(fv).resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE)
    }

    /// Protect an image: extract features, map them to a watermark and hide it.
    /// Inputs that are not already canonical are centre-cropped and resized first.
    pub fn embed(&self, image: &RgbImage, extractor: &dyn FeatureExtractor) -> Result<Embedded> {
        self.check_extractor(extractor)?;
        let t0 = Instant::now();
        let carrier = canonical(image)?;
        let features = extract_features(&carrier, extractor)?;
        let watermark = self.mapped_watermark(&features)?;
        let mixed = self.wvs.embed(&carrier, &watermark)?;
        let record = EmbedRecord {
            schema: EMBED_RECORD_SCHEMA.to_string(),
            feature_hash: features.fingerprint(),
            watermark_hash: fingerprint([watermark.data()]),
            mixed_hash: fingerprint([mixed.data()]),
            godwgm_id: self.godwgm_id.clone(),
            wvs_id: self.wvs_id.clone(),
            extractor_id: self.extractor_id.clone(),
            elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        Ok(Embedded {
            carrier,
            features,
            watermark,
            mixed,
            record,
        })
    }
}

/// Features for a batch of images; fails on the first image without a usable face.
pub fn features_for(images: &[RgbImage], extractor: &dyn FeatureExtractor) -> Result<Vec<FeatureVector>> {
    images.iter().map(|img| extract_features(&canonical(img)?, extractor)).collect()
}

/// Canonical-size watermarks mapped from each feature vector.
pub fn watermarks_for(generator: &Generator, features: &[FeatureVector]) -> Result<Vec<GrayImage>> {
    features
        .iter()
        .map(|fv| generator.generate(fv).resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE))
        .collect()
}

/// Centre-crop and resize to the canonical size unless already there.
pub fn canonical(image: &RgbImage) -> Result<RgbImage> {
    if image.width() == CANONICAL_SIZE && image.height() == CANONICAL_SIZE {
        Ok(image.clone())
    } else {
        prepare_carrier(image)
    }
}

#[derive(Clone, Debug)]
pub struct Embedded {
    pub carrier: RgbImage,
    pub features: FeatureVector,
    pub watermark: GrayImage,
    pub mixed: RgbImage,
    pub record: EmbedRecord,
}

/// Sidecar written next to a protected image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRecord {
    pub schema: String,
    pub feature_hash: String,
    pub watermark_hash: String,
    pub mixed_hash: String,
    pub godwgm_id: String,
    pub wvs_id: String,
    pub extractor_id: String,
    pub elapsed_ms: f64,
}
