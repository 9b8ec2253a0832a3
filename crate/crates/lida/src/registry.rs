//! Persistent exemplar database: generator labels, their registered
//! fingerprint features, and the real-image prototype.
//!
//! The registry stores unit-norm features rather than raw images — retrieval
//! only needs features, and `source_path` is kept for audit. Registering a
//! new generator appends records without touching existing ones, so an
//! already-working database never degrades when the label set grows.

use std::collections::BTreeSet;
use std::path::Path;

use crate::encoder::{EncoderParams, FeatureVector};
use crate::error::{CorruptKind, Error, Result};
use crate::fingerprint::{extract_fingerprint, RgbImage};
use crate::losses::RealPrototype;
use crate::util::{atomic_write, put_f64_slice, put_i64, put_string, put_u32, put_u64, ByteReader};

/// Norm slack allowed for stored features.
const UNIT_NORM_TOL: f64 = 1e-6;

/// One registered exemplar.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarRecord {
    pub id: u64,
    pub label: String,
    /// Where the exemplar image came from, for audit only.
    pub source_path: String,
    /// Registration time (seconds since the epoch); 0 when unknown.
    pub added_at: i64,
    /// Unit-norm encoder feature.
    pub feature: FeatureVector,
}

/// Exemplar database keyed by generator label.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    feature_dim: usize,
    records: Vec<ExemplarRecord>,
    prototype: Option<RealPrototype>,
}

impl Registry {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim, records: Vec::new(), prototype: None }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ExemplarRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&ExemplarRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.label.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn prototype(&self) -> Option<&RealPrototype> {
        self.prototype.as_ref()
    }

    pub fn set_prototype(&mut self, prototype: Option<RealPrototype>) -> Result<()> {
        if let Some(p) = &prototype {
            if p.dim() != self.feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "prototype dim {} does not match registry dim {}",
                    p.dim(),
                    self.feature_dim
                )));
            }
        }
        self.prototype = prototype;
        Ok(())
    }

    fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id).max().map_or(0, |m| m + 1)
    }

    /// Append one pre-encoded exemplar. The feature must be unit-norm.
    pub fn add(
        &mut self,
        label: &str,
        source_path: &str,
        added_at: i64,
        feature: FeatureVector,
    ) -> Result<u64> {
        if label.is_empty() {
            return Err(Error::InvalidArgument("exemplar label must be non-empty".into()));
        }
        if feature.len() != self.feature_dim {
            return Err(Error::IncompatibleEncoder(format!(
                "feature dim {} vs registry dim {}",
                feature.len(),
                self.feature_dim
            )));
        }
        let norm = feature.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "stored features must be unit-norm, got norm {norm}"
            )));
        }
        let id = self.next_id();
        self.records.push(ExemplarRecord {
            id,
            label: label.to_string(),
            source_path: source_path.to_string(),
            added_at,
            feature,
        });
        Ok(id)
    }

    /// Fingerprint, encode, and store a batch of images under one label.
    /// Returns how many records were added. Existing records are never
    /// modified, so previously registered labels keep their exact features.
    pub fn register_images(
        &mut self,
        label: &str,
        images: &[(String, RgbImage)],
        params: &EncoderParams,
        added_at: i64,
    ) -> Result<usize> {
        if params.config.feature_dim != self.feature_dim {
            return Err(Error::IncompatibleEncoder(format!(
                "encoder feature dim {} vs registry dim {}",
                params.config.feature_dim, self.feature_dim
            )));
        }
        let mut staged = Vec::with_capacity(images.len());
        for (source_path, image) in images {
            let fp = extract_fingerprint(image);
            staged.push((source_path.clone(), params.embed(&fp)?));
        }
        // All encodes succeeded; now mutate.
        for (source_path, feature) in staged {
            self.add(label, &source_path, added_at, feature)?;
        }
        Ok(images.len())
    }

    /// Replace the stored feature of one record (used when the encoder is
    /// re-trained and the database is re-encoded).
    pub fn update_feature(&mut self, id: u64, feature: FeatureVector) -> Result<()> {
        if feature.len() != self.feature_dim {
            return Err(Error::IncompatibleEncoder(format!(
                "feature dim {} vs registry dim {}",
                feature.len(),
                self.feature_dim
            )));
        }
        let norm = feature.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidArgument(format!(
                "stored features must be unit-norm, got norm {norm}"
            )));
        }
        let record = self
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no record with id {id}")))?;
        record.feature = feature;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(REGISTRY_MAGIC);
        buf.push(REGISTRY_VERSION);
        put_u32(&mut buf, self.feature_dim as u32);
        put_u32(&mut buf, self.records.len() as u32);
        buf.push(if self.prototype.is_some() { FLAG_PROTOTYPE } else { 0 });
        for r in &self.records {
            put_u64(&mut buf, r.id);
            put_string(&mut buf, &r.label);
            put_string(&mut buf, &r.source_path);
            put_i64(&mut buf, r.added_at);
            put_f64_slice(&mut buf, &r.feature.values);
        }
        if let Some(p) = &self.prototype {
            put_u64(&mut buf, p.sample_count);
            put_f64_slice(&mut buf, &p.values.values);
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Registry> {
        let bytes = std::fs::read(path)?;
        let mut r = ByteReader::new(&bytes);
        if r.bytes(7, "magic")? != REGISTRY_MAGIC {
            return Err(CorruptKind::BadMagic { expected: "LIDAREG" }.into());
        }
        let version = r.u8("version")?;
        if version != REGISTRY_VERSION {
            return Err(CorruptKind::BadVersion { found: version }.into());
        }
        let feature_dim = r.u32("feature dim")? as usize;
        if feature_dim == 0 {
            return Err(CorruptKind::InvalidField("zero feature dim".into()).into());
        }
        let count = r.u32("record count")? as usize;
        let flags = r.u8("flags")?;
        if flags & !FLAG_PROTOTYPE != 0 {
            return Err(CorruptKind::InvalidField(format!("unknown flags {flags:#x}")).into());
        }
        let mut records = Vec::with_capacity(count.min(1 << 20));
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let id = r.u64("record id")?;
            if !seen.insert(id) {
                return Err(CorruptKind::InvalidField(format!("duplicate record id {id}")).into());
            }
            let label = r.string("record label")?;
            if label.is_empty() {
                return Err(CorruptKind::InvalidField("empty record label".into()).into());
            }
            let source_path = r.string("record source path")?;
            let added_at = r.i64("record timestamp")?;
            let feature = FeatureVector::new(r.f64_vec(feature_dim, "record feature")?);
            let norm = feature.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(CorruptKind::InvalidField(format!(
                    "record {id} feature norm {norm} is not unit"
                ))
                .into());
            }
            records.push(ExemplarRecord { id, label, source_path, added_at, feature });
        }
        let prototype = if flags & FLAG_PROTOTYPE != 0 {
            let sample_count = r.u64("prototype sample count")?;
            let values = FeatureVector::new(r.f64_vec(feature_dim, "prototype values")?);
            Some(
                RealPrototype::from_unit(values, sample_count)
                    .map_err(|e| CorruptKind::InvalidField(format!("prototype: {e}")))?,
            )
        } else {
            None
        };
        r.finish()?;
        Ok(Registry { feature_dim, records, prototype })
    }
}

const REGISTRY_MAGIC: &[u8; 7] = b"LIDAREG";
const REGISTRY_VERSION: u8 = 1;
const FLAG_PROTOTYPE: u8 = 1;
