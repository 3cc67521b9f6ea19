//! In-memory bucket datasets with split provenance.

use serde::{Deserialize, Serialize};

use crate::preprocess::store::EncodedBucket;
use crate::preprocess::CHANNELS;
use crate::spectral::{FrequencySpec, SensorTensorSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ride_hash: u64,
    pub bucket_index: u32,
    pub label: u8,
    /// Time-domain rows; `None` for generated examples.
    pub samples: Option<Vec<[f32; CHANNELS]>>,
    pub tensors: SensorTensorSet,
}

impl Example {
    pub fn from_encoded(b: EncodedBucket) -> Option<Self> {
        Some(Self {
            ride_hash: b.ride_hash,
            bucket_index: b.bucket_index,
            label: b.label,
            samples: Some(b.samples),
            tensors: b.tensors?,
        })
    }

    pub fn to_encoded(&self) -> Option<EncodedBucket> {
        Some(EncodedBucket {
            ride_hash: self.ride_hash,
            bucket_index: self.bucket_index,
            label: self.label,
            samples: self.samples.clone()?,
            tensors: Some(self.tensors.clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tag: SplitTag,
    pub spec: FrequencySpec,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(tag: SplitTag, spec: FrequencySpec, examples: Vec<Example>) -> Self {
        Self { tag, spec, examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// `(positives, negatives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label != 0).count();
        (pos, self.examples.len() - pos)
    }

    /// Examples that came from ride files (not generated).
    pub fn observed(&self) -> Self {
        Self {
            tag: self.tag,
            spec: self.spec,
            examples: self.examples.iter().filter(|e| e.samples.is_some()).cloned().collect(),
        }
    }
}
