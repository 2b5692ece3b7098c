//! Multi-label image datasets, the synthetic non-IID generator, client
//! partitioning and skew measurement.

mod partition;
mod skew;
mod synth;

pub use partition::{partition_ds1, partition_ds2, train_test_split, ClientShard};
pub use skew::{gini, js_divergence, skew_report, SkewReport};
pub use synth::{synth_generate, SynthSpec, COUNTRY_GROUPS};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// `C×H×W`, row-major.
    pub image: Vec<f32>,
    /// Binary vector over the classes.
    pub labels: Vec<u8>,
    pub group: String,
}

impl Sample {
    pub fn positive_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &v)| v == 1).map(|(c, _)| c)
    }
}

/// Images with multi-hot labels and a group tag (the country, in DS2 terms).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelDataset {
    image_shape: [usize; 3],
    class_names: Vec<String>,
    samples: Vec<Sample>,
}

impl MultiLabelDataset {
    pub fn new(image_shape: [usize; 3], class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(data_err!("dataset needs at least one class"));
        }
        let pixels: usize = image_shape.iter().product();
        if pixels == 0 {
            return Err(data_err!("image shape {image_shape:?} is empty"));
        }
        for s in &samples {
            if s.image.len() != pixels {
                return Err(dim_err!(
                    "sample {:?} has {} pixels, expected {pixels} for {image_shape:?}",
                    s.id,
                    s.image.len()
                ));
            }
            if s.labels.len() != class_names.len() {
                return Err(dim_err!(
                    "sample {:?} has {} labels, expected {}",
                    s.id,
                    s.labels.len(),
                    class_names.len()
                ));
            }
            if s.labels.iter().any(|&v| v > 1) {
                return Err(data_err!("sample {:?} has a non-binary label", s.id));
            }
            if !s.labels.contains(&1) {
                return Err(data_err!("sample {:?} has no positive label", s.id));
            }
        }
        Ok(Self {
            image_shape,
            class_names,
            samples,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct group tags in order of first appearance.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.group.as_str()) {
                out.push(&s.group);
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| data_err!("index {i} out of range for {} samples", self.len()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            image_shape: self.image_shape,
            class_names: self.class_names.clone(),
            samples,
        })
    }

    /// Stacks the selected samples into an `N×C×H×W` image tensor and an
    /// `N×P` target tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let [c, h, w] = self.image_shape;
        let p = self.num_classes();
        let mut images = Vec::with_capacity(indices.len() * c * h * w);
        let mut targets = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| data_err!("index {i} out of range for {} samples", self.len()))?;
            images.extend(s.image.iter().map(|&v| f64::from(v)));
            targets.extend(s.labels.iter().map(|&v| f64::from(v)));
        }
        let n = indices.len();
        Ok((
            Tensor::new(alloc::vec![n, c, h, w], images)?,
            Tensor::new(alloc::vec![n, p], targets)?,
        ))
    }
}
