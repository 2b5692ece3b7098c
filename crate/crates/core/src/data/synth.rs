use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MultiLabelDataset, Sample};
use crate::error::{config_err, Result};
use crate::rng::{rng_for, SimRng};

/// Group names used when the generator is asked for seven groups.
pub const COUNTRY_GROUPS: [&str; 7] = [
    "Austria",
    "Belgium",
    "Finland",
    "Ireland",
    "Lithuania",
    "Serbia",
    "Switzerland",
];

const TEMPLATE_STREAM: u64 = 1;
const PREVALENCE_STREAM: u64 = 2;
const DRIFT_STREAM: u64 = 3;
const SAMPLE_STREAM: u64 = 4;
const MAX_LABEL_DRAWS: usize = 10_000;

/// Knobs of the synthetic multi-label generator.
///
/// Every class owns a small texture tile that is stamped onto a fixed subset
/// of image cells; an image is the sum of its positive classes' stamps plus
/// noise. Groups differ through three independent knobs: class prevalence
/// (`label_alpha`), an appearance transform (`drift_strength`) and size
/// (`quantity_exponent`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub groups: usize,
    pub classes: usize,
    /// Mean number of samples per group; the total is `groups ×
    /// samples_per_group`.
    pub samples_per_group: usize,
    pub channels: usize,
    pub image_size: usize,
    /// Side of the texture tile and of the grid cells it is stamped on.
    pub cell_size: usize,
    /// Dirichlet concentration of per-group class prevalences; `None` means
    /// every group shares the same prevalences.
    pub label_alpha: Option<f64>,
    /// Average class prevalence.
    pub base_prevalence: f64,
    /// Strength of the per-group gain, offset and spurious pattern.
    pub drift_strength: f64,
    /// Group `g` gets a share proportional to `(g + 1)^(−quantity_exponent)`.
    pub quantity_exponent: f64,
    pub noise_std: f64,
    /// Overrides the default group names.
    pub group_names: Option<Vec<String>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            groups: 7,
            classes: 6,
            samples_per_group: 100,
            channels: 3,
            image_size: 16,
            cell_size: 4,
            label_alpha: None,
            base_prevalence: 0.3,
            drift_strength: 0.0,
            quantity_exponent: 0.0,
            noise_std: 0.5,
            group_names: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.classes == 0 || self.channels == 0 {
            return Err(config_err!("synth needs at least one group, class and channel"));
        }
        if self.samples_per_group == 0 {
            return Err(config_err!("samples_per_group must be positive"));
        }
        if self.cell_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.cell_size) {
            return Err(config_err!(
                "image_size {} must be a positive multiple of cell_size {}",
                self.image_size,
                self.cell_size
            ));
        }
        if !(self.base_prevalence > 0.0 && self.base_prevalence <= 1.0) {
            return Err(config_err!("base_prevalence must lie in (0, 1], got {}", self.base_prevalence));
        }
        if let Some(a) = self.label_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(config_err!("label_alpha must be positive, got {a}"));
            }
        }
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !non_negative(self.drift_strength) || !non_negative(self.quantity_exponent) || !non_negative(self.noise_std) {
            return Err(config_err!("drift_strength, quantity_exponent and noise_std must be non-negative"));
        }
        if let Some(names) = &self.group_names {
            if names.len() != self.groups || names.iter().any(String::is_empty) {
                return Err(config_err!("group_names must list {} non-empty names", self.groups));
            }
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        match &self.group_names {
            Some(names) => names.clone(),
            None if self.groups == COUNTRY_GROUPS.len() => COUNTRY_GROUPS.iter().map(|s| s.to_string()).collect(),
            None => (0..self.groups).map(|g| format!("group{g}")).collect(),
        }
    }

    /// Samples per group: power-law shares rounded by largest remainder,
    /// each group keeping at least one sample.
    pub fn group_sizes(&self) -> Vec<usize> {
        let total = self.groups * self.samples_per_group;
        let shares: Vec<f64> = (0..self.groups)
            .map(|g| libm::pow((g + 1) as f64, -self.quantity_exponent))
            .collect();
        let sum: f64 = shares.iter().sum();
        let spare = total - self.groups;
        let exact: Vec<f64> = shares.iter().map(|s| s / sum * spare as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|&e| e as usize).collect();
        let mut order: Vec<usize> = (0..self.groups).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - sizes[a] as f64, exact[b] - sizes[b] as f64);
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let missing = spare - sizes.iter().sum::<usize>();
        for &g in order.iter().take(missing) {
            sizes[g] += 1;
        }
        sizes.iter().map(|s| s + 1).collect()
    }
}

fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws from a symmetric Dirichlet by normalizing Gamma variates.
fn dirichlet(rng: &mut SimRng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

struct Group {
    prevalence: Vec<f64>,
    gain: f64,
    offset: Vec<f64>,
    pattern: Vec<f64>,
}

/// Generates a dataset. Deterministic in `(spec, seed)`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<MultiLabelDataset> {
    spec.validate()?;
    let (c, s, cell) = (spec.channels, spec.image_size, spec.cell_size);
    let pixels = c * s * s;
    let cells = (s / cell) * (s / cell);

    // Class stamps: a random tile repeated on a random half of the cells.
    let mut rng = rng_for(seed, &[TEMPLATE_STREAM]);
    let templates: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let tile: Vec<f64> = (0..c * cell * cell).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let on: Vec<bool> = (0..cells).map(|_| rng.random::<bool>()).collect();
            let mut img = vec![0.0; pixels];
            for ch in 0..c {
                for y in 0..s {
                    for x in 0..s {
                        if on[(y / cell) * (s / cell) + x / cell] {
                            img[(ch * s + y) * s + x] = tile[(ch * cell + y % cell) * cell + x % cell];
                        }
                    }
                }
            }
            img
        })
        .collect();

    let mut prev_rng = rng_for(seed, &[PREVALENCE_STREAM]);
    let mut drift_rng = rng_for(seed, &[DRIFT_STREAM]);
    let d = spec.drift_strength;
    let groups: Vec<Group> = (0..spec.groups)
        .map(|_| {
            let prevalence = match spec.label_alpha {
                None => vec![spec.base_prevalence; spec.classes],
                Some(alpha) => dirichlet(&mut prev_rng, alpha, spec.classes)
                    .iter()
                    .map(|w| (spec.classes as f64 * spec.base_prevalence * w).clamp(0.02, 0.95))
                    .collect(),
            };
            // Drift draws happen even at zero strength so the other knobs
            // leave this stream untouched.
            let gain = 1.0 + d * drift_rng.random_range(-0.5..0.5);
            let offset: Vec<f64> = (0..c).map(|_| 0.5 * d * normal(&mut drift_rng)).collect();
            let mix: Vec<f64> = (0..spec.classes).map(|_| drift_rng.random_range(-1.0..1.0)).collect();
            let pattern = (0..pixels)
                .map(|i| d * templates.iter().zip(&mix).map(|(t, m)| m * t[i]).sum::<f64>())
                .collect();
            Group {
                prevalence,
                gain,
                offset,
                pattern,
            }
        })
        .collect();

    let names = spec.names();
    let mut rng = rng_for(seed, &[SAMPLE_STREAM]);
    let mut samples = Vec::with_capacity(spec.groups * spec.samples_per_group);
    for (g, (group, size)) in groups.iter().zip(spec.group_sizes()).enumerate() {
        for k in 0..size {
            let labels = draw_labels(&mut rng, &group.prevalence);
            let mut image = vec![0.0f32; pixels];
            for (i, px) in image.iter_mut().enumerate() {
                let content: f64 = labels
                    .iter()
                    .zip(&templates)
                    .filter(|(&l, _)| l == 1)
                    .map(|(_, t)| t[i])
                    .sum::<f64>()
                    + spec.noise_std * normal(&mut rng);
                let v = group.gain * content + group.offset[i / (s * s)] + group.pattern[i];
                *px = v as f32;
            }
            samples.push(Sample {
                id: format!("g{g}_{k:05}"),
                image,
                labels,
                group: names[g].clone(),
            });
        }
    }
    let class_names = (0..spec.classes).map(|c| format!("class{c}")).collect();
    MultiLabelDataset::new([c, s, s], class_names, samples)
}

/// Independent Bernoulli draws, redrawn until at least one is positive.
fn draw_labels(rng: &mut SimRng, prevalence: &[f64]) -> Vec<u8> {
    for _ in 0..MAX_LABEL_DRAWS {
        let labels: Vec<u8> = prevalence.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
        if labels.contains(&1) {
            return labels;
        }
    }
    let top = (0..prevalence.len())
        .max_by(|&a, &b| prevalence[a].total_cmp(&prevalence[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut labels = vec![0; prevalence.len()];
    labels[top] = 1;
    labels
}
