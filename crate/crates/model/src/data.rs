//! Conversion of simulator frames into network-ready samples and batches.

use cogfuse_sim::bev::{normalize_grid, BevGrid, Image, BINS, DEFAULT_CAP, GRID};
use cogfuse_sim::render::Observation;
use cogfuse_sim::geom::Vec2;
use cogfuse_tensor::{Real, Tensor};

use crate::config::{AuxSource, FusionConfig, SsProvider};
use crate::error::{ModelError, Result};

/// Side of the segmentation target and head output.
pub const SS_SIZE: usize = 64;

/// Sensor-derived network inputs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub size: usize,
    /// `[3×S×S]`, values in `[0, 1]`.
    pub image: Vec<f32>,
    /// `[2×S×S]`, capped and normalized histogram counts.
    pub lidar: Vec<f32>,
    /// Majority class per cell at `S/2×S/2`.
    pub semantics: Vec<u8>,
    pub goal: [f32; 2],
    pub speed: f32,
}

/// A training frame: features plus expert labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub tl_state: u8,
    /// Majority class per cell at `SS_SIZE×SS_SIZE`.
    pub ss_target: Vec<u8>,
    pub waypoints: [[f32; 2]; 4],
}

fn pool_image(img: &Image, size: usize) -> Result<Vec<f32>> {
    if img.width != img.height || img.width % size != 0 {
        return Err(ModelError::Dimension(format!(
            "{}×{} image cannot be pooled to {size}×{size}",
            img.width, img.height
        )));
    }
    let w = img.width / size;
    let c = img.channels;
    let norm = 1.0 / (255.0 * (w * w) as f32);
    let mut out = vec![0.0f32; c * size * size];
    for row in 0..img.height {
        for col in 0..img.width {
            let px = img.pixel(col, row);
            let cell = (row / w) * size + col / w;
            for (ch, &v) in px.iter().enumerate() {
                out[ch * size * size + cell] += v as f32;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}

fn pool_bev(bev: &BevGrid, size: usize) -> Result<Vec<f32>> {
    let full = normalize_grid(bev, DEFAULT_CAP).map_err(|e| ModelError::Data(e.to_string()))?;
    let w = GRID / size;
    let norm = 1.0 / (w * w) as f32;
    let mut out = vec![0.0f32; BINS * size * size];
    for bin in 0..BINS {
        for row in 0..GRID {
            for col in 0..GRID {
                out[(bin * size + row / w) * size + col / w] += full[BevGrid::index(bin, row, col)];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}

/// Downsamples a square label map by majority vote over blocks; ties go to
/// the smallest class id.
pub fn majority_downsample(labels: &[u8], side: usize, out: usize, classes: usize) -> Result<Vec<u8>> {
    if labels.len() != side * side || out == 0 || side % out != 0 {
        return Err(ModelError::Dimension(format!(
            "cannot downsample {} labels on a {side}-side grid to {out}×{out}",
            labels.len()
        )));
    }
    let w = side / out;
    let mut result = Vec::with_capacity(out * out);
    let mut counts = vec![0usize; classes];
    for br in 0..out {
        for bc in 0..out {
            counts.fill(0);
            for r in br * w..(br + 1) * w {
                for &l in &labels[r * side + bc * w..r * side + (bc + 1) * w] {
                    let l = l as usize;
                    if l >= classes {
                        return Err(ModelError::Data(format!("label {l} outside {classes} classes")));
                    }
                    counts[l] += 1;
                }
            }
            let mut best = 0;
            for (c, &n) in counts.iter().enumerate() {
                if n > counts[best] {
                    best = c;
                }
            }
            result.push(best as u8);
        }
    }
    Ok(result)
}

impl Features {
    pub fn from_observation(obs: &Observation, cfg: &FusionConfig) -> Result<Self> {
        let goal = [obs.goal.x as f32, obs.goal.y as f32];
        Self::from_sensors(&obs.front, &obs.bev, &obs.semantics, goal, obs.speed as f32, cfg)
    }

    pub fn from_sensors(
        front: &Image,
        bev: &BevGrid,
        semantics: &Image,
        goal: [f32; 2],
        speed: f32,
        cfg: &FusionConfig,
    ) -> Result<Self> {
        check_semantics(semantics)?;
        let size = cfg.input_size;
        Ok(Self {
            size,
            image: pool_image(front, size)?,
            lidar: pool_bev(bev, size)?,
            semantics: majority_downsample(&semantics.data, semantics.width, cfg.aux_input_size(), cfg.semantic_classes)?,
            goal,
            speed,
        })
    }
}

fn check_semantics(sem: &Image) -> Result<()> {
    if sem.channels != 1 || sem.width != sem.height {
        return Err(ModelError::Dimension(format!(
            "semantic map must be square single-channel, got {}×{}×{}",
            sem.width, sem.height, sem.channels
        )));
    }
    Ok(())
}

impl Sample {
    pub fn from_frame(obs: &Observation, waypoints: &[Vec2; 4], cfg: &FusionConfig) -> Result<Self> {
        let wp = waypoints.map(|w| [w.x as f32, w.y as f32]);
        Self::new(Features::from_observation(obs, cfg)?, obs.tl_state as u8, &obs.semantics, wp, cfg)
    }

    /// Attaches labels to `features`; `semantics` is the full-resolution
    /// ground-truth class map.
    pub fn new(features: Features, tl_state: u8, semantics: &Image, waypoints: [[f32; 2]; 4], cfg: &FusionConfig) -> Result<Self> {
        check_semantics(semantics)?;
        Ok(Self {
            features,
            tl_state,
            ss_target: majority_downsample(&semantics.data, semantics.width, SS_SIZE, cfg.semantic_classes)?,
            waypoints,
        })
    }

    /// Checks that the sample matches the network's input schema.
    pub fn check_schema(&self, cfg: &FusionConfig) -> Result<()> {
        let f = &self.features;
        let s = cfg.input_size;
        let a = cfg.aux_input_size();
        let problems = [
            (f.size != s || f.image.len() != 3 * s * s, format!("image is not 3×{s}×{s}")),
            (f.lidar.len() != BINS * s * s, format!("LiDAR grid is not {BINS}×{s}×{s}")),
            (f.semantics.len() != a * a, format!("semantic features are not {a}×{a}")),
            (self.ss_target.len() != SS_SIZE * SS_SIZE, format!("segmentation target is not {SS_SIZE}×{SS_SIZE}")),
            (self.tl_state > 1, format!("traffic-light label {} is not 0 or 1", self.tl_state)),
            (
                f.semantics.iter().chain(&self.ss_target).any(|&c| c as usize >= cfg.semantic_classes),
                format!("semantic label outside {} classes", cfg.semantic_classes),
            ),
        ];
        match problems.into_iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(ModelError::Config(format!("dataset does not match the network: {msg}"))),
            None => Ok(()),
        }
    }
}

/// Batched network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput<T> {
    /// `[B×3×S×S]`
    pub image: Tensor<T>,
    /// `[B×2×S×S]`
    pub lidar: Tensor<T>,
    /// `[B×1]` in m/s.
    pub speed: Tensor<T>,
    /// `[B×2]` in meters, ego frame.
    pub goal: Tensor<T>,
    /// `[B×classes×S/2×S/2]` one-hot ground-truth semantics, when the
    /// network consumes them.
    pub aux: Option<Tensor<T>>,
}

impl<T: Real> NetInput<T> {
    pub fn batch(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn cast<U: Real>(&self) -> NetInput<U> {
        NetInput {
            image: self.image.cast(),
            lidar: self.lidar.cast(),
            speed: self.speed.cast(),
            goal: self.goal.cast(),
            aux: self.aux.as_ref().map(Tensor::cast),
        }
    }

    pub fn from_features(items: &[&Features], cfg: &FusionConfig) -> Result<Self> {
        let b = items.len();
        if b == 0 {
            return Err(ModelError::Data("empty batch".into()));
        }
        let s = cfg.input_size;
        let a = cfg.aux_input_size();
        for f in items {
            if f.size != s || f.image.len() != 3 * s * s || f.lidar.len() != BINS * s * s || f.semantics.len() != a * a {
                return Err(ModelError::Dimension(format!("features do not match input size {s}")));
            }
        }
        let cat = |get: &dyn Fn(&Features) -> &[f32]| -> Vec<T> {
            items.iter().flat_map(|f| get(f).iter().map(|&v| T::lit(v as f64))).collect()
        };
        let wants_gt = cfg.aux_source == AuxSource::SsFeatures && cfg.ss_provider == SsProvider::GroundTruth;
        let aux = if wants_gt {
            let c = cfg.semantic_classes;
            let mut data = vec![T::zero(); b * c * a * a];
            for (i, f) in items.iter().enumerate() {
                for (p, &l) in f.semantics.iter().enumerate() {
                    data[(i * c + l as usize) * a * a + p] = T::one();
                }
            }
            Some(Tensor::new(vec![b, c, a, a], data)?)
        } else {
            None
        };
        Ok(Self {
            image: Tensor::new(vec![b, 3, s, s], cat(&|f| &f.image))?,
            lidar: Tensor::new(vec![b, BINS, s, s], cat(&|f| &f.lidar))?,
            speed: Tensor::new(vec![b, 1], items.iter().map(|f| T::lit(f.speed as f64)).collect())?,
            goal: Tensor::new(vec![b, 2], items.iter().flat_map(|f| f.goal.map(|v| T::lit(v as f64))).collect())?,
            aux,
        })
    }
}

/// A batch of samples with their labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub input: NetInput<f32>,
    /// `[B·T×2]` expert waypoints.
    pub waypoints: Tensor<f32>,
    pub tl: Vec<usize>,
    /// `B·SS_SIZE²` class ids, row-major per sample.
    pub ss: Vec<usize>,
}

impl Batch {
    pub fn new(samples: &[&Sample], cfg: &FusionConfig) -> Result<Self> {
        for s in samples {
            s.check_schema(cfg)?;
        }
        let features: Vec<&Features> = samples.iter().map(|s| &s.features).collect();
        let wp: Vec<f32> = samples.iter().flat_map(|s| s.waypoints.iter().take(cfg.waypoints).flatten().copied()).collect();
        Ok(Self {
            input: NetInput::from_features(&features, cfg)?,
            waypoints: Tensor::new(vec![samples.len() * cfg.waypoints, 2], wp)?,
            tl: samples.iter().map(|s| s.tl_state as usize).collect(),
            ss: samples.iter().flat_map(|s| s.ss_target.iter().map(|&c| c as usize)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tl.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_breaks_ties_toward_smallest_id() {
        #[rustfmt::skip]
        let labels = [
            3, 1, 0, 0,
            1, 3, 0, 2,
            5, 5, 4, 4,
            5, 6, 6, 4,
        ];
        let out = majority_downsample(&labels, 4, 2, 7).unwrap();
        assert_eq!(out, [1, 0, 5, 4]);
    }

    #[test]
    fn image_pooling_averages_blocks() {
        let mut img = Image::new(4, 4, 3);
        img.pixel_mut(0, 0).copy_from_slice(&[255, 0, 0]);
        img.pixel_mut(1, 1).copy_from_slice(&[255, 255, 0]);
        let p = pool_image(&img, 2).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6);
        assert!((p[4] - 0.25).abs() < 1e-6);
        assert_eq!(p[8], 0.0);
        assert!(pool_image(&img, 3).is_err());
    }
}
