//! Class-structured random images for smoke runs and tests.
//!
//! Each class owns a few random plane waves per channel. A sample renders its
//! class waves with a random per-wave phase jitter, blends in the waves of a
//! random distractor class, and adds contrast, brightness and pixel noise.

use std::f64::consts::TAU;

use super::{Dataset, SplitTag};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub shape: [usize; 3],
    pub seed: u64,
    /// Pixel noise relative to the template amplitude.
    pub noise: f64,
    /// Maximum phase jitter per wave, as a fraction of a full turn.
    pub jitter: f64,
    /// Weight of the distractor class.
    pub distractor: f64,
    /// Seed for the class templates; datasets sharing it share classes.
    pub template_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            shape: [3, 32, 32],
            seed: 0,
            noise: 0.5,
            jitter: 0.25,
            distractor: 0.6,
            template_seed: 1234,
        }
    }
}

struct Wave {
    channel: usize,
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn class_waves(spec: &SyntheticSpec) -> Vec<Vec<Wave>> {
    let [c, h, w] = spec.shape;
    let mut rng = Rng::new(spec.template_seed);
    (0..spec.classes)
        .map(|_| {
            let mut waves = Vec::new();
            for channel in 0..c {
                for _ in 0..3 {
                    waves.push(Wave {
                        channel,
                        fy: rng.uniform_range(-3.0, 3.0) / h as f64,
                        fx: rng.uniform_range(-3.0, 3.0) / w as f64,
                        phase: rng.uniform_range(0.0, TAU),
                        amp: rng.uniform_range(0.3, 1.0),
                    });
                }
            }
            waves
        })
        .collect()
}

fn render(waves: &[Wave], weight: f64, jitter: f64, rng: &mut Rng, shape: [usize; 3], out: &mut [f64]) {
    let [_, h, w] = shape;
    for wave in waves {
        let phase = wave.phase + TAU * jitter * rng.uniform_range(-1.0, 1.0);
        let plane = &mut out[wave.channel * h * w..(wave.channel + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let arg = TAU * (wave.fy * y as f64 + wave.fx * x as f64) + phase;
                plane[y * w + x] += weight * wave.amp * arg.sin();
            }
        }
    }
}

/// `classes × per_class` images, labels interleaved (`i % classes`).
pub fn generate(spec: &SyntheticSpec) -> Dataset {
    let waves = class_waves(spec);
    let per: usize = spec.shape.iter().product();
    let n = spec.classes * spec.per_class;
    let mut rng = Rng::new(spec.seed);
    let mut pixels = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    let mut img = vec![0.0; per];
    for i in 0..n {
        let label = i % spec.classes;
        img.iter_mut().for_each(|v| *v = 0.0);
        render(&waves[label], 1.0, spec.jitter, &mut rng, spec.shape, &mut img);
        if spec.classes > 1 && spec.distractor > 0.0 {
            let other = (label + 1 + rng.below(spec.classes - 1)) % spec.classes;
            render(&waves[other], spec.distractor, spec.jitter, &mut rng, spec.shape, &mut img);
        }
        let contrast = rng.uniform_range(0.6, 1.2);
        let brightness = rng.uniform_range(-0.3, 0.3);
        for &v in &img {
            let v = contrast * v + brightness + spec.noise * rng.normal();
            pixels.push((128.0 + 40.0 * v).round().clamp(0.0, 255.0) as u8);
        }
        labels.push(label);
    }
    Dataset::new(spec.shape, pixels, labels, spec.classes, SplitTag::Train)
        .expect("synthetic dataset is well-formed")
}
