//! Synthetic stand-in dataset: one signal family per category in pairwise
//! disjoint frequency bands, written as WAV files plus `meta.csv`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{self, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalFamily {
    Sine,
    Chord,
    Chirp,
    AmTone,
}

impl SignalFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::Chord => "chord",
            Self::Chirp => "chirp",
            Self::AmTone => "am-tone",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub family: SignalFamily,
    pub lo_hz: f64,
    pub hi_hz: f64,
}

pub fn default_bands() -> Vec<Band> {
    vec![
        Band { family: SignalFamily::Sine, lo_hz: 200.0, hi_hz: 500.0 },
        Band { family: SignalFamily::Chord, lo_hz: 700.0, hi_hz: 1200.0 },
        Band { family: SignalFamily::Chirp, lo_hz: 1500.0, hi_hz: 2500.0 },
        Band { family: SignalFamily::AmTone, lo_hz: 3000.0, hi_hz: 4500.0 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub bands: Vec<Band>,
    pub clips_per_category: usize,
    /// Clips per category assigned to the test split (taken from the end).
    pub test_per_category: usize,
    pub sample_rate: u32,
    pub duration: usize,
    pub noise_floor: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    /// `n_categories` of the default families with desk-scale clip length.
    pub fn new(n_categories: usize, clips_per_category: usize, duration: usize, seed: u64) -> Result<Self> {
        let all = default_bands();
        if n_categories == 0 || n_categories > all.len() {
            return Err(Error::invalid(format!(
                "between 1 and {} categories supported, got {n_categories}",
                all.len()
            )));
        }
        Ok(Self {
            bands: all[..n_categories].to_vec(),
            clips_per_category,
            test_per_category: 0,
            sample_rate: audio::DEFAULT_SAMPLE_RATE,
            duration,
            noise_floor: 1e-4,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() || self.clips_per_category == 0 || self.duration == 0 {
            return Err(Error::invalid("dataset needs categories, clips and a duration"));
        }
        if self.test_per_category > self.clips_per_category {
            return Err(Error::invalid("more test clips than clips per category"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for (i, a) in self.bands.iter().enumerate() {
            if !(a.lo_hz > 0.0 && a.lo_hz < a.hi_hz && a.hi_hz < nyquist) {
                return Err(Error::invalid(format!(
                    "band {}..{} Hz is invalid below Nyquist {nyquist}",
                    a.lo_hz, a.hi_hz
                )));
            }
            for b in &self.bands[i + 1..] {
                if a.lo_hz <= b.hi_hz && b.lo_hz <= a.hi_hz {
                    return Err(Error::invalid(format!(
                        "overlapping bands {}..{} and {}..{} Hz",
                        a.lo_hz, a.hi_hz, b.lo_hz, b.hi_hz
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders one clip of `family` inside `[lo, hi]` Hz.
pub fn render_clip<R: Rng>(band: &Band, len: usize, sample_rate: u32, noise_floor: f64, rng: &mut R) -> Vec<f64> {
    let sr = sample_rate as f64;
    let (lo, hi) = (band.lo_hz, band.hi_hz);
    let amp = rng.gen_range(0.3..0.5);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let tone = |f: f64, n: usize| (2.0 * PI * f * n as f64 / sr + phase).sin();
    let mut x: Vec<f64> = match band.family {
        SignalFamily::Sine => {
            let f = rng.gen_range(lo..hi);
            (0..len).map(|n| amp * tone(f, n)).collect()
        }
        SignalFamily::Chord => {
            let ratio = 1.25;
            let f = rng.gen_range(lo..hi / ratio);
            (0..len)
                .map(|n| 0.5 * amp * (tone(f, n) + tone(f * ratio, n)))
                .collect()
        }
        SignalFamily::Chirp => {
            let span = hi - lo;
            let f0 = rng.gen_range(lo..lo + 0.3 * span);
            let f1 = rng.gen_range(hi - 0.3 * span..hi);
            let dur = len as f64 / sr;
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    amp * (2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t) + phase).sin()
                })
                .collect()
        }
        SignalFamily::AmTone => {
            let fm = rng.gen_range(4.0..12.0);
            let f = rng.gen_range(lo + fm..hi - fm);
            (0..len)
                .map(|n| {
                    let env = 0.5 * (1.0 + (2.0 * PI * fm * n as f64 / sr).sin());
                    amp * env * tone(f, n)
                })
                .collect()
        }
    };
    for v in &mut x {
        *v += noise_floor * rng.sample::<f64, _>(StandardNormal);
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    /// Path of the WAV relative to the dataset root, without extension.
    pub clip: String,
    pub category: usize,
    pub split: Split,
}

/// Writes the dataset; returns the clip list in `meta.csv` order.
pub fn generate_synthetic_dataset(spec: &SyntheticDatasetSpec, root: &Path) -> Result<Vec<ClipMeta>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut meta = Vec::new();
    for (c, band) in spec.bands.iter().enumerate() {
        let dir_name = format!("{c}-{}", band.family.name());
        fs::create_dir_all(root.join(&dir_name))?;
        for k in 0..spec.clips_per_category {
            let samples = render_clip(band, spec.duration, spec.sample_rate, spec.noise_floor, &mut rng);
            let clip = format!("{dir_name}/{k:03}");
            let w = Waveform::new(samples, spec.sample_rate)?;
            audio::write_wav(&root.join(format!("{clip}.wav")), &w)?;
            let split = if k >= spec.clips_per_category - spec.test_per_category {
                Split::Test
            } else {
                Split::Train
            };
            meta.push(ClipMeta { clip, category: c, split });
        }
    }
    let mut wr = csv::Writer::from_path(root.join("meta.csv"))?;
    for m in &meta {
        wr.serialize(m)?;
    }
    wr.flush()?;
    fs::write(root.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    Ok(meta)
}

pub fn read_meta(root: &Path) -> Result<Vec<ClipMeta>> {
    let mut rd = csv::Reader::from_path(root.join("meta.csv"))?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// A loaded clip.
#[derive(Clone, Debug)]
pub struct Clip {
    pub meta: ClipMeta,
    pub audio: Waveform,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub clips: Vec<Clip>,
}

impl Dataset {
    /// Loads every clip of `split` (or all clips), resampled to
    /// `sample_rate` and fitted to `segment_len` samples.
    pub fn load(root: &Path, split: Option<Split>, sample_rate: u32, segment_len: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clips = Vec::new();
        for m in read_meta(root)? {
            if split.is_some_and(|s| s != m.split) {
                continue;
            }
            let w = audio::read_wav(&root.join(format!("{}.wav", m.clip)), sample_rate)?;
            clips.push(Clip {
                audio: w.fit_to(segment_len, &mut rng),
                meta: m,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            clips,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    fn has_multiple_categories(&self) -> bool {
        self.clips
            .iter()
            .any(|c| c.meta.category != self.clips[0].meta.category)
    }

    /// Two distinct clip indices, from different categories whenever the
    /// dataset has more than one.
    pub fn sample_pair<R: Rng>(&self, rng: &mut R) -> Result<(usize, usize)> {
        if self.len() < 2 {
            return Err(Error::invalid("dataset needs at least two clips to form mixtures"));
        }
        let cross = self.has_multiple_categories();
        loop {
            let i = rng.gen_range(0..self.len());
            let j = rng.gen_range(0..self.len());
            if i == j {
                continue;
            }
            if cross && self.clips[i].meta.category == self.clips[j].meta.category {
                continue;
            }
            return Ok((i, j));
        }
    }

    /// `count` fixed evaluation pairs drawn from `seed`.
    pub fn eval_pairs(&self, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut all = Vec::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let cross = self.clips[i].meta.category != self.clips[j].meta.category;
                if cross || !self.has_multiple_categories() {
                    all.push((i, j));
                }
            }
        }
        if all.is_empty() {
            return Err(Error::invalid("dataset needs at least two clips to form mixtures"));
        }
        all.shuffle(&mut rng);
        all.truncate(count);
        Ok(all)
    }
}
