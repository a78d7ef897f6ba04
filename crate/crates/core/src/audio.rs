//! Waveforms, the Hann-window STFT, and the scaled `[0, 1]` magnitude domain
//! the generative models work in.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rubato::{FftFixedInOut, Resampler};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_SAMPLE_RATE: u32 = 11025;

/// Mono audio signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Sample-wise sum; lengths and rates must match.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if self.len() != other.len() || self.sample_rate != other.sample_rate {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Waveform::new(samples, self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Rescales so the peak magnitude is at most one.
    pub fn peak_normalized(&self) -> Waveform {
        let peak = self.peak();
        if peak > 1.0 {
            self.scaled(1.0 / peak)
        } else {
            self.clone()
        }
    }

    /// Zero-pads or crops to exactly `len` samples. Cropping starts at a
    /// uniformly drawn offset.
    pub fn fit_to<R: Rng>(&self, len: usize, rng: &mut R) -> Waveform {
        let samples = if self.len() >= len {
            let offset = if self.len() > len {
                rng.gen_range(0..=self.len() - len)
            } else {
                0
            };
            self.samples[offset..offset + len].to_vec()
        } else {
            let mut s = self.samples.clone();
            s.resize(len, 0.0);
            s
        };
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// STFT geometry, magnitude scaling and model-grid resolution.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    /// Fixed clip length in samples.
    pub segment_len: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub sigma: f64,
}

impl Default for AudioConfig {
    /// 11.025 kHz, Hann 1022 / hop 256, 65 536-sample segments resampled to
    /// a 256 x 256 grid, sigma 0.15.
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            window: 1022,
            hop: 256,
            segment_len: 65_536,
            grid_rows: 256,
            grid_cols: 256,
            sigma: 0.15,
        }
    }
}

impl AudioConfig {
    /// CPU-scale geometry: Hann 254 / hop 64 on 4286-sample clips, giving a
    /// 128 x 64 native grid resampled to 64 x 64.
    pub fn desk() -> Self {
        Self {
            window: 254,
            hop: 64,
            segment_len: 254 + 63 * 64,
            grid_rows: 64,
            grid_cols: 64,
            ..Self::default()
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.window / 2 + 1
    }

    /// Number of STFT frames for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.window).then(|| (len - self.window) / self.hop + 1)
    }

    pub fn native_shape(&self) -> Option<(usize, usize)> {
        self.frames(self.segment_len).map(|t| (self.freq_bins(), t))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.window % 2 != 0 || self.hop == 0 || self.hop > self.window {
            return Err(Error::invalid(format!(
                "window {} / hop {} is not a valid STFT geometry",
                self.window, self.hop
            )));
        }
        if self.frames(self.segment_len).is_none() {
            return Err(Error::InputTooShort {
                len: self.segment_len,
                window: self.window,
            });
        }
        if self.grid_rows < 2 || self.grid_cols < 2 || !(self.sigma > 0.0) {
            return Err(Error::invalid("grid must be at least 2x2 and sigma positive"));
        }
        Ok(())
    }
}

/// Magnitude/phase decomposition of an STFT: `freq_bins x frames` grids.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub magnitude: Grid,
    pub phase: Grid,
    pub window: usize,
    pub hop: usize,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub const ISTFT_NORM_FLOOR: f64 = 0.01;

/// Hann-windowed STFT without centre padding.
pub fn stft(w: &Waveform, cfg: &AudioConfig) -> Result<ComplexSpectrogram> {
    let frames = cfg.frames(w.len()).ok_or(Error::InputTooShort {
        len: w.len(),
        window: cfg.window,
    })?;
    let bins = cfg.freq_bins();
    let win = hann(cfg.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.window);
    let mut magnitude = Grid::zeros(bins, frames);
    let mut phase = Grid::zeros(bins, frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(w.samples[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        for (f, c) in buf.iter().take(bins).enumerate() {
            magnitude.set(f, t, c.norm());
            phase.set(f, t, c.im.atan2(c.re));
        }
    }
    Ok(ComplexSpectrogram {
        magnitude,
        phase,
        window: cfg.window,
        hop: cfg.hop,
    })
}

/// Weighted overlap-add inverse of [`stft`]. Near the edges the summed
/// squared window is floored at `ISTFT_NORM_FLOOR` of its peak, so the few
/// edge samples taper instead of amplifying magnitude errors.
pub fn istft(mag: &Grid, phase: &Grid, cfg: &AudioConfig) -> Result<Waveform> {
    if mag.shape() != phase.shape() {
        return Err(Error::ShapeMismatch {
            what: "istft magnitude/phase",
            expected: mag.shape(),
            actual: phase.shape(),
        });
    }
    let (bins, frames) = mag.shape();
    if bins != cfg.freq_bins() {
        return Err(Error::ShapeMismatch {
            what: "istft frequency bins",
            expected: (cfg.freq_bins(), frames),
            actual: mag.shape(),
        });
    }
    let n = cfg.window;
    let len = (frames.max(1) - 1) * cfg.hop + n;
    let win = hann(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = Complex::from_polar(mag.get(f, t), phase.get(f, t));
        }
        // Hermitian completion for a real signal.
        for f in bins..n {
            buf[f] = buf[n - f].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    let floor = ISTFT_NORM_FLOOR * norm.iter().cloned().fold(0.0, f64::max);
    for (o, &w2) in out.iter_mut().zip(&norm) {
        *o = if w2 > 0.0 { *o / w2.max(floor) } else { 0.0 };
    }
    Waveform::new(out, cfg.sample_rate)
}

/// Magnitudes compressed by `log(1 + x) * sigma`, clipped to `[0, 1]`, on the
/// model grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSpectrogram {
    pub grid: Grid,
    pub sigma: f64,
}

/// Log-compresses at native resolution, clips, then resamples bilinearly to
/// the model grid.
pub fn scale_magnitude(mag: &Grid, cfg: &AudioConfig) -> Result<ScaledSpectrogram> {
    if mag.data().iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::NegativeMagnitude);
    }
    let sigma = cfg.sigma;
    let compressed = mag.map(|x| ((1.0 + x).ln() * sigma).clamp(0.0, 1.0));
    Ok(ScaledSpectrogram {
        grid: compressed.resize_bilinear(cfg.grid_rows, cfg.grid_cols),
        sigma,
    })
}

/// Resamples back to `native` shape, then inverts the log compression.
pub fn unscale_magnitude(s: &ScaledSpectrogram, native: (usize, usize)) -> Grid {
    let sigma = s.sigma;
    s.grid
        .resize_bilinear(native.0, native.1)
        .map(|x| ((x / sigma).exp() - 1.0).max(0.0))
}

/// A supervised training example built from two solo waveforms.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePair {
    pub x_mix: ScaledSpectrogram,
    pub x_1: ScaledSpectrogram,
    pub x_2: ScaledSpectrogram,
    /// Phase of the mixture STFT at native resolution.
    pub phase_mix: Grid,
    pub mixture: Waveform,
}

/// Mixes in the waveform domain and scales all three spectrograms.
pub fn mix_and_separate(w1: &Waveform, w2: &Waveform, cfg: &AudioConfig) -> Result<MixturePair> {
    let mixture = w1.add(w2)?;
    let mix_spec = stft(&mixture, cfg)?;
    let s1 = stft(w1, cfg)?;
    let s2 = stft(w2, cfg)?;
    Ok(MixturePair {
        x_mix: scale_magnitude(&mix_spec.magnitude, cfg)?,
        x_1: scale_magnitude(&s1.magnitude, cfg)?,
        x_2: scale_magnitude(&s2.magnitude, cfg)?,
        phase_mix: mix_spec.phase,
        mixture,
    })
}

/// Resamples with rubato's FFT-based fixed-ratio resampler and compensates its
/// delay, returning `round(len * to / from)` samples.
pub fn resample(samples: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let mut rs = FftFixedInOut::<f64>::new(from as usize, to as usize, 1024, 1)
        .map_err(|e| Error::invalid(format!("resampler: {e}")))?;
    let want = (samples.len() as f64 * to as f64 / from as f64).round() as usize;
    let delay = rs.output_delay();
    let mut out = Vec::with_capacity(want + delay);
    let mut pos = 0;
    while out.len() < want + delay {
        let need = rs.input_frames_next();
        let mut chunk = vec![0.0; need];
        if pos < samples.len() {
            let take = need.min(samples.len() - pos);
            chunk[..take].copy_from_slice(&samples[pos..pos + take]);
        }
        pos += need;
        let res = rs
            .process(&[chunk], None)
            .map_err(|e| Error::invalid(format!("resampler: {e}")))?;
        out.extend_from_slice(&res[0]);
    }
    Ok(out[delay..delay + want].to_vec())
}

/// Reads a PCM WAV file as mono at `target_rate`, averaging channels and
/// normalizing integer samples to `[-1, 1]`.
pub fn read_wav(path: &Path, target_rate: u32) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    let samples = resample(&mono, spec.sample_rate, target_rate)?;
    Waveform::new(samples, target_rate)
}

/// Writes 16-bit mono PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes the grid as row-major little-endian `f32` to `path` and a
/// `key=value` text header to `path` with `.txt` appended.
pub fn dump_spectrogram(path: &Path, s: &ScaledSpectrogram, provenance: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(s.grid.data().len() * 4);
    for &v in s.grid.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let mut header = fs::File::create(sidecar(path))?;
    writeln!(header, "rows={}", s.grid.rows())?;
    writeln!(header, "cols={}", s.grid.cols())?;
    writeln!(header, "dtype=f32le")?;
    writeln!(header, "sigma={}", s.sigma)?;
    writeln!(header, "provenance={}", provenance.replace('\n', " "))?;
    Ok(())
}

/// Reads a dump written by [`dump_spectrogram`].
pub fn load_spectrogram(path: &Path) -> Result<ScaledSpectrogram> {
    let header = fs::read_to_string(sidecar(path))?;
    let field = |k: &str| {
        header
            .lines()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Format(format!("spectrogram header lacks {k}")))
    };
    let parse = |k: &str| -> Result<f64> {
        field(k)?
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("{k}: {e}")))
    };
    let (rows, cols, sigma) = (parse("rows")? as usize, parse("cols")? as usize, parse("sigma")?);
    let bytes = fs::read(path)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "expected {} bytes of f32 data, found {}",
            rows * cols * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(ScaledSpectrogram {
        grid: Grid::from_vec(rows, cols, data)?,
        sigma,
    })
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), DEFAULT_SAMPLE_RATE).unwrap()
    }

    fn sine(len: usize, freq: f64, amp: f64) -> Waveform {
        let sr = DEFAULT_SAMPLE_RATE as f64;
        Waveform::new(
            (0..len).map(|n| amp * (2.0 * PI * freq * n as f64 / sr).sin()).collect(),
            DEFAULT_SAMPLE_RATE,
        )
        .unwrap()
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_waveform_gives_zero_magnitude() {
        let cfg = AudioConfig::default();
        let spec = stft(&Waveform::silence(5000, DEFAULT_SAMPLE_RATE), &cfg).unwrap();
        assert_eq!(spec.magnitude.shape(), (512, (5000 - 1022) / 256 + 1));
        assert!(spec.magnitude.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_is_rejected() {
        let err = stft(&Waveform::silence(1000, DEFAULT_SAMPLE_RATE), &AudioConfig::default()).unwrap_err();
        assert!(err.to_string().contains("input too short"));
    }

    #[test]
    fn bin_centred_sine_matches_direct_dft() {
        let cfg = AudioConfig::default();
        let bin = 40usize;
        let freq = bin as f64 * cfg.sample_rate as f64 / cfg.window as f64;
        let w = sine(8192, freq, 0.5);
        let spec = stft(&w, &cfg).unwrap();
        let win = hann(cfg.window);
        for t in 1..spec.magnitude.cols() - 1 {
            let col = spec.magnitude.col(t);
            let peak = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(peak.abs_diff(bin) <= 2, "frame {t}: peak at {peak}");
            let energy: f64 = col.iter().map(|v| v * v).sum();
            let near: f64 = col[bin - 2..=bin + 2].iter().map(|v| v * v).sum();
            assert!(near / energy > 0.999);
        }
        let start = 3 * cfg.hop;
        let frame: Vec<f64> = (0..cfg.window).map(|i| w.samples()[start + i] * win[i]).collect();
        let oracle = dft_magnitudes(&frame);
        for (f, o) in oracle.iter().enumerate() {
            assert!((spec.magnitude.get(f, 3) - o).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_istft_round_trip() {
        let cfg = AudioConfig::default();
        let w = noise(65_536, 7);
        let spec = stft(&w, &cfg).unwrap();
        assert_eq!(spec.magnitude.cols(), 253);
        let back = istft(&spec.magnitude, &spec.phase, &cfg).unwrap();
        let half = cfg.window / 2;
        let err = (half..back.len() - half)
            .map(|i| (back.samples()[i] - w.samples()[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max interior error {err}");
    }

    #[test]
    fn istft_zero_and_linearity() {
        let cfg = AudioConfig::desk();
        let zero = Grid::zeros(cfg.freq_bins(), 10);
        assert!(istft(&zero, &zero, &cfg).unwrap().samples().iter().all(|&v| v == 0.0));
        let spec = stft(&noise(2000, 3), &cfg).unwrap();
        let a = istft(&spec.magnitude, &spec.phase, &cfg).unwrap();
        let b = istft(&spec.magnitude.map(|v| 2.0 * v), &spec.phase, &cfg).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        let bad = Grid::zeros(cfg.freq_bins(), 9);
        assert!(istft(&spec.magnitude, &bad, &cfg).is_err());
    }

    #[test]
    fn scaling_values() {
        let cfg = AudioConfig {
            grid_rows: 4,
            grid_cols: 4,
            ..AudioConfig::default()
        };
        let s = scale_magnitude(&Grid::full(4, 4, 1.0), &cfg).unwrap();
        assert!((s.grid.get(0, 0) - 0.15 * 2f64.ln()).abs() < 1e-12);
        assert!((s.grid.get(0, 0) - 0.103972).abs() < 1e-6);
        let huge = (1.0f64 / 0.15).exp() - 1.0 + 100.0;
        assert_eq!(scale_magnitude(&Grid::full(4, 4, huge), &cfg).unwrap().grid.get(2, 2), 1.0);
        assert_eq!(scale_magnitude(&Grid::zeros(4, 4), &cfg).unwrap().grid.get(1, 1), 0.0);
        let err = scale_magnitude(&Grid::full(4, 4, -1.0), &cfg).unwrap_err();
        assert!(err.to_string().contains("magnitude must be nonnegative"));
    }

    #[test]
    fn unscale_values() {
        let s = ScaledSpectrogram {
            grid: Grid::full(256, 256, 0.103972),
            sigma: 0.15,
        };
        let g = unscale_magnitude(&s, (512, 253));
        assert_eq!(g.shape(), (512, 253));
        assert!((g.get(100, 100) - 1.0).abs() < 1e-5);
        let z = ScaledSpectrogram {
            grid: Grid::zeros(256, 256),
            sigma: 0.15,
        };
        assert!(unscale_magnitude(&z, (512, 253)).data().iter().all(|&v| v == 0.0));
        let cfg = AudioConfig::default();
        let x = Grid::full(512, 253, 0.5);
        let back = unscale_magnitude(&scale_magnitude(&x, &cfg).unwrap(), (512, 253));
        assert!(back.data().iter().all(|&v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn silent_second_source_and_symmetry() {
        let cfg = AudioConfig::desk();
        let w1 = sine(cfg.segment_len, 440.0, 0.3);
        let w2 = sine(cfg.segment_len, 2200.0, 0.3);
        let silent = Waveform::silence(cfg.segment_len, cfg.sample_rate);
        let p = mix_and_separate(&w1, &silent, &cfg).unwrap();
        assert_eq!(p.x_mix.grid, p.x_1.grid);
        let a = mix_and_separate(&w1, &w2, &cfg).unwrap();
        let b = mix_and_separate(&w2, &w1, &cfg).unwrap();
        assert_eq!(a.x_1, b.x_2);
        assert_eq!(a.x_2, b.x_1);
        let same = a
            .x_mix
            .grid
            .data()
            .iter()
            .zip(b.x_mix.grid.data())
            .all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(same);
        let short = Waveform::silence(100, cfg.sample_rate);
        assert!(mix_and_separate(&w1, &short, &cfg).is_err());
    }

    #[test]
    fn mixture_matches_solo_peaks_at_disjoint_frequencies() {
        let cfg = AudioConfig::desk();
        let w1 = sine(cfg.segment_len, 500.0, 0.4);
        let w2 = sine(cfg.segment_len, 3000.0, 0.4);
        let p = mix_and_separate(&w1, &w2, &cfg).unwrap();
        for solo in [&p.x_1, &p.x_2] {
            let (r, c) = solo.grid.argmax();
            let rel = (p.x_mix.grid.get(r, c) - solo.grid.get(r, c)).abs() / solo.grid.get(r, c);
            assert!(rel < 0.05, "relative difference {rel}");
        }
        // Overlapping tones interfere, so the scaled mixture is not the sum
        // of the scaled solos.
        let w3 = sine(cfg.segment_len, 500.0, -0.4);
        let q = mix_and_separate(&w1, &w3.scaled(0.5), &cfg).unwrap();
        let summed = q.x_1.grid.zip_map(&q.x_2.grid, |a, b| a + b);
        let (r, c) = q.x_1.grid.argmax();
        assert!((q.x_mix.grid.get(r, c) - summed.get(r, c)).abs() > 1e-2);
    }

    #[test]
    fn resampling_preserves_a_low_tone() {
        let sr_in = 44_100u32;
        let n = 44_100;
        let tone: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 300.0 * i as f64 / sr_in as f64).sin())
            .collect();
        let out = resample(&tone, sr_in, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(out.len(), 11_025);
        let sr = DEFAULT_SAMPLE_RATE as f64;
        let err = (1000..10_000)
            .map(|i| (out[i] - (2.0 * PI * 300.0 * i as f64 / sr).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "resampling error {err}");
    }

    #[test]
    fn wav_round_trip_and_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = sine(3000, 440.0, 0.5);
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path, DEFAULT_SAMPLE_RATE).unwrap();
        assert_eq!(back.len(), w.len());
        let err = w
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: DEFAULT_SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..100 {
            wr.write_sample(16384i16).unwrap();
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        let mono = read_wav(&stereo, DEFAULT_SAMPLE_RATE).unwrap();
        assert!(mono.samples().iter().all(|&v| (v - 0.25).abs() < 1e-9));
    }

    #[test]
    fn spectrogram_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let s = ScaledSpectrogram {
            grid: Grid::from_fn(8, 8, |r, c| (r * 8 + c) as f64 / 64.0),
            sigma: 0.15,
        };
        dump_spectrogram(&path, &s, "unit test").unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 * 8 * 4);
        let back = load_spectrogram(&path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn fit_to_pads_and_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = noise(100, 1);
        assert_eq!(w.fit_to(150, &mut rng).len(), 150);
        let c = w.fit_to(40, &mut rng);
        assert_eq!(c.len(), 40);
        let pos = w.samples().windows(40).position(|win| win == c.samples());
        assert!(pos.is_some());
    }
}
