//! Synthetic diffraction-limited / super-resolved image pairs with known
//! emitter positions.
//!
//! A phantom of point emitters and filaments is blurred twice: with a wide
//! Gaussian PSF plus shot and read noise for the inputs, and with a narrow
//! PSF, noise-free, for the target. Each pseudo field of view carries one
//! phantom, several independently noised inputs and one target.

use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_fov, DatasetError, DatasetManifest, FovRecord, MANIFEST_FILE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("emitter or filament point ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },
    #[error("invalid PSF ordering: wide FWHM {wide} must exceed narrow FWHM {narrow}")]
    InvalidPsf { wide: f64, narrow: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Conversion between full width at half maximum and standard deviation.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Separation at which the dip between two equal Gaussian spots vanishes.
pub fn sparrow_separation(fwhm: f64) -> f64 {
    2.0 * fwhm_to_sigma(fwhm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    /// Column coordinate in pixels.
    pub x: f64,
    /// Row coordinate in pixels.
    pub y: f64,
    pub amplitude: f64,
}

/// Polyline with a constant intensity per unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filament {
    pub points: Vec<(f64, f64)>,
    pub intensity: f64,
}

impl Filament {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub emitters: Vec<Emitter>,
    #[serde(default)]
    pub filaments: Vec<Filament>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize) -> Self {
        PhantomSpec { height, width, emitters: Vec::new(), filaments: Vec::new(), seed: 0 }
    }

    /// Total deposited intensity.
    pub fn total_intensity(&self) -> f64 {
        self.emitters.iter().map(|e| e.amplitude).sum::<f64>()
            + self.filaments.iter().map(|f| f.intensity * f.length()).sum::<f64>()
    }

    fn check_point(&self, x: f64, y: f64) -> Result<(), SynthError> {
        let inside = x.is_finite()
            && y.is_finite()
            && (0.0..=(self.width - 1) as f64).contains(&x)
            && (0.0..=(self.height - 1) as f64).contains(&y);
        if inside {
            Ok(())
        } else {
            Err(SynthError::OutOfBounds { x, y, width: self.width, height: self.height })
        }
    }
}

/// Two equal emitters `separation` pixels apart, centred at `(cx, cy)`,
/// along direction `angle` (radians from the x axis).
pub fn two_point_phantom(
    height: usize,
    width: usize,
    center: (f64, f64),
    separation: f64,
    angle: f64,
    amplitude: f64,
) -> PhantomSpec {
    let (dx, dy) = (0.5 * separation * angle.cos(), 0.5 * separation * angle.sin());
    let mut spec = PhantomSpec::new(height, width);
    spec.emitters = vec![
        Emitter { x: center.0 - dx, y: center.1 - dy, amplitude },
        Emitter { x: center.0 + dx, y: center.1 + dy, amplitude },
    ];
    spec
}

fn splat(image: &mut Array2<f64>, x: f64, y: f64, amount: f64) {
    let (h, w) = image.dim();
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let weight = wx * wy;
            if weight > 0.0 && y0 + dy < h && x0 + dx < w {
                image[[y0 + dy, x0 + dx]] += amount * weight;
            }
        }
    }
}

/// Deposits emitters with bilinear sub-pixel weights; filaments are sampled
/// every quarter pixel.
pub fn render_phantom(spec: &PhantomSpec) -> Result<Array2<f64>, SynthError> {
    if spec.height == 0 || spec.width == 0 {
        return Err(SynthError::InvalidArgument("phantom size must be positive".into()));
    }
    let mut image = Array2::zeros((spec.height, spec.width));
    for e in &spec.emitters {
        spec.check_point(e.x, e.y)?;
        if !(e.amplitude > 0.0) {
            return Err(SynthError::InvalidArgument(format!("emitter amplitude must be positive, got {}", e.amplitude)));
        }
        splat(&mut image, e.x, e.y, e.amplitude);
    }
    for f in &spec.filaments {
        for &(x, y) in &f.points {
            spec.check_point(x, y)?;
        }
        for seg in f.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let len = (x1 - x0).hypot(y1 - y0);
            let steps = (len / 0.25).ceil().max(1.0) as usize;
            let amount = f.intensity * len / steps as f64;
            for s in 0..steps {
                let t = (s as f64 + 0.5) / steps as f64;
                splat(&mut image, x0 + t * (x1 - x0), y0 + t * (y1 - y0), amount);
            }
        }
    }
    Ok(image)
}

/// Whole-sample symmetric reflection into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn gaussian_kernel(sigma: f64) -> Array1<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let k: Array1<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total = k.sum();
    k / total
}

fn convolve_axis(image: &Array2<f64>, kernel: &Array1<f64>, axis: Axis) -> Array2<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros(image.raw_dim());
    for (src, mut dst) in image.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = src.len();
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &kv) in kernel.iter().enumerate() {
                acc += kv * src[reflect(i as isize + j as isize - radius, n)];
            }
            dst[i] = acc;
        }
    }
    out
}

/// Separable convolution with a normalized isotropic Gaussian truncated at
/// 4 sigma, reflective boundaries. The symmetric extension keeps the
/// operator symmetric, so the image sum is preserved.
pub fn apply_gaussian_psf(image: &Array2<f64>, fwhm: f64) -> Result<Array2<f64>, SynthError> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(SynthError::InvalidArgument(format!("PSF FWHM must be positive, got {fwhm}")));
    }
    let kernel = gaussian_kernel(fwhm_to_sigma(fwhm));
    let rows = convolve_axis(image, &kernel, Axis(1));
    Ok(convolve_axis(&rows, &kernel, Axis(0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Photons per unit intensity; `Poisson(scale * x) / scale`.
    pub poisson_scale: f64,
    pub gaussian_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { poisson_scale: 100.0, gaussian_sigma: 0.01 }
    }
}

/// Shot noise followed by additive Gaussian read noise. Deterministic in
/// `seed`. A non-positive or infinite `poisson_scale` disables shot noise.
pub fn add_noise(image: &Array2<f64>, noise: &NoiseModel, seed: u64) -> Result<Array2<f64>, SynthError> {
    if image.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(SynthError::InvalidArgument("noise model needs a finite non-negative image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let read = Normal::new(0.0, noise.gaussian_sigma.max(0.0))
        .map_err(|e| SynthError::InvalidArgument(format!("gaussian sigma: {e}")))?;
    let shot = noise.poisson_scale > 0.0 && noise.poisson_scale.is_finite();
    let mut out = image.clone();
    for v in out.iter_mut() {
        if shot && *v > 0.0 {
            let lambda = noise.poisson_scale * *v;
            let poisson = Poisson::new(lambda).map_err(|e| SynthError::InvalidArgument(format!("poisson: {e}")))?;
            *v = poisson.sample(&mut rng) / noise.poisson_scale;
        }
        if noise.gaussian_sigma > 0.0 {
            *v += read.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Random phantom generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomDistribution {
    /// Inclusive range of emitter-pair count.
    pub pairs: (usize, usize),
    pub singles: (usize, usize),
    /// Pair separation range in pixels.
    pub separation: (f64, f64),
    pub amplitude: (f64, f64),
    pub filaments: (usize, usize),
    /// Filament intensity per unit length.
    pub filament_intensity: (f64, f64),
    /// Keep-out border in pixels.
    pub margin: f64,
}

impl Default for PhantomDistribution {
    fn default() -> Self {
        PhantomDistribution {
            pairs: (6, 10),
            singles: (2, 4),
            separation: (1.5, 8.0),
            amplitude: (60.0, 120.0),
            filaments: (0, 2),
            filament_intensity: (8.0, 16.0),
            margin: 4.0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl PhantomDistribution {
    pub fn sample(&self, height: usize, width: usize, seed: u64) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = PhantomSpec::new(height, width);
        spec.seed = seed;
        let m = self.margin.min((width.min(height) as f64 - 1.0) / 2.0).max(0.0);
        let (xmax, ymax) = ((width - 1) as f64 - m, (height - 1) as f64 - m);
        let clamp = |x: f64, hi: f64| x.clamp(m, hi);
        for _ in 0..count(&mut rng, self.pairs) {
            let (cx, cy) = (uniform(&mut rng, (m, xmax)), uniform(&mut rng, (m, ymax)));
            let d = uniform(&mut rng, self.separation);
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let amp = uniform(&mut rng, self.amplitude);
            let pair = two_point_phantom(height, width, (cx, cy), d, theta, amp);
            spec.emitters.extend(
                pair.emitters.into_iter().map(|e| Emitter { x: clamp(e.x, xmax), y: clamp(e.y, ymax), ..e }),
            );
        }
        for _ in 0..count(&mut rng, self.singles) {
            let (x, y) = (uniform(&mut rng, (m, xmax)), uniform(&mut rng, (m, ymax)));
            spec.emitters.push(Emitter { x, y, amplitude: uniform(&mut rng, self.amplitude) });
        }
        for _ in 0..count(&mut rng, self.filaments) {
            let mut pts = vec![(uniform(&mut rng, (m, xmax)), uniform(&mut rng, (m, ymax)))];
            let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
            for _ in 0..4 {
                heading += rng.random_range(-0.6..0.6);
                let step = uniform(&mut rng, (4.0, 10.0));
                let (px, py) = *pts.last().expect("non-empty");
                pts.push((clamp(px + step * heading.cos(), xmax), clamp(py + step * heading.sin(), ymax)));
            }
            spec.filaments.push(Filament { points: pts, intensity: uniform(&mut rng, self.filament_intensity) });
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_fovs: usize,
    pub frames_per_fov: usize,
    pub height: usize,
    pub width: usize,
    pub phantom: PhantomDistribution,
    pub fwhm_wide: f64,
    pub fwhm_narrow: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_fovs: 8,
            frames_per_fov: 50,
            height: 64,
            width: 64,
            phantom: PhantomDistribution::default(),
            fwhm_wide: 6.0,
            fwhm_narrow: 2.0,
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl PhantomDistribution {
    /// Fewer, isolated pairs near the resolution limit and no filaments.
    pub fn sparse_pairs() -> Self {
        PhantomDistribution {
            pairs: (4, 6),
            singles: (1, 2),
            separation: (2.0, 6.0),
            filaments: (0, 0),
            ..Default::default()
        }
    }
}

impl SynthConfig {
    /// Desk-scale benchmark: 64x64 frames, 10 frames per pseudo-FOV,
    /// sparse near-limit pairs.
    pub fn benchmark(n_fovs: usize, seed: u64) -> Self {
        SynthConfig { n_fovs, frames_per_fov: 10, phantom: PhantomDistribution::sparse_pairs(), seed, ..Default::default() }
    }
}

/// A rendered two-point phantom with the segment through both emitters.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointCase {
    pub input: Array2<u16>,
    pub target: Array2<u16>,
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    pub separation: f64,
}

/// `count` two-point phantoms with separation midway between the narrow
/// and wide Sparrow limits, random centre near the middle and random
/// orientation. The profile
/// segment extends `d/2 + 2 sigma_wide` either side of the centre.
pub fn two_point_cases(config: &SynthConfig, count: usize, amplitude: f64, seed: u64) -> Result<Vec<TwoPointCase>, SynthError> {
    let (h, w) = (config.height, config.width);
    let sw = fwhm_to_sigma(config.fwhm_wide);
    let d = (sparrow_separation(config.fwhm_wide) + sparrow_separation(config.fwhm_narrow)) / 2.0;
    let half = d / 2.0 + 2.0 * sw;
    // centres in the middle quarter of each axis
    let (x0, x1) = (w as f64 * 3.0 / 8.0, w as f64 * 5.0 / 8.0);
    let (y0, y1) = (h as f64 * 3.0 / 8.0, h as f64 * 5.0 / 8.0);
    if x0 - half < 0.0 || y0 - half < 0.0 || !(x1 > x0 && y1 > y0) {
        return Err(SynthError::InvalidArgument(format!("{h}x{w} is too small for a two-point profile of half-length {half:.2}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let c = (rng.random_range(x0..x1), rng.random_range(y0..y1));
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let clean = render_phantom(&two_point_phantom(h, w, c, d, theta, amplitude))?;
            let input = quantize_u16(&observe(&clean, config, k as u64)?);
            let target = quantize_u16(&apply_gaussian_psf(&clean, config.fwhm_narrow)?);
            let (ux, uy) = (theta.cos(), theta.sin());
            Ok(TwoPointCase {
                input,
                target,
                p0: (c.0 - half * ux, c.1 - half * uy),
                p1: (c.0 + half * ux, c.1 + half * uy),
                separation: d,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<FovRecord>,
    pub truths: Vec<PhantomSpec>,
}

/// Linear map of `[min, max]` onto the full 16-bit range; negatives clip.
pub fn quantize_u16(image: &Array2<f64>) -> Array2<u16> {
    let (lo, hi) = image.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let lo = lo.max(0.0);
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(image.raw_dim());
    }
    image.mapv(|v| (((v - lo) / range).clamp(0.0, 1.0) * 65535.0).round() as u16)
}

/// One wide-PSF noisy image of a phantom, before quantization.
pub fn observe(clean: &Array2<f64>, config: &SynthConfig, seed: u64) -> Result<Array2<f64>, SynthError> {
    add_noise(&apply_gaussian_psf(clean, config.fwhm_wide)?, &config.noise, seed)
}

/// Pseudo field of view `index` (seed `config.seed + index`).
pub fn make_synth_fov(config: &SynthConfig, index: usize) -> Result<(FovRecord, PhantomSpec), SynthError> {
    let fov_seed = config.seed.wrapping_add(index as u64);
    let truth = config.phantom.sample(config.height, config.width, fov_seed);
    let clean = render_phantom(&truth)?;
    let blurred = apply_gaussian_psf(&clean, config.fwhm_wide)?;
    let target = quantize_u16(&apply_gaussian_psf(&clean, config.fwhm_narrow)?);
    let mut rng = ChaCha8Rng::seed_from_u64(fov_seed ^ 0xF0F0_5EED);
    let frames = (0..config.frames_per_fov)
        .map(|_| add_noise(&blurred, &config.noise, rng.random()).map(|f| quantize_u16(&f)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((FovRecord { id: format!("{index:03}"), frames, target }, truth))
}

pub fn make_synth_dataset(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    if !(config.fwhm_wide > config.fwhm_narrow) || !(config.fwhm_narrow > 0.0) {
        return Err(SynthError::InvalidPsf { wide: config.fwhm_wide, narrow: config.fwhm_narrow });
    }
    if config.n_fovs == 0 || config.frames_per_fov == 0 {
        return Err(SynthError::InvalidArgument("need at least one FOV and one frame".into()));
    }
    if config.height < 2 || config.width < 2 {
        return Err(SynthError::InvalidArgument("images must be at least 2x2".into()));
    }
    let mut records = Vec::with_capacity(config.n_fovs);
    let mut truths = Vec::with_capacity(config.n_fovs);
    for i in 0..config.n_fovs {
        let (r, t) = make_synth_fov(config, i)?;
        records.push(r);
        truths.push(t);
    }
    Ok(SynthDataset { records, truths })
}

/// Writes the FOV directories, a `truth.json` per FOV and the dataset
/// manifest. Returns every written file, in order.
pub fn write_synth_dataset(root: &Path, data: &SynthDataset) -> Result<Vec<std::path::PathBuf>, SynthError> {
    let io = |p: &Path, e: std::io::Error| SynthError::Dataset(DatasetError::Io(format!("{}: {e}", p.display())));
    fs::create_dir_all(root).map_err(|e| io(root, e))?;
    let mut files = Vec::new();
    for (record, truth) in data.records.iter().zip(&data.truths) {
        let dir = write_fov(root, record)?;
        for k in 0..record.frames.len() {
            files.push(dir.join(format!("frame_{k:03}.tif")));
        }
        files.push(dir.join("target.tif"));
        let truth_path = dir.join("truth.json");
        let json = serde_json::to_string_pretty(truth).expect("phantom serializes");
        fs::write(&truth_path, json).map_err(|e| io(&truth_path, e))?;
        files.push(truth_path);
    }
    let manifest = DatasetManifest {
        fovs: data.records.iter().map(|r| r.id.clone()).collect(),
        train: Vec::new(),
        test: Vec::new(),
        frames_per_fov: data.records.first().map(|r| r.frames.len()),
    };
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| io(&path, e))?;
    files.push(path);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_emitter_lands_on_one_pixel() {
        let mut spec = PhantomSpec::new(8, 8);
        spec.emitters.push(Emitter { x: 3.0, y: 5.0, amplitude: 1.0 });
        let img = render_phantom(&spec).unwrap();
        assert_eq!(img.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(img[[5, 3]], 1.0);
    }

    #[test]
    fn half_pixel_emitter_splits_evenly() {
        let mut spec = PhantomSpec::new(16, 16);
        spec.emitters.push(Emitter { x: 10.5, y: 10.0, amplitude: 1.0 });
        let img = render_phantom(&spec).unwrap();
        assert_eq!(img[[10, 10]], 0.5);
        assert_eq!(img[[10, 11]], 0.5);
        assert_eq!(img.sum(), 1.0);
    }

    #[test]
    fn intensity_is_conserved() {
        let mut spec = two_point_phantom(16, 16, (7.3, 8.1), 3.0, 0.4, 1.0);
        assert!((render_phantom(&spec).unwrap().sum() - 2.0).abs() < 1e-12);
        spec.filaments.push(Filament { points: vec![(1.0, 1.0), (10.0, 5.0), (12.0, 14.0)], intensity: 2.0 });
        let total = render_phantom(&spec).unwrap().sum();
        assert!((total - spec.total_intensity()).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_emitter() {
        let mut spec = PhantomSpec::new(8, 8);
        spec.emitters.push(Emitter { x: 7.5, y: 1.0, amplitude: 1.0 });
        assert!(matches!(render_phantom(&spec), Err(SynthError::OutOfBounds { .. })));
    }

    #[test]
    fn delta_becomes_the_kernel() {
        let mut img = Array2::zeros((41, 41));
        img[[20, 20]] = 1.0;
        let out = apply_gaussian_psf(&img, 6.0).unwrap();
        let k = gaussian_kernel(fwhm_to_sigma(6.0));
        let r = k.len() / 2;
        for i in 0..k.len() {
            for j in 0..k.len() {
                assert!((out[[20 + i - r, 20 + j - r]] - k[i] * k[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_preserves_sum_even_at_borders() {
        let mut img = Array2::zeros((12, 9));
        img[[0, 0]] = 3.0;
        img[[11, 4]] = 1.5;
        img[[5, 8]] = 0.25;
        for fwhm in [1.0, 6.0, 20.0] {
            let out = apply_gaussian_psf(&img, fwhm).unwrap();
            assert!((out.sum() - img.sum()).abs() <= 1e-6 * img.sum(), "fwhm {fwhm}");
        }
    }

    #[test]
    fn nonpositive_fwhm_rejected() {
        assert!(apply_gaussian_psf(&Array2::zeros((4, 4)), 0.0).is_err());
    }

    #[test]
    fn huge_photon_budget_is_nearly_identity() {
        let img = Array2::from_shape_fn((8, 8), |(r, c)| 0.1 + (r * 8 + c) as f64 / 64.0);
        let noisy = add_noise(&img, &NoiseModel { poisson_scale: 1e12, gaussian_sigma: 0.0 }, 3).unwrap();
        assert!(noisy.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn noise_is_seeded() {
        let img = Array2::from_elem((8, 8), 0.5);
        let n = NoiseModel::default();
        assert_eq!(add_noise(&img, &n, 9).unwrap(), add_noise(&img, &n, 9).unwrap());
        assert_ne!(add_noise(&img, &n, 9).unwrap(), add_noise(&img, &n, 10).unwrap());
    }

    #[test]
    fn psf_ordering_is_checked() {
        let cfg = SynthConfig { fwhm_wide: 2.0, fwhm_narrow: 3.0, ..SynthConfig::default() };
        assert!(matches!(make_synth_dataset(&cfg), Err(SynthError::InvalidPsf { .. })));
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let cfg = SynthConfig { n_fovs: 2, frames_per_fov: 3, height: 32, width: 32, ..SynthConfig::default() };
        let a = make_synth_dataset(&cfg).unwrap();
        assert_eq!(a.records.len(), 2);
        assert!(a.records.iter().all(|r| r.frames.len() == 3 && r.target.dim() == (32, 32)));
        assert_eq!(a, make_synth_dataset(&cfg).unwrap());
        assert_ne!(a.records[0].frames[0], a.records[0].frames[1]);
    }

    #[test]
    fn truth_sidecar_roundtrips() {
        let spec = PhantomDistribution::default().sample(64, 64, 5);
        let back: PhantomSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        render_phantom(&spec).unwrap();
    }
}
