//! Held-out evaluation, line profiles, two-peak resolvability and artifact
//! export.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::arch::NetworkGraph;
use crate::dataset::{write_tiff_stack, TestFrame};
use crate::exec::{forward_eval, ExecError, ParameterSet};
use crate::scalar::Scalar;
use crate::train::LossLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTest,
    #[error("degenerate profile segment: both endpoints are ({x}, {y})")]
    DegenerateSegment { x: f64, y: f64 },
    #[error("profile endpoint ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds { x: f64, y: f64, width: usize, height: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Io(format!("{}: {e}", path.display()))
}

/// Intensity samples along a segment, divided by their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSeries {
    /// Distance from the first endpoint, in pixels times `um_per_px`.
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
    pub source: String,
    /// Set when every sample was zero (or negative) and no normalization
    /// was possible.
    pub flat: bool,
}

/// Bilinear sample at column `x`, row `y`; coordinates must be in bounds.
pub fn bilinear(image: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = image.dim();
    let (x0, y0) = ((x.floor() as usize).min(w - 1), (y.floor() as usize).min(h - 1));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = image[[y0, x0]] * (1.0 - fx) + image[[y0, x1]] * fx;
    let bottom = image[[y1, x0]] * (1.0 - fx) + image[[y1, x1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `n_samples` evenly spaced bilinear samples from `p0` to `p1` (inclusive),
/// each point given as `(x, y)` = (column, row).
pub fn line_profile<T: Scalar>(
    image: &Array2<T>,
    p0: (f64, f64),
    p1: (f64, f64),
    n_samples: usize,
    um_per_px: f64,
    source: &str,
) -> Result<ProfileSeries, EvalError> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(EvalError::InvalidArgument("empty image".into()));
    }
    if n_samples < 2 {
        return Err(EvalError::InvalidArgument(format!("need at least 2 samples, got {n_samples}")));
    }
    if !(um_per_px > 0.0 && um_per_px.is_finite()) {
        return Err(EvalError::InvalidArgument(format!("pixel pitch must be positive, got {um_per_px}")));
    }
    for (x, y) in [p0, p1] {
        let inside = (0.0..=(w - 1) as f64).contains(&x) && (0.0..=(h - 1) as f64).contains(&y);
        if !inside {
            return Err(EvalError::OutOfBounds { x, y, width: w, height: h });
        }
    }
    if p0 == p1 {
        return Err(EvalError::DegenerateSegment { x: p0.0, y: p0.1 });
    }
    let img = image.mapv(|v| v.as_f64());
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let length = dx.hypot(dy);
    let last = (n_samples - 1) as f64;
    let mut positions = Vec::with_capacity(n_samples);
    let mut raw = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let i = i as f64;
        positions.push(length * i / last * um_per_px);
        raw.push(bilinear(&img, p0.0 + dx * i / last, p0.1 + dy * i / last));
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat = !(max > 0.0);
    let values = if flat { vec![0.0; n_samples] } else { raw.iter().map(|v| v / max).collect() };
    Ok(ProfileSeries { positions, values, source: source.to_string(), flat })
}

/// Dip depth needed to call two peaks resolved.
pub const DEFAULT_DIP_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DipResult {
    pub resolved: bool,
    pub dip_depth: f64,
    /// Positions of the two highest local maxima, in profile order.
    pub peak_positions: Vec<f64>,
}

/// Takes the two highest interior local maxima; the dip is the lower peak
/// minus the lowest sample between them. Fewer than two maxima gives an
/// unresolved result with zero depth.
pub fn dip_metric(profile: &ProfileSeries, threshold: f64) -> DipResult {
    let v = &profile.values;
    let mut maxima: Vec<usize> = (1..v.len().saturating_sub(1)).filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1]).collect();
    if maxima.len() < 2 {
        return DipResult { resolved: false, dip_depth: 0.0, peak_positions: maxima.iter().map(|&i| profile.positions[i]).collect() };
    }
    maxima.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let (a, b) = (maxima[0].min(maxima[1]), maxima[0].max(maxima[1]));
    let valley = v[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
    let dip_depth = (v[a].min(v[b]) - valley).max(0.0);
    DipResult {
        resolved: dip_depth >= threshold,
        dip_depth,
        peak_positions: vec![profile.positions[a], profile.positions[b]],
    }
}

/// A segment to sample on every evaluated image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRequest {
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Empty means one horizontal profile across the middle row.
    pub profiles: Vec<ProfileRequest>,
    pub um_per_px: f64,
    pub dip_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { profiles: Vec::new(), um_per_px: 1.0, dip_threshold: DEFAULT_DIP_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub mse: f64,
    pub input: Array2<f64>,
    pub output: Array2<f64>,
    pub target: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileResult {
    pub image_id: String,
    pub profile: ProfileSeries,
    pub dip: DipResult,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    pub mean_mse: f64,
    pub profiles: Vec<ProfileResult>,
}

impl EvalReport {
    pub fn per_image_mse(&self) -> Vec<f64> {
        self.images.iter().map(|i| i.mse).collect()
    }

    /// CSV `image_id,mse`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image_id", "mse"]).expect("in-memory write");
        for img in &self.images {
            w.write_record([img.id.clone(), format!("{:e}", img.mse)]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the model in eval mode on each frame. MSE is computed on the raw
/// output; clamping to `[0, 1]` happens only on export.
pub fn evaluate<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    frames: &[TestFrame<T>],
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let mut report = EvalReport::default();
    for f in frames {
        let batch = f.input.view().insert_axis(Axis(0)).insert_axis(Axis(0)).to_owned();
        let out = forward_eval(graph, params, &batch)?;
        let output = out.index_axis(Axis(0), 0).index_axis(Axis(0), 0).mapv(|v| v.as_f64());
        let target = f.target.mapv(|v| v.as_f64());
        let mse = ndarray::Zip::from(&output).and(&target).fold(0.0, |acc, &o, &t| acc + (o - t) * (o - t))
            / output.len() as f64;
        let id = f.id();
        let (h, w) = output.dim();
        let requests = if options.profiles.is_empty() {
            vec![ProfileRequest { p0: (0.0, (h / 2) as f64), p1: ((w - 1) as f64, (h / 2) as f64), n_samples: w.max(2) }]
        } else {
            options.profiles.clone()
        };
        for req in &requests {
            for (label, img) in [("input", &f.input.mapv(|v| v.as_f64())), ("output", &output), ("target", &target)] {
                let profile = line_profile(img, req.p0, req.p1, req.n_samples, options.um_per_px, label)?;
                let dip = dip_metric(&profile, options.dip_threshold);
                report.profiles.push(ProfileResult { image_id: id.clone(), profile, dip });
            }
        }
        report.images.push(ImageResult { id, mse, input: f.input.mapv(|v| v.as_f64()), output, target });
    }
    report.mean_mse = mean(&report.per_image_mse());
    Ok(report)
}

fn to_u8(image: &Array2<f64>) -> Array2<u8> {
    image.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

fn to_u16(image: &Array2<f64>) -> Array2<u16> {
    image.mapv(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
}

/// Input, output and target side by side with a 2-pixel white gutter.
pub fn triptych(input: &Array2<f64>, output: &Array2<f64>, target: &Array2<f64>) -> GrayImage {
    const GAP: u32 = 2;
    let (h, w) = input.dim();
    let (h32, w32) = (h as u32, w as u32);
    let mut img = GrayImage::from_pixel(3 * w32 + 2 * GAP, h32, Luma([255]));
    for (k, panel) in [input, output, target].into_iter().enumerate() {
        let px = to_u8(panel);
        for ((r, c), &v) in px.indexed_iter() {
            img.put_pixel(k as u32 * (w32 + GAP) + c as u32, r as u32, Luma([v]));
        }
    }
    img
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Train (blue) and test (red) MSE against epoch on a log scale, with
/// decade ticks on the y axis.
pub fn render_loss_plot(log: &LossLog) -> Option<RgbImage> {
    const W: u32 = 640;
    const H: u32 = 400;
    const M: i64 = 40;
    let points: Vec<f64> = log
        .records
        .iter()
        .flat_map(|r| std::iter::once(r.train_mse).chain(r.test_mse))
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    if points.is_empty() {
        return None;
    }
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil().max(lo + 1.0);
    let last_epoch = log.records.last().map(|r| r.epoch).unwrap_or(1).max(2) as f64;
    let first_epoch = log.records.first().map(|r| r.epoch).unwrap_or(1) as f64;
    let span = (last_epoch - first_epoch).max(1.0);
    let (pw, ph) = ((W as i64 - 2 * M) as f64, (H as i64 - 2 * M) as f64);
    let to_px = |epoch: f64, v: f64| {
        let x = M + ((epoch - first_epoch) / span * pw).round() as i64;
        let y = H as i64 - M - ((v.log10() - lo) / (hi - lo) * ph).round() as i64;
        (x, y)
    };
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    draw_line(&mut img, (M, M), (M, H as i64 - M), black);
    draw_line(&mut img, (M, H as i64 - M), (W as i64 - M, H as i64 - M), black);
    for decade in lo as i64..=hi as i64 {
        let (_, y) = to_px(first_epoch, 10f64.powi(decade as i32));
        draw_line(&mut img, (M - 6, y), (M, y), black);
    }
    let series = |pick: &dyn Fn(&crate::train::EpochRecord) -> Option<f64>| -> Vec<(i64, i64)> {
        log.records
            .iter()
            .filter_map(|r| pick(r).filter(|v| *v > 0.0 && v.is_finite()).map(|v| to_px(r.epoch as f64, v)))
            .collect()
    };
    for (pts, color) in [
        (series(&|r| Some(r.train_mse)), Rgb([31, 119, 180])),
        (series(&|r| r.test_mse), Rgb([214, 39, 40])),
    ] {
        for seg in pts.windows(2) {
            draw_line(&mut img, seg[0], seg[1], color);
        }
        if let [only] = pts[..] {
            draw_line(&mut img, (only.0 - 2, only.1), (only.0 + 2, only.1), color);
        }
    }
    Some(img)
}

/// Normalized intensity against position, linear axes.
pub fn render_profile_plot(profile: &ProfileSeries) -> RgbImage {
    const W: u32 = 480;
    const H: u32 = 320;
    const M: i64 = 30;
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    draw_line(&mut img, (M, M), (M, H as i64 - M), black);
    draw_line(&mut img, (M, H as i64 - M), (W as i64 - M, H as i64 - M), black);
    let span = profile.positions.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let (pw, ph) = ((W as i64 - 2 * M) as f64, (H as i64 - 2 * M) as f64);
    let pts: Vec<(i64, i64)> = profile
        .positions
        .iter()
        .zip(&profile.values)
        .map(|(p, v)| (M + (p / span * pw).round() as i64, H as i64 - M - (v.clamp(0.0, 1.0) * ph).round() as i64))
        .collect();
    for seg in pts.windows(2) {
        draw_line(&mut img, seg[0], seg[1], Rgb([31, 119, 180]));
    }
    img
}

/// CSV `position,value`.
pub fn profile_csv(profile: &ProfileSeries) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["position", "value"]).expect("in-memory write");
    for (p, v) in profile.positions.iter().zip(&profile.values) {
        w.write_record([format!("{p}"), format!("{v}")]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes the report CSV, one triptych PNG and one 16-bit output TIFF per
/// image, the loss CSV and plot, every profile as CSV, and an
/// `artifacts.manifest` listing them (the manifest is last in the returned
/// list). Output depends only on the inputs.
pub fn export_artifacts(report: &EvalReport, log: &LossLog, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let images_dir = out_dir.join("images");
    let profiles_dir = out_dir.join("profiles");
    for d in [out_dir, &images_dir, &profiles_dir] {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let mut written = Vec::new();
    let mut notes = Vec::new();
    let put = |path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>| -> Result<(), EvalError> {
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };

    put(out_dir.join("report.csv"), report.to_csv().as_bytes(), &mut written)?;
    for img in &report.images {
        let stem = file_stem(&img.id);
        let png = images_dir.join(format!("{stem}_triptych.png"));
        triptych(&img.input, &img.output, &img.target).save(&png).map_err(|e| io_err(&png, e))?;
        written.push(png);
        let tif = images_dir.join(format!("{stem}_output.tif"));
        write_tiff_stack(&tif, &[to_u16(&img.output)]).map_err(|e| EvalError::Io(e.to_string()))?;
        written.push(tif);
    }
    put(out_dir.join("loss.csv"), log.to_csv().as_bytes(), &mut written)?;
    match render_loss_plot(log) {
        Some(plot) => {
            let path = out_dir.join("loss.png");
            plot.save(&path).map_err(|e| io_err(&path, e))?;
            written.push(path);
        }
        None => notes.push("loss_plot = omitted (empty loss log)".to_string()),
    }
    for (k, p) in report.profiles.iter().enumerate() {
        let name = format!("{}_{k:03}_{}.csv", file_stem(&p.image_id), file_stem(&p.profile.source));
        put(profiles_dir.join(name), profile_csv(&p.profile).as_bytes(), &mut written)?;
    }

    let mut manifest = String::new();
    manifest.push_str(&format!("images = {}\nmean_mse = {:e}\n", report.images.len(), report.mean_mse));
    for n in &notes {
        manifest.push_str(n);
        manifest.push('\n');
    }
    for path in &written {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        manifest.push_str(&format!("file = {}\n", rel.display()));
    }
    put(out_dir.join("artifacts.manifest"), manifest.as_bytes(), &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::EpochRecord;

    fn gaussian_pair(x: f64, d: f64, sigma: f64) -> f64 {
        let g = |u: f64| (-(u * u) / (2.0 * sigma * sigma)).exp();
        g(x - d / 2.0) + g(x + d / 2.0)
    }

    fn analytic_profile(d: f64, sigma: f64) -> ProfileSeries {
        let n = 4001;
        let half = d / 2.0 + 4.0 * sigma;
        let positions: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
        let raw: Vec<f64> = positions.iter().map(|&x| gaussian_pair(x, d, sigma)).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        ProfileSeries { positions, values: raw.iter().map(|v| v / max).collect(), source: "analytic".into(), flat: false }
    }

    #[test]
    fn ramp_profile_is_linear() {
        let img = Array2::from_shape_fn((5, 11), |(_, c)| c as f64);
        let p = line_profile(&img, (0.0, 2.0), (10.0, 2.0), 21, 1.0, "ramp").unwrap();
        assert!(!p.flat);
        assert_eq!(*p.values.last().unwrap(), 1.0);
        for (pos, v) in p.positions.iter().zip(&p.values) {
            assert!((v - pos / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_zero_profile_is_flagged() {
        let img = Array2::<f64>::zeros((4, 4));
        let p = line_profile(&img, (0.0, 0.0), (3.0, 3.0), 5, 1.0, "z").unwrap();
        assert!(p.flat && p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_and_outside_segments() {
        let img = Array2::<f64>::ones((4, 4));
        assert!(matches!(line_profile(&img, (1.0, 1.0), (1.0, 1.0), 5, 1.0, "d"), Err(EvalError::DegenerateSegment { .. })));
        assert!(matches!(line_profile(&img, (0.0, 0.0), (4.0, 1.0), 5, 1.0, "o"), Err(EvalError::OutOfBounds { .. })));
    }

    #[test]
    fn row_path_reproduces_row() {
        let img = Array2::from_shape_fn((6, 9), |(r, c)| ((r * 7 + c * 3) % 11) as f64 + 0.5);
        let p = line_profile(&img, (0.0, 4.0), (8.0, 4.0), 9, 1.0, "row").unwrap();
        let row = img.row(4);
        let max = row.iter().copied().fold(0.0, f64::max);
        for (v, r) in p.values.iter().zip(row) {
            assert_eq!(*v, r / max);
        }
    }

    #[test]
    fn micrometre_scaling_only_touches_positions() {
        let img = Array2::from_shape_fn((3, 5), |(_, c)| c as f64);
        let a = line_profile(&img, (0.0, 1.0), (4.0, 1.0), 5, 1.0, "a").unwrap();
        let b = line_profile(&img, (0.0, 1.0), (4.0, 1.0), 5, 0.25, "a").unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(b.positions[4], 1.0);
    }

    #[test]
    fn single_peak_is_unresolved() {
        let p = analytic_profile(0.0, 2.0);
        let d = dip_metric(&p, DEFAULT_DIP_THRESHOLD);
        assert!(!d.resolved);
        assert_eq!(d.dip_depth, 0.0);
    }

    #[test]
    fn sparrow_limit_has_no_dip() {
        let d = dip_metric(&analytic_profile(4.0, 2.0), DEFAULT_DIP_THRESHOLD);
        assert!(!d.resolved && d.dip_depth < 1e-9);
    }

    #[test]
    fn wide_pair_matches_closed_form() {
        let sigma = 2.0;
        let d = 4.0 * sigma;
        let got = dip_metric(&analytic_profile(d, sigma), DEFAULT_DIP_THRESHOLD);
        // peaks sit within 1e-3 px of +-d/2 for this separation
        let peak = gaussian_pair(d / 2.0, d, sigma);
        let oracle = 1.0 - gaussian_pair(0.0, d, sigma) / peak;
        assert!(got.resolved);
        assert!((got.dip_depth - oracle).abs() <= 0.02 * oracle);
    }

    #[test]
    fn dip_is_scale_invariant() {
        let img = Array2::from_shape_fn((3, 41), |(_, c)| gaussian_pair(c as f64 - 20.0, 9.0, 2.0));
        let base = line_profile(&img, (0.0, 1.0), (40.0, 1.0), 81, 1.0, "s").unwrap();
        for k in [1e-3, 0.7, 42.0] {
            let scaled = line_profile(&img.mapv(|v| v * k), (0.0, 1.0), (40.0, 1.0), 81, 1.0, "s").unwrap();
            let (a, b) = (dip_metric(&base, 0.05), dip_metric(&scaled, 0.05));
            assert!((a.dip_depth - b.dip_depth).abs() < 1e-12);
            assert_eq!(a.resolved, b.resolved);
        }
    }

    #[test]
    fn empty_log_has_no_plot() {
        assert!(render_loss_plot(&LossLog::default()).is_none());
        let log = LossLog { records: vec![EpochRecord { epoch: 1, train_mse: 0.1, test_mse: Some(0.2) }] };
        assert!(render_loss_plot(&log).is_some());
    }
}
