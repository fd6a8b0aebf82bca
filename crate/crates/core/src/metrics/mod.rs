//! Image-editing metrics: PWMSE, FID, LPIPS and CLIPScore, with image- and
//! background-scoped reports.

mod providers;

use std::sync::Arc;

use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use providers::{
    channel_normalize, ColorWordEmbedder, FeatureProvider, IdentityPixels, JointEmbedder, PixelStats,
    PrecomputedFeatures, RawPyramid,
};

use crate::caption::TokenizedCaption;
use crate::grid::{BitGrid, Grid};
use crate::{Error, Result};

/// Side length of the crops used for single-pair FID.
pub const FID_TILE: usize = 16;

/// Mean squared difference over the selected pixels and all channels.
pub fn pwmse_grid(a: &Grid, b: &Grid, mask: Option<&BitGrid>) -> Result<f64> {
    a.same_shape(b)?;
    if let Some(m) = mask {
        if (m.width, m.height) != (a.width, a.height) {
            return Err(Error::dims(format!("{}x{}", a.width, a.height), format!("{}x{} mask", m.width, m.height)));
        }
    }
    let plane = a.plane();
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
        if mask.is_none_or(|m| m.bits[i % plane]) {
            sum += ((x - y) as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMaskRegion);
    }
    Ok(sum / n as f64)
}

/// PWMSE on raw `0..=255` channel values.
pub fn pwmse(a: &RgbImage, b: &RgbImage, mask: Option<&BitGrid>) -> Result<f64> {
    pwmse_grid(&Grid::from_rgb_raw(a), &Grid::from_rgb_raw(b), mask)
}

fn mean_cov(xs: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 feature vectors, got {}", xs.len())));
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::dims(d, bad.len()));
    }
    let n = xs.len() as f64;
    let mut mu = DVector::zeros(d);
    for x in xs {
        mu += DVector::from_column_slice(x);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        let c = DVector::from_column_slice(x) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

fn clipped_eigen(m: DMatrix<f64>, what: &str) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut e = SymmetricEigen::new(sym);
    let scale = e.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    if e.eigenvalues.iter().any(|&v| v < -1e-9 * scale) {
        log::warn!("degenerate covariance in {what}: negative eigenvalues clipped to 0");
    }
    e.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    e
}

/// `|μ₁−μ₂|² + Tr(C₁ + C₂ − 2(C₁C₂)^{1/2})` with the trace of the square
/// root taken from the eigenvalues of the symmetric `C₁^{1/2} C₂ C₁^{1/2}`.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (m1, c1) = mean_cov(a)?;
    let (m2, c2) = mean_cov(b)?;
    if m1.len() != m2.len() {
        return Err(Error::dims(m1.len(), m2.len()));
    }
    let e1 = clipped_eigen(c1.clone(), "first set");
    let s1 = &e1.eigenvectors * DMatrix::from_diagonal(&e1.eigenvalues.map(f64::sqrt)) * e1.eigenvectors.transpose();
    let inner = clipped_eigen(&s1 * &c2 * &s1, "covariance product");
    let tr_sqrt: f64 = inner.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let d = (m1 - m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

pub fn fid(set_a: &[RgbImage], set_b: &[RgbImage], provider: &dyn FeatureProvider) -> Result<f64> {
    let fa = set_a.iter().map(|i| provider.vector(i)).collect::<Result<Vec<_>>>()?;
    let fb = set_b.iter().map(|i| provider.vector(i)).collect::<Result<Vec<_>>>()?;
    fid_from_features(&fa, &fb)
}

/// `Σ_l (1/(H_l·W_l)) Σ_{h,w} ‖f_a − f_b‖²` over layer feature grids.
pub fn lpips_layers(a: &[Grid], b: &[Grid]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(format!("{} layers", a.len()), b.len()));
    }
    let mut total = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        fa.same_shape(fb)?;
        let s: f64 = fa.values.iter().zip(&fb.values).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        total += s / fa.plane() as f64;
    }
    Ok(total)
}

pub fn lpips(a: &RgbImage, b: &RgbImage, provider: &dyn FeatureProvider) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::dims(format!("{:?}", a.dimensions()), format!("{:?}", b.dimensions())));
    }
    lpips_layers(&provider.layers(a)?, &provider.layers(b)?)
}

/// `2.5·max(cos(c, v), 0)`.
pub fn clipscore(caption: &[f64], image: &[f64]) -> Result<f64> {
    if caption.len() != image.len() {
        return Err(Error::dims(caption.len(), image.len()));
    }
    let nc = caption.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ni = image.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nc == 0.0 || ni == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = caption.iter().zip(image).map(|(a, b)| a * b).sum::<f64>() / (nc * ni);
    Ok(2.5 * cos.clamp(0.0, 1.0))
}

/// Non-overlapping `tile×tile` crops in row-major order.
pub fn crops(img: &RgbImage, tile: usize) -> Vec<RgbImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::new();
    for y in (0..h.saturating_sub(tile - 1)).step_by(tile) {
        for x in (0..w.saturating_sub(tile - 1)).step_by(tile) {
            out.push(image::imageops::crop_imm(img, x as u32, y as u32, tile as u32, tile as u32).to_image());
        }
    }
    out
}

/// Copy of `img` with every pixel outside `region` set to black.
pub fn restrict(img: &RgbImage, region: &BitGrid) -> RgbImage {
    let mut out = img.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if !region.get(x as usize, y as usize) {
            *p = image::Rgb([0, 0, 0]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Image,
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderNames {
    pub fid: String,
    pub lpips: String,
    pub clip: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scope: Scope,
    pub pwmse: f64,
    pub lpips: f64,
    /// Between the crops of input and output; absent when the image is too
    /// small for two crops.
    pub fid: Option<f64>,
    /// Absent when either embedding is the zero vector.
    pub clipscore: Option<f64>,
    pub providers: ProviderNames,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "scope,pwmse,lpips,fid,clipscore,fid_provider,lpips_provider,clip_provider";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let scope = match self.scope {
            Scope::Image => "image",
            Scope::Background => "background",
        };
        format!(
            "{scope},{},{},{},{},{},{},{}",
            self.pwmse,
            self.lpips,
            opt(self.fid),
            opt(self.clipscore),
            self.providers.fid,
            self.providers.lpips,
            self.providers.clip
        )
    }
}

#[derive(Clone)]
pub struct MetricProviders {
    pub fid: Arc<dyn FeatureProvider>,
    pub lpips: Arc<dyn FeatureProvider>,
    pub clip: Arc<dyn JointEmbedder>,
}

impl Default for MetricProviders {
    fn default() -> Self {
        MetricProviders { fid: Arc::new(PixelStats), lpips: Arc::new(RawPyramid), clip: Arc::new(ColorWordEmbedder) }
    }
}

impl MetricProviders {
    fn names(&self) -> ProviderNames {
        ProviderNames {
            fid: format!("{}@{}", self.fid.name(), self.fid.version()),
            lpips: format!("{}@{}", self.lpips.name(), self.lpips.version()),
            clip: self.clip.name().to_string(),
        }
    }
}

/// Metrics restricted to `region`: PWMSE over its pixels; LPIPS, crop FID
/// and CLIPScore on copies of both images with everything outside the
/// region blacked out identically.
pub fn region_report(
    input: &RgbImage,
    output: &RgbImage,
    region: &BitGrid,
    target: Option<&TokenizedCaption>,
    providers: &MetricProviders,
    scope: Scope,
) -> Result<MetricReport> {
    if region.is_empty_region() {
        return Err(Error::EmptyMaskRegion);
    }
    let pw = pwmse(input, output, Some(region))?;
    let (a, b) = (restrict(input, region), restrict(output, region));
    let lp = lpips(&a, &b, providers.lpips.as_ref())?;
    let (ca, cb) = (crops(&a, FID_TILE), crops(&b, FID_TILE));
    let fd = if ca.len() >= 2 { Some(fid(&ca, &cb, providers.fid.as_ref())?) } else { None };
    let cs = match target {
        Some(c) => match clipscore(&providers.clip.embed_text(c)?, &providers.clip.embed_image(&b)?) {
            Ok(v) => Some(v),
            Err(Error::ZeroVector) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(MetricReport { scope, pwmse: pw, lpips: lp, fid: fd, clipscore: cs, providers: providers.names() })
}

pub fn image_report(
    input: &RgbImage,
    output: &RgbImage,
    target: Option<&TokenizedCaption>,
    providers: &MetricProviders,
) -> Result<MetricReport> {
    let full = BitGrid::full(input.width() as usize, input.height() as usize);
    region_report(input, output, &full, target, providers, Scope::Image)
}

/// Metrics over the pixels outside `refined`.
pub fn background_report(
    input: &RgbImage,
    output: &RgbImage,
    refined: &BitGrid,
    target: Option<&TokenizedCaption>,
    providers: &MetricProviders,
) -> Result<MetricReport> {
    if (refined.width, refined.height) != (input.width() as usize, input.height() as usize) {
        return Err(Error::dims(
            format!("{}x{}", input.width(), input.height()),
            format!("{}x{} refined mask", refined.width, refined.height),
        ));
    }
    region_report(input, output, &refined.complement(), target, providers, Scope::Background)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pwmse_hand_case() {
        let a = Grid::from_vec(1, 2, 2, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Grid::from_vec(1, 2, 2, vec![0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(pwmse_grid(&a, &b, None).unwrap(), 1.0);
        let only_equal = BitGrid { width: 2, height: 2, bits: vec![true, false, true, true] };
        assert_eq!(pwmse_grid(&a, &b, Some(&only_equal)).unwrap(), 0.0);
        assert!(matches!(pwmse_grid(&a, &b, Some(&BitGrid::new(2, 2))), Err(Error::EmptyMaskRegion)));
    }

    #[test]
    fn clipscore_cases() {
        assert_eq!(clipscore(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 2.5);
        assert_eq!(clipscore(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(clipscore(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(clipscore(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn fid_scalar_cases() {
        // 1-D: μ 0 vs 1, unit sample variance in both sets
        let a1 = vec![vec![-1.0 / 2f64.sqrt()], vec![1.0 / 2f64.sqrt()]];
        let b1 = vec![vec![1.0 - 1.0 / 2f64.sqrt()], vec![1.0 + 1.0 / 2f64.sqrt()]];
        assert!((fid_from_features(&a1, &b1).unwrap() - 1.0).abs() < 1e-9);
        assert!(fid_from_features(&a1, &a1).unwrap().abs() < 1e-12);
        // equal means, variances 4 and 1: 4 + 1 − 2·2
        let c4 = vec![vec![-2.0f64.sqrt()], vec![2.0f64.sqrt()]];
        assert!((fid_from_features(&c4, &a1).unwrap() - 1.0).abs() < 1e-9);
        assert!(fid_from_features(&a1[..1], &b1).is_err());
    }
}
