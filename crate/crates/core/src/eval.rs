//! Distortion and rate metrics, and dataset evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{read_ppm, RgbImage};
use crate::models::NetworkFamily;
use crate::pipeline::{decode_image, encode_image, CodecConfig};

/// PSNR in dB for an MSE measured on the 0..255 scale. Zero MSE gives +inf.
pub fn psnr_from_mse(mse: f64) -> Result<f64> {
    if mse.is_nan() || mse < 0.0 {
        return Err(Error::InvalidArgument(format!("MSE must be non-negative, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * 255f64.log10() - 10.0 * mse.log10())
}

/// PSNR of a float reconstruction of [0, 1]-scaled values, on the 0..255 scale.
pub fn block_psnr(original: &[f32], recon: &[f32]) -> f64 {
    let mse = original
        .iter()
        .zip(recon)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) * 255.0;
            d * d
        })
        .sum::<f64>()
        / original.len().max(1) as f64;
    psnr_from_mse(mse).unwrap_or(f64::NAN)
}

/// Sum of squared 8-bit differences and the number of samples compared.
pub fn squared_error(a: &RgbImage, b: &RgbImage) -> Result<(f64, usize)> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Image(format!(
            "size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((sse, a.data.len()))
}

pub fn image_mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let (sse, n) = squared_error(a, b)?;
    Ok(sse / n.max(1) as f64)
}

/// MSE pooled over every sample of every image pair.
pub fn pooled_mse(pairs: &[(&RgbImage, &RgbImage)]) -> Result<f64> {
    let (mut sse, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        let (s, k) = squared_error(a, b)?;
        sse += s;
        n += k;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no samples to pool".into()));
    }
    Ok(sse / n as f64)
}

pub fn bits_per_pixel(bits: usize, pixels: usize) -> Result<f64> {
    if pixels == 0 {
        return Err(Error::InvalidArgument("bits per pixel of an empty image".into()));
    }
    Ok(bits as f64 / pixels as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub bytes: usize,
    pub code_bits: usize,
    pub mse: f64,
    pub psnr: f64,
    pub histogram: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    /// Files that could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
    pub mse: f64,
    pub psnr: f64,
    /// Container bits over all pixels.
    pub bpp: f64,
    /// Image-code bits only.
    pub code_bpp: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>6} {:>6} {:>9} {:>8} {:>8} {:>14}",
            "image", "width", "height", "bytes", "bpp", "psnr", "net0/net1/net2"
        );
        for r in &self.images {
            let bpp = r.bytes as f64 * 8.0 / (r.width * r.height) as f64;
            let _ = writeln!(
                s,
                "{:<24} {:>6} {:>6} {:>9} {:>8.4} {:>8.3} {:>14}",
                r.name,
                r.width,
                r.height,
                r.bytes,
                bpp,
                r.psnr,
                format!("{}/{}/{}", r.histogram[0], r.histogram[1], r.histogram[2])
            );
        }
        for (name, why) in &self.skipped {
            let _ = writeln!(s, "skipped {name}: {why}");
        }
        let _ = writeln!(
            s,
            "pooled: psnr {:.3} dB, mse {:.4}, bpp {:.4} (code only {:.4})",
            self.psnr, self.mse, self.bpp, self.code_bpp
        );
        s
    }

    pub fn to_kv(&self) -> String {
        format!(
            "images={}\nskipped={}\nmse={:.6}\npsnr={:.6}\nbpp={:.6}\ncode_bpp={:.6}\n",
            self.images.len(),
            self.skipped.len(),
            self.mse,
            self.psnr,
            self.bpp,
            self.code_bpp
        )
    }

    /// Writes `eval.txt` and `eval.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("eval.txt"), self.to_text())?;
        std::fs::write(dir.join("eval.kv"), self.to_kv())?;
        Ok(())
    }
}

/// Codes and decodes every image and pools the metrics.
pub fn evaluate_images(images: &[(String, RgbImage)], family: &NetworkFamily, cfg: &CodecConfig) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    let (mut sse, mut samples, mut bits, mut code_bits, mut pixels) = (0.0, 0usize, 0usize, 0usize, 0usize);
    for (name, img) in images {
        let out = encode_image(img, family, cfg)?;
        let dec = decode_image(&out.bytes, family, cfg)?;
        let (s, n) = squared_error(img, &dec)?;
        sse += s;
        samples += n;
        bits += out.bytes.len() * 8;
        code_bits += out.report.code_bits;
        pixels += img.pixel_count();
        let mse = s / n as f64;
        report.images.push(ImageResult {
            name: name.clone(),
            width: img.width,
            height: img.height,
            bytes: out.bytes.len(),
            code_bits: out.report.code_bits,
            mse,
            psnr: psnr_from_mse(mse)?,
            histogram: out.report.histogram,
        });
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("no images to evaluate".into()));
    }
    report.mse = sse / samples as f64;
    report.psnr = psnr_from_mse(report.mse)?;
    report.bpp = bits_per_pixel(bits, pixels)?;
    report.code_bpp = bits_per_pixel(code_bits, pixels)?;
    Ok(report)
}

/// Sorted `.ppm` files of a directory.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Evaluates every `.ppm` in `dir`. Unreadable files are skipped with a warning.
pub fn evaluate_dataset(dir: &Path, family: &NetworkFamily, cfg: &CodecConfig) -> Result<EvalReport> {
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for path in list_images(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match read_ppm(&path) {
            Ok(img) => images.push((name, img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped.push((name, e.to_string()));
            }
        }
    }
    let mut report = evaluate_images(&images, family, cfg)?;
    report.skipped = skipped;
    Ok(report)
}
