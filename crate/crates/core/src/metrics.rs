//! Image quality metrics for RGB images in [0, 1].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_cameras, CAMERAS_FILE};
use crate::error::{Error, Result};
use crate::image::read_png;
use crate::optim::ssim;

/// PSNR is reported as this value for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("image sizes {} and {} differ", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Mean SSIM over pixels and the three channels.
pub fn ssim_rgb(a: &[f64], b: &[f64], width: u32, height: u32) -> Result<f64> {
    ssim(a, b, width, height, 3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_frame: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Image names of a directory: the frames of its `cameras.json` when there
/// is one, else every `.png` in name order.
fn frame_names(dir: &Path) -> Result<Vec<String>> {
    let cams = dir.join(CAMERAS_FILE);
    if cams.exists() {
        return Ok(read_cameras(&cams)?.frames.into_iter().map(|f| f.image).collect());
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

/// Scores every ground-truth frame against the image of the same name in
/// `pred`.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<EvalReport> {
    let names = frame_names(gt)?;
    if names.is_empty() {
        return Err(Error::invalid(format!("no images in {}", gt.display())));
    }
    let mut per_frame = Vec::with_capacity(names.len());
    for name in names {
        let g = read_png(&gt.join(&name))?;
        let p = read_png(&pred.join(&name))?;
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::invalid(format!(
                "{name}: prediction is {}x{}, ground truth {}x{}",
                p.width, p.height, g.width, g.height
            )));
        }
        per_frame.push(FrameScore {
            psnr: psnr(&p.data, &g.data)?,
            ssim: ssim_rgb(&p.data, &g.data, g.width, g.height)?,
            name,
        });
    }
    let n = per_frame.len() as f64;
    Ok(EvalReport {
        mean_psnr: per_frame.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_ssim: per_frame.iter().map(|f| f.ssim).sum::<f64>() / n,
        per_frame,
    })
}
