//! Posed image collections described by a `cameras.json` file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::read_png;
use crate::octree::SceneBounds;
use crate::optim::TrainView;

pub const CAMERAS_FILE: &str = "cameras.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major camera-to-world matrix.
    pub c2w: [f64; 16],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    pub frames: Vec<FrameRecord>,
    /// Known scene region, when the capture has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<SceneBounds>,
}

impl FrameRecord {
    pub fn from_camera(image: impl Into<String>, cam: &Camera) -> Self {
        let m = cam.c2w();
        let mut c2w = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                c2w[4 * r + c] = m[(r, c)];
            }
        }
        FrameRecord {
            image: image.into(),
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            c2w,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let m = Matrix4::from_row_slice(&self.c2w);
        Camera::from_c2w(self.width, self.height, self.fx, self.fy, self.cx, self.cy, &m)
            .map_err(|e| Error::Format(format!("frame {}: {e}", self.image)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Image path relative to the dataset root.
    pub image: String,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub frames: Vec<Frame>,
    pub bounds: Option<SceneBounds>,
}

pub fn read_cameras(path: &Path) -> Result<CamerasFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Canonical formatting: pretty-printed JSON plus a trailing newline.
pub fn write_cameras(path: &Path, file: &CamerasFile) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `dir/cameras.json`. Images are only opened by [`Dataset::load_view`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let file = read_cameras(&dir.join(CAMERAS_FILE))?;
    let frames = file
        .frames
        .iter()
        .map(|f| {
            Ok(Frame {
                image: f.image.clone(),
                camera: f.camera()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        frames,
        bounds: file.bounds,
    })
}

impl Dataset {
    pub fn cameras(&self) -> Vec<Camera> {
        self.frames.iter().map(|f| f.camera.clone()).collect()
    }

    pub fn cameras_file(&self) -> CamerasFile {
        CamerasFile {
            frames: self.frames.iter().map(|f| FrameRecord::from_camera(&f.image, &f.camera)).collect(),
            bounds: self.bounds,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_cameras(&dir.join(CAMERAS_FILE), &self.cameras_file())
    }

    pub fn load_view(&self, i: usize) -> Result<TrainView> {
        let f = &self.frames[i];
        let path = self.root.join(&f.image);
        let img = read_png(&path)?;
        if (img.width, img.height) != (f.camera.width, f.camera.height) {
            return Err(Error::Format(format!(
                "{}: image is {}x{}, camera says {}x{}",
                path.display(),
                img.width,
                img.height,
                f.camera.width,
                f.camera.height
            )));
        }
        Ok(TrainView {
            name: f.image.clone(),
            camera: f.camera.clone(),
            image: img.data,
        })
    }

    pub fn load_views(&self) -> Result<Vec<TrainView>> {
        (0..self.frames.len()).map(|i| self.load_view(i)).collect()
    }
}
