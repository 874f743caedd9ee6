//! Multi-view, multi-timestamp image sets.
//!
//! On disk a dataset is a directory holding
//! * `transforms.json`: an array of camera records, each with `time`,
//!   `file_path` (relative to the directory) and `split` (`train`/`test`),
//! * `images/`: the referenced 8-bit PNG targets,
//! * `points.ply`: a colored point cloud used for initialization,
//! * optionally `scene.ply`: the ground-truth scene, if known.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::{load_cameras, save_cameras, CameraModel, CameraRecord};
use crate::error::{Error, Result};
use crate::image_io::{self, Image};
use crate::ply;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub camera: CameraModel,
    pub time: f64,
    pub image: Image,
    pub split: Split,
    pub file_path: String,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.split == Split::Test)
    }

    /// Number of distinct timestamps.
    pub fn frame_count(&self) -> usize {
        self.frames.iter().map(|f| f.time.to_bits()).collect::<BTreeSet<_>>().len()
    }

    /// Radius of the training camera centers around their mean, enlarged
    /// by 10%; scales position learning rates and the clone/split rule.
    pub fn camera_extent(&self) -> f64 {
        let centers: Vec<Vector3<f64>> = self.train().map(|f| f.camera.center()).collect();
        if centers.is_empty() {
            return 1.0;
        }
        let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        if radius > 0.0 {
            1.1 * radius
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train().next().is_none() {
            return Err(Error::Dataset("no training frames".into()));
        }
        for f in &self.frames {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(Error::Dataset(format!("{}: time {} outside [0, 1]", f.file_path, f.time)));
            }
            if f.image.width != f.camera.width as usize || f.image.height != f.camera.height as usize {
                return Err(Error::Dataset(format!(
                    "{}: image is {}x{} but camera is {}x{}",
                    f.file_path, f.image.width, f.image.height, f.camera.width, f.camera.height
                )));
            }
        }
        if self.points.is_empty() {
            return Err(Error::Dataset("point cloud is empty".into()));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records = load_cameras(&dir.join("transforms.json"))?;
        let mut frames = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let file_path = r
                .file_path
                .clone()
                .ok_or_else(|| Error::Dataset(format!("camera record {i} has no file_path")))?;
            let split = match r.split.as_deref() {
                None | Some("train") => Split::Train,
                Some("test") => Split::Test,
                Some(other) => return Err(Error::Dataset(format!("record {i}: unknown split `{other}`"))),
            };
            frames.push(Frame {
                camera: r.camera()?,
                time: r.time,
                image: image_io::load_png(&dir.join(&file_path))?,
                split,
                file_path,
            });
        }
        let (points, colors) = ply::load_points(&dir.join("points.ply"))?;
        let ds = Self { frames, points, colors };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            image_io::save_png(&dir.join(&f.file_path), f.image.width, f.image.height, &f.image.data)?;
            let mut r = CameraRecord::from_camera(&f.camera, f.time);
            r.file_path = Some(f.file_path.clone());
            r.split = Some(match f.split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            });
            records.push(r);
        }
        save_cameras(&dir.join("transforms.json"), &records)?;
        ply::save_points(&dir.join("points.ply"), &self.points, &self.colors)?;
        Ok(())
    }
}
