//! Dataset layout, density labeling, preprocessing, masking and augmentation.

mod augment;
mod dataset;
mod image;
mod mask;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::augment::{augment, flip_horizontal, translate, AugmentConfig};
pub use self::dataset::{
    image_path, image_stem, load_dataset, read_manifest, split, write_manifest, LoadOptions, LoadReport, ManifestRow,
    SplitSpec, MANIFEST_FILE, MANIFEST_HEADER,
};
pub use self::image::{bilinear_resize, decode_image, preprocess, to_grayscale};
pub use self::mask::{apply_mask, point_in_polygon, read_masks, write_masks, MaskPolygon, MASKS_FILE};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered traffic density label of a camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityClass {
    Empty,
    Low,
    Medium,
    High,
    TrafficJam,
}

impl DensityClass {
    pub const ALL: [DensityClass; 5] =
        [DensityClass::Empty, DensityClass::Low, DensityClass::Medium, DensityClass::High, DensityClass::TrafficJam];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityClass::Empty => "empty",
            DensityClass::Low => "low",
            DensityClass::Medium => "medium",
            DensityClass::High => "high",
            DensityClass::TrafficJam => "traffic_jam",
        }
    }

    /// Integer car counts that map to this class, with the open top class
    /// capped at `jam_cap`.
    pub fn count_range(self, jam_cap: u32) -> std::ops::RangeInclusive<u32> {
        match self {
            DensityClass::Empty => 0..=8,
            DensityClass::Low => 9..=20,
            DensityClass::Medium => 21..=49,
            DensityClass::High => 50..=100,
            DensityClass::TrafficJam => 101..=jam_cap.max(101),
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String =
            s.trim().chars().filter(|c| !matches!(c, '_' | ' ' | '-')).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "empty" => Ok(DensityClass::Empty),
            "low" => Ok(DensityClass::Low),
            "medium" => Ok(DensityClass::Medium),
            "high" => Ok(DensityClass::High),
            "trafficjam" | "jam" => Ok(DensityClass::TrafficJam),
            _ => Err(Error::invalid(format!("unknown density class {s:?}"))),
        }
    }
}

/// Maps a (possibly fractional) car count to its density class.
///
/// `[0, 8]` Empty, `(8, 20]` Low, `(20, 50)` Medium, `[50, 100]` High,
/// above 100 TrafficJam. Motorcycles count as half a car.
pub fn classify_count(car_count: f64) -> Result<DensityClass> {
    if !car_count.is_finite() || car_count < 0.0 {
        return Err(Error::invalid(format!("car count must be a non-negative number, got {car_count}")));
    }
    Ok(if car_count <= 8.0 {
        DensityClass::Empty
    } else if car_count <= 20.0 {
        DensityClass::Low
    } else if car_count < 50.0 {
        DensityClass::Medium
    } else if car_count <= 100.0 {
        DensityClass::High
    } else {
        DensityClass::TrafficJam
    })
}

/// A camera frame with its human label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image_id: String,
    pub camera_id: String,
    pub capture_time: String,
    pub image: Tensor,
    pub label: DensityClass,
    pub car_count: Option<f64>,
}

impl LabeledExample {
    pub fn to_example(&self) -> Example {
        Example { image: self.image.clone(), label: self.label.index() }
    }
}

/// Minimal training pair: an image tensor and a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Tensor,
    pub label: usize,
}

/// Examples per class index.
pub fn class_histogram(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; classes];
    for l in labels {
        counts[l] += 1;
    }
    counts
}
