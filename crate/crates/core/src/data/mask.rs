use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MASKS_FILE: &str = "masks.json";
const MASKS_FORMAT_VERSION: u32 = 1;

/// Region of interest for one camera, in pixel coordinates of the frame it
/// is applied to (`x` right, `y` down, pixel `(i, j)` centred at `(j+0.5, i+0.5)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolygon {
    pub camera_id: String,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct MasksFile {
    format_version: u32,
    masks: Vec<MaskPolygon>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MasksFileAny {
    Versioned(MasksFile),
    Bare(Vec<MaskPolygon>),
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

impl MaskPolygon {
    pub fn new(camera_id: impl Into<String>, vertices: Vec<[f64; 2]>) -> Self {
        MaskPolygon { camera_id: camera_id.into(), vertices }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(camera_id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(camera_id, vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            .abs()
            / 2.0
    }

    /// Checks vertex count, finiteness, positive area and simplicity.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "mask for camera {} has {n} vertices, need at least 3",
                self.camera_id
            )));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("mask for camera {} has non-finite vertices", self.camera_id)));
        }
        if self.area() <= 0.0 {
            return Err(Error::invalid(format!("mask for camera {} has zero area", self.camera_id)));
        }
        for i in 0..n {
            for j in i + 1..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return Err(Error::invalid(format!(
                        "mask for camera {} self-intersects (edges {i} and {j})",
                        self.camera_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        for &[x, y] in &self.vertices {
            if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                return Err(Error::invalid(format!(
                    "mask vertex ({x}, {y}) of camera {} outside {width}x{height} frame",
                    self.camera_id
                )));
            }
        }
        Ok(())
    }

    /// The same region in a frame resampled by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        MaskPolygon {
            camera_id: self.camera_id.clone(),
            vertices: self.vertices.iter().map(|&[x, y]| [x * sx, y * sy]).collect(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_polygon(&self.vertices, x, y)
    }
}

/// Even-odd rule by horizontal ray casting.
pub fn point_in_polygon(vertices: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = vertices[i];
        let [xj, yj] = vertices[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Zeroes every pixel whose centre lies outside the polygon, in all channels.
pub fn apply_mask(image: &Tensor, polygon: &MaskPolygon) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        other => return Err(Error::shape("mask input", &[0, 0, 0], other)),
    };
    polygon.validate_bounds(h, w)?;
    let mut out = image.clone();
    let plane = h * w;
    let data = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            if !polygon.contains(j as f64 + 0.5, i as f64 + 0.5) {
                for ch in 0..c {
                    data[ch * plane + i * w + j] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

pub fn read_masks(path: &Path) -> Result<Vec<MaskPolygon>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let masks = match serde_json::from_str::<MasksFileAny>(&text).map_err(|e| Error::format(path, e.to_string()))? {
        MasksFileAny::Versioned(f) => {
            if f.format_version != MASKS_FORMAT_VERSION {
                return Err(Error::format(path, format!("unsupported format_version {}", f.format_version)));
            }
            f.masks
        }
        MasksFileAny::Bare(masks) => masks,
    };
    for m in &masks {
        m.validate().map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(masks)
}

pub fn write_masks(path: &Path, masks: &[MaskPolygon]) -> Result<()> {
    let file = MasksFile { format_version: MASKS_FORMAT_VERSION, masks: masks.to_vec() };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[1, h, w], |i| 0.1 + (i % 7) as f64 * 0.1)
    }

    #[test]
    fn full_frame_is_identity() {
        let img = ramp(6, 8);
        let poly = MaskPolygon::rectangle("c", 0.0, 0.0, 8.0, 6.0);
        assert_eq!(apply_mask(&img, &poly).unwrap(), img);
    }

    #[test]
    fn half_frame_zeroes_exactly_half() {
        let img = ramp(6, 8);
        let poly = MaskPolygon::rectangle("c", 0.0, 0.0, 4.0, 6.0);
        let out = apply_mask(&img, &poly).unwrap();
        let zeroed = out.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeroed, 6 * 8 / 2);
        for i in 0..6 {
            for j in 0..8 {
                let v = out.get(&[0, i, j]);
                if j < 4 {
                    assert_eq!(v, img.get(&[0, i, j]));
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn degenerate_and_out_of_bounds_rejected() {
        let flat = MaskPolygon::new("c", vec![[0.0, 0.0], [2.0, 2.0], [4.0, 4.0]]);
        assert!(flat.validate().is_err());
        let two = MaskPolygon::new("c", vec![[0.0, 0.0], [2.0, 2.0]]);
        assert!(two.validate().is_err());
        let big = MaskPolygon::rectangle("c", 0.0, 0.0, 9.0, 6.0);
        assert!(apply_mask(&ramp(6, 8), &big).is_err());
    }

    #[test]
    fn bowtie_rejected() {
        let bowtie = MaskPolygon::new("c", vec![[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 4.0]]);
        assert!(bowtie.validate().is_err());
    }

    #[test]
    fn concave_polygon_even_odd() {
        // U shape: notch between x in (1,3) above y = 2
        let u = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 2.0], [3.0, 2.0], [3.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]];
        assert!(point_in_polygon(&u, 0.5, 0.5));
        assert!(!point_in_polygon(&u, 2.0, 1.0));
        assert!(point_in_polygon(&u, 2.0, 3.0));
    }

    #[test]
    fn masks_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MASKS_FILE);
        let masks = vec![MaskPolygon::new("1001", vec![[0.0, 0.0], [10.0, 0.0], [5.0, 8.0]])];
        write_masks(&path, &masks).unwrap();
        assert_eq!(read_masks(&path).unwrap(), masks);
        std::fs::write(&path, r#"[{"camera_id":"7","vertices":[[0,0],[1,0],[1,1]]}]"#).unwrap();
        assert_eq!(read_masks(&path).unwrap()[0].camera_id, "7");
    }
}
