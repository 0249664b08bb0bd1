//! Procedural planar scenes.
//!
//! A descriptor lists rectangles in illuminator-view pixel coordinates, one
//! per line: `x0 y0 x1 y1 z reflectance [z_right]`. Depths are meters; with
//! `z_right` the rectangle is a plane slanted about the vertical axis, with
//! depth `z` at `x0` and `z_right` at `x1` (inverse depth, i.e. disparity, is
//! affine across a plane). Lines starting with `#` are comments.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::scalar::Real;
use crate::scenesim::{CameraRig, SceneSample};

/// Depth range over which the far-field model holds.
pub const VALID_DEPTH_RANGE: (f64, f64) = (0.4, 3.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub z: f64,
    pub reflectance: f64,
    pub z_right: Option<f64>,
}

impl Rect {
    pub fn fronto(x0: f64, y0: f64, x1: f64, y1: f64, z: f64, reflectance: f64) -> Self {
        Self { x0, y0, x1, y1, z, reflectance, z_right: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneDescriptor {
    pub rects: Vec<Rect>,
}

impl SceneDescriptor {
    /// A single plane filling the frame of every view.
    pub fn full_frame_plane(z: f64, reflectance: f64, height: usize, width: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            rects: vec![Rect::fronto(-2.0 * w, 0.0, 3.0 * w, h, z, reflectance)],
        }
    }

    pub fn push(mut self, rect: Rect) -> Self {
        self.rects.push(rect);
        self
    }

    /// Depths outside the far-field validity range.
    pub fn depth_warnings(&self) -> Vec<String> {
        let (lo, hi) = VALID_DEPTH_RANGE;
        self.rects
            .iter()
            .enumerate()
            .flat_map(|(i, r)| std::iter::once(r.z).chain(r.z_right).map(move |z| (i, z)))
            .filter(|&(_, z)| !(lo..=hi).contains(&z))
            .map(|(i, z)| format!("rectangle {i}: depth {z} m outside [{lo}, {hi}] m"))
            .collect()
    }
}

impl FromStr for SceneDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut rects = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidScene(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != 6 && vals.len() != 7 {
                return Err(Error::InvalidScene(format!(
                    "line {}: expected `x0 y0 x1 y1 z reflectance [z_right]`, got {} fields",
                    lineno + 1,
                    vals.len()
                )));
            }
            rects.push(Rect {
                x0: vals[0],
                y0: vals[1],
                x1: vals[2],
                y1: vals[3],
                z: vals[4],
                reflectance: vals[5],
                z_right: vals.get(6).copied(),
            });
        }
        Ok(Self { rects })
    }
}

impl fmt::Display for SceneDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rects {
            write!(f, "{} {} {} {} {} {}", r.x0, r.y0, r.x1, r.y1, r.z, r.reflectance)?;
            if let Some(z) = r.z_right {
                write!(f, " {z}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Rectangle with its disparity expressed as an affine function of the
/// illuminator-view column.
#[derive(Debug, Clone, Copy)]
struct Surface {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    d0: f64,
    slope: f64,
    reflectance: f64,
}

impl Surface {
    fn disparity(&self, x_illum: f64) -> f64 {
        self.d0 + self.slope * (x_illum - self.x0)
    }

    fn covers(&self, x_illum: f64, y: f64) -> bool {
        x_illum >= self.x0 && x_illum < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Illuminator-view column of the surface point imaged at column `x` of a
    /// view offset by `offset · d` from the illuminator.
    fn back_project(&self, x: f64, offset: f64) -> Option<f64> {
        let denom = 1.0 + offset * self.slope;
        if denom <= 1e-9 {
            return None;
        }
        Some((x - offset * self.d0 + offset * self.slope * self.x0) / denom)
    }
}

/// Ray-casts a [`SceneDescriptor`] into any view on the baseline.
#[derive(Debug, Clone)]
pub struct ToyRenderer {
    surfaces: Vec<Surface>,
    narrow_fraction: f64,
}

/// What a pixel sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface: usize,
    pub x_illum: f64,
    pub disparity: f64,
    pub reflectance: f64,
}

impl ToyRenderer {
    pub fn new<T: Real>(desc: &SceneDescriptor, rig: &CameraRig<T>) -> Result<Self> {
        if desc.rects.is_empty() {
            return Err(Error::InvalidScene("scene descriptor has no rectangles".into()));
        }
        let f = rig.focal_f.as_f64();
        let b = rig.baseline_wide.as_f64();
        let p = rig.pixel_p.as_f64();
        let disp = |z: f64| f * b / (p * z);
        let mut surfaces = Vec::with_capacity(desc.rects.len());
        for (i, r) in desc.rects.iter().enumerate() {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return Err(Error::InvalidScene(format!("rectangle {i} is empty")));
            }
            if !(r.z > 0.0) || r.z_right.is_some_and(|z| !(z > 0.0)) {
                return Err(Error::InvalidScene(format!("rectangle {i} has non-positive depth")));
            }
            if !(0.0..=1.0).contains(&r.reflectance) {
                return Err(Error::InvalidScene(format!("rectangle {i} reflectance outside [0, 1]")));
            }
            let d0 = disp(r.z);
            let d1 = disp(r.z_right.unwrap_or(r.z));
            surfaces.push(Surface {
                x0: r.x0,
                x1: r.x1,
                y0: r.y0,
                y1: r.y1,
                d0,
                slope: (d1 - d0) / (r.x1 - r.x0),
                reflectance: r.reflectance,
            });
        }
        for w in desc.depth_warnings() {
            log::warn!("{w}");
        }
        Ok(Self {
            surfaces,
            narrow_fraction: rig.narrow_fraction().as_f64(),
        })
    }

    /// Column offset factor of the left (`+r`), right (`−(1−r)`) or
    /// illuminator (`0`) view.
    pub fn left_offset(&self) -> f64 {
        self.narrow_fraction
    }
    pub fn right_offset(&self) -> f64 {
        -(1.0 - self.narrow_fraction)
    }

    /// Nearest surface along the ray through pixel `(x, y)` of the view with
    /// the given offset.
    pub fn cast(&self, x: f64, y: f64, offset: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let Some(xi) = s.back_project(x, offset) else { continue };
            if !s.covers(xi, y) {
                continue;
            }
            let d = s.disparity(xi);
            if best.is_none_or(|b| d > b.disparity) {
                best = Some(Hit { surface: i, x_illum: xi, disparity: d, reflectance: s.reflectance });
            }
        }
        best
    }

    /// Whether the point `hit` (seen from some view) is directly visible from
    /// the view with `offset`.
    pub fn visible_from(&self, hit: &Hit, y: f64, offset: f64) -> bool {
        let x = hit.x_illum + offset * hit.disparity;
        match self.cast(x, y, offset) {
            Some(other) => other.surface == hit.surface || other.disparity <= hit.disparity + 1e-9,
            None => false,
        }
    }

    /// Whether the illuminator lights the point `hit`.
    pub fn lit(&self, hit: &Hit, y: f64) -> bool {
        !self
            .surfaces
            .iter()
            .enumerate()
            .any(|(i, s)| i != hit.surface && s.covers(hit.x_illum, y) && s.disparity(hit.x_illum) > hit.disparity + 1e-9)
    }
}

/// Full-frame background plane at 1.5–2.5 m with a fronto-parallel box at
/// 0.6–1.0 m in front of it. Positions, depths and reflectances (in
/// `[0.5, 1]`) are drawn from `seed`.
pub fn random_two_plane(height: usize, width: usize, seed: u64) -> SceneDescriptor {
    let mut rng = rng_for(seed);
    let (w, h) = (width as f64, height as f64);
    let bg = SceneDescriptor::full_frame_plane(rng.random_range(1.5..2.5), rng.random_range(0.5..1.0), height, width);
    let x0 = (rng.random_range(0.2..0.45) * w).round();
    let x1 = x0 + (rng.random_range(0.25..0.4) * w).round();
    let y0 = (rng.random_range(0.05..0.25) * h).round();
    let y1 = (rng.random_range(0.75..0.95) * h).round();
    bg.push(Rect::fronto(x0, y0, x1, y1, rng.random_range(0.6..1.0), rng.random_range(0.5..1.0)))
}

/// Renders disparity, reflectance and illumination visibility for both
/// cameras. Pixels that see no surface get zero disparity and reflectance and
/// are unlit.
pub fn generate_toy_scene<T: Real>(
    desc: &SceneDescriptor,
    rig: &CameraRig<T>,
    height: usize,
    width: usize,
) -> Result<SceneSample<T>> {
    let renderer = ToyRenderer::new(desc, rig)?;
    let render = |offset: f64| {
        let mut disp = Array2::zeros((height, width));
        let mut refl = Array2::zeros((height, width));
        let mut occ = Array2::from_elem((height, width), false);
        for y in 0..height {
            for x in 0..width {
                if let Some(hit) = renderer.cast(x as f64, y as f64, offset) {
                    disp[[y, x]] = T::of(hit.disparity);
                    refl[[y, x]] = T::of(hit.reflectance);
                    occ[[y, x]] = renderer.lit(&hit, y as f64);
                }
            }
        }
        (disp, refl, occ)
    };
    let (disp_l, refl_l, occ_l) = render(renderer.left_offset());
    let (disp_r, refl_r, occ_r) = render(renderer.right_offset());
    let sample = SceneSample { disp_l, disp_r, refl_l, refl_r, occ_l, occ_r };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let text = "# two planes\n0 0 64 64 2.0 0.5\n20 10 40 50 1.0 0.9 1.2\n";
        let d: SceneDescriptor = text.parse().unwrap();
        assert_eq!(d.rects.len(), 2);
        assert_eq!(d.rects[1].z_right, Some(1.2));
        let again: SceneDescriptor = d.to_string().parse().unwrap();
        assert_eq!(again, d);
        assert!("1 2 3".parse::<SceneDescriptor>().is_err());
    }

    #[test]
    fn empty_descriptor_is_error() {
        let rig = CameraRig::<f64>::prototype();
        assert!(generate_toy_scene::<f64>(&SceneDescriptor::default(), &rig, 8, 8).is_err());
    }

    #[test]
    fn full_frame_plane_disparity() {
        let rig = CameraRig::<f64>::prototype();
        let desc = SceneDescriptor::full_frame_plane(1.0, 0.8, 4, 128);
        let s = generate_toy_scene::<f64>(&desc, &rig, 4, 128).unwrap();
        let expect = 6e-3 * 55e-3 / (5.3e-6 * 1.0);
        assert!(s.disp_l.iter().all(|&d| (d - expect).abs() < 1e-9));
        assert!(s.disp_r.iter().all(|&d| (d - expect).abs() < 1e-9));
        assert!(s.occ_l.iter().all(|&o| o));
    }

    #[test]
    fn two_plane_scenes_have_occlusions() {
        let rig = CameraRig::<f64>::centered(6e-3, 5.3e-6, 8e-3);
        for seed in 0..5 {
            let d = random_two_plane(32, 32, seed);
            assert_eq!(d, random_two_plane(32, 32, seed));
            assert!(d.depth_warnings().is_empty());
            let s = generate_toy_scene::<f64>(&d, &rig, 32, 32).unwrap();
            assert!(s.valid_mask(1.0).iter().any(|&v| !v));
            assert!(s.disp_l.iter().all(|&v| v > 3.0 && v < 16.0));
        }
    }

    #[test]
    fn out_of_range_depth_warns() {
        let d = SceneDescriptor::full_frame_plane(5.0, 0.5, 4, 4);
        assert_eq!(d.depth_warnings().len(), 1);
    }

    #[test]
    fn slanted_plane_is_left_right_consistent() {
        let rig = CameraRig::<f64>::centered(6e-3, 5.3e-6, 4e-3);
        let desc = SceneDescriptor {
            rects: vec![Rect { x0: -40.0, y0: 0.0, x1: 100.0, y1: 4.0, z: 0.8, reflectance: 0.5, z_right: Some(1.6) }],
        };
        let s = generate_toy_scene::<f64>(&desc, &rig, 4, 64).unwrap();
        for x in 10..64 {
            let d = s.disp_l[[1, x]];
            let xr = x as f64 - d;
            let xr0 = xr.floor() as usize;
            let t = xr - xr0 as f64;
            let dr = (1.0 - t) * s.disp_r[[1, xr0]] + t * s.disp_r[[1, xr0 + 1]];
            assert!((dr - d).abs() < 0.05, "x={x}: {d} vs {dr}");
        }
    }
}
