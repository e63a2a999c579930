//! Polar coordinates over the Cartesian pixel raster: azimuth/radius maps,
//! sector masks, token angles and the radial strip window layout.
//!
//! Rows grow downwards but the y axis points up, so the pixel directly above
//! the center has azimuth π/2. The raster itself is never resampled.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Result, RstError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    pub height: usize,
    pub width: usize,
    pub center: (f64, f64),
    /// Per-pixel azimuth in [0, 2π), row-major.
    pub azimuth: Vec<f64>,
    /// Per-pixel Euclidean distance from the center, row-major.
    pub radius: Vec<f64>,
    /// Distance from the center to the farthest corner.
    pub r_max: f64,
}

pub fn build_polar_grid(height: usize, width: usize) -> PolarGrid {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let mut azimuth = Vec::with_capacity(height * width);
    let mut radius = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let dy = cy - row as f64;
            let dx = col as f64 - cx;
            if dy == 0.0 && dx == 0.0 {
                azimuth.push(0.0);
                radius.push(0.0);
                continue;
            }
            let mut phi = dy.atan2(dx);
            if phi < 0.0 {
                phi += TAU;
            }
            if phi >= TAU {
                phi -= TAU;
            }
            azimuth.push(phi + 0.0);
            radius.push(dx.hypot(dy));
        }
    }
    PolarGrid {
        height,
        width,
        center: (cy, cx),
        azimuth,
        radius,
        r_max: cx.hypot(cy),
    }
}

impl PolarGrid {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Half-open azimuth bin `floor(φ·n/2π)`, clamped to `n - 1`.
    pub fn azimuth_bin(&self, pixel: usize, n: usize) -> usize {
        ((self.azimuth[pixel] * n as f64 / TAU).floor() as usize).min(n - 1)
    }

    pub fn radial_bin(&self, pixel: usize, n: usize) -> usize {
        if self.r_max == 0.0 {
            return 0;
        }
        ((self.radius[pixel] * n as f64 / self.r_max).floor() as usize).min(n - 1)
    }
}

/// `count` binary masks; mask `i` covers azimuths `[2πi/count, 2π(i+1)/count)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorMaskSet {
    pub height: usize,
    pub width: usize,
    /// Sector index of every pixel, row-major.
    pub assignment: Vec<usize>,
    pub count: usize,
}

pub fn build_sector_masks(grid: &PolarGrid, count: usize) -> Result<SectorMaskSet> {
    if count == 0 {
        return Err(RstError::invalid("sector_masks", "sector count must be at least 1"));
    }
    Ok(SectorMaskSet {
        height: grid.height,
        width: grid.width,
        assignment: (0..grid.len()).map(|p| grid.azimuth_bin(p, count)).collect(),
        count,
    })
}

impl SectorMaskSet {
    /// Mask `i` as a {0,1} H×W plane.
    pub fn mask(&self, i: usize) -> Vec<u8> {
        self.assignment.iter().map(|&s| u8::from(s == i)).collect()
    }

    /// Mask `i` as a 1×H×W tensor for broadcasting against C×H×W features.
    pub fn mask_tensor<T: crate::Scalar>(&self, i: usize) -> Tensor<T> {
        let data = self
            .assignment
            .iter()
            .map(|&s| if s == i { T::one() } else { T::zero() })
            .collect();
        Tensor::new(&[1, self.height, self.width], data).expect("mask shape")
    }
}

/// `θ_i = θ_max(i − ½)/n_r` and `φ_i = 2π(i − ½)/n_φ` for 1-based `i`.
pub fn token_angles(n_r: usize, n_phi: usize, theta_max: f64) -> (Vec<f64>, Vec<f64>) {
    let theta = (1..=n_r).map(|i| theta_max * (i as f64 - 0.5) / n_r as f64).collect();
    let phi = (1..=n_phi).map(|i| TAU * (i as f64 - 0.5) / n_phi as f64).collect();
    (theta, phi)
}

/// Pairwise differences `Δ[i,j] = a_i − a_j` for both angle vectors.
pub fn relative_angles(theta: &[f64], phi: &[f64]) -> (Tensor<f64>, Tensor<f64>) {
    let diff = |v: &[f64]| {
        let n = v.len();
        Tensor::from_fn(&[n, n], |k| v[k / n] - v[k % n])
    };
    (diff(theta), diff(phi))
}

/// Radial strip windows: one window per azimuth bin, spanning every radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowLayout {
    pub height: usize,
    pub width: usize,
    pub n_phi: usize,
    pub n_r: usize,
    pub azimuth_bin: Vec<usize>,
    pub radial_bin: Vec<usize>,
    /// Position of each pixel inside its window.
    pub rank: Vec<usize>,
    /// Pixel indices per window (ascending azimuth bin), sorted by
    /// (radius, row-major index). Windows may be empty on tiny grids.
    pub windows: Vec<Vec<usize>>,
    #[serde(skip)]
    pub azimuth: Vec<f64>,
    #[serde(skip)]
    pub radius: Vec<f64>,
    #[serde(skip)]
    pub r_max: f64,
}

pub fn build_window_layout(grid: &PolarGrid, n_phi: usize, n_r: usize) -> Result<WindowLayout> {
    if n_phi == 0 || n_r == 0 {
        return Err(RstError::invalid("window_layout", "bin counts must be at least 1"));
    }
    let n = grid.len();
    let azimuth_bin: Vec<usize> = (0..n).map(|p| grid.azimuth_bin(p, n_phi)).collect();
    let radial_bin: Vec<usize> = (0..n).map(|p| grid.radial_bin(p, n_r)).collect();
    let mut windows = vec![Vec::new(); n_phi];
    for p in 0..n {
        windows[azimuth_bin[p]].push(p);
    }
    for win in &mut windows {
        win.sort_by(|&a, &b| grid.radius[a].total_cmp(&grid.radius[b]).then(a.cmp(&b)));
    }
    let mut rank = vec![0; n];
    for win in &windows {
        for (r, &p) in win.iter().enumerate() {
            rank[p] = r;
        }
    }
    Ok(WindowLayout {
        height: grid.height,
        width: grid.width,
        n_phi,
        n_r,
        azimuth_bin,
        radial_bin,
        rank,
        windows,
        azimuth: grid.azimuth.clone(),
        radius: grid.radius.clone(),
        r_max: grid.r_max,
    })
}

impl WindowLayout {
    pub fn for_size(height: usize, width: usize, n_phi: usize, n_r: usize) -> Result<Self> {
        build_window_layout(&build_polar_grid(height, width), n_phi, n_r)
    }

    /// Concatenation of all windows: the partition permutation.
    pub fn order(&self) -> Vec<usize> {
        self.windows.iter().flatten().copied().collect()
    }

    pub fn window_sizes(&self) -> Vec<usize> {
        self.windows.iter().map(Vec::len).collect()
    }
}
