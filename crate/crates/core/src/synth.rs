//! Procedural paired scenes: aerial RGB, labels and a 17-channel satellite
//! raster whose bands are class signatures of the underlying map.
//!
//! Water is painted with the background texture in the aerial image, so it
//! can only be told apart through the satellite bands. Water regions are
//! unions of whole satellite cells; every other shape sits on a `grid`-pixel
//! lattice.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bands::{self, BandSelection};
use crate::error::{config_err, Result};
use crate::raster::{preprocess_parent, GeoTransform, Raster, RasterData, TilePair};
use crate::rng::SeededRng;

pub const BACKGROUND: u8 = 0;
pub const BUILDING: u8 = 1;
pub const WOODLAND: u8 = 2;
pub const WATER: u8 = 3;
pub const ROAD: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub tile_size: usize,
    pub sat_size: usize,
    /// Metres per aerial pixel.
    pub aerial_pixel: f64,
    /// Metres per satellite pixel.
    pub sat_pixel: f64,
    /// Parents are `tiles_per_side x tiles_per_side` tiles.
    pub tiles_per_side: usize,
    /// Lattice every building, woodland and road edge is snapped to.
    pub grid: usize,
    pub road_width: usize,
    pub buildings: (usize, usize),
    pub woodland_blobs: (usize, usize),
    pub water_blobs: (usize, usize),
    /// When false the satellite bands are label-independent noise.
    pub satellite_signal: bool,
    /// Aerial noise standard deviation in 8-bit units.
    pub aerial_noise: f64,
    /// Satellite reflectance noise standard deviation.
    pub sat_noise: f64,
    pub crs: u32,
}

impl SynthSpec {
    /// 64 px tiles at 0.625 m, 4 px satellite crops at 10 m.
    pub fn toy() -> Self {
        Self {
            tile_size: 64,
            sat_size: 4,
            aerial_pixel: 0.625,
            sat_pixel: 10.0,
            tiles_per_side: 2,
            grid: 4,
            road_width: 4,
            buildings: (3, 6),
            woodland_blobs: (1, 3),
            water_blobs: (1, 2),
            satellite_signal: true,
            aerial_noise: 10.0,
            sat_noise: 0.01,
            crs: 2180,
        }
    }

    /// 512 px tiles at 0.5 m, 26 px satellite crops at 10 m.
    pub fn paper() -> Self {
        Self {
            tile_size: 512,
            sat_size: 26,
            aerial_pixel: 0.5,
            sat_pixel: 10.0,
            tiles_per_side: 2,
            grid: 4,
            road_width: 8,
            buildings: (20, 40),
            woodland_blobs: (3, 6),
            water_blobs: (2, 4),
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.sat_size == 0 || self.tiles_per_side == 0 || self.grid == 0 {
            return Err(config_err!("tile size, satellite size, tiles per side and grid must be positive"));
        }
        if self.tile_size % self.grid != 0 {
            return Err(config_err!("tile size {} is not a multiple of the grid {}", self.tile_size, self.grid));
        }
        if self.road_width == 0 || self.road_width > self.tile_size {
            return Err(config_err!("road width {} does not fit a {} px tile", self.road_width, self.tile_size));
        }
        if !(self.aerial_pixel > 0.0 && self.sat_pixel > 0.0) {
            return Err(config_err!("pixel sizes must be positive"));
        }
        if self.sat_pixel < self.aerial_pixel {
            return Err(config_err!("satellite pixels must be coarser than aerial pixels"));
        }
        for (lo, hi) in [self.buildings, self.woodland_blobs, self.water_blobs] {
            if lo > hi {
                return Err(config_err!("count range ({lo}, {hi}) is empty"));
            }
        }
        if !(self.aerial_noise >= 0.0 && self.sat_noise >= 0.0) {
            return Err(config_err!("noise levels must be non-negative"));
        }
        Ok(())
    }

    pub fn parent_size(&self) -> usize {
        self.tile_size * self.tiles_per_side
    }

    pub fn pairs_per_parent(&self) -> usize {
        self.tiles_per_side * self.tiles_per_side
    }
}

/// One generated parent: aerial RGB (u8), labels (u8), 17-band satellite.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub aerial: Raster,
    pub label: Raster,
    pub satellite: Raster,
}

/// Mean 8-bit RGB per class; water shares the background palette.
const AERIAL_PALETTE: [[f64; 3]; 5] =
    [[110.0, 100.0, 80.0], [190.0, 90.0, 70.0], [40.0, 90.0, 40.0], [110.0, 100.0, 80.0], [150.0, 150.0, 150.0]];

/// B02 B03 B04 B05 B06 B07 B08 B8A B11 B12 per class.
const REFLECTANCE: [[f64; 10]; 5] = [
    [0.08, 0.10, 0.12, 0.16, 0.20, 0.22, 0.25, 0.26, 0.28, 0.22],
    [0.15, 0.16, 0.18, 0.20, 0.21, 0.22, 0.23, 0.23, 0.27, 0.25],
    [0.03, 0.06, 0.03, 0.09, 0.28, 0.35, 0.40, 0.42, 0.20, 0.10],
    [0.06, 0.09, 0.05, 0.04, 0.03, 0.02, 0.02, 0.02, 0.01, 0.01],
    [0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18, 0.18, 0.22, 0.21],
];

/// B02E B03E B04E per class.
const ENHANCED: [[f64; 3]; 5] =
    [[0.35, 0.38, 0.36], [0.55, 0.50, 0.50], [0.15, 0.35, 0.15], [0.20, 0.30, 0.45], [0.45, 0.45, 0.45]];

/// Scene-classification code per class.
const SCL_CODE: [f64; 5] = [4.0, 5.0, 4.0, 6.0, 5.0];

struct Canvas {
    size: usize,
    labels: Vec<u8>,
}

impl Canvas {
    fn fill_rect(&mut self, y0: usize, x0: usize, h: usize, w: usize, class: u8, keep: &[u8]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                let l = &mut self.labels[y * self.size + x];
                if !keep.contains(l) {
                    *l = class;
                }
            }
        }
    }
}

fn count(rng: &mut SeededRng, (lo, hi): (usize, usize)) -> usize {
    rng.range(lo, hi + 1)
}

fn snapped(rng: &mut SeededRng, limit: usize, grid: usize) -> usize {
    rng.range(0, (limit / grid).max(1)) * grid
}

fn paint_labels(spec: &SynthSpec, rng: &mut SeededRng) -> Canvas {
    let size = spec.parent_size();
    let g = spec.grid;
    let mut c = Canvas { size, labels: vec![BACKGROUND; size * size] };

    for _ in 0..count(rng, spec.woodland_blobs) {
        let (cy, cx) = (rng.range_f64(0.0, size as f64), rng.range_f64(0.0, size as f64));
        let ry = rng.range_f64(0.08, 0.2) * size as f64;
        let rx = rng.range_f64(0.08, 0.2) * size as f64;
        for gy in 0..size / g {
            for gx in 0..size / g {
                let (py, px) = ((gy * g) as f64 + g as f64 / 2.0, (gx * g) as f64 + g as f64 / 2.0);
                let d = ((py - cy) / ry) * ((py - cy) / ry) + ((px - cx) / rx) * ((px - cx) / rx);
                if d <= 1.0 {
                    c.fill_rect(gy * g, gx * g, g, g, WOODLAND, &[]);
                }
            }
        }
    }

    let cell = spec.sat_pixel / spec.aerial_pixel;
    let cells = libm::ceil(size as f64 / cell) as usize;
    let mut water = vec![false; cells * cells];
    for _ in 0..count(rng, spec.water_blobs) {
        let (mut y, mut x) = (rng.range(0, cells), rng.range(0, cells));
        for _ in 0..rng.range(1, 4) {
            water[y * cells + x] = true;
            match rng.range(0, 4) {
                0 if y + 1 < cells => y += 1,
                1 if x + 1 < cells => x += 1,
                2 if y > 0 => y -= 1,
                _ if x > 0 => x -= 1,
                _ => {}
            }
        }
    }
    let cell_of = |p: usize| (((p as f64 + 0.5) / cell) as usize).min(cells - 1);
    for y in 0..size {
        for x in 0..size {
            if water[cell_of(y) * cells + cell_of(x)] {
                c.labels[y * size + x] = WATER;
            }
        }
    }

    let max_side = (size / 8).max(2 * g);
    for _ in 0..count(rng, spec.buildings) {
        let h = rng.range(2, max_side / g + 1) * g;
        let w = rng.range(2, max_side / g + 1) * g;
        let (y, x) = (snapped(rng, size - h.min(size), g), snapped(rng, size - w.min(size), g));
        c.fill_rect(y, x, h, w, BUILDING, &[WATER]);
    }

    // one L-shaped road per parent
    let rw = spec.road_width;
    let y = snapped(rng, size - rw, g);
    let x = snapped(rng, size - rw, g);
    let len_h = rng.range(size / 5, size / 2 + 1);
    let len_v = rng.range(size / 5, size / 2 + 1);
    let x0 = if rng.bernoulli(0.5) { x } else { x.saturating_sub(len_h) };
    c.fill_rect(y, x0, rw, len_h + rw, ROAD, &[WATER]);
    let y0 = if rng.bernoulli(0.5) { y } else { y.saturating_sub(len_v) };
    c.fill_rect(y0, x, len_v + rw, rw, ROAD, &[WATER]);
    c
}

fn render_aerial(spec: &SynthSpec, labels: &[u8], rng: &mut SeededRng) -> Vec<u8> {
    let plane = labels.len();
    let mut out = vec![0u8; 3 * plane];
    for (i, &l) in labels.iter().enumerate() {
        for ch in 0..3 {
            let v = AERIAL_PALETTE[l as usize][ch] + spec.aerial_noise * rng.normal();
            out[ch * plane + i] = libm::round(v.clamp(0.0, 255.0)) as u8;
        }
    }
    out
}

fn render_satellite(spec: &SynthSpec, labels: &[u8], rng: &mut SeededRng) -> (usize, Vec<f32>) {
    let size = spec.parent_size();
    let cell = spec.sat_pixel / spec.aerial_pixel;
    let cells = libm::ceil(size as f64 / cell) as usize;
    let plane = cells * cells;
    let mut frac = vec![[0.0f64; 5]; plane];
    let cell_of = |p: usize| (((p as f64 + 0.5) / cell) as usize).min(cells - 1);
    for y in 0..size {
        for x in 0..size {
            frac[cell_of(y) * cells + cell_of(x)][labels[y * size + x] as usize] += 1.0;
        }
    }
    let mut out = vec![0f32; bands::CATALOG.len() * plane];
    let mut put = |band: usize, i: usize, v: f64| out[band * plane + i] = v as f32;
    for (i, f) in frac.iter_mut().enumerate() {
        let total: f64 = f.iter().sum();
        if total > 0.0 {
            f.iter_mut().for_each(|v| *v /= total);
        } else {
            *f = [1.0, 0.0, 0.0, 0.0, 0.0];
        }
        let mix = |sig: &dyn Fn(usize) -> f64| (0..5).map(|c| f[c] * sig(c)).sum::<f64>();
        let mut refl = [0.0; 10];
        for (k, r) in refl.iter_mut().enumerate() {
            *r = if spec.satellite_signal {
                (mix(&|c| REFLECTANCE[c][k]) + spec.sat_noise * rng.normal()).max(0.0)
            } else {
                rng.range_f64(0.0, 0.4)
            };
            put(bands::B02 + k, i, *r);
        }
        for k in 0..3 {
            let v = if spec.satellite_signal {
                (mix(&|c| ENHANCED[c][k]) + spec.sat_noise * rng.normal()).clamp(0.0, 1.0)
            } else {
                rng.range_f64(0.0, 1.0)
            };
            put(12 + k, i, v);
        }
        let scl = if spec.satellite_signal {
            let major = (0..5).fold(0, |m, c| if f[c] > f[m] { c } else { m });
            SCL_CODE[major]
        } else {
            rng.range(0, 12) as f64
        };
        put(bands::SCL, i, scl);
        put(bands::CLD, i, rng.range_f64(0.0, 5.0));
    }
    let band = |b: usize, out: &[f32]| out[b * plane..(b + 1) * plane].to_vec();
    let ndvi = bands::ndvi(&band(bands::B08, &out), &band(bands::B04, &out)).expect("equal planes");
    let ndwi = bands::ndwi(&band(bands::B03, &out), &band(bands::B08, &out)).expect("equal planes");
    out[bands::NDVI * plane..(bands::NDVI + 1) * plane].copy_from_slice(&ndvi);
    out[bands::NDWI * plane..(bands::NDWI + 1) * plane].copy_from_slice(&ndwi);
    (cells, out)
}

/// Generate parent scene `index`; deterministic in `(seed, index, spec)`.
/// The aerial image and labels do not depend on `satellite_signal`.
pub fn synth_scene(seed: u64, index: u64, spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let base = SeededRng::derive(seed, index).next_u64();
    let mut layout = SeededRng::derive(base, 0);
    let mut aerial_rng = SeededRng::derive(base, 1);
    let mut sat_rng = SeededRng::derive(base, 2);

    let canvas = paint_labels(spec, &mut layout);
    let size = spec.parent_size();
    let origin_x = 500_000.0 + index as f64 * 10_000.0;
    let origin_y = 300_000.0;
    let t = GeoTransform::new(origin_x, origin_y, spec.aerial_pixel, -spec.aerial_pixel);
    let aerial = render_aerial(spec, &canvas.labels, &mut aerial_rng);
    let (cells, sat) = render_satellite(spec, &canvas.labels, &mut sat_rng);
    let st = GeoTransform::new(origin_x, origin_y, spec.sat_pixel, -spec.sat_pixel);
    Ok(SynthScene {
        aerial: Raster::new(3, size, size, RasterData::U8(aerial), t, spec.crs, None)?,
        label: Raster::new(1, size, size, RasterData::U8(canvas.labels), t, spec.crs, None)?,
        satellite: Raster::new(bands::CATALOG.len(), cells, cells, RasterData::F32(sat), st, spec.crs, None)?,
    })
}

pub fn parent_name(index: u64) -> alloc::string::String {
    format!("synth{index:04}")
}

/// `n_pairs` raw (unnormalized) tile pairs, parent-major and row-major.
pub fn synth_generate(seed: u64, n_pairs: usize, spec: &SynthSpec, sel: BandSelection) -> Result<Vec<TilePair>> {
    Ok(synth_parents(seed, 0, n_pairs, spec, sel)?.0)
}

/// Like [`synth_generate`] but starting at parent `first`; also returns the
/// next unused parent index, so consecutive calls never share a parent.
pub fn synth_parents(
    seed: u64,
    first: u64,
    n_pairs: usize,
    spec: &SynthSpec,
    sel: BandSelection,
) -> Result<(Vec<TilePair>, u64)> {
    spec.validate()?;
    let mut out = Vec::with_capacity(n_pairs);
    let mut index = first;
    while out.len() < n_pairs {
        let scene = synth_scene(seed, index, spec)?;
        let pairs = preprocess_parent(
            &parent_name(index),
            &scene.aerial,
            &scene.label,
            &scene.satellite,
            spec.tile_size,
            spec.sat_size,
            sel,
        )?;
        out.extend(pairs.into_iter().take(n_pairs - out.len()));
        index += 1;
    }
    Ok((out, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{class_counts, normalize_pair};

    #[test]
    fn deterministic_and_valid() {
        let spec = SynthSpec::toy();
        let a = synth_generate(3407, 8, &spec, BandSelection::B7).unwrap();
        let b = synth_generate(3407, 8, &spec, BandSelection::B7).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        for p in &a {
            p.validate(5).unwrap();
            assert_eq!((p.aerial.bands, p.aerial.width), (3, 64));
            assert_eq!((p.satellite.bands, p.satellite.width), (7, 4));
            let n = normalize_pair(p).unwrap();
            assert!(n.satellite.band_f32(0).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_ne!(a, synth_generate(1, 8, &spec, BandSelection::B7).unwrap());
    }

    #[test]
    fn signal_switch_leaves_aerial_untouched() {
        let on = SynthSpec::toy();
        let off = SynthSpec { satellite_signal: false, ..SynthSpec::toy() };
        let a = synth_scene(5, 0, &on).unwrap();
        let b = synth_scene(5, 0, &off).unwrap();
        assert_eq!(a.aerial, b.aerial);
        assert_eq!(a.label, b.label);
        assert_ne!(a.satellite, b.satellite);
    }

    #[test]
    fn class_mix_and_road_share() {
        let spec = SynthSpec::toy();
        let pairs = synth_generate(3407, 64, &spec, BandSelection::B4).unwrap();
        let counts = class_counts(pairs.iter().map(|p| &p.label), 5).unwrap();
        let total: u64 = counts.iter().sum();
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert!((counts[ROAD as usize] as f64) < 0.05 * total as f64, "{counts:?}");
    }

    #[test]
    fn water_looks_like_background() {
        let scene = synth_scene(9, 0, &SynthSpec { aerial_noise: 0.0, ..SynthSpec::toy() }).unwrap();
        let labels = scene.label.as_u8().unwrap();
        let rgb = |i: usize| (0..3).map(|b| scene.aerial.as_u8().unwrap()[b * labels.len() + i]).collect::<Vec<_>>();
        let water = labels.iter().position(|&l| l == WATER).unwrap();
        let bg = labels.iter().position(|&l| l == BACKGROUND).unwrap();
        assert_eq!(rgb(water), rgb(bg));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(SynthSpec { road_width: 80, ..SynthSpec::toy() }.validate().is_err());
        assert!(SynthSpec { tile_size: 66, ..SynthSpec::toy() }.validate().is_err());
        assert!(SynthSpec { buildings: (5, 2), ..SynthSpec::toy() }.validate().is_err());
        assert!(synth_generate(1, 1, &SynthSpec { road_width: 0, ..SynthSpec::toy() }, BandSelection::B4).is_err());
    }

    #[test]
    fn paper_profile_crops_to_26() {
        let spec = SynthSpec { tiles_per_side: 1, ..SynthSpec::paper() };
        let pairs = synth_generate(2, 1, &spec, BandSelection::B10).unwrap();
        assert_eq!((pairs[0].satellite.width, pairs[0].satellite.height), (26, 26));
        pairs[0].validate(5).unwrap();
    }
}
