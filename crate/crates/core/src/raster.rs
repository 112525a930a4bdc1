//! Georeferenced rasters, tiling, satellite cropping and tile pairs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::bands::{self, BandKind, BandSelection};
use crate::error::{config_err, data_err, Result};
use crate::kernels::resample::nearest_index;
use crate::loss::{class_weights, ClassStats};
use crate::tensor::Tensor;

/// Affine pixel -> world map without rotation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    /// World units per pixel along columns.
    pub pixel_w: f64,
    /// World units per pixel along rows; negative for north-up images.
    pub pixel_h: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Self {
        Self { origin_x, origin_y, pixel_w, pixel_h }
    }

    /// World coordinates of the corner of pixel `(col, row)`; fractional
    /// positions allowed.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (self.origin_x + col * self.pixel_w, self.origin_y + row * self.pixel_h)
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.pixel_w, (y - self.origin_y) / self.pixel_h)
    }

    /// Transform of the sub-window starting at `(row, col)`.
    pub fn offset(&self, row: usize, col: usize) -> Self {
        let (x, y) = self.pixel_to_world(col as f64, row as f64);
        Self { origin_x: x, origin_y: y, ..*self }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.origin_x, self.origin_y, self.pixel_w, self.pixel_h].iter().all(|v| v.is_finite());
        if !ok || self.pixel_w == 0.0 || self.pixel_h == 0.0 {
            return Err(data_err!("invalid geotransform {self:?}"));
        }
        Ok(())
    }
}

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl WorldBox {
    /// Whether `self` contains `other` after growing by `slack` on every side.
    pub fn covers(&self, other: &WorldBox, slack: f64) -> bool {
        self.min_x - slack <= other.min_x
            && self.min_y - slack <= other.min_y
            && self.max_x + slack >= other.max_x
            && self.max_y + slack >= other.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
}

/// Band-major pixel storage.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            RasterData::F32(_) => DType::F32,
            RasterData::U8(_) => DType::U8,
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            RasterData::F32(v) => v[i] as f64,
            RasterData::U8(v) => v[i] as f64,
        }
    }

    fn gather(&self, idx: impl Iterator<Item = usize>) -> RasterData {
        match self {
            RasterData::F32(v) => RasterData::F32(idx.map(|i| v[i]).collect()),
            RasterData::U8(v) => RasterData::U8(idx.map(|i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub bands: usize,
    pub width: usize,
    pub height: usize,
    pub data: RasterData,
    pub transform: GeoTransform,
    /// EPSG-style code.
    pub crs: u32,
    pub nodata: Option<f64>,
}

impl Raster {
    pub fn new(
        bands: usize,
        width: usize,
        height: usize,
        data: RasterData,
        transform: GeoTransform,
        crs: u32,
        nodata: Option<f64>,
    ) -> Result<Self> {
        if bands == 0 || width == 0 || height == 0 {
            return Err(data_err!("raster dimensions must be positive, got {bands}x{height}x{width}"));
        }
        if data.len() != bands * width * height {
            return Err(data_err!("raster payload has {} values, expected {}", data.len(), bands * width * height));
        }
        transform.validate()?;
        Ok(Self { bands, width, height, data, transform, crs, nodata })
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.data.get((band * self.height + row) * self.width + col)
    }

    pub fn band_f32(&self, band: usize) -> Result<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Ok(&v[band * self.plane_len()..(band + 1) * self.plane_len()]),
            RasterData::U8(_) => Err(data_err!("expected a float raster")),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Ok(v),
            RasterData::F32(_) => Err(data_err!("expected an 8-bit raster")),
        }
    }

    pub fn bounds(&self) -> WorldBox {
        let (x0, y0) = self.transform.pixel_to_world(0.0, 0.0);
        let (x1, y1) = self.transform.pixel_to_world(self.width as f64, self.height as f64);
        WorldBox { min_x: x0.min(x1), min_y: y0.min(y1), max_x: x0.max(x1), max_y: y0.max(y1) }
    }

    /// Rows `row..row+h`, columns `col..col+w` of every band.
    pub fn window(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Raster> {
        if h == 0 || w == 0 || row + h > self.height || col + w > self.width {
            return Err(data_err!(
                "window {h}x{w} at ({row}, {col}) outside {}x{} raster",
                self.height,
                self.width
            ));
        }
        let (bands, height, width) = (self.bands, self.height, self.width);
        let idx = (0..bands)
            .flat_map(move |b| (row..row + h).flat_map(move |r| (col..col + w).map(move |c| (b * height + r) * width + c)));
        Ok(Raster {
            bands,
            width: w,
            height: h,
            data: self.data.gather(idx),
            transform: self.transform.offset(row, col),
            crs: self.crs,
            nodata: self.nodata,
        })
    }

    /// Bands in the given order.
    pub fn select_indices(&self, indices: &[usize]) -> Result<Raster> {
        if indices.is_empty() {
            return Err(config_err!("empty band selection"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.bands) {
            return Err(data_err!("band {bad} requested from a {}-band raster", self.bands));
        }
        let plane = self.plane_len();
        let idx = indices.iter().flat_map(|&b| b * plane..(b + 1) * plane);
        Ok(Raster { bands: indices.len(), data: self.data.gather(idx), ..self.clone() })
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = (0..self.data.len()).map(|i| self.data.get(i)).collect();
        Tensor::from_vec([1, self.bands, self.height, self.width], data).expect("raster dimensions are positive")
    }

    /// Label rasters: one 8-bit band with values below `classes`.
    pub fn validate_labels(&self, classes: usize) -> Result<()> {
        if self.bands != 1 {
            return Err(data_err!("label raster has {} bands", self.bands));
        }
        if let Some(&bad) = self.as_u8()?.iter().find(|&&v| v as usize >= classes) {
            return Err(data_err!("label value {bad} outside [0, {classes})"));
        }
        Ok(())
    }
}

/// Pick a named subset from a full 17-channel catalog raster.
pub fn select_bands(sat17: &Raster, sel: BandSelection) -> Result<Raster> {
    if sat17.bands != bands::CATALOG.len() {
        return Err(data_err!("expected a {}-band catalog raster, got {} bands", bands::CATALOG.len(), sat17.bands));
    }
    sat17.select_indices(sel.indices())
}

/// One tile cut from a parent image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub image: Raster,
    pub label: Raster,
}

/// Non-overlapping `tile x tile` windows in row-major order; partial edge
/// tiles are dropped.
pub fn tile_aerial(image: &Raster, label: &Raster, tile: usize) -> Result<Vec<Tile>> {
    if tile == 0 {
        return Err(config_err!("tile size must be positive"));
    }
    if (image.width, image.height) != (label.width, label.height) || image.transform != label.transform {
        return Err(data_err!(
            "image {}x{} {:?} and label {}x{} {:?} are not aligned",
            image.height,
            image.width,
            image.transform,
            label.height,
            label.width,
            label.transform
        ));
    }
    let (rows, cols) = (image.height / tile, image.width / tile);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Tile {
                row: r,
                col: c,
                image: image.window(r * tile, c * tile, tile, tile)?,
                label: label.window(r * tile, c * tile, tile, tile)?,
            });
        }
    }
    Ok(out)
}

/// Pixel window `(row0, col0, h, w)` of `raster` covering `bounds`.
pub fn covering_window(raster: &Raster, bounds: &WorldBox) -> Result<(usize, usize, usize, usize)> {
    const SNAP: f64 = 1e-9;
    let t = &raster.transform;
    let (c0, r0) = t.world_to_pixel(bounds.min_x, bounds.min_y);
    let (c1, r1) = t.world_to_pixel(bounds.max_x, bounds.max_y);
    let (cmin, cmax) = (c0.min(c1), c0.max(c1));
    let (rmin, rmax) = (r0.min(r1), r0.max(r1));
    let col0 = libm::floor(cmin + SNAP);
    let col1 = libm::ceil(cmax - SNAP);
    let row0 = libm::floor(rmin + SNAP);
    let row1 = libm::ceil(rmax - SNAP);
    if col0 < 0.0 || row0 < 0.0 || col1 > raster.width as f64 || row1 > raster.height as f64 || col1 <= col0 || row1 <= row0
    {
        return Err(data_err!(
            "bounds {bounds:?} fall outside the {}x{} satellite raster",
            raster.height,
            raster.width
        ));
    }
    Ok((row0 as usize, col0 as usize, (row1 - row0) as usize, (col1 - col0) as usize))
}

/// Read the window covering `bounds` and nearest-resample it to
/// `out_size x out_size`.
pub fn crop_satellite(sat: &Raster, bounds: &WorldBox, out_size: usize) -> Result<Raster> {
    if out_size == 0 {
        return Err(config_err!("crop size must be positive"));
    }
    let (row0, col0, h, w) = covering_window(sat, bounds)?;
    let win = sat.window(row0, col0, h, w)?;
    if let Some(nd) = sat.nodata {
        let all_nodata = (0..win.data.len()).all(|i| {
            let v = win.data.get(i);
            v == nd || (v.is_nan() && nd.is_nan())
        });
        if all_nodata {
            return Err(data_err!("satellite window at ({row0}, {col0}) holds only nodata"));
        }
    }
    let (bands, wh, ww) = (win.bands, h, w);
    let idx = (0..bands).flat_map(move |b| {
        (0..out_size).flat_map(move |oy| {
            let sy = nearest_index(oy, wh, out_size);
            (0..out_size).map(move |ox| (b * wh + sy) * ww + nearest_index(ox, ww, out_size))
        })
    });
    let data = win.data.gather(idx);
    let transform = GeoTransform {
        pixel_w: win.transform.pixel_w * w as f64 / out_size as f64,
        pixel_h: win.transform.pixel_h * h as f64 / out_size as f64,
        ..win.transform
    };
    Raster::new(bands, out_size, out_size, data, transform, sat.crs, sat.nodata)
}

/// Tile an aerial parent, crop the matching satellite window for every tile
/// and keep the selected bands.
pub fn preprocess_parent(
    parent: &str,
    aerial: &Raster,
    label: &Raster,
    sat17: &Raster,
    tile: usize,
    sat_size: usize,
    sel: BandSelection,
) -> Result<Vec<TilePair>> {
    let sat = select_bands(sat17, sel)?;
    tile_aerial(aerial, label, tile)?
        .into_iter()
        .map(|t| {
            let satellite = crop_satellite(&sat, &t.image.bounds(), sat_size)?;
            Ok(TilePair {
                parent: String::from(parent),
                row: t.row,
                col: t.col,
                aerial: t.image,
                satellite,
                label: t.label,
                sat_bands: sel.indices().to_vec(),
                normalized: false,
            })
        })
        .collect()
}

/// Co-registered training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePair {
    pub parent: String,
    pub row: usize,
    pub col: usize,
    pub aerial: Raster,
    pub satellite: Raster,
    pub label: Raster,
    /// Catalog index of every satellite band.
    pub sat_bands: Vec<usize>,
    pub normalized: bool,
}

impl TilePair {
    pub fn id(&self) -> String {
        alloc::format!("{}_{}_{}", self.parent, self.row, self.col)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let (a, l, s) = (&self.aerial, &self.label, &self.satellite);
        if (a.width, a.height) != (l.width, l.height) || a.transform != l.transform {
            return Err(data_err!("{}: aerial and label are not aligned", self.id()));
        }
        l.validate_labels(classes)?;
        if s.bands != self.sat_bands.len() {
            return Err(data_err!("{}: {} satellite bands but {} band ids", self.id(), s.bands, self.sat_bands.len()));
        }
        if a.crs != s.crs {
            return Err(data_err!("{}: aerial CRS {} differs from satellite CRS {}", self.id(), a.crs, s.crs));
        }
        let slack = s.transform.pixel_w.abs().max(s.transform.pixel_h.abs());
        if !s.bounds().covers(&a.bounds(), slack) {
            return Err(data_err!("{}: satellite crop does not cover the aerial tile", self.id()));
        }
        Ok(())
    }
}

/// Scale to unit ranges: aerial `/255`, indices clipped to `[-1, 1]`,
/// reflectances to `[0, 1]`, scene class `/11`, cloud probability `/100`.
/// Already-normalized pairs are returned unchanged.
pub fn normalize_pair(p: &TilePair) -> Result<TilePair> {
    if p.normalized {
        return Ok(p.clone());
    }
    let aerial_data = match &p.aerial.data {
        RasterData::U8(v) => v.iter().map(|&x| x as f32 / 255.0).collect(),
        RasterData::F32(v) => v.iter().map(|&x| (x / 255.0).clamp(0.0, 1.0)).collect(),
    };
    let mut sat = Vec::with_capacity(p.satellite.data.len());
    for (b, &cat) in p.sat_bands.iter().enumerate() {
        let band = p.satellite.band_f32(b)?;
        let f: fn(f32) -> f32 = match bands::band_kind(cat) {
            BandKind::Index => |x| x.clamp(-1.0, 1.0),
            BandKind::Reflectance => |x| x.clamp(0.0, 1.0),
            BandKind::SceneClass => |x| (x / bands::SCL_MAX as f32).clamp(0.0, 1.0),
            BandKind::CloudProbability => |x| (x / 100.0).clamp(0.0, 1.0),
        };
        sat.extend(band.iter().map(|&x| f(x)));
    }
    Ok(TilePair {
        aerial: Raster { data: RasterData::F32(aerial_data), ..p.aerial.clone() },
        satellite: Raster { data: RasterData::F32(sat), nodata: None, ..p.satellite.clone() },
        normalized: true,
        ..p.clone()
    })
}

/// Per-class pixel counts over label rasters.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a Raster>, classes: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; classes];
    let mut any = false;
    for l in labels {
        any = true;
        for &v in l.as_u8()? {
            let v = v as usize;
            if v >= classes {
                return Err(data_err!("label value {v} outside [0, {classes})"));
            }
            counts[v] += 1;
        }
    }
    if !any {
        return Err(data_err!("no label rasters to count"));
    }
    Ok(counts)
}

/// Counts, frequencies and inverse-frequency weights over label rasters.
pub fn class_stats<'a>(labels: impl IntoIterator<Item = &'a Raster>, classes: usize) -> Result<ClassStats> {
    class_weights(&class_counts(labels, classes)?)
}

/// Model-ready batch: aerial `(n, C1, k, k)`, satellite `(n, C2, s, s)`,
/// flattened labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub aerial: Tensor,
    pub satellite: Tensor,
    pub labels: Vec<u8>,
}

pub fn make_batch(pairs: &[&TilePair]) -> Result<Batch> {
    if pairs.is_empty() {
        return Err(config_err!("empty batch"));
    }
    let aerial: Vec<Tensor> = pairs.iter().map(|p| p.aerial.to_tensor()).collect();
    let satellite: Vec<Tensor> = pairs.iter().map(|p| p.satellite.to_tensor()).collect();
    let mut labels = Vec::new();
    for p in pairs {
        labels.extend_from_slice(p.label.as_u8()?);
    }
    Ok(Batch {
        aerial: Tensor::stack(&aerial).map_err(|_| data_err!("aerial tiles differ in shape"))?,
        satellite: Tensor::stack(&satellite).map_err(|_| data_err!("satellite crops differ in shape"))?,
        labels,
    })
}
