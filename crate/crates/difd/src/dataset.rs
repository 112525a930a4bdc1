//! On-disk dataset: `pairs/{split}/{parent}_{row}_{col}.{aerial|sat|label}.rstx`
//! plus `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use difd_core::bands::BandSelection;
use difd_core::raster::TilePair;
use difd_core::synth::{synth_parents, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::rstx;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub seed: u64,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub band_selection: BandSelection,
    /// Catalog index of every stored satellite band.
    pub sat_bands: Vec<usize>,
    /// Present for synthetic datasets.
    pub generation: Option<Generation>,
    /// Pair ids per split, in iteration order.
    pub splits: BTreeMap<String, Vec<String>>,
}

fn pair_path(root: &Path, split: &str, id: &str, kind: &str) -> PathBuf {
    root.join("pairs").join(split).join(format!("{id}.{kind}.rstx"))
}

fn parse_id(id: &str) -> Option<(String, usize, usize)> {
    let mut it = id.rsplitn(3, '_');
    let col = it.next()?.parse().ok()?;
    let row = it.next()?.parse().ok()?;
    Some((it.next()?.to_string(), row, col))
}

/// Write every split and the manifest. Existing pair files are overwritten.
pub fn write_dataset(
    root: &Path,
    band_selection: BandSelection,
    generation: Option<Generation>,
    splits: &[(&str, &[TilePair])],
) -> Result<Manifest> {
    let mut manifest =
        Manifest { band_selection, sat_bands: band_selection.indices().to_vec(), generation, splits: BTreeMap::new() };
    for (split, pairs) in splits {
        let dir = root.join("pairs").join(split);
        fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
        let mut ids = Vec::with_capacity(pairs.len());
        for p in *pairs {
            if p.sat_bands != manifest.sat_bands {
                return Err(AppError::config(format!("pair {} does not carry the {} bands", p.id(), band_selection.name())));
            }
            let id = p.id();
            rstx::write(pair_path(root, split, &id, "aerial"), &p.aerial)?;
            rstx::write(pair_path(root, split, &id, "sat"), &p.satellite)?;
            rstx::write(pair_path(root, split, &id, "label"), &p.label)?;
            ids.push(id);
        }
        manifest.splits.insert(split.to_string(), ids);
    }
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| AppError::io(&path, e))?;
    Ok(manifest)
}

/// Add or replace one split of an existing (or new) dataset.
pub fn write_split(root: &Path, band_selection: BandSelection, split: &str, pairs: &[TilePair]) -> Result<Manifest> {
    let mut manifest = if root.join(MANIFEST).exists() {
        let m = read_manifest(root)?;
        if m.band_selection != band_selection {
            return Err(AppError::config(format!(
                "dataset holds {} bands, cannot add {} pairs",
                m.band_selection.name(),
                band_selection.name()
            )));
        }
        m
    } else {
        Manifest { band_selection, sat_bands: band_selection.indices().to_vec(), generation: None, splits: BTreeMap::new() }
    };
    let written = write_dataset(root, band_selection, None, &[(split, pairs)])?;
    manifest.splits.extend(written.splits);
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| AppError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(&path, format!("bad manifest: {e}")))
}

/// Raw pairs of one split in manifest order, validated against `classes`.
pub fn load_split(root: &Path, manifest: &Manifest, split: &str, classes: usize) -> Result<Vec<TilePair>> {
    let ids = manifest
        .splits
        .get(split)
        .ok_or_else(|| AppError::format(root.join(MANIFEST), format!("no split named {split:?}")))?;
    ids.iter()
        .map(|id| {
            let (parent, row, col) =
                parse_id(id).ok_or_else(|| AppError::format(root.join(MANIFEST), format!("malformed pair id {id:?}")))?;
            let pair = TilePair {
                parent,
                row,
                col,
                aerial: rstx::read(pair_path(root, split, id, "aerial"))?,
                satellite: rstx::read(pair_path(root, split, id, "sat"))?,
                label: rstx::read(pair_path(root, split, id, "label"))?,
                sat_bands: manifest.sat_bands.clone(),
                normalized: false,
            };
            pair.validate(classes)?;
            Ok(pair)
        })
        .collect()
}

/// Synthetic splits drawn from disjoint parents, in the order given.
pub fn synth_splits(
    seed: u64,
    spec: &SynthSpec,
    sel: BandSelection,
    sizes: &[(&str, usize)],
) -> Result<Vec<(String, Vec<TilePair>)>> {
    let mut next = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for (name, n) in sizes {
        let (pairs, after) = synth_parents(seed, next, *n, spec, sel)?;
        next = after;
        out.push((name.to_string(), pairs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_with_underscores() {
        assert_eq!(parse_id("area_7_3_12"), Some(("area_7".to_string(), 3, 12)));
        assert_eq!(parse_id("x_y"), None);
    }
}
