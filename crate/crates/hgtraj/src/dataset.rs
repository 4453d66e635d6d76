//! Scene directories: `<scene_id>.scene.json` files next to the
//! `<lane_graph>.lanes.json` files they reference.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use hgtraj_core::autodiff::ParamStore;
use hgtraj_core::lane::{rasterize, LaneGraph};
use hgtraj_core::model::MapAutoencoder;
use hgtraj_core::pipeline::{attach_map_latents, build_sample, node_poses, Sample, SampleConfig};
use hgtraj_core::scene::Scene;

use crate::formats::{load_lane_graph, load_scene, save_lane_graph, save_scene};

pub const SCENE_SUFFIX: &str = ".scene.json";
pub const LANES_SUFFIX: &str = ".lanes.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEntry {
    pub path: PathBuf,
    pub scene: Scene,
    /// In the map frame, as stored.
    pub lanes: LaneGraph,
}

pub fn scene_path(dir: &Path, scene_id: &str) -> PathBuf {
    dir.join(format!("{scene_id}{SCENE_SUFFIX}"))
}

pub fn lanes_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{LANES_SUFFIX}"))
}

/// Scene files in `dir`, sorted by name.
pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(SCENE_SUFFIX)) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads one scene and its lane graph. Without an explicit `map` the graph
/// is looked up next to the scene file by its reference name.
pub fn load_entry(path: &Path, map: Option<&Path>) -> Result<SceneEntry> {
    let scene = load_scene(path)?;
    let lanes_file = match map {
        Some(m) => m.to_path_buf(),
        None => lanes_path(path.parent().unwrap_or(Path::new(".")), &scene.lane_graph_ref),
    };
    let lanes = load_lane_graph(&lanes_file)?;
    Ok(SceneEntry {
        path: path.to_path_buf(),
        scene,
        lanes,
    })
}

/// Every scene in `dir`; lane graphs are parsed once per file.
pub fn load_dir(dir: &Path, map: Option<&Path>) -> Result<Vec<SceneEntry>> {
    let files = scene_files(dir)?;
    if files.is_empty() {
        bail!(hgtraj_core::Error::InvalidArgument(format!("no *{SCENE_SUFFIX} files in {}", dir.display())));
    }
    let mut graphs: BTreeMap<PathBuf, LaneGraph> = BTreeMap::new();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let scene = load_scene(&f)?;
        let lf = match map {
            Some(m) => m.to_path_buf(),
            None => lanes_path(f.parent().unwrap_or(Path::new(".")), &scene.lane_graph_ref),
        };
        if !graphs.contains_key(&lf) {
            graphs.insert(lf.clone(), load_lane_graph(&lf)?);
        }
        out.push(SceneEntry {
            path: f,
            scene,
            lanes: graphs[&lf].clone(),
        });
    }
    Ok(out)
}

/// Writes scenes plus the lane graph they share.
pub fn write_dir(dir: &Path, scenes: &[Scene], lanes: &LaneGraph, lanes_name: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_lane_graph(lanes, &lanes_path(dir, lanes_name))?;
    for s in scenes {
        save_scene(s, &scene_path(dir, &s.scene_id))?;
    }
    Ok(())
}

/// Network inputs for every entry, in entry order.
pub fn build_samples(entries: &[SceneEntry], cfg: &SampleConfig) -> Result<Vec<Sample>> {
    entries
        .par_iter()
        .map(|e| build_sample(&e.scene, &e.lanes, cfg).with_context(|| format!("building graph for {}", e.path.display())))
        .collect()
}

pub fn attach_latents(samples: &mut [Sample], ae: &MapAutoencoder, store: &ParamStore) -> Result<()> {
    samples
        .par_iter_mut()
        .try_for_each(|s| attach_map_latents(s, ae, store).map_err(anyhow::Error::from))
}

/// `n` signed raster patches around agent nodes drawn without replacement
/// (seeded) from all samples.
pub fn sample_patches(samples: &[Sample], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut poses = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for p in node_poses(s).into_iter().flatten() {
            poses.push((i, p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    poses.shuffle(&mut rng);
    poses.truncate(n);
    poses
        .par_iter()
        .map(|&(i, p)| rasterize(&samples[i].lanes, p).to_signed())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgtraj_core::synth::{generate_synthetic_scenes, template_lane_graph, GeneratorSpec, Template};

    #[test]
    fn directory_round_trip() {
        let spec = GeneratorSpec::new("lane_change", 2, 1, 3).unwrap();
        let scenes = generate_synthetic_scenes(&spec, 2).unwrap();
        let lanes = template_lane_graph(Template::LaneChange);
        let dir = tempfile::tempdir().unwrap();
        write_dir(dir.path(), &scenes, &lanes, "lane_change").unwrap();
        let back = load_dir(dir.path(), None).unwrap();
        assert_eq!(back.len(), 3);
        for (e, s) in back.iter().zip(&scenes) {
            assert_eq!(&e.scene, s);
            assert_eq!(e.lanes, lanes);
        }
        let samples = build_samples(&back, &SampleConfig::default()).unwrap();
        assert_eq!(samples.len(), 3);
        let patches = sample_patches(&samples, 7, 0);
        assert_eq!(patches.len(), 7);
        assert_eq!(patches, sample_patches(&samples, 7, 0));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dir(dir.path(), None).is_err());
    }
}
