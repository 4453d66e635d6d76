//! Debug export of raster patches: one binary PGM per channel plus a JSON
//! sidecar with the pose.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hgtraj_core::geom::Vec2;
use hgtraj_core::lane::{Pose, RasterChannel, RasterPatch, RASTER_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub center: [f64; 2],
    pub heading: f64,
    pub resolution: f64,
    /// Channel tags in file order.
    pub channels: Vec<String>,
}

/// Binary (P5) grayscale image; mask values are written as 0 / 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, mask: &[u8]) -> Result<()> {
    if mask.len() != width * height {
        bail!("{} pixels for a {width}x{height} image", mask.len());
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads a P5 image written by [`write_pgm`], thresholding back to {0, 1}.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PGM header in {}", path.display());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        bail!("{} is not a binary PGM", path.display());
    }
    let (w, h): (usize, usize) = (fields[1].parse()?, fields[2].parse()?);
    let data = bytes.get(pos..pos + w * h).context("truncated PGM data")?;
    Ok((w, h, data.iter().map(|&v| u8::from(v >= 128)).collect()))
}

fn channel_file(c: RasterChannel) -> String {
    format!("{:02}_{}.pgm", c.index(), c.tag())
}

pub fn export_patch(patch: &RasterPatch, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for c in RasterChannel::ALL {
        write_pgm(&dir.join(channel_file(c)), RASTER_SIZE, RASTER_SIZE, patch.channel(c.index()))?;
    }
    let pose = PoseFile {
        center: [patch.pose.center.x, patch.pose.center.y],
        heading: patch.pose.heading,
        resolution: patch.resolution,
        channels: RasterChannel::ALL.iter().map(|c| c.tag().to_string()).collect(),
    };
    crate::formats::write_json(&dir.join("pose.json"), &pose)
}

pub fn import_patch(dir: &Path) -> Result<RasterPatch> {
    let pose: PoseFile = crate::formats::read_json(&dir.join("pose.json"))?;
    let mut data = Vec::with_capacity(RasterChannel::ALL.len() * RASTER_SIZE * RASTER_SIZE);
    for c in RasterChannel::ALL {
        let (w, h, mask) = read_pgm(&dir.join(channel_file(c)))?;
        if (w, h) != (RASTER_SIZE, RASTER_SIZE) {
            bail!("channel {} is {w}x{h}", c.tag());
        }
        data.extend(mask);
    }
    Ok(RasterPatch {
        data,
        pose: Pose {
            center: Vec2::new(pose.center[0], pose.center[1]),
            heading: pose.heading,
        },
        resolution: pose.resolution,
    })
}
