//! Agent-centric map rasters.
//!
//! A patch covers `RASTER_EXTENT` × `RASTER_EXTENT` meters at `RASTER_SIZE`²
//! pixels and is rotated so that the pose heading points up (row 0). Each
//! pixel samples the map at its center, so rendering commutes exactly with
//! rigid motions of map and pose together.
//!
//! Channel order is [`RasterChannel::ALL`]: drivable, lane-border,
//! lane-divider, ped-crossing, walkway, stop-area, carpark, road-divider,
//! traffic-sign, intersection-zone.

use alloc::vec;
use alloc::vec::Vec;

use super::{LaneGraph, MapShape, RasterChannel, BOUNDARY_EPS};
use crate::geom::{closest_on_segment, distance_to_polyline, point_in_polygon, Aabb, Vec2};

pub const RASTER_CHANNELS: usize = 10;
pub const RASTER_SIZE: usize = 128;
/// Side length of a patch in meters.
pub const RASTER_EXTENT: f64 = 50.0;
/// Half width of stroked lines (lane borders, polyline extras).
const LINE_HALF_WIDTH: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center: Vec2,
    /// Direction of travel; it points to the top of the image.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    /// Channel-major binary masks, `RASTER_CHANNELS × RASTER_SIZE × RASTER_SIZE`.
    pub data: Vec<u8>,
    pub pose: Pose,
    /// Meters per pixel.
    pub resolution: f64,
}

impl RasterPatch {
    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[(channel * RASTER_SIZE + row) * RASTER_SIZE + col]
    }

    pub fn channel(&self, channel: usize) -> &[u8] {
        let n = RASTER_SIZE * RASTER_SIZE;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Masks mapped to {−1, +1}, the range of the autoencoder's tanh output.
    pub fn to_signed(&self) -> Vec<f64> {
        self.data.iter().map(|&v| if v != 0 { 1.0 } else { -1.0 }).collect()
    }

    /// The patch turned by 180° in the image plane.
    pub fn rotated_180(&self) -> RasterPatch {
        let mut data = vec![0u8; self.data.len()];
        let n = RASTER_SIZE;
        for c in 0..RASTER_CHANNELS {
            for r in 0..n {
                for k in 0..n {
                    data[(c * n + r) * n + k] = self.get(c, n - 1 - r, n - 1 - k);
                }
            }
        }
        RasterPatch { data, ..*self }
    }

    /// Fraction of pixels (over all channels) equal in both patches.
    pub fn agreement(&self, other: &RasterPatch) -> f64 {
        let same = self.data.iter().zip(&other.data).filter(|(a, b)| a == b).count();
        same as f64 / self.data.len() as f64
    }
}

/// Map-frame position of the center of pixel (`row`, `col`).
pub fn pixel_center(pose: Pose, row: usize, col: usize) -> Vec2 {
    let res = RASTER_EXTENT / RASTER_SIZE as f64;
    let half = RASTER_SIZE as f64 / 2.0;
    let right_m = (col as f64 + 0.5 - half) * res;
    let fwd_m = (half - row as f64 - 0.5) * res;
    let fwd = Vec2::from_angle(pose.heading);
    let right = Vec2::new(fwd.y, -fwd.x);
    pose.center + right * right_m + fwd * fwd_m
}

struct LaneSegments {
    segs: Vec<(Vec2, Vec2)>,
    half_width: f64,
    has_left: bool,
    has_right: bool,
    tags: Vec<RasterChannel>,
}

/// Renders the 10-channel patch around `pose`.
pub fn rasterize(g: &LaneGraph, pose: Pose) -> RasterPatch {
    let n = RASTER_SIZE;
    let res = RASTER_EXTENT / n as f64;
    let mut data = vec![0u8; RASTER_CHANNELS * n * n];
    if !pose.heading.is_finite() {
        return RasterPatch { data, pose, resolution: res };
    }
    let reach = RASTER_EXTENT * core::f64::consts::FRAC_1_SQRT_2 + 1.0;
    let view = Aabb {
        min: Vec2::new(pose.center.x - reach, pose.center.y - reach),
        max: Vec2::new(pose.center.x + reach, pose.center.y + reach),
    };

    let lanes: Vec<LaneSegments> = g
        .lanes()
        .filter_map(|l| {
            let pad = l.half_width() + LINE_HALF_WIDTH;
            let segs: Vec<(Vec2, Vec2)> = l
                .centerline
                .windows(2)
                .filter(|w| Aabb::of_points(w).expect("two points").inflate(pad).intersects(&view))
                .map(|w| (w[0], w[1]))
                .collect();
            (!segs.is_empty()).then(|| LaneSegments {
                segs,
                half_width: l.half_width(),
                has_left: l.left.is_some(),
                has_right: l.right.is_some(),
                tags: l.tags.clone(),
            })
        })
        .collect();

    let extras: Vec<(RasterChannel, &MapShape)> = g
        .extras
        .iter()
        .flat_map(|(c, shapes)| shapes.iter().map(move |s| (*c, s)))
        .filter(|(_, s)| {
            Aabb::of_points(s.points())
                .is_some_and(|bb| bb.inflate(LINE_HALF_WIDTH).intersects(&view))
        })
        .collect();

    let mut set = |c: RasterChannel, r: usize, k: usize| data[(c.index() * n + r) * n + k] = 1;
    for r in 0..n {
        for k in 0..n {
            let p = pixel_center(pose, r, k);
            for lane in &lanes {
                // nearest segment; ties keep the earlier one
                let mut best = (f64::INFINITY, 0.0);
                for &(a, b) in &lane.segs {
                    let (q, _) = closest_on_segment(p, a, b);
                    let d = p.dist(q);
                    if d < best.0 {
                        best = (d, (b - a).cross(p - a));
                    }
                }
                let (d, side) = best;
                let hw = lane.half_width;
                if d <= hw + BOUNDARY_EPS {
                    set(RasterChannel::Drivable, r, k);
                    for &t in &lane.tags {
                        set(t, r, k);
                    }
                }
                if (d - hw).abs() <= LINE_HALF_WIDTH {
                    let shared = if side >= 0.0 { lane.has_left } else { lane.has_right };
                    let ch = if shared {
                        RasterChannel::LaneDivider
                    } else {
                        RasterChannel::LaneBorder
                    };
                    set(ch, r, k);
                }
            }
            for &(ch, shape) in &extras {
                let hit = match shape {
                    MapShape::Polygon(poly) => point_in_polygon(poly, p),
                    MapShape::Polyline(line) => distance_to_polyline(line, p) <= LINE_HALF_WIDTH,
                };
                if hit {
                    set(ch, r, k);
                }
            }
        }
    }
    RasterPatch { data, pose, resolution: res }
}
