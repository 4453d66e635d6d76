//! Synthetic scenes on a handful of lane-graph templates.
//!
//! Road-bound agents drive along lane centerlines at a roughly constant speed
//! with small lateral and longitudinal noise; non-road-bound agents walk along
//! sidewalk strips. Every track carries the full 5-step history and 12-step
//! future. Output is a pure function of `(spec, seed)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{cumulative_lengths, normalize_angle, point_at_arc, polyline_length, Vec2};
use crate::lane::{Lane, LaneGraph, LaneId, MapShape, RasterChannel};
use crate::scene::{AgentState, AgentTrack, AgentType, Scene, DT, FUTURE_STEPS, HISTORY_STEPS};

pub const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    Straight,
    Curve,
    YFork,
    CrossIntersection,
    LaneChange,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::Straight,
        Template::Curve,
        Template::YFork,
        Template::CrossIntersection,
        Template::LaneChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::Curve => "curve",
            Template::YFork => "y_fork",
            Template::CrossIntersection => "cross_intersection",
            Template::LaneChange => "lane_change",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub template: Template,
    pub road_bound: usize,
    pub non_road_bound: usize,
    pub num_scenes: usize,
}

impl GeneratorSpec {
    pub fn new(template: &str, road_bound: usize, non_road_bound: usize, num_scenes: usize) -> Result<Self> {
        Ok(Self {
            template: template.parse()?,
            road_bound,
            non_road_bound,
            num_scenes,
        })
    }
}

fn arc(center: Vec2, r: f64, a0: f64, a1: f64, n: usize) -> Vec<Vec2> {
    (0..=n)
        .map(|i| center + Vec2::from_angle(a0 + (a1 - a0) * i as f64 / n as f64) * r)
        .collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> MapShape {
    MapShape::Polygon(vec![
        Vec2::new(x0, y0),
        Vec2::new(x1, y0),
        Vec2::new(x1, y1),
        Vec2::new(x0, y1),
    ])
}

/// Polyline shifted sideways by `off` (positive = left), vertex normals averaged.
fn offset_polyline(pts: &[Vec2], off: f64) -> Vec<Vec2> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let a = if i > 0 { pts[i] - pts[i - 1] } else { pts[1] - pts[0] };
            let b = if i + 1 < n { pts[i + 1] - pts[i] } else { a };
            let nrm = (a.normalized().unwrap_or(Vec2::ZERO) + b.normalized().unwrap_or(Vec2::ZERO))
                .normalized()
                .unwrap_or(Vec2::new(1.0, 0.0))
                .perp();
            pts[i] + nrm * off
        })
        .collect()
}

/// Polygon covering lateral offsets `lo..hi` along a polyline.
fn strip(pts: &[Vec2], lo: f64, hi: f64) -> MapShape {
    let mut poly = offset_polyline(pts, lo);
    let mut upper = offset_polyline(pts, hi);
    upper.reverse();
    poly.extend(upper);
    MapShape::Polygon(poly)
}

fn concat(parts: &[&[Vec2]]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::new();
    for part in parts {
        for &p in *part {
            if out.last().is_none_or(|q| q.dist(p) > 1e-9) {
                out.push(p);
            }
        }
    }
    out
}

/// Map, start lanes for vehicles, and sidewalk paths for pedestrians.
struct TemplateMap {
    graph: LaneGraph,
    starts: Vec<LaneId>,
    walkways: Vec<Vec<Vec2>>,
}

fn lane(id: u32, pts: Vec<Vec2>) -> Lane {
    Lane::new(LaneId(id), pts, LANE_WIDTH).expect("template lanes are valid")
}

fn build_template(t: Template) -> TemplateMap {
    let w = LANE_WIDTH;
    let mut extras: BTreeMap<RasterChannel, Vec<MapShape>> = BTreeMap::new();
    let mut add = |c: RasterChannel, s: MapShape| extras.entry(c).or_default().push(s);
    match t {
        Template::Straight | Template::LaneChange => {
            let len = if t == Template::Straight { 200.0 } else { 250.0 };
            let right = lane(1, vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)]).with_neighbors(Some(2), None);
            let left = lane(2, vec![Vec2::new(0.0, w), Vec2::new(len, w)]).with_neighbors(None, Some(1));
            let south_walk = vec![Vec2::new(0.0, -4.25), Vec2::new(len, -4.25)];
            let north_walk = vec![Vec2::new(len, w + 4.25), Vec2::new(0.0, w + 4.25)];
            add(RasterChannel::Walkway, strip(&south_walk, -1.25, 1.25));
            add(RasterChannel::Walkway, strip(&north_walk, -1.25, 1.25));
            add(RasterChannel::RoadDivider, MapShape::Polyline(vec![Vec2::new(0.0, w + 2.0), Vec2::new(len, w + 2.0)]));
            add(RasterChannel::PedCrossing, rect(120.0, -1.75, 124.0, w + 1.75));
            add(RasterChannel::StopArea, rect(114.0, -1.75, 118.0, w + 1.75));
            add(RasterChannel::TrafficSign, rect(112.0, -3.2, 113.0, -2.2));
            add(RasterChannel::Carpark, rect(40.0, -22.0, 80.0, -7.0));
            TemplateMap {
                graph: LaneGraph::new(vec![right, left], extras).expect("valid template"),
                starts: vec![LaneId(1), LaneId(2)],
                walkways: vec![south_walk, north_walk],
            }
        }
        Template::Curve => {
            let a = vec![Vec2::new(0.0, 0.0), Vec2::new(60.0, 0.0)];
            let b = arc(Vec2::new(60.0, 40.0), 40.0, -FRAC_PI_2, 0.0, 24);
            let c = vec![Vec2::new(100.0, 40.0), Vec2::new(100.0, 120.0)];
            let chain = concat(&[&a, &b, &c]);
            let l1 = lane(1, a).with_successors([2]);
            let l2 = lane(2, b).with_successors([3]).with_predecessors([1]);
            let l3 = lane(3, c).with_predecessors([2]);
            let outer = offset_polyline(&chain, -4.5);
            add(RasterChannel::Walkway, strip(&chain, -5.75, -3.25));
            add(RasterChannel::Walkway, strip(&chain, 3.25, 5.75));
            add(RasterChannel::LaneDivider, MapShape::Polyline(offset_polyline(&chain, 0.0)));
            add(RasterChannel::TrafficSign, rect(55.0, -3.5, 56.0, -2.5));
            add(RasterChannel::Carpark, rect(20.0, 10.0, 45.0, 30.0));
            add(RasterChannel::RoadDivider, MapShape::Polyline(offset_polyline(&chain, 2.5)));
            TemplateMap {
                graph: LaneGraph::new(vec![l1, l2, l3], extras).expect("valid template"),
                starts: vec![LaneId(1)],
                walkways: vec![outer],
            }
        }
        Template::YFork => {
            let stem = vec![Vec2::new(0.0, 0.0), Vec2::new(80.0, 0.0)];
            let bend = PI / 6.0;
            let mk_branch = |sign: f64| {
                let c = Vec2::new(80.0, sign * 60.0);
                let mut pts = arc(c, 60.0, -sign * FRAC_PI_2, -sign * FRAC_PI_2 + sign * bend, 12);
                let end = *pts.last().expect("arc has points");
                pts.push(end + Vec2::from_angle(sign * bend) * 70.0);
                pts
            };
            let left_pts = mk_branch(1.0);
            let right_pts = mk_branch(-1.0);
            let l1 = lane(1, stem.clone()).with_successors([2, 3]);
            let l2 = lane(2, left_pts.clone()).with_predecessors([1]);
            let l3 = lane(3, right_pts.clone()).with_predecessors([1]);
            let walk_s = offset_polyline(&concat(&[&stem, &right_pts]), -4.5);
            let walk_n = offset_polyline(&concat(&[&stem, &left_pts]), 4.5);
            add(RasterChannel::Walkway, strip(&walk_s, -1.25, 1.25));
            add(RasterChannel::Walkway, strip(&walk_n, -1.25, 1.25));
            add(RasterChannel::RoadDivider, MapShape::Polygon(vec![
                Vec2::new(100.0, 0.0),
                Vec2::new(150.0, 20.0),
                Vec2::new(150.0, -20.0),
            ]));
            add(RasterChannel::StopArea, rect(70.0, -1.75, 74.0, 1.75));
            add(RasterChannel::TrafficSign, rect(76.0, -3.5, 77.0, -2.5));
            add(RasterChannel::PedCrossing, rect(40.0, -1.75, 44.0, 1.75));
            add(RasterChannel::Carpark, rect(10.0, 8.0, 40.0, 25.0));
            add(RasterChannel::IntersectionZone, rect(78.0, -4.0, 95.0, 4.0));
            TemplateMap {
                graph: LaneGraph::new(vec![l1, l2, l3], extras).expect("valid template"),
                starts: vec![LaneId(1)],
                walkways: vec![walk_s, walk_n],
            }
        }
        Template::CrossIntersection => {
            let h = 1.75;
            let e = 12.0;
            let l1 = lane(1, vec![Vec2::new(-100.0, -h), Vec2::new(-e, -h)]).with_successors([2, 7]);
            let l2 = lane(2, vec![Vec2::new(-e, -h), Vec2::new(e, -h)])
                .with_successors([3])
                .with_predecessors([1])
                .with_tags([RasterChannel::IntersectionZone]);
            let l3 = lane(3, vec![Vec2::new(e, -h), Vec2::new(100.0, -h)]).with_predecessors([2]);
            let l4 = lane(4, vec![Vec2::new(h, -100.0), Vec2::new(h, -e)]).with_successors([5]);
            let l5 = lane(5, vec![Vec2::new(h, -e), Vec2::new(h, e)])
                .with_successors([6])
                .with_predecessors([4])
                .with_tags([RasterChannel::IntersectionZone]);
            let l6 = lane(6, vec![Vec2::new(h, e), Vec2::new(h, 100.0)]).with_predecessors([5, 7]);
            let l7 = lane(7, arc(Vec2::new(-e, e), e + h, -FRAC_PI_2, 0.0, 16))
                .with_successors([6])
                .with_predecessors([1])
                .with_tags([RasterChannel::IntersectionZone]);
            add(RasterChannel::IntersectionZone, rect(-e, -e, e, e));
            for (x0, x1) in [(-100.0, -e), (e, 100.0)] {
                add(RasterChannel::Walkway, rect(x0, -h - 6.0, x1, -h - 3.5));
                add(RasterChannel::Walkway, rect(x0, h + 3.5, x1, h + 6.0));
            }
            for (y0, y1) in [(-100.0, -e), (e, 100.0)] {
                add(RasterChannel::Walkway, rect(-h - 6.0, y0, -h - 3.5, y1));
                add(RasterChannel::Walkway, rect(h + 3.5, y0, h + 6.0, y1));
            }
            add(RasterChannel::PedCrossing, rect(-e - 4.0, -h - 3.5, -e, h + 3.5));
            add(RasterChannel::PedCrossing, rect(-h - 3.5, -e - 4.0, h + 3.5, -e));
            add(RasterChannel::StopArea, rect(-e - 7.0, -2.0 * h, -e - 4.0, 0.0));
            add(RasterChannel::StopArea, rect(0.0, -e - 7.0, 2.0 * h, -e - 4.0));
            add(RasterChannel::TrafficSign, rect(-e - 6.0, -h - 3.0, -e - 5.0, -h - 2.0));
            add(RasterChannel::RoadDivider, MapShape::Polyline(vec![Vec2::new(-100.0, h), Vec2::new(-e, h)]));
            add(RasterChannel::Carpark, rect(-60.0, -40.0, -30.0, -15.0));
            let walk_a = vec![Vec2::new(-100.0, -h - 4.75), Vec2::new(-e - 1.0, -h - 4.75)];
            let walk_b = vec![Vec2::new(h + 4.75, e + 1.0), Vec2::new(h + 4.75, 100.0)];
            let walk_c = vec![Vec2::new(-h - 4.75, -100.0), Vec2::new(-h - 4.75, -e - 1.0)];
            TemplateMap {
                graph: LaneGraph::new(vec![l1, l2, l3, l4, l5, l6, l7], extras).expect("valid template"),
                starts: vec![LaneId(1), LaneId(4)],
                walkways: vec![walk_a, walk_b, walk_c],
            }
        }
    }
}

/// The lane graph a template's scenes are defined on.
pub fn template_lane_graph(t: Template) -> LaneGraph {
    build_template(t).graph
}

/// Follows successor links from `start`, picking uniformly at forks, until
/// at least `min_len` meters are covered or a dead end is reached.
fn random_route(g: &LaneGraph, start: LaneId, min_len: f64, rng: &mut ChaCha8Rng) -> Vec<LaneId> {
    let mut route = vec![start];
    let mut len = g.lane(start).map_or(0.0, |l| l.length());
    while len < min_len {
        let last = g.lane(*route.last().expect("non-empty")).expect("route lanes exist");
        let succ: Vec<LaneId> = last.successors.iter().copied().filter(|s| !route.contains(s)).collect();
        if succ.is_empty() {
            break;
        }
        let next = succ[rng.random_range(0..succ.len())];
        len += g.lane(next).map_or(0.0, |l| l.length());
        route.push(next);
    }
    route
}

fn route_polyline(g: &LaneGraph, route: &[LaneId]) -> Vec<Vec2> {
    let parts: Vec<&[Vec2]> = route
        .iter()
        .map(|id| g.lane(*id).expect("route lanes exist").centerline.as_slice())
        .collect();
    concat(&parts)
}

/// Continuous motion along a path: arc position and lateral offset over time.
struct Motion<'a> {
    path: &'a [Vec2],
    cum: Vec<f64>,
    s0: f64,
    speed: f64,
    /// (start time, duration, lateral shift) of an optional lane change
    shift: Option<(f64, f64, f64)>,
}

impl Motion<'_> {
    fn lateral(&self, time: f64) -> f64 {
        match self.shift {
            Some((t0, dur, d)) => {
                let u = ((time - t0) / dur).clamp(0.0, 1.0);
                d * (3.0 * u * u - 2.0 * u * u * u)
            }
            None => 0.0,
        }
    }

    fn position(&self, time: f64) -> Vec2 {
        let s = self.s0 + self.speed * time;
        let (p, seg) = point_at_arc(self.path, &self.cum, s);
        let tangent = (self.path[seg + 1] - self.path[seg]).normalized().unwrap_or(Vec2::new(1.0, 0.0));
        p + tangent.perp() * self.lateral(time)
    }

    fn velocity(&self, time: f64) -> Vec2 {
        let h = 0.05;
        (self.position(time + h) - self.position(time - h)) * (0.5 / h)
    }
}

fn make_state(t: i32, position: Vec2, velocity: Vec2) -> AgentState {
    let yaw = normalize_angle(velocity.angle());
    AgentState { t, position, velocity, yaw }
}

/// Samples `n` rb tracks. Lateral noise is clipped so that every position
/// stays inside a lane corridor.
fn road_bound_tracks(tm: &TemplateMap, template: Template, n: usize, rng: &mut ChaCha8Rng) -> Vec<AgentTrack> {
    let noise_lat = Normal::new(0.0, 0.1).expect("valid sigma");
    let noise_lon = Normal::new(0.0, 0.05).expect("valid sigma");
    let span = (HISTORY_STEPS - 1 + FUTURE_STEPS) as f64 * DT;
    let mut used: Vec<(LaneId, f64)> = Vec::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let speed: f64 = rng.random_range(6.0..11.0);
        let travel = speed * span;
        let mut start = tm.starts[rng.random_range(0..tm.starts.len())];
        let mut route = random_route(&tm.graph, start, 260.0, rng);
        let mut path = route_polyline(&tm.graph, &route);
        let mut total = polyline_length(&path);
        let mut s0 = 0.0;
        for _ in 0..20 {
            start = tm.starts[rng.random_range(0..tm.starts.len())];
            route = random_route(&tm.graph, start, 260.0, rng);
            path = route_polyline(&tm.graph, &route);
            total = polyline_length(&path);
            s0 = rng.random_range(0.0..(total - travel - 2.0).max(1.0));
            if used.iter().all(|&(l, s)| l != start || (s - s0).abs() > 10.0) {
                break;
            }
        }
        used.push((start, s0));
        let changes_lane = template == Template::LaneChange && start == LaneId(1) && rng.random_bool(0.5);
        let shift = changes_lane.then(|| (rng.random_range(0.0..4.0), 3.0, LANE_WIDTH));
        let motion = Motion {
            cum: cumulative_lengths(&path),
            path: &path,
            s0,
            speed,
            shift,
        };
        debug_assert!(s0 + travel <= total + 1e-9);
        let mut states = Vec::with_capacity(HISTORY_STEPS + FUTURE_STEPS);
        for t in -(HISTORY_STEPS as i32 - 1)..=FUTURE_STEPS as i32 {
            let time = (t + HISTORY_STEPS as i32 - 1) as f64 * DT;
            let base = motion.position(time);
            let vel = motion.velocity(time);
            let dir = vel.normalized().unwrap_or(Vec2::new(1.0, 0.0));
            // keep the perturbed point within the corridor of the nearest lane
            let lat_now = motion.lateral(time);
            let room = (LANE_WIDTH / 2.0 - 0.05 - lat_now.min(LANE_WIDTH - lat_now).abs()).max(0.0);
            let lat = noise_lat.sample(rng).clamp(-0.3, 0.3).clamp(-room, room);
            let lon = noise_lon.sample(rng).clamp(-0.15, 0.15);
            let pos = base + dir.perp() * lat + dir * lon;
            states.push(make_state(t, pos, vel));
        }
        out.push(AgentTrack {
            agent_id: format!("rb{i}"),
            agent_type: AgentType::RoadBound,
            states,
            is_target: i == 0,
        });
    }
    out
}

fn pedestrian_tracks(tm: &TemplateMap, n: usize, first_is_target: bool, rng: &mut ChaCha8Rng) -> Vec<AgentTrack> {
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let span = (HISTORY_STEPS - 1 + FUTURE_STEPS) as f64 * DT;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut path = tm.walkways[rng.random_range(0..tm.walkways.len())].clone();
        if rng.random_bool(0.5) {
            path.reverse();
        }
        let speed: f64 = rng.random_range(1.0..1.6);
        let total = polyline_length(&path);
        let s0 = rng.random_range(0.0..(total - speed * span - 1.0).max(1.0));
        let motion = Motion {
            cum: cumulative_lengths(&path),
            path: &path,
            s0,
            speed,
            shift: None,
        };
        let states = (-(HISTORY_STEPS as i32 - 1)..=FUTURE_STEPS as i32)
            .map(|t| {
                let time = (t + HISTORY_STEPS as i32 - 1) as f64 * DT;
                let jitter = Vec2::new(noise.sample(rng), noise.sample(rng));
                make_state(t, motion.position(time) + jitter, motion.velocity(time))
            })
            .collect();
        out.push(AgentTrack {
            agent_id: format!("nrb{i}"),
            agent_type: AgentType::NonRoadBound,
            states,
            is_target: first_is_target && i == 0,
        });
    }
    out
}

/// Generates `spec.num_scenes` scenes on the template's lane graph.
pub fn generate_synthetic_scenes(spec: &GeneratorSpec, seed: u64) -> Result<Vec<Scene>> {
    let tm = build_template(spec.template);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(spec.num_scenes);
    for i in 0..spec.num_scenes {
        let mut tracks = road_bound_tracks(&tm, spec.template, spec.road_bound, &mut rng);
        let peds = pedestrian_tracks(&tm, spec.non_road_bound, spec.road_bound == 0, &mut rng);
        tracks.extend(peds);
        let id: String = format!("{}_{seed}_{i:04}", spec.template);
        scenes.push(Scene::new(id, spec.template.name(), tracks)?);
    }
    Ok(scenes)
}
