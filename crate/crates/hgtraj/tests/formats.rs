use proptest::prelude::*;

use hgtraj::formats::{load_lane_graph, load_prediction, load_scene, save_lane_graph, save_prediction, save_scene};
use hgtraj_core::model::{AgentPrediction, Prediction};
use hgtraj_core::scene::{AgentType, FUTURE_STEPS};
use hgtraj_core::synth::{generate_synthetic_scenes, template_lane_graph, GeneratorSpec, Template};
use hgtraj_core::Vec2;

fn template() -> impl Strategy<Value = Template> {
    (0..Template::ALL.len()).prop_map(|i| Template::ALL[i])
}

fn agent(i: usize) -> impl Strategy<Value = AgentPrediction> {
    (
        prop::collection::vec(prop::array::uniform12((-1e3..1e3f64, -1e3..1e3f64)), 1..6),
        any::<bool>(),
    )
        .prop_flat_map(move |(trajs, rb)| {
            let k = trajs.len();
            (
                Just(trajs),
                Just(rb),
                prop::collection::vec(-10.0..10.0f64, k),
                prop::collection::vec(prop::option::of(0..20usize), k),
            )
        })
        .prop_map(move |(trajs, rb, scores, anchor_ids)| AgentPrediction {
            agent: i,
            agent_id: format!("agent_{i}"),
            agent_type: if rb { AgentType::RoadBound } else { AgentType::NonRoadBound },
            trajectories: trajs
                .into_iter()
                .map(|t| {
                    let mut out = [Vec2::new(0.0, 0.0); FUTURE_STEPS];
                    for (o, (x, y)) in out.iter_mut().zip(t) {
                        *o = Vec2::new(x, y);
                    }
                    out
                })
                .collect(),
            scores,
            anchor_ids,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenes_round_trip_exactly(t in template(), rb in 1usize..4, nrb in 0usize..3, seed in any::<u64>()) {
        let spec = GeneratorSpec::new(t.name(), rb, nrb, 1).unwrap();
        let scene = generate_synthetic_scenes(&spec, seed).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.scene.json");
        save_scene(&scene, &path).unwrap();
        prop_assert_eq!(load_scene(&path).unwrap(), scene);
    }

    #[test]
    fn lane_graphs_round_trip_after_transform(t in template(), theta in -3.2..3.2f64, dx in -500.0..500.0f64) {
        let g = template_lane_graph(t).rotated(theta).translated(Vec2::new(dx, -dx));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.lanes.json");
        save_lane_graph(&g, &path).unwrap();
        prop_assert_eq!(load_lane_graph(&path).unwrap(), g);
    }

    #[test]
    fn predictions_round_trip_exactly(a0 in agent(0), a1 in agent(1)) {
        let p = Prediction { agents: vec![a0, a1] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pred.json");
        save_prediction("x", &p, &path).unwrap();
        let (id, back) = load_prediction(&path).unwrap();
        prop_assert_eq!(id, "x");
        prop_assert_eq!(back, p);
    }
}
