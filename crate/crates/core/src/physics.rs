//! Scene graph construction, collision and constraint detection, and the
//! physics reward `-alpha * collision_ratio - beta * constraint_ratio`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::LayoutError;
use crate::layout::{aabb_of, Aabb, Layout, ObjectSpec, Placement, PlacementClass, RoomSpec, SceneTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OutOfBounds,
    Floating,
}

/// Slack used by the constraint rules, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// How far an AABB may poke through a wall, floor or ceiling.
    pub bound: f64,
    /// Largest gap between an object's underside and its support.
    pub support: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            bound: 0.001,
            support: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub spec: ObjectSpec,
    pub placement: Placement,
    pub aabb: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    /// Unordered pairs, stored with the smaller id first.
    pub collision_edges: BTreeSet<(String, String)>,
    pub violations: BTreeMap<String, BTreeSet<ViolationKind>>,
}

impl SceneGraph {
    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.collision_edges.contains(&edge_key(a, b))
    }

    pub fn is_colliding(&self, id: &str) -> bool {
        self.collision_edges.iter().any(|(a, b)| a == id || b == id)
    }

    pub fn is_violating(&self, id: &str) -> bool {
        self.violations.get(id).is_some_and(|v| !v.is_empty())
    }
}

fn edge_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub fn build_scene_graph(layout: &Layout, task: &SceneTask, tol: &Tolerances) -> Result<SceneGraph, LayoutError> {
    let nodes = layout
        .placements
        .iter()
        .map(|p| {
            let spec = task
                .object(&p.object_id)
                .ok_or_else(|| LayoutError::UnknownObject(p.object_id.clone()))?;
            Ok(SceneNode {
                spec: spec.clone(),
                placement: p.clone(),
                aabb: aabb_of(spec, p)?,
            })
        })
        .collect::<Result<Vec<_>, LayoutError>>()?;

    let mut collision_edges = BTreeSet::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if a.aabb.intersects(&b.aabb) {
                collision_edges.insert(edge_key(&a.spec.id, &b.spec.id));
            }
        }
    }

    let mut violations = BTreeMap::new();
    for (i, node) in nodes.iter().enumerate() {
        let supports: Vec<Aabb> = nodes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, n)| n.aabb)
            .collect();
        let kinds = check_constraints(node, &task.room, &supports, tol);
        if !kinds.is_empty() {
            violations.insert(node.spec.id.clone(), kinds);
        }
    }

    Ok(SceneGraph {
        nodes,
        collision_edges,
        violations,
    })
}

/// Bounds and support rules for one object.
pub fn check_constraints(
    node: &SceneNode,
    room: &RoomSpec,
    support_candidates: &[Aabb],
    tol: &Tolerances,
) -> BTreeSet<ViolationKind> {
    let mut kinds = BTreeSet::new();
    let b = &node.aabb;
    let limits = [room.length_m, room.width_m, room.height_m];
    let outside = (0..3).any(|a| b.min[a] < -tol.bound || b.max[a] > limits[a] + tol.bound);
    if outside {
        kinds.insert(ViolationKind::OutOfBounds);
    }

    let bottom = b.min[2];
    let floating = match node.spec.placement_class {
        PlacementClass::Floor => bottom > tol.support,
        PlacementClass::Surface => {
            let on_floor = bottom <= tol.support;
            let on_support = support_candidates
                .iter()
                .any(|s| (bottom - s.max[2]).abs() <= tol.support && s.overlaps_horizontally(b));
            !(on_floor || on_support)
        }
        PlacementClass::WallMounted | PlacementClass::Ceiling => false,
    };
    if floating {
        kinds.insert(ViolationKind::Floating);
    }
    kinds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub collision_ratio: f64,
    pub constraint_ratio: f64,
    pub physics_reward: f64,
    pub per_object_penalty: BTreeMap<String, f64>,
}

impl PhysicsReport {
    pub fn from_ratios(collision_ratio: f64, constraint_ratio: f64, alpha: f64, beta: f64) -> Self {
        Self {
            collision_ratio,
            constraint_ratio,
            physics_reward: -alpha * collision_ratio - beta * constraint_ratio,
            per_object_penalty: BTreeMap::new(),
        }
    }

    /// Report for a roll-out whose layout could not be scored: every task
    /// object counts as colliding and violating.
    pub fn unscorable(task: &SceneTask, alpha: f64, beta: f64) -> Self {
        let mut report = Self::from_ratios(1.0, 1.0, alpha, beta);
        report.per_object_penalty = task.objects.iter().map(|o| (o.id.clone(), 1.0)).collect();
        report
    }
}

pub fn physics_report(graph: &SceneGraph, alpha: f64, beta: f64) -> Result<PhysicsReport, LayoutError> {
    if graph.nodes.is_empty() {
        return Err(LayoutError::EmptyScene);
    }
    let n = graph.nodes.len() as f64;
    let mut colliding = 0usize;
    let mut violating = 0usize;
    let mut per_object_penalty = BTreeMap::new();
    for node in &graph.nodes {
        let id = node.spec.id.as_str();
        let c = graph.is_colliding(id);
        let v = graph.is_violating(id);
        colliding += c as usize;
        violating += v as usize;
        per_object_penalty.insert(id.to_string(), 0.5 * c as u8 as f64 + 0.5 * v as u8 as f64);
    }
    let mut report = PhysicsReport::from_ratios(colliding as f64 / n, violating as f64 / n, alpha, beta);
    report.per_object_penalty = per_object_penalty;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room_task(n: usize) -> SceneTask {
        let objects = (0..n)
            .map(|i| ObjectSpec::new(format!("o{i}"), [1.0, 1.0, 1.0]))
            .collect();
        SceneTask::new(RoomSpec::new(6.0, 5.0, 3.0), objects, "").unwrap()
    }

    fn layout(points: &[(f64, f64, f64)]) -> Layout {
        Layout::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y, z))| Placement::new(format!("o{i}"), x, y, z))
                .collect(),
        )
    }

    fn graph(points: &[(f64, f64, f64)]) -> SceneGraph {
        build_scene_graph(&layout(points), &room_task(points.len()), &Tolerances::default()).unwrap()
    }

    #[test]
    fn disjoint_cubes_do_not_collide() {
        assert!(graph(&[(1.0, 1.0, 0.5), (3.0, 3.0, 0.5)]).collision_edges.is_empty());
    }

    #[test]
    fn overlapping_cubes_collide() {
        let g = graph(&[(1.0, 1.0, 0.5), (1.5, 1.0, 0.5)]);
        assert_eq!(g.collision_edges.len(), 1);
        assert!(g.has_edge("o1", "o0"));
    }

    #[test]
    fn touching_faces_are_legal() {
        assert!(graph(&[(1.0, 1.0, 0.5), (2.0, 1.0, 0.5)]).collision_edges.is_empty());
    }

    #[test]
    fn unknown_object_is_named() {
        let task = room_task(1);
        let l = Layout::new(vec![Placement::new("ghost", 1.0, 1.0, 0.5)]);
        match build_scene_graph(&l, &task, &Tolerances::default()) {
            Err(LayoutError::UnknownObject(id)) => assert_eq!(id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn node(class: PlacementClass, at: (f64, f64, f64)) -> SceneNode {
        let spec = ObjectSpec::new("a", [1.0, 1.0, 1.0]).with_class(class);
        let placement = Placement::new("a", at.0, at.1, at.2);
        let aabb = aabb_of(&spec, &placement).unwrap();
        SceneNode { spec, placement, aabb }
    }

    fn constraints(class: PlacementClass, at: (f64, f64, f64), supports: &[Aabb]) -> BTreeSet<ViolationKind> {
        check_constraints(
            &node(class, at),
            &RoomSpec::new(6.0, 5.0, 3.0),
            supports,
            &Tolerances::default(),
        )
    }

    #[test]
    fn wall_overhang_is_out_of_bounds() {
        let v = constraints(PlacementClass::Floor, (5.8, 1.0, 0.5), &[]);
        assert_eq!(v, BTreeSet::from([ViolationKind::OutOfBounds]));
    }

    #[test]
    fn resting_on_floor_is_fine() {
        assert!(constraints(PlacementClass::Floor, (1.0, 1.0, 0.5), &[]).is_empty());
    }

    #[test]
    fn lifted_floor_object_floats() {
        let v = constraints(PlacementClass::Floor, (1.0, 1.0, 1.0), &[]);
        assert_eq!(v, BTreeSet::from([ViolationKind::Floating]));
    }

    #[test]
    fn sub_millimetre_overhang_is_tolerated() {
        assert!(constraints(PlacementClass::Floor, (5.5005, 1.0, 0.5), &[]).is_empty());
    }

    #[test]
    fn surface_object_needs_a_supporter() {
        let table = Aabb {
            min: [0.5, 0.5, 0.0],
            max: [1.5, 1.5, 0.75],
        };
        assert!(constraints(PlacementClass::Surface, (1.0, 1.0, 1.25), &[table]).is_empty());
        let far_table = Aabb {
            min: [3.0, 3.0, 0.0],
            max: [4.0, 4.0, 0.75],
        };
        assert_eq!(
            constraints(PlacementClass::Surface, (1.0, 1.0, 1.25), &[far_table]),
            BTreeSet::from([ViolationKind::Floating])
        );
        assert!(constraints(PlacementClass::Surface, (1.0, 1.0, 0.5), &[]).is_empty());
    }

    #[test]
    fn wall_and_ceiling_objects_may_hang() {
        assert!(constraints(PlacementClass::WallMounted, (1.0, 0.5, 2.0), &[]).is_empty());
        assert!(constraints(PlacementClass::Ceiling, (1.0, 1.0, 2.5), &[]).is_empty());
    }

    #[test]
    fn two_of_four_colliding() {
        let g = graph(&[(1.0, 1.0, 0.5), (1.5, 1.0, 0.5), (4.0, 1.0, 0.5), (4.0, 3.5, 0.5)]);
        let r = physics_report(&g, 0.2, 0.2).unwrap();
        assert_eq!(r.collision_ratio, 0.5);
        assert_eq!(r.constraint_ratio, 0.0);
        assert!((r.physics_reward - -0.10).abs() < 1e-12);
        assert_eq!(r.per_object_penalty["o0"], 0.5);
        assert_eq!(r.per_object_penalty["o2"], 0.0);
    }

    #[test]
    fn clean_scene_scores_zero() {
        let g = graph(&[(1.0, 1.0, 0.5), (3.0, 3.0, 0.5)]);
        let r = physics_report(&g, 0.2, 0.2).unwrap();
        assert_eq!(r.physics_reward, 0.0);
    }

    #[test]
    fn everything_wrong_scores_minus_point_four() {
        // Stacked, lifted and poking through the ceiling.
        let g = graph(&[(1.0, 1.0, 2.8), (1.2, 1.0, 2.8), (1.1, 1.1, 2.9)]);
        let r = physics_report(&g, 0.2, 0.2).unwrap();
        assert!((r.physics_reward - -0.4).abs() < 1e-12);
        assert!(r.per_object_penalty.values().all(|&p| p == 1.0));
    }

    #[test]
    fn empty_graph_is_an_error() {
        let g = SceneGraph {
            nodes: vec![],
            collision_edges: BTreeSet::new(),
            violations: BTreeMap::new(),
        };
        assert!(matches!(physics_report(&g, 0.2, 0.2), Err(LayoutError::EmptyScene)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scene() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
            proptest::collection::vec((0.5f64..5.5, 0.5f64..4.5, 0.5f64..2.5), 1..10)
        }

        proptest! {
            #[test]
            fn edges_are_symmetric(points in scene()) {
                let g = graph(&points);
                for (a, b) in &g.collision_edges {
                    prop_assert!(a != b);
                    prop_assert!(g.has_edge(b, a));
                }
            }

            #[test]
            fn translation_keeps_edges(points in scene(), dx in -0.4f64..0.4, dy in -0.4f64..0.4, dz in 0.0f64..0.4) {
                let g = graph(&points);
                let moved: Vec<_> = points.iter().map(|p| (p.0 + dx, p.1 + dy, p.2 + dz)).collect();
                let h = graph(&moved);
                prop_assert_eq!(&g.collision_edges, &h.collision_edges);
                let a = physics_report(&g, 0.2, 0.2).unwrap().collision_ratio;
                let b = physics_report(&h, 0.2, 0.2).unwrap().collision_ratio;
                prop_assert_eq!(a, b);
            }

            #[test]
            fn report_is_bounded(points in proptest::collection::vec((-1.0f64..7.0, -1.0f64..6.0, -1.0f64..4.0), 1..10),
                                 alpha in 0.0f64..1.0, beta in 0.0f64..1.0) {
                let g = graph(&points);
                let r = physics_report(&g, alpha, beta).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.collision_ratio));
                prop_assert!((0.0..=1.0).contains(&r.constraint_ratio));
                prop_assert!(r.per_object_penalty.values().all(|p| (0.0..=1.0).contains(p)));
                prop_assert!(r.physics_reward <= 0.0 && r.physics_reward >= -(alpha + beta) - 1e-12);
            }
        }
    }
}
