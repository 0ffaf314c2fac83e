//! Scene tasks, layouts and the geometry derived from them.
//!
//! Coordinates are meters with `z` vertical. A placement's `(x, y, z)` is the
//! centroid of the object's axis-aligned bounding box, and the room occupies
//! `[0, length] x [0, width] x [0, height]` with the origin at a floor corner.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::LayoutError;

/// One of the three spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Room extents. Serialized as `{"x": .., "y": .., "z": ..}` in task files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    #[serde(rename = "x")]
    pub length_m: f64,
    #[serde(rename = "y")]
    pub width_m: f64,
    #[serde(rename = "z")]
    pub height_m: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layout_elements: Vec<String>,
}

impl RoomSpec {
    pub fn new(length_m: f64, width_m: f64, height_m: f64) -> Self {
        Self {
            length_m,
            width_m,
            height_m,
            layout_elements: Vec::new(),
        }
    }

    pub fn extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.length_m,
            Axis::Y => self.width_m,
            Axis::Z => self.height_m,
        }
    }
}

/// How an object is expected to be supported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementClass {
    #[default]
    Floor,
    Surface,
    WallMounted,
    Ceiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    #[serde(default)]
    pub category: String,
    /// Full extents `(dx, dy, dz)` in meters.
    pub size_m: [f64; 3],
    #[serde(default)]
    pub material: String,
    #[serde(default)]
    pub style: String,
    #[serde(default)]
    pub placement_class: PlacementClass,
}

impl ObjectSpec {
    pub fn new(id: impl Into<String>, size_m: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            category: String::new(),
            size_m,
            material: String::new(),
            style: String::new(),
            placement_class: PlacementClass::Floor,
        }
    }

    pub fn with_class(mut self, class: PlacementClass) -> Self {
        self.placement_class = class;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    #[serde(rename = "new_object_id")]
    pub object_id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Placement {
    pub fn new(object_id: impl Into<String>, x: f64, y: f64, z: f64) -> Self {
        Self {
            object_id: object_id.into(),
            x,
            y,
            z,
        }
    }

    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self::new(self.object_id.clone(), self.x + by[0], self.y + by[1], self.z + by[2])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub placements: Vec<Placement>,
}

impl Layout {
    pub fn new(placements: Vec<Placement>) -> Self {
        Self { placements }
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn get(&self, object_id: &str) -> Option<&Placement> {
        self.placements.iter().find(|p| p.object_id == object_id)
    }
}

/// The immutable per-sample input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTask {
    /// Optional identifier; files without one get their id from the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub room: RoomSpec,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub user_preference: String,
}

impl SceneTask {
    /// Builds a task and checks its invariants.
    pub fn new(
        room: RoomSpec,
        objects: Vec<ObjectSpec>,
        user_preference: impl Into<String>,
    ) -> Result<Self, LayoutError> {
        let task = Self {
            id: None,
            room,
            objects,
            user_preference: user_preference.into(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let room = &self.room;
        for (field, v) in [
            ("room.x", room.length_m),
            ("room.y", room.width_m),
            ("room.z", room.height_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LayoutError::InvalidTask {
                    field: field.to_string(),
                    reason: format!("must be a positive finite number, got {v}"),
                });
            }
        }
        if self.objects.is_empty() {
            return Err(LayoutError::InvalidTask {
                field: "objects".into(),
                reason: "at least one object is required".into(),
            });
        }
        let mut seen = HashSet::new();
        for (i, obj) in self.objects.iter().enumerate() {
            if !seen.insert(obj.id.as_str()) {
                return Err(LayoutError::InvalidTask {
                    field: format!("objects[{i}].id"),
                    reason: format!("duplicate object id {:?}", obj.id),
                });
            }
            if obj.size_m.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(LayoutError::InvalidTask {
                    field: format!("objects[{i}].size_m"),
                    reason: "all size components must be positive".into(),
                });
            }
        }
        Ok(())
    }

    pub fn task_id(&self) -> &str {
        self.id.as_deref().unwrap_or("task")
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Parses a task document, reporting the offending field path on failure.
    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let task: SceneTask = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            LayoutError::InvalidTask {
                field: path,
                reason: e.into_inner().to_string(),
            }
        })?;
        task.validate()?;
        Ok(task)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LayoutError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LayoutError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut task = Self::from_json(&text)?;
        if task.id.is_none() {
            task.id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(task)
    }
}

/// Axis-aligned bounding box in room coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_center_size(center: [f64; 3], size: [f64; 3]) -> Self {
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for i in 0..3 {
            min[i] = center[i] - size[i] / 2.0;
            max[i] = center[i] + size[i] / 2.0;
        }
        Self { min, max }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    /// Overlap length along one axis; zero or negative when disjoint or touching.
    pub fn overlap_on(&self, other: &Aabb, axis: usize) -> f64 {
        self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])
    }

    /// True when the intersection has strictly positive volume.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.overlap_on(other, a) > 0.0)
    }

    /// True when the footprints (x/y projections) share positive area.
    pub fn overlaps_horizontally(&self, other: &Aabb) -> bool {
        (0..2).all(|a| self.overlap_on(other, a) > 0.0)
    }
}

/// Bounding box of `spec` placed at `placement`.
pub fn aabb_of(spec: &ObjectSpec, placement: &Placement) -> Result<Aabb, LayoutError> {
    if spec.id != placement.object_id {
        return Err(LayoutError::IdMismatch {
            spec: spec.id.clone(),
            placement: placement.object_id.clone(),
        });
    }
    Ok(Aabb::from_center_size(
        [placement.x, placement.y, placement.z],
        spec.size_m,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> ObjectSpec {
        ObjectSpec::new("a", [1.0, 1.0, 1.0])
    }

    #[test]
    fn unit_cube_at_origin() {
        let b = aabb_of(&cube(), &Placement::new("a", 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(b.min, [-0.5, -0.5, -0.5]);
        assert_eq!(b.max, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn box_extents_by_hand() {
        let spec = ObjectSpec::new("a", [2.0, 1.0, 0.5]);
        let b = aabb_of(&spec, &Placement::new("a", 1.0, 1.0, 0.25)).unwrap();
        assert_eq!(b.min, [0.0, 0.5, 0.0]);
        assert_eq!(b.max, [2.0, 1.5, 0.5]);
    }

    #[test]
    fn sofa_rests_on_floor() {
        let spec = ObjectSpec::new("sectional_sofa_1", [2.0, 0.9, 0.9]);
        let b = aabb_of(&spec, &Placement::new("sectional_sofa_1", 1.0, 1.82, 0.45)).unwrap();
        assert!((b.min[2] - 0.0).abs() < 1e-12);
        assert!((b.max[2] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn mismatched_id_is_rejected() {
        let err = aabb_of(&cube(), &Placement::new("b", 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, LayoutError::IdMismatch { .. }));
    }

    #[test]
    fn task_file_reports_field_path() {
        let err =
            SceneTask::from_json(r#"{"room":{"x":6,"y":5,"z":3},"objects":[{"id":"a","size_m":[1,1]}]}"#).unwrap_err();
        match err {
            LayoutError::InvalidTask { field, .. } => assert!(field.contains("objects[0].size_m"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn placement_class_defaults_to_floor() {
        let task = SceneTask::from_json(
            r#"{"room":{"x":6,"y":5,"z":3},"objects":[{"id":"a","size_m":[1,1,1]}],"user_preference":"cozy"}"#,
        )
        .unwrap();
        assert_eq!(task.objects[0].placement_class, PlacementClass::Floor);
    }

    #[test]
    fn rejects_bad_room_and_duplicates() {
        let room = RoomSpec::new(0.0, 5.0, 3.0);
        assert!(SceneTask::new(room, vec![cube()], "").is_err());
        let room = RoomSpec::new(6.0, 5.0, 3.0);
        assert!(SceneTask::new(room.clone(), vec![], "").is_err());
        assert!(SceneTask::new(room, vec![cube(), cube()], "").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn centroid_is_preserved(
                x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0,
                dx in 0.01f64..5.0, dy in 0.01f64..5.0, dz in 0.01f64..5.0,
            ) {
                let spec = ObjectSpec::new("o", [dx, dy, dz]);
                let b = aabb_of(&spec, &Placement::new("o", x, y, z)).unwrap();
                let c = b.center();
                prop_assert!((c[0] - x).abs() <= 1e-12 * (1.0 + x.abs()));
                prop_assert!((c[1] - y).abs() <= 1e-12 * (1.0 + y.abs()));
                prop_assert!((c[2] - z).abs() <= 1e-12 * (1.0 + z.abs()));
            }
        }
    }
}
