//! Plane bar structures: joints, bars, the structure file format and the
//! binary-unit construction.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// How the bars meeting at a joint are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    /// Pin connection; incident bars rotate freely relative to each other.
    Hinge,
    /// Moment connection; incident bars move as one rigid body.
    Rigid,
}

impl fmt::Display for JointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JointKind::Hinge => f.write_str("hinge"),
            JointKind::Rigid => f.write_str("rigid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub kind: JointKind,
}

impl Joint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bar {
    pub id: u32,
    pub j1: u32,
    pub j2: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm2(self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StructureError {
    #[error("malformed structure document at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("structure has no bars")]
    NoBars,
    #[error("joints[{index}]: duplicate joint id {id}")]
    DuplicateJoint { index: usize, id: u32 },
    #[error("joints[{index}]: coordinates of joint {id} are not finite")]
    NonFinite { index: usize, id: u32 },
    #[error("bars[{index}]: duplicate bar id {id}")]
    DuplicateBarId { index: usize, id: u32 },
    #[error("bars[{index}]: bar {id} references missing joint {joint}")]
    DanglingJoint { index: usize, id: u32, joint: u32 },
    #[error("bars[{index}]: bar {id} connects joint {joint} to itself")]
    SelfLoop { index: usize, id: u32, joint: u32 },
    #[error("bars[{index}]: bar {id} has zero length")]
    ZeroLength { index: usize, id: u32 },
    #[error("bars[{index}]: bar {id} duplicates the connection {j1}-{j2}")]
    DuplicateBar { index: usize, id: u32, j1: u32, j2: u32 },
    #[error("joints[{index}]: joint {id} is not attached to any bar")]
    IsolatedJoint { index: usize, id: u32 },
    #[error("joint {0} does not exist")]
    UnknownJoint(u32),
    #[error("binary unit needs two distinct joints, got {0} twice")]
    SameJoint(u32),
    #[error("new joint is collinear with joints {0} and {1}")]
    Collinear(u32, u32),
    #[error("new joint coincides with existing joint {0}")]
    Coincident(u32),
}

/// A validated plane bar structure. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    name: String,
    joints: Vec<Joint>,
    bars: Vec<Bar>,
    index: HashMap<u32, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureDoc {
    name: String,
    joints: Vec<Joint>,
    bars: Vec<Bar>,
}

impl Structure {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        bars: Vec<Bar>,
    ) -> Result<Self, StructureError> {
        if bars.is_empty() {
            return Err(StructureError::NoBars);
        }
        let mut index = HashMap::with_capacity(joints.len());
        for (i, j) in joints.iter().enumerate() {
            if !j.x.is_finite() || !j.y.is_finite() {
                return Err(StructureError::NonFinite { index: i, id: j.id });
            }
            if index.insert(j.id, i).is_some() {
                return Err(StructureError::DuplicateJoint { index: i, id: j.id });
            }
        }
        let mut bar_ids = HashSet::with_capacity(bars.len());
        let mut pairs = HashSet::with_capacity(bars.len());
        let mut used = vec![false; joints.len()];
        for (i, b) in bars.iter().enumerate() {
            if !bar_ids.insert(b.id) {
                return Err(StructureError::DuplicateBarId { index: i, id: b.id });
            }
            let mut ends = [0usize; 2];
            for (slot, jid) in [b.j1, b.j2].into_iter().enumerate() {
                ends[slot] = *index.get(&jid).ok_or(StructureError::DanglingJoint {
                    index: i,
                    id: b.id,
                    joint: jid,
                })?;
            }
            if b.j1 == b.j2 {
                return Err(StructureError::SelfLoop {
                    index: i,
                    id: b.id,
                    joint: b.j1,
                });
            }
            let (a, c) = (joints[ends[0]], joints[ends[1]]);
            if a.x == c.x && a.y == c.y {
                return Err(StructureError::ZeroLength { index: i, id: b.id });
            }
            if !pairs.insert((b.j1.min(b.j2), b.j1.max(b.j2))) {
                return Err(StructureError::DuplicateBar {
                    index: i,
                    id: b.id,
                    j1: b.j1,
                    j2: b.j2,
                });
            }
            used[ends[0]] = true;
            used[ends[1]] = true;
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(StructureError::IsolatedJoint {
                index: i,
                id: joints[i].id,
            });
        }
        Ok(Self {
            name: name.into(),
            joints,
            bars,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    /// Position of joint `id` in [`Structure::joints`].
    pub fn joint_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn joint(&self, id: u32) -> Option<&Joint> {
        self.joint_index(id).map(|i| &self.joints[i])
    }

    /// Joint indices of both ends of bar `b`.
    pub fn bar_ends(&self, b: &Bar) -> (usize, usize) {
        (self.index[&b.j1], self.index[&b.j2])
    }

    pub fn hinge_count(&self) -> usize {
        self.joints
            .iter()
            .filter(|j| j.kind == JointKind::Hinge)
            .count()
    }

    /// Number of bars meeting at each joint, in joint order.
    pub fn joint_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.joints.len()];
        for b in &self.bars {
            let (a, c) = self.bar_ends(b);
            deg[a] += 1;
            deg[c] += 1;
        }
        deg
    }

    /// Joints attached to exactly one bar. Allowed, but worth reporting.
    pub fn pendant_joints(&self) -> Vec<u32> {
        self.joint_degrees()
            .iter()
            .zip(&self.joints)
            .filter(|(d, _)| **d == 1)
            .map(|(_, j)| j.id)
            .collect()
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for j in &self.joints {
            lo.x = lo.x.min(j.x);
            lo.y = lo.y.min(j.y);
            hi.x = hi.x.max(j.x);
            hi.y = hi.y.max(j.y);
        }
        (lo, hi)
    }

    /// Same topology with every joint coordinate replaced by `f(x, y)`.
    pub fn map_coordinates(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self, StructureError> {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let (x, y) = f(j.x, j.y);
                Joint { x, y, ..*j }
            })
            .collect();
        Structure::new(self.name.clone(), joints, self.bars.clone())
    }

    /// Same geometry with every joint switched to `kind`.
    pub fn with_all_joints(&self, kind: JointKind) -> Self {
        let mut s = self.clone();
        for j in &mut s.joints {
            j.kind = kind;
        }
        s
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Attach a binary unit: a new joint at `p` connected by two new bars to
    /// the existing joints `ja` and `jb`.
    pub fn add_binary_unit(
        &self,
        ja: u32,
        jb: u32,
        p: Point,
        kind: JointKind,
    ) -> Result<Self, StructureError> {
        if ja == jb {
            return Err(StructureError::SameJoint(ja));
        }
        let a = self.joint(ja).ok_or(StructureError::UnknownJoint(ja))?.point();
        let b = self.joint(jb).ok_or(StructureError::UnknownJoint(jb))?.point();
        let base = b.sub(a);
        if p.sub(a).cross(base).abs() < 1e-9 * base.norm2() {
            return Err(StructureError::Collinear(ja, jb));
        }
        if let Some(j) = self.joints.iter().find(|j| j.x == p.x && j.y == p.y) {
            return Err(StructureError::Coincident(j.id));
        }
        let new_joint = self.joints.iter().map(|j| j.id).max().unwrap_or(0) + 1;
        let new_bar = self.bars.iter().map(|b| b.id).max().unwrap_or(0) + 1;
        let mut joints = self.joints.clone();
        joints.push(Joint {
            id: new_joint,
            x: p.x,
            y: p.y,
            kind,
        });
        let mut bars = self.bars.clone();
        bars.push(Bar {
            id: new_bar,
            j1: ja,
            j2: new_joint,
        });
        bars.push(Bar {
            id: new_bar + 1,
            j1: jb,
            j2: new_joint,
        });
        Structure::new(self.name.clone(), joints, bars)
    }
}

/// Parse a structure document (JSON object notation).
pub fn parse_structure(document: &str) -> Result<Structure, StructureError> {
    let doc: StructureDoc =
        serde_json::from_str(document).map_err(|e| StructureError::Malformed {
            line: e.line(),
            column: e.column(),
            message: {
                let full = e.to_string();
                let suffix = format!(" at line {} column {}", e.line(), e.column());
                full.strip_suffix(&suffix).unwrap_or(&full).to_owned()
            },
        })?;
    Structure::new(doc.name, doc.joints, doc.bars)
}

/// Serialize to the structure document format, pretty-printed.
pub fn serialize_structure(s: &Structure) -> String {
    let doc = StructureDoc {
        name: s.name.clone(),
        joints: s.joints.clone(),
        bars: s.bars.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("structure documents always serialize")
}

/// Small builder used by the catalog and tests. Joint and bar ids are
/// assigned sequentially from 0.
#[derive(Debug, Default)]
pub struct StructureBuilder {
    joints: Vec<Joint>,
    bars: Vec<Bar>,
}

impl StructureBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn joint(&mut self, x: f64, y: f64, kind: JointKind) -> u32 {
        let id = self.joints.len() as u32;
        self.joints.push(Joint { id, x, y, kind });
        id
    }

    pub fn hinge(&mut self, x: f64, y: f64) -> u32 {
        self.joint(x, y, JointKind::Hinge)
    }

    pub fn rigid(&mut self, x: f64, y: f64) -> u32 {
        self.joint(x, y, JointKind::Rigid)
    }

    pub fn bar(&mut self, j1: u32, j2: u32) -> &mut Self {
        let id = self.bars.len() as u32;
        self.bars.push(Bar { id, j1, j2 });
        self
    }

    /// Bars around a closed loop of joints.
    pub fn cycle(&mut self, ids: &[u32]) -> &mut Self {
        for i in 0..ids.len() {
            self.bar(ids[i], ids[(i + 1) % ids.len()]);
        }
        self
    }

    pub fn build(&self, name: &str) -> Result<Structure, StructureError> {
        Structure::new(name, self.joints.clone(), self.bars.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = r#"{
        "name": "triangle",
        "joints": [
            {"id": 0, "x": 0, "y": 0, "kind": "hinge"},
            {"id": 1, "x": 4, "y": 0, "kind": "hinge"},
            {"id": 2, "x": 2, "y": 3, "kind": "hinge"}
        ],
        "bars": [
            {"id": 0, "j1": 0, "j2": 1},
            {"id": 1, "j1": 1, "j2": 2},
            {"id": 2, "j1": 2, "j2": 0}
        ]
    }"#;

    #[test]
    fn parses_triangle() {
        let s = parse_structure(TRIANGLE).unwrap();
        assert_eq!(s.name(), "triangle");
        assert_eq!(s.joints().len(), 3);
        assert_eq!(s.bars().len(), 3);
        assert_eq!(s.hinge_count(), 3);
    }

    #[test]
    fn rejects_empty_bar_list() {
        let doc = r#"{"name": "x", "joints": [], "bars": []}"#;
        let err = parse_structure(doc).unwrap_err();
        assert_eq!(err, StructureError::NoBars);
        assert_eq!(err.to_string(), "structure has no bars");
    }

    #[test]
    fn dangling_reference_names_joint() {
        let doc = TRIANGLE.replace(r#""j1": 2, "j2": 0"#, r#""j1": 2, "j2": 99"#);
        let err = parse_structure(&doc).unwrap_err();
        assert!(matches!(err, StructureError::DanglingJoint { joint: 99, index: 2, .. }));
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn reports_syntax_location() {
        let err = parse_structure("{\n  \"name\": \"x\",\n  oops\n}").unwrap_err();
        match err {
            StructureError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_fields() {
        let doc = TRIANGLE.replace(r#""name": "triangle","#, r#""name": "t", "load": 5,"#);
        assert!(matches!(
            parse_structure(&doc),
            Err(StructureError::Malformed { .. })
        ));
    }

    #[test]
    fn rejects_invalid_topology() {
        let mut b = StructureBuilder::new();
        let a = b.hinge(0.0, 0.0);
        let c = b.hinge(0.0, 0.0);
        b.bar(a, c);
        assert!(matches!(b.build("z"), Err(StructureError::ZeroLength { .. })));

        let mut b = StructureBuilder::new();
        let a = b.hinge(0.0, 0.0);
        let c = b.hinge(1.0, 0.0);
        b.bar(a, c).bar(c, a);
        assert!(matches!(b.build("d"), Err(StructureError::DuplicateBar { .. })));

        let mut b = StructureBuilder::new();
        let a = b.hinge(0.0, 0.0);
        let c = b.hinge(1.0, 0.0);
        b.hinge(2.0, 0.0);
        b.bar(a, c);
        assert!(matches!(b.build("i"), Err(StructureError::IsolatedJoint { id: 2, .. })));

        let joints = vec![
            Joint { id: 1, x: 0.0, y: 0.0, kind: JointKind::Hinge },
            Joint { id: 1, x: 1.0, y: 0.0, kind: JointKind::Hinge },
        ];
        let bars = vec![Bar { id: 0, j1: 1, j2: 1 }];
        assert!(matches!(
            Structure::new("dup", joints, bars),
            Err(StructureError::DuplicateJoint { index: 1, id: 1 })
        ));
    }

    #[test]
    fn serialize_round_trip() {
        let s = parse_structure(TRIANGLE).unwrap();
        let back = parse_structure(&serialize_structure(&s)).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rigid_kind_serializes_as_tag() {
        let mut b = StructureBuilder::new();
        let a = b.rigid(0.0, 0.0);
        let c = b.hinge(1.0, 0.0);
        b.bar(a, c);
        let text = serialize_structure(&b.build("r").unwrap());
        assert!(text.contains(r#""kind": "rigid""#));
    }

    #[test]
    fn binary_unit_adds_joint_and_two_bars() {
        let s = parse_structure(TRIANGLE).unwrap();
        let t = s.add_binary_unit(0, 1, Point::new(2.0, -3.0), JointKind::Hinge).unwrap();
        assert_eq!(t.joints().len(), 4);
        assert_eq!(t.bars().len(), 5);
        assert_eq!(s.joints().len(), 3, "original untouched");
    }

    #[test]
    fn binary_unit_rejects_collinear_and_coincident() {
        let s = parse_structure(TRIANGLE).unwrap();
        assert_eq!(
            s.add_binary_unit(0, 1, Point::new(8.0, 0.0), JointKind::Hinge),
            Err(StructureError::Collinear(0, 1))
        );
        assert_eq!(
            s.add_binary_unit(0, 1, Point::new(2.0, 3.0), JointKind::Hinge),
            Err(StructureError::Coincident(2))
        );
        assert_eq!(
            s.add_binary_unit(0, 0, Point::new(5.0, 5.0), JointKind::Hinge),
            Err(StructureError::SameJoint(0))
        );
        assert_eq!(
            s.add_binary_unit(0, 7, Point::new(5.0, 5.0), JointKind::Hinge),
            Err(StructureError::UnknownJoint(7))
        );
    }
}
