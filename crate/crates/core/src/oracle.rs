//! Exact kinematic analysis.
//!
//! Bars joined by rigid joints are merged into rigid bodies. Every hinge
//! joint pins the bodies meeting there, which gives a linear system on the
//! bodies' first-order velocities `(u, v, omega)`. Its null space is the set
//! of infinitesimal motions; a connected structure is stable exactly when
//! that space is the 3-dimensional space of planar rigid motions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::structure::{JointKind, Point, Structure};

/// Relative singular-value threshold used for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-9;

const PERTURBATION_DRAWS: usize = 5;
const PERTURBATION_SCALE: f64 = 1e-3;
const PERTURBATION_SEED: u64 = 0x6b69_6e65_6e65_7401;

/// Bars grouped into rigid bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodySet {
    /// Body index for each bar, in bar order.
    pub body_of_bar: Vec<usize>,
    pub body_count: usize,
    /// Joint index used as each body's reference point (first joint of its first bar).
    pub reference_joint: Vec<usize>,
}

impl RigidBodySet {
    pub fn body_of_bar_id(&self, s: &Structure, bar_id: u32) -> Option<usize> {
        s.bars()
            .iter()
            .position(|b| b.id == bar_id)
            .map(|i| self.body_of_bar[i])
    }

    /// Distinct bodies incident to every joint, sorted by body index.
    pub fn bodies_at_joints(&self, s: &Structure) -> Vec<Vec<usize>> {
        let mut at = vec![Vec::new(); s.joints().len()];
        for (bi, b) in s.bars().iter().enumerate() {
            let (a, c) = s.bar_ends(b);
            at[a].push(self.body_of_bar[bi]);
            at[c].push(self.body_of_bar[bi]);
        }
        for v in &mut at {
            v.sort_unstable();
            v.dedup();
        }
        at
    }
}

/// Minimal union-find over `0..n`.
#[derive(Debug, Clone)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Merge bars that share a rigid joint (transitively) into bodies.
pub fn merge_rigid_bodies(s: &Structure) -> RigidBodySet {
    let bars = s.bars();
    let mut sets = DisjointSet::new(bars.len());
    let mut first_bar_at: Vec<Option<usize>> = vec![None; s.joints().len()];
    for (bi, b) in bars.iter().enumerate() {
        let (a, c) = s.bar_ends(b);
        for j in [a, c] {
            if s.joints()[j].kind != JointKind::Rigid {
                continue;
            }
            match first_bar_at[j] {
                Some(other) => sets.union(other, bi),
                None => first_bar_at[j] = Some(bi),
            }
        }
    }
    let mut body_of_root = vec![usize::MAX; bars.len()];
    let mut body_of_bar = Vec::with_capacity(bars.len());
    let mut reference_joint = Vec::new();
    for (bi, b) in bars.iter().enumerate() {
        let root = sets.find(bi);
        if body_of_root[root] == usize::MAX {
            body_of_root[root] = reference_joint.len();
            reference_joint.push(s.bar_ends(b).0);
        }
        body_of_bar.push(body_of_root[root]);
    }
    RigidBodySet {
        body_of_bar,
        body_count: reference_joint.len(),
        reference_joint,
    }
}

/// One pin constraint: joint `joint` ties body `first` to body `other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PinConstraint {
    pub joint: u32,
    pub first: usize,
    pub other: usize,
}

/// Hinge-constraint Jacobian on body velocities.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    /// `2C x 3B`; columns `3b..3b+3` are `(u, v, omega)` of body `b`.
    pub jacobian: DMatrix<f64>,
    /// Origin of each pair of rows.
    pub constraints: Vec<PinConstraint>,
}

impl ConstraintSystem {
    /// Orthonormal basis of the null space (one column per motion).
    pub fn null_space(&self, tolerance: f64) -> DMatrix<f64> {
        null_space(&self.jacobian, tolerance)
    }
}

/// Build the first-order pin constraints at the given joint coordinates
/// (one point per joint, in joint order).
pub fn build_constraint_system(
    s: &Structure,
    bodies: &RigidBodySet,
    coords: &[Point],
) -> ConstraintSystem {
    assert_eq!(coords.len(), s.joints().len(), "one coordinate per joint");
    let at = bodies.bodies_at_joints(s);
    let mut constraints = Vec::new();
    for (ji, joint) in s.joints().iter().enumerate() {
        if joint.kind != JointKind::Hinge {
            continue;
        }
        if let Some((&first, rest)) = at[ji].split_first() {
            for &other in rest {
                constraints.push(PinConstraint {
                    joint: joint.id,
                    first,
                    other,
                });
            }
        }
    }
    let cols = 3 * bodies.body_count;
    let mut jacobian = DMatrix::zeros(2 * constraints.len(), cols);
    for (k, c) in constraints.iter().enumerate() {
        let p = coords[s.joint_index(c.joint).expect("constraint joint exists")];
        for (body, sign) in [(c.first, 1.0), (c.other, -1.0)] {
            let r = coords[bodies.reference_joint[body]];
            let col = 3 * body;
            // x-velocity: u - omega * (p_y - c_y)
            jacobian[(2 * k, col)] = sign;
            jacobian[(2 * k, col + 2)] = -sign * (p.y - r.y);
            // y-velocity: v + omega * (p_x - c_x)
            jacobian[(2 * k + 1, col + 1)] = sign;
            jacobian[(2 * k + 1, col + 2)] = sign * (p.x - r.x);
        }
    }
    ConstraintSystem {
        jacobian,
        constraints,
    }
}

/// `cols - rank`, with rank counting singular values above
/// `tolerance * sigma_max * max(rows, cols)`.
pub fn nullity(m: &DMatrix<f64>, tolerance: f64) -> usize {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return cols;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return cols;
    }
    let cut = tolerance * smax * rows.max(cols) as f64;
    cols - sv.iter().filter(|&&s| s > cut).count()
}

/// Orthonormal null-space basis via a full SVD of `m` padded to be at least square.
pub fn null_space(m: &DMatrix<f64>, tolerance: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut padded = DMatrix::zeros(rows.max(cols), cols);
    padded.rows_mut(0, rows).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = tolerance * smax * rows.max(cols) as f64;
    let keep: Vec<usize> = (0..cols)
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= cut)
        .collect();
    let mut basis = DMatrix::zeros(cols, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &v_t.row(i).transpose());
    }
    basis
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Stable,
    Unstable,
    InstantaneouslyUnstable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
            Classification::InstantaneouslyUnstable => "instantaneously-unstable",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub classification: Classification,
    pub nullity_given: usize,
    pub nullity_generic: usize,
    /// `nullity_given - 3`: independent non-rigid motions.
    pub mechanism_dof: usize,
    pub connected: bool,
    pub bodies: usize,
    pub constraints: usize,
}

/// Whether all joints are linked through bars.
pub fn is_connected(s: &Structure) -> bool {
    let n = s.joints().len();
    let mut sets = DisjointSet::new(n);
    for b in s.bars() {
        let (a, c) = s.bar_ends(b);
        sets.union(a, c);
    }
    let root = sets.find(0);
    (1..n).all(|j| sets.find(j) == root)
}

fn nullity_at(s: &Structure, bodies: &RigidBodySet, coords: &[Point]) -> usize {
    nullity(&build_constraint_system(s, bodies, coords).jacobian, RANK_TOLERANCE)
}

/// Null-space dimension at generically perturbed coordinates: the most
/// frequent value over a fixed set of seeded draws.
fn generic_nullity(s: &Structure, bodies: &RigidBodySet) -> usize {
    let (lo, hi) = s.bounding_box();
    let diag = hi.sub(lo).norm2().sqrt();
    let amp = PERTURBATION_SCALE * diag;
    let mut rng = ChaCha8Rng::seed_from_u64(PERTURBATION_SEED);
    let mut seen: Vec<usize> = (0..PERTURBATION_DRAWS)
        .map(|_| {
            let coords: Vec<Point> = s
                .joints()
                .iter()
                .map(|j| {
                    Point::new(
                        j.x + rng.gen_range(-amp..=amp),
                        j.y + rng.gen_range(-amp..=amp),
                    )
                })
                .collect();
            nullity_at(s, bodies, &coords)
        })
        .collect();
    seen.sort_unstable();
    let mut best = (0, seen[0]);
    let mut i = 0;
    while i < seen.len() {
        let run = seen[i..].iter().take_while(|&&v| v == seen[i]).count();
        if run > best.0 {
            best = (run, seen[i]);
        }
        i += run;
    }
    best.1
}

/// Decide whether `s` is geometrically stable.
pub fn classify_stability(s: &Structure) -> Verdict {
    let bodies = merge_rigid_bodies(s);
    let coords: Vec<Point> = s.joints().iter().map(|j| j.point()).collect();
    let system = build_constraint_system(s, &bodies, &coords);
    let nullity_given = nullity(&system.jacobian, RANK_TOLERANCE);
    let nullity_generic = generic_nullity(s, &bodies);
    let connected = is_connected(s);
    let classification = if !connected {
        Classification::Unstable
    } else if nullity_given == 3 {
        Classification::Stable
    } else if nullity_generic == 3 {
        Classification::InstantaneouslyUnstable
    } else {
        Classification::Unstable
    };
    Verdict {
        classification,
        nullity_given,
        nullity_generic,
        mechanism_dof: nullity_given.saturating_sub(3),
        connected,
        bodies: bodies.body_count,
        constraints: system.constraints.len(),
    }
}

/// Class label used for training: stable is 0, anything else is 1.
pub fn binary_label(v: &Verdict) -> u8 {
    match v.classification {
        Classification::Stable => 0,
        Classification::Unstable | Classification::InstantaneouslyUnstable => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::StructureBuilder;

    fn triangle() -> Structure {
        let mut b = StructureBuilder::new();
        let (p, q, r) = (b.hinge(0.0, 0.0), b.hinge(4.0, 0.0), b.hinge(2.0, 3.0));
        b.cycle(&[p, q, r]);
        b.build("triangle").unwrap()
    }

    fn quad(kinds: [JointKind; 4]) -> Structure {
        let mut b = StructureBuilder::new();
        let pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        let ids: Vec<u32> = pts
            .iter()
            .zip(kinds)
            .map(|(&(x, y), k)| b.joint(x, y, k))
            .collect();
        b.cycle(&ids);
        b.build("quad").unwrap()
    }

    #[test]
    fn body_merging() {
        use JointKind::*;
        assert_eq!(merge_rigid_bodies(&triangle()).body_count, 3);
        assert_eq!(merge_rigid_bodies(&quad([Rigid; 4])).body_count, 1);
        let one_corner = merge_rigid_bodies(&quad([Rigid, Hinge, Hinge, Hinge]));
        assert_eq!(one_corner.body_count, 3);
        // bars 3 (joint 3 -> 0) and 0 (joint 0 -> 1) share the rigid corner
        assert_eq!(one_corner.body_of_bar[0], one_corner.body_of_bar[3]);
    }

    #[test]
    fn jacobian_dimensions() {
        let t = triangle();
        let bodies = merge_rigid_bodies(&t);
        let coords: Vec<Point> = t.joints().iter().map(|j| j.point()).collect();
        assert_eq!(build_constraint_system(&t, &bodies, &coords).jacobian.shape(), (6, 9));

        let q = quad([JointKind::Hinge; 4]);
        let bodies = merge_rigid_bodies(&q);
        let coords: Vec<Point> = q.joints().iter().map(|j| j.point()).collect();
        assert_eq!(build_constraint_system(&q, &bodies, &coords).jacobian.shape(), (8, 12));

        let mut b = StructureBuilder::new();
        let (p, r) = (b.hinge(0.0, 0.0), b.hinge(1.0, 0.0));
        b.bar(p, r);
        let bar = b.build("bar").unwrap();
        let bodies = merge_rigid_bodies(&bar);
        let coords: Vec<Point> = bar.joints().iter().map(|j| j.point()).collect();
        assert_eq!(build_constraint_system(&bar, &bodies, &coords).jacobian.shape(), (0, 3));
    }

    #[test]
    fn nullity_edge_cases() {
        assert_eq!(nullity(&DMatrix::zeros(4, 5), RANK_TOLERANCE), 5);
        assert_eq!(nullity(&DMatrix::identity(3, 3), RANK_TOLERANCE), 0);
        assert_eq!(nullity(&DMatrix::zeros(0, 3), RANK_TOLERANCE), 3);
    }

    #[test]
    fn classic_verdicts() {
        let v = classify_stability(&triangle());
        assert_eq!(v.classification, Classification::Stable);
        assert_eq!(v.nullity_given, 3);

        let v = classify_stability(&quad([JointKind::Hinge; 4]));
        assert_eq!(v.classification, Classification::Unstable);
        assert_eq!((v.nullity_given, v.mechanism_dof), (4, 1));

        let v = classify_stability(&quad([JointKind::Rigid, JointKind::Hinge, JointKind::Hinge, JointKind::Hinge]));
        assert_eq!(v.classification, Classification::Stable);
    }

    #[test]
    fn two_bars_on_a_hinge() {
        let mut b = StructureBuilder::new();
        let (p, q, r) = (b.hinge(0.0, 0.0), b.hinge(2.0, 2.0), b.hinge(4.0, 0.0));
        b.bar(p, q).bar(q, r);
        let v = classify_stability(&b.build("vee").unwrap());
        assert_eq!(v.classification, Classification::Unstable);
        assert_eq!(v.nullity_given, 4);
    }

    #[test]
    fn flattened_double_triangle_is_instantaneous() {
        let mut b = StructureBuilder::new();
        let a = b.hinge(0.0, 0.0);
        let c = b.hinge(4.0, 0.0);
        let p = b.hinge(1.0, 0.0);
        let q = b.hinge(3.0, 0.0);
        b.bar(a, c).bar(a, p).bar(p, c).bar(a, q).bar(q, c);
        let v = classify_stability(&b.build("flat").unwrap());
        assert_eq!(v.classification, Classification::InstantaneouslyUnstable);
        assert!(v.nullity_given > 3);
        assert_eq!(v.nullity_generic, 3);
    }

    #[test]
    fn disconnected_is_unstable() {
        let mut b = StructureBuilder::new();
        let (p, q, r, t) = (b.hinge(0.0, 0.0), b.hinge(1.0, 0.0), b.hinge(3.0, 0.0), b.hinge(3.0, 1.0));
        b.bar(p, q).bar(r, t);
        let v = classify_stability(&b.build("apart").unwrap());
        assert!(!v.connected);
        assert_eq!(v.classification, Classification::Unstable);
    }

    #[test]
    fn label_polarity() {
        let mut v = classify_stability(&triangle());
        assert_eq!(binary_label(&v), 0);
        v.classification = Classification::Unstable;
        assert_eq!(binary_label(&v), 1);
        v.classification = Classification::InstantaneouslyUnstable;
        assert_eq!(binary_label(&v), 1);
    }
}
