//! Built-in example structures: 24 for training (12 stable, 12 unstable)
//! and 10 structurally different ones held out for generalization tests.
//!
//! All geometries fit in the `[0, 10]^2` box. Intended labels are checked
//! against the oracle by the test suite and again when building datasets.

use std::f64::consts::PI;

use crate::structure::{Structure, StructureBuilder};

/// A structure together with the label it was authored to have.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub structure: Structure,
    /// `true` when the structure is meant to be geometrically stable.
    pub intended_stable: bool,
}

impl CatalogEntry {
    /// Intended class label (stable 0, unstable 1).
    pub fn intended_label(&self) -> u8 {
        u8::from(!self.intended_stable)
    }

    pub fn name(&self) -> &str {
        self.structure.name()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub training_examples: Vec<CatalogEntry>,
    pub holdout_examples: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn all(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.training_examples.iter().chain(&self.holdout_examples)
    }

    pub fn find(&self, name: &str) -> Option<&CatalogEntry> {
        self.all().find(|e| e.name() == name)
    }
}

type Recipe = fn(&mut StructureBuilder);

fn entry(name: &str, stable: bool, recipe: Recipe) -> CatalogEntry {
    let mut b = StructureBuilder::new();
    recipe(&mut b);
    CatalogEntry {
        structure: b.build(name).expect("catalog geometry is valid"),
        intended_stable: stable,
    }
}

/// Vertices of a regular polygon of radius `r` around `(cx, cy)`, first vertex at angle `phase`.
fn ring_points(n: usize, cx: f64, cy: f64, r: f64, phase: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / n as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

/// Regular polygon of hinges.
fn ring(b: &mut StructureBuilder, n: usize, cx: f64, cy: f64, r: f64, phase: f64) -> Vec<u32> {
    ring_points(n, cx, cy, r, phase)
        .into_iter()
        .map(|(x, y)| b.hinge(x, y))
        .collect()
}

fn training_stable() -> Vec<CatalogEntry> {
    vec![
        entry("triangle", true, |b| {
            let v = [b.hinge(1.0, 1.5), b.hinge(9.0, 1.5), b.hinge(5.0, 8.5)];
            b.cycle(&v);
        }),
        entry("rhombus", true, |b| {
            let v = [b.hinge(1.0, 5.0), b.hinge(5.0, 1.5), b.hinge(9.0, 5.0), b.hinge(5.0, 8.5)];
            b.cycle(&v).bar(v[1], v[3]);
        }),
        entry("warren3", true, |b| {
            let (a, m, c) = (b.hinge(1.0, 3.0), b.hinge(5.0, 3.0), b.hinge(9.0, 3.0));
            let (d, e) = (b.hinge(3.0, 7.0), b.hinge(7.0, 7.0));
            b.bar(a, m).bar(m, c).bar(a, d).bar(d, m).bar(d, e).bar(m, e).bar(e, c);
        }),
        entry("warren5", true, |b| {
            let lo: Vec<u32> = [0.5, 3.5, 6.5, 9.5].iter().map(|&x| b.hinge(x, 3.0)).collect();
            let hi: Vec<u32> = [2.0, 5.0, 8.0].iter().map(|&x| b.hinge(x, 6.5)).collect();
            for i in 0..3 {
                b.bar(lo[i], lo[i + 1]).bar(lo[i], hi[i]).bar(hi[i], lo[i + 1]);
            }
            b.bar(hi[0], hi[1]).bar(hi[1], hi[2]);
        }),
        entry("fan_hexagon", true, |b| {
            let o = b.hinge(5.0, 5.0);
            let rim = ring(b, 6, 5.0, 5.0, 4.0, 0.0);
            b.cycle(&rim);
            for &v in &rim {
                b.bar(o, v);
            }
        }),
        entry("rigid_square", true, |b| {
            let v = [b.rigid(2.0, 2.0), b.rigid(8.0, 2.0), b.rigid(8.0, 8.0), b.rigid(2.0, 8.0)];
            b.cycle(&v);
        }),
        entry("quad_rigid_corner", true, |b| {
            let v = [b.rigid(2.0, 2.0), b.hinge(8.0, 2.0), b.hinge(8.0, 8.0), b.hinge(2.0, 8.0)];
            b.cycle(&v);
        }),
        entry("rigid_portal", true, |b| {
            let v = [b.rigid(2.0, 1.0), b.rigid(2.0, 8.0), b.rigid(8.0, 8.0), b.rigid(8.0, 1.0)];
            b.bar(v[0], v[1]).bar(v[1], v[2]).bar(v[2], v[3]);
        }),
        entry("pentagon_fan", true, |b| {
            let v = ring(b, 5, 5.0, 5.0, 4.2, PI / 2.0);
            b.cycle(&v).bar(v[0], v[2]).bar(v[0], v[3]);
        }),
        entry("triangle_rigid_apex", true, |b| {
            let v = [b.hinge(1.0, 2.0), b.hinge(9.0, 2.0), b.rigid(4.0, 8.5)];
            b.cycle(&v);
        }),
        entry("tower", true, |b| {
            let v = [
                b.hinge(3.0, 1.0),
                b.hinge(7.0, 1.0),
                b.hinge(7.0, 5.0),
                b.hinge(3.0, 5.0),
                b.hinge(7.0, 9.0),
                b.hinge(3.0, 9.0),
            ];
            b.cycle(&v[..4]).bar(v[0], v[2]);
            b.bar(v[2], v[4]).bar(v[4], v[5]).bar(v[5], v[3]).bar(v[3], v[4]);
        }),
        entry("star_triangle", true, |b| {
            let (a, c, e) = (b.hinge(3.0, 3.0), b.hinge(7.0, 3.0), b.hinge(5.0, 6.5));
            let (p, q, r) = (b.hinge(5.0, 0.5), b.hinge(8.8, 6.5), b.hinge(1.2, 6.5));
            b.cycle(&[a, c, e]);
            b.bar(a, p).bar(p, c).bar(c, q).bar(q, e).bar(e, r).bar(r, a);
        }),
    ]
}

fn training_unstable() -> Vec<CatalogEntry> {
    vec![
        entry("hinged_square", false, |b| {
            let v = [b.hinge(2.0, 2.0), b.hinge(8.0, 2.0), b.hinge(8.0, 8.0), b.hinge(2.0, 8.0)];
            b.cycle(&v);
        }),
        entry("hinged_pentagon", false, |b| {
            let v = ring(b, 5, 5.0, 5.0, 4.2, PI / 2.0);
            b.cycle(&v);
        }),
        entry("hinged_hexagon", false, |b| {
            let v = ring(b, 6, 5.0, 5.0, 4.2, 0.0);
            b.cycle(&v);
        }),
        entry("bowtie", false, |b| {
            let (a, c, m) = (b.hinge(1.0, 2.0), b.hinge(1.0, 8.0), b.hinge(5.0, 5.0));
            let (d, e) = (b.hinge(9.0, 2.0), b.hinge(9.0, 8.0));
            b.cycle(&[a, c, m]).cycle(&[m, d, e]);
        }),
        entry("vee", false, |b| {
            let (a, m, c) = (b.hinge(1.0, 8.0), b.hinge(5.0, 2.0), b.hinge(9.0, 8.0));
            b.bar(a, m).bar(m, c);
        }),
        entry("trapezoid", false, |b| {
            let v = [b.hinge(1.0, 2.0), b.hinge(9.0, 2.0), b.hinge(7.0, 7.5), b.hinge(3.0, 7.5)];
            b.cycle(&v);
        }),
        entry("warren_gap", false, |b| {
            let (a, m, n, d) = (b.hinge(0.5, 3.0), b.hinge(3.5, 3.0), b.hinge(6.5, 3.0), b.hinge(9.5, 3.0));
            let (e, f) = (b.hinge(3.5, 7.0), b.hinge(6.5, 7.0));
            b.bar(a, m).bar(m, n).bar(n, d).bar(a, e).bar(m, e).bar(e, f).bar(n, f).bar(d, f);
        }),
        entry("pentagon_rigid_corner", false, |b| {
            let v: Vec<u32> = ring_points(5, 5.0, 5.0, 4.2, PI / 2.0)
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| if i == 0 { b.rigid(x, y) } else { b.hinge(x, y) })
                .collect();
            b.cycle(&v);
        }),
        entry("ladder", false, |b| {
            let (a, c, m) = (b.hinge(1.0, 2.0), b.hinge(1.0, 8.0), b.hinge(3.0, 5.0));
            let (d, e, f) = (b.hinge(9.0, 2.0), b.hinge(9.0, 8.0), b.hinge(7.0, 5.0));
            b.cycle(&[a, c, m]).cycle(&[d, e, f]).bar(a, d).bar(c, e);
        }),
        entry("house", false, |b| {
            let v = [b.hinge(2.0, 1.0), b.hinge(8.0, 1.0), b.hinge(8.0, 6.0), b.hinge(2.0, 6.0)];
            let apex = b.hinge(5.0, 9.5);
            b.cycle(&v).bar(v[2], apex).bar(apex, v[3]);
        }),
        entry("hexagon_short_diagonal", false, |b| {
            let v = ring(b, 6, 5.0, 5.0, 4.2, 0.0);
            b.cycle(&v).bar(v[0], v[2]);
        }),
        entry("triangle_flail", false, |b| {
            let v = [b.hinge(1.0, 1.5), b.hinge(6.0, 1.5), b.hinge(3.5, 6.0)];
            let tip = b.rigid(9.0, 8.5);
            b.cycle(&v).bar(v[1], tip);
        }),
    ]
}

fn holdout_stable() -> Vec<CatalogEntry> {
    vec![
        entry("house_rigid_eaves", true, |b| {
            let v = [b.hinge(2.0, 1.0), b.hinge(8.0, 1.0), b.rigid(8.0, 6.0), b.rigid(2.0, 6.0)];
            let apex = b.hinge(5.0, 9.5);
            b.cycle(&v).bar(v[2], apex).bar(apex, v[3]);
        }),
        entry("braced_hexagon", true, |b| {
            let v = ring(b, 6, 5.0, 5.0, 4.2, 0.0);
            b.cycle(&v).bar(v[0], v[2]).bar(v[0], v[3]).bar(v[0], v[4]);
        }),
        entry("pentagon_two_rigid", true, |b| {
            let v: Vec<u32> = ring_points(5, 5.0, 5.0, 4.2, PI / 2.0)
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| if i == 0 || i == 2 { b.rigid(x, y) } else { b.hinge(x, y) })
                .collect();
            b.cycle(&v);
        }),
        entry("two_bay_frame", true, |b| {
            let base: Vec<u32> = [1.0, 5.0, 9.0].iter().map(|&x| b.rigid(x, 1.0)).collect();
            let top: Vec<u32> = [1.0, 5.0, 9.0].iter().map(|&x| b.rigid(x, 8.0)).collect();
            for i in 0..3 {
                b.bar(base[i], top[i]);
            }
            b.bar(top[0], top[1]).bar(top[1], top[2]);
        }),
        entry("square_rigid_with_unit", true, |b| {
            let v = [b.rigid(1.0, 2.0), b.hinge(6.0, 2.0), b.hinge(6.0, 7.0), b.hinge(1.0, 7.0)];
            let tip = b.hinge(9.5, 4.5);
            b.cycle(&v).bar(v[1], tip).bar(v[2], tip);
        }),
    ]
}

fn holdout_unstable() -> Vec<CatalogEntry> {
    vec![
        entry("double_square", false, |b| {
            let lo: Vec<u32> = [0.5, 5.0, 9.5].iter().map(|&x| b.hinge(x, 3.0)).collect();
            let hi: Vec<u32> = [0.5, 5.0, 9.5].iter().map(|&x| b.hinge(x, 7.5)).collect();
            b.bar(lo[0], lo[1]).bar(lo[1], lo[2]).bar(hi[0], hi[1]).bar(hi[1], hi[2]);
            for i in 0..3 {
                b.bar(lo[i], hi[i]);
            }
        }),
        entry("triangle_square_vertex", false, |b| {
            let (a, c, m) = (b.hinge(0.5, 2.0), b.hinge(0.5, 8.0), b.hinge(4.0, 5.0));
            let (p, q, r) = (b.hinge(6.5, 2.5), b.hinge(9.0, 5.0), b.hinge(6.5, 7.5));
            b.cycle(&[a, c, m]).cycle(&[m, p, q, r]);
        }),
        entry("square_two_roofs", false, |b| {
            let v = [b.hinge(1.0, 1.0), b.hinge(6.0, 1.0), b.hinge(6.0, 6.0), b.hinge(1.0, 6.0)];
            let (top, side) = (b.hinge(3.5, 9.5), b.hinge(9.5, 3.5));
            b.cycle(&v).bar(v[3], top).bar(top, v[2]).bar(v[1], side).bar(side, v[2]);
        }),
        entry("triangle_chain", false, |b| {
            let (a, c) = (b.hinge(0.5, 3.0), b.hinge(0.5, 7.0));
            let (m, n) = (b.hinge(3.5, 5.0), b.hinge(6.5, 5.0));
            let low = b.hinge(5.0, 1.5);
            let (d, e) = (b.hinge(9.5, 3.0), b.hinge(9.5, 7.0));
            b.cycle(&[a, c, m]).cycle(&[m, n, low]).cycle(&[n, d, e]);
        }),
        entry("hexagon_two_rigid", false, |b| {
            let v: Vec<u32> = ring_points(6, 5.0, 5.0, 4.2, 0.0)
                .into_iter()
                .enumerate()
                .map(|(i, (x, y))| if i % 3 == 0 { b.rigid(x, y) } else { b.hinge(x, y) })
                .collect();
            b.cycle(&v);
        }),
    ]
}

/// The built-in catalog.
pub fn builtin_catalog() -> Catalog {
    let mut training_examples = training_stable();
    training_examples.extend(training_unstable());
    let mut holdout_examples = holdout_stable();
    holdout_examples.extend(holdout_unstable());
    Catalog {
        training_examples,
        holdout_examples,
    }
}
