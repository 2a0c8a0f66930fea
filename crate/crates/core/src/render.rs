//! Rasterizes structures: anti-aliased black bars, red disks on hinge
//! joints, nothing on rigid joints, white background.

use serde::{Deserialize, Serialize};

use crate::raster::{RgbImage, IMAGE_SIZE};
use crate::structure::{JointKind, Point, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub bar_color: [u8; 3],
    pub bar_width: f64,
    pub hinge_color: [u8; 3],
    pub hinge_radius: f64,
    pub margin_fraction: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            bar_color: [0, 0, 0],
            bar_width: 3.0,
            hinge_color: [255, 0, 0],
            hinge_radius: 5.0,
            margin_fraction: 0.12,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.bar_width >= 1.0) {
            return Err(RenderError::Style("bar_width must be at least 1 px"));
        }
        if !(self.hinge_radius > self.bar_width / 2.0) {
            return Err(RenderError::Style("hinge_radius must exceed half the bar width"));
        }
        if !(0.0..0.5).contains(&self.margin_fraction) {
            return Err(RenderError::Style("margin_fraction must be in [0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error("structure `{0}` has a single-point bounding box")]
    DegenerateExtent(String),
    #[error("scale must be in (0, 1], got {0}")]
    Scale(f64),
    #[error("invalid render style: {0}")]
    Style(&'static str),
}

/// Isotropic world-to-pixel map. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`;
/// image y grows downward, world y upward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageTransform {
    /// Pixels per world unit.
    pub pixels_per_unit: f64,
    pub world_center: Point,
    pub image_center: Point,
}

impl ImageTransform {
    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.image_center.x + self.pixels_per_unit * (p.x - self.world_center.x),
            self.image_center.y - self.pixels_per_unit * (p.y - self.world_center.y),
        )
    }
}

/// Fit the bounding box, shrunk by `scale`, into the image center with a
/// `margin_fraction` border at scale 1.
pub fn world_to_image_transform(
    s: &Structure,
    scale: f64,
    style: &RenderStyle,
) -> Result<ImageTransform, RenderError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(RenderError::Scale(scale));
    }
    let (lo, hi) = s.bounding_box();
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if extent <= 0.0 {
        return Err(RenderError::DegenerateExtent(s.name().to_owned()));
    }
    let side = IMAGE_SIZE as f64;
    Ok(ImageTransform {
        pixels_per_unit: scale * side * (1.0 - 2.0 * style.margin_fraction) / extent,
        world_center: Point::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0),
        image_center: Point::new(side / 2.0, side / 2.0),
    })
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let len2 = ab.norm2();
    let t = if len2 > 0.0 {
        ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = Point::new(ap.x - t * ab.x, ap.y - t * ab.y);
    d.norm2().sqrt()
}

/// Fraction of a pixel covered by a shape whose boundary sits `half_width`
/// from the reference set, using a one-pixel linear ramp.
fn coverage(distance: f64, half_width: f64) -> f64 {
    (half_width + 0.5 - distance).clamp(0.0, 1.0)
}

fn blend(under: u8, over: u8, alpha: f64) -> u8 {
    (under as f64 * (1.0 - alpha) + over as f64 * alpha + 0.5).floor() as u8
}

/// Pixel bounds `[x0, x1) x [y0, y1)` of a disk, clipped to the image.
fn pixel_box(cx: f64, cy: f64, reach: f64) -> (usize, usize, usize, usize) {
    let n = IMAGE_SIZE as f64;
    let clip = |v: f64| v.clamp(0.0, n) as usize;
    (
        clip((cx - reach).floor()),
        clip((cx + reach).ceil() + 1.0),
        clip((cy - reach).floor()),
        clip((cy + reach).ceil() + 1.0),
    )
}

/// Render `s` at the given camera scale.
pub fn render(s: &Structure, scale: f64, style: &RenderStyle) -> Result<RgbImage, RenderError> {
    style.validate()?;
    let tf = world_to_image_transform(s, scale, style)?;
    let pts: Vec<Point> = s.joints().iter().map(|j| tf.apply(j.point())).collect();
    let n = IMAGE_SIZE;

    let half = style.bar_width / 2.0;
    let mut cover = vec![0.0f64; n * n];
    for bar in s.bars() {
        let (ia, ib) = s.bar_ends(bar);
        let (a, b) = (pts[ia], pts[ib]);
        let reach = half + 1.0;
        let (x0, _, y0, _) = pixel_box(a.x.min(b.x), a.y.min(b.y), reach);
        let (_, x1, _, y1) = pixel_box(a.x.max(b.x), a.y.max(b.y), reach);
        for y in y0..y1 {
            for x in x0..x1 {
                let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                let cov = coverage(segment_distance(c, a, b), half);
                let slot = &mut cover[y * n + x];
                if cov > *slot {
                    *slot = cov;
                }
            }
        }
    }

    let mut img = RgbImage::white(n, n);
    for (i, &cov) in cover.iter().enumerate() {
        if cov > 0.0 {
            let c = style.bar_color;
            img.put(i % n, i / n, [blend(255, c[0], cov), blend(255, c[1], cov), blend(255, c[2], cov)]);
        }
    }

    let r = style.hinge_radius;
    for (j, p) in s.joints().iter().zip(&pts) {
        if j.kind != JointKind::Hinge {
            continue;
        }
        let (x0, x1, y0, y1) = pixel_box(p.x, p.y, r + 1.0);
        for y in y0..y1 {
            for x in x0..x1 {
                let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                let a = coverage(c.sub(*p).norm2().sqrt(), r);
                if a > 0.0 {
                    let under = img.get(x, y);
                    let h = style.hinge_color;
                    img.put(x, y, [blend(under[0], h[0], a), blend(under[1], h[1], a), blend(under[2], h[2], a)]);
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::StructureBuilder;

    fn triangle() -> Structure {
        let mut b = StructureBuilder::new();
        let v = [b.hinge(0.0, 0.0), b.hinge(4.0, 0.0), b.hinge(2.0, 3.0)];
        b.cycle(&v);
        b.build("triangle").unwrap()
    }

    #[test]
    fn transform_fits_longest_side() {
        let style = RenderStyle {
            margin_fraction: 0.1,
            ..RenderStyle::default()
        };
        let t = triangle();
        let tf = world_to_image_transform(&t, 1.0, &style).unwrap();
        let a = tf.apply(Point::new(0.0, 0.0));
        let b = tf.apply(Point::new(4.0, 0.0));
        assert!((b.x - a.x - 204.8).abs() < 1e-9);
        let half = world_to_image_transform(&t, 0.5, &style).unwrap();
        let a = half.apply(Point::new(0.0, 0.0));
        let b = half.apply(Point::new(4.0, 0.0));
        assert!((b.x - a.x - 102.4).abs() < 1e-9);
        let mid = half.apply(Point::new(2.0, 1.5));
        assert_eq!((mid.x, mid.y), (128.0, 128.0));
    }

    #[test]
    fn rejects_bad_scale() {
        let t = triangle();
        let style = RenderStyle::default();
        assert_eq!(world_to_image_transform(&t, 0.0, &style), Err(RenderError::Scale(0.0)));
        assert_eq!(world_to_image_transform(&t, 1.5, &style), Err(RenderError::Scale(1.5)));
    }

    #[test]
    fn hinge_free_structure_has_no_red() {
        let t = triangle().with_all_joints(JointKind::Rigid);
        let img = render(&t, 1.0, &RenderStyle::default()).unwrap();
        assert!(img.pixels().all(|p| p[0] == p[1] && p[1] == p[2]));
        assert!(img.pixels().any(|p| p[0] == 0));
    }

    #[test]
    fn deterministic() {
        let t = triangle();
        let s = RenderStyle::default();
        assert_eq!(render(&t, 0.7, &s).unwrap(), render(&t, 0.7, &s).unwrap());
    }

    #[test]
    fn style_validation() {
        let bad = RenderStyle {
            hinge_radius: 1.0,
            ..RenderStyle::default()
        };
        assert!(bad.validate().is_err());
        let bad = RenderStyle {
            bar_width: 0.5,
            ..RenderStyle::default()
        };
        assert!(bad.validate().is_err());
    }
}
