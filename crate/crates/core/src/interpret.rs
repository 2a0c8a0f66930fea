//! Looking inside a trained classifier: per-channel feature maps, inputs
//! synthesized to excite one filter, and gradient-weighted class heatmaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::image_to_input;
use crate::nn::{LayerSpec, Mode, Model, NnError, Real, Seed, Shape};
use crate::raster::RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum InterpretError {
    #[error("layer {0} is not a convolution")]
    NotConv(usize),
    #[error("filter {filter} out of range: layer {layer} has {count} filters")]
    Filter { layer: usize, filter: usize, count: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn conv_info<T: Real>(model: &Model<T>, layer: usize) -> Result<Shape, InterpretError> {
    match model.layers().get(layer) {
        Some(li) if matches!(li.spec, LayerSpec::Conv2D { .. }) => Ok(li.output),
        _ => Err(InterpretError::NotConv(layer)),
    }
}

fn input_of<T: Real>(model: &Model<T>, image: &RgbImage) -> Result<Vec<f64>, InterpretError> {
    let s = model.architecture().input;
    if (image.height(), image.width(), 3) != (s.h, s.w, s.c) {
        return Err(InterpretError::Shape(format!(
            "image is {}x{}, network expects {}x{}x{}",
            image.width(),
            image.height(),
            s.w,
            s.h,
            s.c
        )));
    }
    Ok(image_to_input(image).into_iter().map(f64::from).collect())
}

/// Feature maps of one convolution layer, one grayscale panel per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSheet {
    pub layer: usize,
    /// Panel size.
    pub height: usize,
    pub width: usize,
    /// Per-channel 8-bit panels, row-major.
    pub panels: Vec<Vec<u8>>,
    /// Raw mean activation of each channel.
    pub channel_means: Vec<f64>,
}

impl ActivationSheet {
    pub fn channels(&self) -> usize {
        self.panels.len()
    }

    /// Panels left to right, separated by 1-px white columns.
    pub fn stitched(&self) -> RgbImage {
        let c = self.panels.len();
        let total_w = c * self.width + c.saturating_sub(1);
        let mut img = RgbImage::white(total_w, self.height);
        for (k, panel) in self.panels.iter().enumerate() {
            let x0 = k * (self.width + 1);
            for y in 0..self.height {
                for x in 0..self.width {
                    let v = panel[y * self.width + x];
                    img.put(x0 + x, y, [v, v, v]);
                }
            }
        }
        img
    }
}

/// Min-max scale to 0..=255; a constant channel becomes mid-gray.
fn normalize_panel(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values.iter().map(|&v| (255.0 * (v - lo) / (hi - lo) + 0.5).floor() as u8).collect()
}

/// Output of convolution `layer` for `image` (inference mode).
pub fn intermediate_activations<T: Real>(model: &Model<T>, image: &RgbImage, layer: usize) -> Result<ActivationSheet, InterpretError> {
    let shape = conv_info(model, layer)?;
    let x: Vec<T> = input_of(model, image)?.into_iter().map(T::of).collect();
    let trace = model.forward_range(&x, 0, layer + 1, Mode::Infer);
    let out = trace.output();
    let hw = shape.h * shape.w;
    let mut panels = Vec::with_capacity(shape.c);
    let mut channel_means = Vec::with_capacity(shape.c);
    for ch in 0..shape.c {
        let values: Vec<f64> = (0..hw).map(|p| out[p * shape.c + ch].f64()).collect();
        channel_means.push(values.iter().sum::<f64>() / hw as f64);
        panels.push(normalize_panel(&values));
    }
    Ok(ActivationSheet {
        layer,
        height: shape.h,
        width: shape.w,
        panels,
        channel_means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    pub steps: usize,
    /// Added per step along the RMS-normalized gradient.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            step_size: 10.0 / 255.0,
            seed: 0,
        }
    }
}

/// Input synthesized by gradient ascent on one filter's mean activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPattern {
    pub layer: usize,
    pub filter: usize,
    /// Deprocessed 8-bit image.
    pub image: RgbImage,
    /// Score of the initial image followed by the score after each step.
    pub scores: Vec<f64>,
    /// The filter's weights are all zero: no ascent is possible.
    pub dead: bool,
}

impl FilterPattern {
    pub fn initial_score(&self) -> f64 {
        self.scores[0]
    }

    pub fn final_score(&self) -> f64 {
        *self.scores.last().expect("scores hold the initial value")
    }

    /// True when no step lowered the score.
    pub fn is_monotone(&self) -> bool {
        self.scores.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Mean-center, scale to standard deviation 0.15 around 0.5, clip, 8-bit.
fn deprocess(x: &[f64], w: usize, h: usize) -> RgbImage {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let bytes = x
        .iter()
        .map(|v| {
            let y = ((v - mean) / (std + 1e-5) * 0.15 + 0.5).clamp(0.0, 1.0);
            (y * 255.0 + 0.5).floor() as u8
        })
        .collect();
    RgbImage::from_raw(w, h, bytes).expect("3 channels per pixel")
}

/// Gradient ascent in input space from mid-gray plus uniform noise of
/// +-10/255, maximizing the mean activation of `filter` in conv `layer`.
pub fn maximize_filter<T: Real>(
    model: &Model<T>,
    layer: usize,
    filter: usize,
    cfg: AscentConfig,
) -> Result<FilterPattern, InterpretError> {
    let shape = conv_info(model, layer)?;
    if filter >= shape.c {
        return Err(InterpretError::Filter {
            layer,
            filter,
            count: shape.c,
        });
    }
    let m: Model<f64> = model.cast();
    let input = m.architecture().input;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x: Vec<f64> = (0..input.len())
        .map(|_| 128.0 / 255.0 + rng.gen_range(-10.0 / 255.0..=10.0 / 255.0))
        .collect();
    let (w, _) = m.layer_params(layer);
    let dead = w.iter().skip(filter).step_by(shape.c).all(|&v| v == 0.0);

    let hw = (shape.h * shape.w) as f64;
    let mut seed = vec![0.0; shape.len()];
    for p in 0..shape.h * shape.w {
        seed[p * shape.c + filter] = 1.0 / hw;
    }
    let score = |trace: &crate::nn::Trace<f64>| {
        trace.output().iter().skip(filter).step_by(shape.c).sum::<f64>() / hw
    };
    let mut trace = m.forward_range(&x, 0, layer + 1, Mode::Infer);
    let mut scores = vec![score(&trace)];
    if !dead {
        for _ in 0..cfg.steps {
            let g = m.backward(&trace, Seed::Output(seed.clone()), true).input.expect("input gradient requested");
            let rms = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
            for (xv, gv) in x.iter_mut().zip(&g) {
                *xv += cfg.step_size * gv / (rms + 1e-5);
            }
            trace = m.forward_range(&x, 0, layer + 1, Mode::Infer);
            scores.push(score(&trace));
        }
    }
    Ok(FilterPattern {
        layer,
        filter,
        image: deprocess(&x, input.w, input.h),
        scores,
        dead,
    })
}

/// Which feature map of the last convolution block feeds the heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CamSource {
    /// The convolution's own output (8x8 for the image classifier).
    #[default]
    PrePool,
    /// The following max-pool output (4x4).
    PostPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Rectified, max-normalized scores, row-major.
    pub grid: Vec<f64>,
    /// Per-channel weights: spatial mean of d(score)/d(feature map).
    pub channel_weights: Vec<f64>,
    /// Bilinear upsampling of `grid` to the input size, max 1 (or all zero).
    pub upsampled: Vec<f64>,
    pub width: usize,
    pub height: usize,
    /// Predicted class; its score is the logit for class 1 and minus the logit for class 0.
    pub class: u8,
    pub probability: f64,
}

/// Feature-map layer and the class score's gradient with respect to it.
#[derive(Debug, Clone, PartialEq)]
pub struct CamGradient {
    /// Index of the layer whose output is the feature map.
    pub layer: usize,
    pub shape: Shape,
    pub activations: Vec<f64>,
    pub gradient: Vec<f64>,
    pub logit: f64,
    pub class: u8,
}

/// Class score `+-z` as a function of the feature map `a` of layer `layer`.
pub fn class_score_from(model: &Model<f64>, layer: usize, a: &[f64], class: u8) -> f64 {
    let end = model.layers().len();
    let trace = model.forward_range(a, layer + 1, end, Mode::Infer);
    let z = trace.pre_activation(end - 1).expect("dense head")[0];
    if class == 1 {
        z
    } else {
        -z
    }
}

fn cam_layer(model: &Model<f64>, source: CamSource) -> Result<usize, InterpretError> {
    let layers = model.layers();
    let last_conv = layers
        .iter()
        .rposition(|l| matches!(l.spec, LayerSpec::Conv2D { .. }))
        .ok_or_else(|| InterpretError::Shape("network has no convolution".into()))?;
    match source {
        CamSource::PrePool => Ok(last_conv),
        CamSource::PostPool => match layers.get(last_conv + 1) {
            Some(l) if l.spec == LayerSpec::MaxPool2D => Ok(last_conv + 1),
            _ => Err(InterpretError::Shape("last convolution is not followed by pooling".into())),
        },
    }
}

/// Feature map, predicted class and d(class score)/d(feature map).
pub fn cam_gradient<T: Real>(model: &Model<T>, image: &RgbImage, source: CamSource) -> Result<CamGradient, InterpretError> {
    let m: Model<f64> = model.cast();
    match m.layers().last().map(|l| l.spec) {
        Some(LayerSpec::Dense { units: 1, .. }) => {}
        _ => return Err(NnError::Head.into()),
    }
    let layer = cam_layer(&m, source)?;
    let x = input_of(&m, image)?;
    let end = m.layers().len();
    let prefix = m.forward_range(&x, 0, layer + 1, Mode::Infer);
    let a = prefix.output().to_vec();
    let tail = m.forward_range(&a, layer + 1, end, Mode::Infer);
    let logit = tail.pre_activation(end - 1).expect("dense head")[0];
    let p = tail.output()[0];
    let class = crate::nn::predicted_class(p);
    let sign = if class == 1 { 1.0 } else { -1.0 };
    let gradient = m
        .backward(&tail, Seed::PreActivation(vec![sign]), true)
        .input
        .expect("input gradient requested");
    Ok(CamGradient {
        layer,
        shape: m.layers()[layer].output,
        activations: a,
        gradient,
        logit,
        class,
    })
}

/// Bilinear resize of a single-channel grid (pixel-center alignment, edge clamp).
pub fn upsample_bilinear(grid: &[f64], gh: usize, gw: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |i: usize, n_out: usize, n_in: usize| {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1, fy) = coord(y, h, gh);
        for x in 0..w {
            let (x0, x1, fx) = coord(x, w, gw);
            let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            let bottom = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            out[y * w + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

fn normalize_max(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 {
        for x in v.iter_mut() {
            *x /= max;
        }
    }
}

/// Gradient-weighted class activation map of the predicted class.
pub fn class_activation_heatmap<T: Real>(model: &Model<T>, image: &RgbImage, source: CamSource) -> Result<Heatmap, InterpretError> {
    let cg = cam_gradient(model, image, source)?;
    let Shape { h, w, c } = cg.shape;
    let hw = (h * w) as f64;
    let channel_weights: Vec<f64> = (0..c)
        .map(|ch| cg.gradient.iter().skip(ch).step_by(c).sum::<f64>() / hw)
        .collect();
    let mut grid: Vec<f64> = cg
        .activations
        .chunks_exact(c)
        .map(|a| a.iter().zip(&channel_weights).map(|(x, wc)| x * wc).sum::<f64>().max(0.0))
        .collect();
    normalize_max(&mut grid);
    let input = model.architecture().input;
    let mut upsampled = upsample_bilinear(&grid, h, w, input.h, input.w);
    normalize_max(&mut upsampled);
    Ok(Heatmap {
        grid_h: h,
        grid_w: w,
        grid,
        channel_weights,
        upsampled,
        width: input.w,
        height: input.h,
        class: cg.class,
        probability: 1.0 / (1.0 + (-cg.logit).exp()),
    })
}

/// Blue (0) through green (0.5) to red (1).
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = v / 0.5;
        [0.0, 255.0 * t, 255.0 * (1.0 - t)]
    } else {
        let t = (v - 0.5) / 0.5;
        [255.0 * t, 255.0 * (1.0 - t), 0.0]
    }
}

/// Opacity of the colormapped heatmap at full heat.
pub const OVERLAY_ALPHA: f64 = 0.4;

/// Blend the colormapped heatmap over `image` with per-pixel weight `0.4 * h`.
pub fn overlay(image: &RgbImage, heat: &[f64]) -> Result<RgbImage, InterpretError> {
    let (w, h) = (image.width(), image.height());
    if heat.len() != w * h {
        return Err(InterpretError::Shape(format!("heatmap has {} values for a {w}x{h} image", heat.len())));
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let v = heat[y * w + x].clamp(0.0, 1.0);
            if v == 0.0 {
                continue;
            }
            let a = OVERLAY_ALPHA * v;
            let color = colormap(v);
            let under = image.get(x, y);
            let mut px = [0u8; 3];
            for k in 0..3 {
                px[k] = (f64::from(under[k]) * (1.0 - a) + color[k] * a + 0.5).floor() as u8;
            }
            out.put(x, y, px);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white() -> RgbImage {
        RgbImage::white(256, 256)
    }

    #[test]
    fn first_layer_sheet() {
        let m = Model::<f32>::table1(3);
        let sheet = intermediate_activations(&m, &white(), 0).unwrap();
        assert_eq!(sheet.channels(), 4);
        assert_eq!((sheet.height, sheet.width), (256, 256));
        assert_eq!(sheet.stitched().width(), 4 * 256 + 3);
        assert!(matches!(intermediate_activations(&m, &white(), 1), Err(InterpretError::NotConv(1))));
    }

    #[test]
    fn zero_conv_gives_mid_gray() {
        let mut m = Model::<f32>::table1(3);
        let (w, b) = m.layer_params_mut(0);
        w.fill(0.0);
        b.fill(0.0);
        let sheet = intermediate_activations(&m, &white(), 0).unwrap();
        assert!(sheet.panels.iter().all(|p| p.iter().all(|&v| v == 128)));
    }

    #[test]
    fn zero_steps_returns_start() {
        let m = Model::<f32>::table1(1);
        let p = maximize_filter(&m, 0, 2, AscentConfig { steps: 0, ..AscentConfig::default() }).unwrap();
        assert_eq!(p.scores.len(), 1);
        assert_eq!(p.final_score(), p.initial_score());
    }

    #[test]
    fn dead_filter_reported() {
        let mut m = Model::<f32>::table1(1);
        let (w, _) = m.layer_params_mut(0);
        for v in w.iter_mut().skip(1).step_by(4) {
            *v = 0.0;
        }
        let p = maximize_filter(&m, 0, 1, AscentConfig::default()).unwrap();
        assert!(p.dead);
        assert!(maximize_filter(&m, 0, 4, AscentConfig::default()).is_err());
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 255.0]);
        assert_eq!(colormap(0.5), [0.0, 255.0, 0.0]);
        assert_eq!(colormap(1.0), [255.0, 0.0, 0.0]);
    }

    #[test]
    fn overlay_rules() {
        let img = RgbImage::filled(256, 256, [10, 200, 30]);
        assert_eq!(overlay(&img, &vec![0.0; 256 * 256]).unwrap(), img);
        let hot = overlay(&img, &vec![1.0; 256 * 256]).unwrap();
        // 0.6 * under + 0.4 * red
        assert_eq!(hot.get(7, 9), [108, 120, 18]);
        assert!(overlay(&img, &[0.0; 4]).is_err());
    }

    #[test]
    fn upsample_constant_and_range() {
        let up = upsample_bilinear(&[0.25; 16], 4, 4, 256, 256);
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let grid: Vec<f64> = (0..64).map(|i| f64::from(i) / 63.0).collect();
        let up = upsample_bilinear(&grid, 8, 8, 256, 256);
        assert!(up.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn heatmap_shape() {
        let m = Model::<f32>::table1(5);
        let hm = class_activation_heatmap(&m, &white(), CamSource::PrePool).unwrap();
        assert_eq!((hm.grid_h, hm.grid_w), (8, 8));
        assert_eq!(hm.channel_weights.len(), 16);
        let hm = class_activation_heatmap(&m, &white(), CamSource::PostPool).unwrap();
        assert_eq!((hm.grid_h, hm.grid_w), (4, 4));
    }
}
