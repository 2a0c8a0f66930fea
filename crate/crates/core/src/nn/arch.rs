use std::fmt::Write as _;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline(always)]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline(always)]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

/// One layer of the stack. Convolutions are 3x3, stride 1, zero "same"
/// padding; pooling is 2x2 with stride 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2D { filters: usize, activation: Activation },
    MaxPool2D,
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize, activation: Activation },
}

/// Per-sample activation shape `(height, width, channels)`; flat vectors are `(1, 1, len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weight_count: usize,
    pub bias_count: usize,
    /// Offset of this layer's weights in the flat parameter vector; biases follow.
    pub offset: usize,
    /// Whether `output` is flat (after `Flatten`).
    pub flat: bool,
}

impl LayerInfo {
    pub fn param_count(&self) -> usize {
        self.weight_count + self.bias_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// The six-block classifier for 256x256 RGB inputs: filters 4, 4, 8, 8,
    /// 16, 16, each block conv + pool + dropout 0.2, then dense 16 ReLU and
    /// a single sigmoid unit.
    pub fn table1() -> Self {
        let mut layers = Vec::new();
        for filters in [4, 4, 8, 8, 16, 16] {
            layers.push(LayerSpec::Conv2D {
                filters,
                activation: Activation::Relu,
            });
            layers.push(LayerSpec::MaxPool2D);
            layers.push(LayerSpec::Dropout { rate: 0.2 });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense {
            units: 16,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::Dense {
            units: 1,
            activation: Activation::Sigmoid,
        });
        Self {
            input: Shape::new(256, 256, 3),
            layers,
        }
    }

    /// Shape inference; also assigns layer names and parameter offsets.
    pub fn layer_infos(&self) -> Result<Vec<LayerInfo>, NnError> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut shape = self.input;
        let mut flat = false;
        let mut offset = 0;
        let mut seen = [0usize; 5];
        for (i, spec) in self.layers.iter().enumerate() {
            let (base, slot) = match spec {
                LayerSpec::Conv2D { .. } => ("conv2d", 0),
                LayerSpec::MaxPool2D => ("max_pooling2d", 1),
                LayerSpec::Dropout { .. } => ("dropout", 2),
                LayerSpec::Flatten => ("flatten", 3),
                LayerSpec::Dense { .. } => ("dense", 4),
            };
            let name = match seen[slot] {
                0 => base.to_owned(),
                k => format!("{base}_{k}"),
            };
            seen[slot] += 1;
            let input = shape;
            let (wc, bc) = match *spec {
                LayerSpec::Conv2D { filters, .. } => {
                    if flat {
                        return Err(NnError::Shape(format!("layer {i}: convolution after flatten")));
                    }
                    shape = Shape::new(shape.h, shape.w, filters);
                    (9 * input.c * filters, filters)
                }
                LayerSpec::MaxPool2D => {
                    if shape.h % 2 != 0 || shape.w % 2 != 0 {
                        return Err(NnError::OddPool {
                            layer: i,
                            h: shape.h,
                            w: shape.w,
                        });
                    }
                    shape = Shape::new(shape.h / 2, shape.w / 2, shape.c);
                    (0, 0)
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(NnError::DropoutRate(rate));
                    }
                    (0, 0)
                }
                LayerSpec::Flatten => {
                    shape = Shape::new(1, 1, shape.len());
                    flat = true;
                    (0, 0)
                }
                LayerSpec::Dense { units, .. } => {
                    if !flat {
                        return Err(NnError::NotFlat { layer: i });
                    }
                    shape = Shape::new(1, 1, units);
                    (input.len() * units, units)
                }
            };
            out.push(LayerInfo {
                name,
                spec: *spec,
                input,
                output: shape,
                weight_count: wc,
                bias_count: bc,
                offset,
                flat,
            });
            offset += wc + bc;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.layer_infos()?.iter().map(LayerInfo::param_count).sum())
    }

    /// Indices of the convolution layers, in order.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv2D { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Keras-style summary table.
    pub fn summary(&self) -> Result<String, NnError> {
        let infos = self.layer_infos()?;
        let mut s = String::new();
        let _ = writeln!(s, "{:<32}{:<24}{:>8}", "Layer (type)", "Output Shape", "Param #");
        for li in &infos {
            let kind = match li.spec {
                LayerSpec::Conv2D { .. } => "Conv2D",
                LayerSpec::MaxPool2D => "MaxPooling2D",
                LayerSpec::Dropout { .. } => "Dropout",
                LayerSpec::Flatten => "Flatten",
                LayerSpec::Dense { .. } => "Dense",
            };
            let shape = if li.flat {
                format!("(None,{})", li.output.c)
            } else {
                format!("(None,{},{},{})", li.output.h, li.output.w, li.output.c)
            };
            let _ = writeln!(s, "{:<32}{:<24}{:>8}", format!("{}({kind})", li.name), shape, li.param_count());
        }
        let total: usize = infos.iter().map(LayerInfo::param_count).sum();
        let _ = writeln!(s, "Total params: {}", group_thousands(total));
        let _ = writeln!(s, "Trainable params: {}", group_thousands(total));
        let _ = writeln!(s, "Non-trainable params: 0");
        Ok(s)
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
