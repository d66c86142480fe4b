//! MLP classifier, SGD optimizer and cosine learning-rate schedule.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::{SplitMix64, Stream};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            hidden_dims,
            num_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Widths of every layer boundary, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }

    /// Width of the penultimate representation fed to the last layer.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }
}

/// One affine layer: `weight` is `fan_in x fan_out`, `bias` is `1 x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Output of a forward pass over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut {
    /// Post-activation penultimate layer (the raw input for a linear model).
    pub features: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SplitMix64::stream(seed, Stream::Init);
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("init shape"),
                    bias: Tensor::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(ModelParams {
            arch: arch.clone(),
            layers,
        })
    }

    /// Rebuilds params from explicit layers, inferring the architecture.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::dim(
                    "ModelParams::from_layers",
                    format!("layer {i}: bias {:?} vs weight {:?}", l.bias.shape(), l.weight.shape()),
                ));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::dim(
                    "ModelParams::from_layers",
                    format!(
                        "layer {i} expects {} inputs, previous emits {}",
                        l.weight.rows(),
                        layers[i - 1].weight.cols()
                    ),
                ));
            }
        }
        let arch = Architecture::new(
            layers[0].weight.rows(),
            layers[..layers.len() - 1].iter().map(|l| l.weight.cols()).collect(),
            layers[layers.len() - 1].weight.cols(),
        )?;
        Ok(ModelParams { arch, layers })
    }

    pub fn last_layer(&self) -> &Layer {
        self.layers.last().expect("model has at least one layer")
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.arch.input_dim {
            return Err(Error::dim(
                "forward",
                format!("input {:?}, model expects {} columns", x.shape(), self.arch.input_dim),
            ));
        }
        Ok(())
    }

    /// Inference forward pass (no tape).
    pub fn forward(&self, x: &Tensor) -> Result<ForwardOut> {
        self.check_input(x)?;
        let (hidden, last) = self.layers.split_at(self.layers.len() - 1);
        let mut h = x.clone();
        for layer in hidden {
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?.relu();
        }
        let logits = h.matmul(&last[0].weight)?.add_row(&last[0].bias)?;
        let probs = logits.softmax()?;
        Ok(ForwardOut {
            features: h,
            logits,
            probs,
        })
    }

    /// Registers every parameter on `tape` and records a forward pass.
    pub fn forward_taped<'t>(&self, tape: &'t Tape, x: &Tensor) -> Result<TapedForward<'t>> {
        self.check_input(x)?;
        let params: Vec<(Var<'t>, Var<'t>)> = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        let (hidden, last) = params.split_at(params.len() - 1);
        let mut h = tape.leaf(x.clone());
        for &(w, b) in hidden {
            h = h.matmul(w)?.add_row(b)?.relu()?;
        }
        let logits = h.matmul(last[0].0)?.add_row(last[0].1)?;
        let probs = logits.softmax()?;
        Ok(TapedForward {
            params,
            features: h,
            logits,
            probs,
        })
    }
}

/// A forward pass recorded on a tape, with handles to the parameter leaves.
pub struct TapedForward<'t> {
    pub params: Vec<(Var<'t>, Var<'t>)>,
    pub features: Var<'t>,
    pub logits: Var<'t>,
    pub probs: Var<'t>,
}

impl TapedForward<'_> {
    /// Collects parameter gradients after `backward()`.
    pub fn gradients(&self) -> Result<Gradients> {
        let layers = self
            .params
            .iter()
            .map(|(w, b)| match (w.grad(), b.grad()) {
                (Some(weight), Some(bias)) => Ok(Layer { weight, bias }),
                _ => Err(Error::Usage("gradients requested before backward()".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { layers })
    }
}

/// Per-parameter gradients, laid out like [`ModelParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    if total_epochs == 0 {
        return lr0;
    }
    let t = epoch.min(total_epochs) as f64 / total_epochs as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Plain gradient step `p <- p - lr * g`.
pub fn sgd_step(params: &ModelParams, grads: Option<&Gradients>, lr: f64) -> Result<ModelParams> {
    let grads = grads.ok_or_else(|| Error::Usage("sgd_step without gradients".into()))?;
    let mut next = params.clone();
    Sgd::default().step(&mut next, grads, lr)?;
    Ok(next)
}

/// SGD with optional momentum and L2 weight decay (both off by default).
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Vec<Layer>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::Usage(format!(
                "{} gradient layers for {} parameter layers",
                grads.layers.len(),
                params.layers.len()
            )));
        }
        for (p, g) in params.layers.iter().zip(&grads.layers) {
            if p.weight.shape() != g.weight.shape() || p.bias.shape() != g.bias.shape() {
                return Err(Error::dim("sgd step", "gradient shape differs from parameter"));
            }
        }
        let (momentum, decay) = (self.momentum, self.weight_decay);
        if momentum == 0.0 {
            for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
                update(p.weight.data_mut(), g.weight.data(), None, lr, 0.0, decay);
                update(p.bias.data_mut(), g.bias.data(), None, lr, 0.0, 0.0);
            }
            return Ok(());
        }
        let velocity = self.velocity.get_or_insert_with(|| {
            params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor::zeros(l.weight.rows(), l.weight.cols()),
                    bias: Tensor::zeros(1, l.bias.cols()),
                })
                .collect()
        });
        for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(velocity) {
            update(
                p.weight.data_mut(),
                g.weight.data(),
                Some(v.weight.data_mut()),
                lr,
                momentum,
                decay,
            );
            update(
                p.bias.data_mut(),
                g.bias.data(),
                Some(v.bias.data_mut()),
                lr,
                momentum,
                0.0,
            );
        }
        Ok(())
    }
}

fn update(p: &mut [f64], g: &[f64], v: Option<&mut [f64]>, lr: f64, momentum: f64, decay: f64) {
    match v {
        None => {
            for (p, &g) in p.iter_mut().zip(g) {
                let g = if decay == 0.0 { g } else { g + decay * *p };
                *p -= lr * g;
            }
        }
        Some(v) => {
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v) {
                let g = g + decay * *p;
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

const WEIGHTS_MAGIC: &str = "OODLAB-WEIGHTS v1";

/// Serializes params to the `OODLAB-WEIGHTS v1` text container. Floats use 17
/// significant digits so parsing restores every bit.
pub fn weights_to_text(params: &ModelParams) -> String {
    let mut out = String::new();
    out.push_str(WEIGHTS_MAGIC);
    out.push('\n');
    for (i, layer) in params.layers.iter().enumerate() {
        let w = &layer.weight;
        let _ = writeln!(out, "layer {i} W {} {}", w.rows(), w.cols());
        for row in w.row_iter() {
            push_floats(&mut out, row);
        }
        let _ = writeln!(out, "layer {i} b {}", layer.bias.cols());
        push_floats(&mut out, layer.bias.data());
    }
    out
}

fn push_floats(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

pub fn weights_from_text(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, WEIGHTS_MAGIC)) => {}
        other => {
            return Err(Error::Weights {
                line: 1,
                reason: format!("expected header {WEIGHTS_MAGIC:?}, got {:?}", other.map(|o| o.1)),
            })
        }
    }
    let mut lines = lines.filter(|(_, l)| !l.is_empty()).peekable();
    let mut layers = Vec::new();

    let header = |line: usize, text: &str, kind: &str, index: usize| -> Result<Vec<usize>> {
        let bad = |reason: String| Error::Weights { line, reason };
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() < 3 || parts[0] != "layer" || parts[2] != kind {
            return Err(bad(format!("expected `layer {index} {kind} ...`, got {text:?}")));
        }
        if parts[1].parse::<usize>().ok() != Some(index) {
            return Err(bad(format!("expected layer index {index}, got {}", parts[1])));
        }
        parts[3..]
            .iter()
            .map(|p| p.parse::<usize>().map_err(|e| bad(format!("bad dimension {p:?}: {e}"))))
            .collect()
    };

    let read_floats =
        |count: usize, lines: &mut dyn Iterator<Item = (usize, &str)>, start: usize| -> Result<Vec<f64>> {
            let mut values = Vec::with_capacity(count);
            let mut last = start;
            while values.len() < count {
                let Some((line, text)) = lines.next() else {
                    return Err(Error::Weights {
                        line: last + 1,
                        reason: format!("expected {count} values, file ended after {}", values.len()),
                    });
                };
                last = line;
                for tok in text.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|e| Error::Weights {
                        line,
                        reason: format!("bad float {tok:?}: {e}"),
                    })?;
                    values.push(v);
                }
            }
            if values.len() != count {
                return Err(Error::Weights {
                    line: last,
                    reason: format!("expected {count} values, got {}", values.len()),
                });
            }
            Ok(values)
        };

    while let Some((line, text)) = lines.next() {
        let i = layers.len();
        let dims = header(line, text, "W", i)?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Weights {
                line,
                reason: "W header needs <rows> <cols>".into(),
            });
        };
        let data = read_floats(rows * cols, &mut lines, line)?;
        let weight = Tensor::matrix(rows, cols, data).expect("counted");

        let Some((bline, btext)) = lines.next() else {
            return Err(Error::Weights {
                line: line + rows + 1,
                reason: format!("missing bias for layer {i}"),
            });
        };
        let bdims = header(bline, btext, "b", i)?;
        let [bcols] = bdims[..] else {
            return Err(Error::Weights {
                line: bline,
                reason: "b header needs <cols>".into(),
            });
        };
        let data = read_floats(bcols, &mut lines, bline)?;
        let bias = Tensor::matrix(1, bcols, data).expect("counted");
        layers.push(Layer { weight, bias });
    }
    ModelParams::from_layers(layers).map_err(|e| Error::Weights {
        line: 0,
        reason: e.to_string(),
    })
}
