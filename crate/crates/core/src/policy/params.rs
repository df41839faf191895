use ndarray::Zip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PolicyConfig, PolicyError};
use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// Zeros except the forget-gate slice `[h, 2h)` set to 1.
    ForgetBias { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    init: Init,
}

/// Tensor indices of one LSTM direction. Gates are packed `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LstmIds {
    pub w_input: usize,
    pub w_hidden: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AttentionIds {
    pub w_query: usize,
    pub w_key: usize,
    pub w_value: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub null_context: usize,
    pub ln_gain: usize,
    pub ln_bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub local_fwd: LstmIds,
    pub local_bwd: LstmIds,
    /// `heads x hidden`: one learned query per pooling head.
    pub pool_queries: usize,
    pub pool_value: usize,
    pub pool_out_w: usize,
    pub pool_out_b: usize,
    pub global_fwd: LstmIds,
    pub global_bwd: LstmIds,
    pub global_out_w: usize,
    pub global_out_b: usize,
    pub history: Vec<AttentionIds>,
    pub ext_hidden_w: usize,
    pub ext_hidden_b: usize,
    pub ext_out_w: usize,
    pub ext_out_b: usize,
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> usize {
        self.add(name.into(), (rows, cols), Init::Uniform { fan_in: rows })
    }

    fn bias(&mut self, name: impl Into<String>, cols: usize) -> usize {
        self.add(name.into(), (1, cols), Init::Zeros)
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> LstmIds {
        LstmIds {
            w_input: self.weight(format!("{prefix}.w_input"), input, 4 * hidden),
            w_hidden: self.weight(format!("{prefix}.w_hidden"), hidden, 4 * hidden),
            bias: self.add(format!("{prefix}.bias"), (1, 4 * hidden), Init::ForgetBias { hidden }),
        }
    }
}

/// Declared tensors, in manifest order, and where each component lives.
pub(crate) fn layout(config: &PolicyConfig) -> (Vec<ParamSpec>, Layout) {
    let d_e = config.embed_dim;
    let d_h = config.hidden_dim;
    let half = d_h / 2;
    let mut b = SpecBuilder { specs: Vec::new() };

    let embedding = b.add("embedding".into(), (config.vocab_size, d_e), Init::Uniform { fan_in: d_e });
    let local_fwd = b.lstm("local.lstm.fwd", d_e, half);
    let local_bwd = b.lstm("local.lstm.bwd", d_e, half);
    let pool_queries = b.add("local.pool.queries".into(), (config.heads, d_h), Init::Uniform { fan_in: d_h });
    let pool_value = b.weight("local.pool.w_value", d_h, d_h);
    let pool_out_w = b.weight("local.pool.w_out", d_h, d_h);
    let pool_out_b = b.bias("local.pool.b_out", d_h);
    let global_fwd = b.lstm("global.lstm.fwd", d_h, half);
    let global_bwd = b.lstm("global.lstm.bwd", d_h, half);
    let global_out_w = b.weight("global.w_out", d_h, d_h);
    let global_out_b = b.bias("global.b_out", d_h);
    let history = (0..config.history_layers)
        .map(|l| AttentionIds {
            w_query: b.weight(format!("history.{l}.w_query"), d_h, d_h),
            w_key: b.weight(format!("history.{l}.w_key"), d_h, d_h),
            w_value: b.weight(format!("history.{l}.w_value"), d_h, d_h),
            w_out: b.weight(format!("history.{l}.w_out"), d_h, d_h),
            b_out: b.bias(format!("history.{l}.b_out"), d_h),
            null_context: b.add(format!("history.{l}.null_context"), (1, d_h), Init::Uniform { fan_in: d_h }),
            ln_gain: b.add(format!("history.{l}.ln_gain"), (1, d_h), Init::Ones),
            ln_bias: b.bias(format!("history.{l}.ln_bias"), d_h),
        })
        .collect();
    let ext_hidden_w = b.weight("extractor.w_hidden", 3 * d_h, d_h);
    let ext_hidden_b = b.bias("extractor.b_hidden", d_h);
    let ext_out_w = b.weight("extractor.w_out", d_h, 2);
    let ext_out_b = b.bias("extractor.b_out", 2);

    let layout = Layout {
        embedding,
        local_fwd,
        local_bwd,
        pool_queries,
        pool_value,
        pool_out_w,
        pool_out_b,
        global_fwd,
        global_bwd,
        global_out_w,
        global_out_b,
        history,
        ext_hidden_w,
        ext_hidden_b,
        ext_out_w,
        ext_out_b,
    };
    (b.specs, layout)
}

/// Round every entry to the nearest `f32`.
pub(crate) fn quantize(m: &mut Matrix) {
    m.mapv_inplace(|v| v as f32 as f64);
}

/// All learnable tensors of the policy.
///
/// Values are held as `f64` but every stored entry is representable in
/// `f32`: initialization, updates and checkpoint loads round to `f32`.
/// Gradient checks perturb a copy in full `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    config: PolicyConfig,
    specs: Vec<ParamSpec>,
    pub(crate) layout: Layout,
    tensors: Vec<Matrix>,
}

impl PolicyParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases,
    /// forget-gate biases of 1 and unit layer-norm gains.
    pub fn init(config: &PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let (specs, layout) = layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| {
                let mut m = match spec.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                        Matrix::from_shape_simple_fn(spec.shape, || rng.gen_range(-bound..bound))
                    }
                    Init::Zeros => Matrix::zeros(spec.shape),
                    Init::Ones => Matrix::ones(spec.shape),
                    Init::ForgetBias { hidden } => {
                        Matrix::from_shape_fn(spec.shape, |(_, c)| if (hidden..2 * hidden).contains(&c) { 1.0 } else { 0.0 })
                    }
                };
                quantize(&mut m);
                m
            })
            .collect();
        Ok(PolicyParams { config: config.clone(), specs, layout, tensors })
    }

    /// Assemble from tensors in manifest order, checking every shape.
    pub fn from_tensors(config: &PolicyConfig, tensors: Vec<Matrix>) -> Result<Self, PolicyError> {
        config.validate()?;
        let (specs, layout) = layout(config);
        if specs.len() != tensors.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.dim() != spec.shape {
                return Err(PolicyError::ShapeMismatch(format!(
                    "{}: expected {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    t.dim()
                )));
            }
        }
        Ok(PolicyParams { config: config.clone(), specs, layout, tensors })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    /// Mutable access for gradient checks; callers own the f32 convention.
    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `theta += step * direction` on every tensor, rounded to f32.
    pub fn add_scaled(&mut self, direction: &Gradients, step: f64) -> Result<(), PolicyError> {
        direction.check_shapes(self)?;
        if step == 0.0 {
            return Ok(());
        }
        for (t, g) in self.tensors.iter_mut().zip(&direction.tensors) {
            Zip::from(t).and(g).for_each(|p, &d| *p = (*p + step * d) as f32 as f64);
        }
        Ok(())
    }
}

/// A gradient (or any update direction) laid out like [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Gradients {
            names: params.specs.iter().map(|s| s.name.clone()).collect(),
            tensors: params.specs.iter().map(|s| Matrix::zeros(s.shape)).collect(),
        }
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.scaled_add(factor, b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            *t *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.tensors)
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n.as_str())
    }

    fn check_shapes(&self, params: &PolicyParams) -> Result<(), PolicyError> {
        if self.tensors.len() != params.tensors.len() {
            return Err(PolicyError::ShapeMismatch(format!(
                "update has {} tensors, parameters have {}",
                self.tensors.len(),
                params.tensors.len()
            )));
        }
        for (spec, g) in params.specs.iter().zip(&self.tensors) {
            if g.dim() != spec.shape {
                return Err(PolicyError::ShapeMismatch(format!(
                    "{}: parameters {:?}, update {:?}",
                    spec.name,
                    spec.shape,
                    g.dim()
                )));
            }
        }
        Ok(())
    }
}
