//! Point-network building blocks on top of the differentiation tape.

mod adam;

pub use adam::{adam_step, learning_rate, AdamConfig, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud};

/// Weight `in x out` and bias `1 x out` of a dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LayerParams {
    /// Uniform He fan-in initialization, zero bias.
    pub fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weight: Matrix::from_vec(in_dim, out_dim, data),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.data().len()
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            weight: tape.variable(self.weight.clone()),
            bias: tape.variable(self.bias.clone()),
        }
    }

    /// Registers the layer as constants (no parameter gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            weight: tape.constant(self.weight.clone()),
            bias: tape.constant(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// `x * W + b` with the bias broadcast over rows.
pub fn linear_forward(tape: &mut Tape, x: Var, layer: &LayerVars) -> Result<Var> {
    let y = tape.matmul(x, layer.weight)?;
    tape.add_row(y, layer.bias)
}

/// Network widths shared by every variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Shared per-point MLP widths after the 3D input.
    pub encoder_widths: Vec<usize>,
    /// Neighbourhood size for edge aggregation.
    pub k: usize,
    pub decoder_hidden: usize,
    pub ratio: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64, 128],
            k: 16,
            decoder_hidden: 64,
            ratio: 4,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::Config("encoder_widths must be non-empty and positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.decoder_hidden == 0 {
            return Err(Error::Config("decoder_hidden must be positive".into()));
        }
        if self.ratio < 2 {
            return Err(Error::Config("ratio must be at least 2".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }
}

/// Shared per-point MLP followed by one edge aggregation with a residual:
/// `F = h + edge_aggregate(h)` where `h` is the last MLP layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<LayerParams>,
    pub k: usize,
}

pub struct EncoderVars {
    layers: Vec<LayerVars>,
    k: usize,
}

impl Encoder {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(cfg.encoder_widths.len());
        let mut prev = 3;
        for &w in &cfg.encoder_widths {
            layers.push(LayerParams::he_uniform(prev, w, rng));
            prev = w;
        }
        Self { layers, k: cfg.k }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(3, LayerParams::out_dim)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| if trainable { l.bind(tape) } else { l.bind_frozen(tape) })
                .collect(),
            k: self.k,
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

impl EncoderVars {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Per-point features `m x d` of the `m x 3` coordinates in `coords`.
    /// The neighbour graph is built from the current coordinate values and
    /// held constant.
    pub fn encode(&self, tape: &mut Tape, coords: Var) -> Result<Var> {
        let (m, c) = tape.value(coords).shape();
        if c != 3 || m == 0 {
            return Err(Error::invalid(format!("encoder input must be m x 3 with m > 0, got {m}x{c}")));
        }
        let k = self.k.min(m - 1);
        let neighbors = if k > 0 {
            let cloud = PointCloud::from_flat(tape.value(coords).data())
                .map_err(|e| Error::Numerical(format!("encoder input: {e}")))?;
            Some(knn(&cloud, k)?)
        } else {
            None
        };
        let mut h = coords;
        for layer in &self.layers {
            let z = linear_forward(tape, h, layer)?;
            h = tape.relu(z);
        }
        match neighbors {
            Some(nbr) => {
                let e = tape.edge_aggregate(h, &nbr)?;
                tape.add(h, e)
            }
            None => Ok(h),
        }
    }
}

/// Fixed `ratio`-point grid of 2D codes in `[-0.2, 0.2]^2`, row-major.
pub fn replica_codes(ratio: usize) -> Matrix {
    let nx = (ratio as f64).sqrt().ceil() as usize;
    let ny = ratio.div_ceil(nx.max(1));
    let axis = |count: usize, i: usize| {
        if count <= 1 {
            0.0
        } else {
            -0.2 + 0.4 * i as f64 / (count - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(ratio * 2);
    'outer: for iy in 0..ny {
        for ix in 0..nx {
            if data.len() == ratio * 2 {
                break 'outer;
            }
            data.push(axis(nx, ix));
            data.push(axis(ny, iy));
        }
    }
    Matrix::from_vec(ratio, 2, data)
}

/// Offset-regression upsampler: each input point is duplicated `ratio`
/// times, every replica tagged with a distinct 2D code, and a shared 2-layer
/// MLP maps `feature || code` to a 3D offset from the duplicated point.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    /// `(feat_dim + 2) x hidden`; the last two rows act on the code.
    pub hidden: LayerParams,
    /// `hidden x 3`, zero-initialized.
    pub offset: LayerParams,
    pub ratio: usize,
}

pub struct DecoderVars {
    hidden: LayerVars,
    offset: LayerVars,
    feat_dim: usize,
    ratio: usize,
}

impl Decoder {
    pub fn new(feat_dim: usize, cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        Self {
            hidden: LayerParams::he_uniform(feat_dim + 2, cfg.decoder_hidden, rng),
            offset: LayerParams::zeros(cfg.decoder_hidden, 3),
            ratio: cfg.ratio,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden.param_count() + self.offset.param_count()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> DecoderVars {
        let (hidden, offset) = if trainable {
            (self.hidden.bind(tape), self.offset.bind(tape))
        } else {
            (self.hidden.bind_frozen(tape), self.offset.bind_frozen(tape))
        };
        DecoderVars {
            hidden,
            offset,
            feat_dim: self.hidden.in_dim() - 2,
            ratio: self.ratio,
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.hidden.weight, &self.hidden.bias, &self.offset.weight, &self.offset.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.offset.weight,
            &mut self.offset.bias,
        ]
    }
}

impl DecoderVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.hidden.weight, self.hidden.bias, self.offset.weight, self.offset.bias]
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    /// `(ratio * m) x 3` output points; rows `i * ratio .. (i + 1) * ratio`
    /// are the replicas of input point `i`.
    pub fn upsample_decode(&self, tape: &mut Tape, feat: Var, coords: Var) -> Result<Var> {
        let (m, d) = tape.value(feat).shape();
        let (cm, cc) = tape.value(coords).shape();
        if d != self.feat_dim || cm != m || cc != 3 {
            return Err(Error::invalid(format!(
                "decoder expects {m}x{} features and {m}x3 coords, got {m}x{d} and {cm}x{cc}",
                self.feat_dim
            )));
        }
        if self.ratio == 0 {
            return Err(Error::invalid("decoder ratio must be positive"));
        }
        // [feat || code] * W == feat * W[..d] + code * W[d..]; the feature half
        // is computed once per input point and then replicated.
        let w_feat = tape.row_slice(self.hidden.weight, 0, d)?;
        let w_code = tape.row_slice(self.hidden.weight, d, d + 2)?;
        let codes = tape.constant(replica_codes(self.ratio));
        let per_point = tape.matmul(feat, w_feat)?;
        let per_code = tape.matmul(codes, w_code)?;
        let replicated = tape.repeat_rows(per_point, self.ratio)?;
        let pre = tape.add_tiled(replicated, per_code)?;
        let pre = tape.add_row(pre, self.hidden.bias)?;
        let hidden = tape.relu(pre);
        let offset = linear_forward(tape, hidden, &self.offset)?;
        let base = tape.repeat_rows(coords, self.ratio)?;
        tape.add(base, offset)
    }
}
