//! The full forecaster: exogenous embedding, stacked recurrent cells, time
//! concatenation and an output convolution to the two vertical channels.

mod checkpoint;
mod linear;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use linear::{fit_line, linear_baseline, linear_forecast, LinearWindowParams, LINEAR_HISTORY};
pub use train::{train, window_gradients, LossHistory, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::cells::{unroll_tape, CellKind, ConvLstmCellParams, Crop, PointwiseRnnParams, RecurrentLayer, MAX_POINTWISE_LAYERS};
use crate::embed::{embed_tape, encode_window, EmbeddingParams, ExogenousBundle, ExogenousFlags, PassthroughScaling};
use crate::error::{Error, Result};
use crate::nn::{GradientTape, ParamId, ParamStore, Tensor2, Tensor3, Var};
use crate::rng::{substream, INIT};
use crate::trackgen::{TrackDataset, Window, CHANNELS, TARGET_CHANNELS, VERTICAL_LEFT};

pub const INPUT_CHANNELS: usize = CHANNELS.len();

/// Architecture. Everything here is an integer, boolean or name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: CellKind,
    /// Inspections per input window.
    pub tau: usize,
    /// Stacked recurrent layers.
    pub depth: usize,
    pub hidden: usize,
    /// ConvLSTM kernel width (odd).
    pub kernel_width: usize,
    /// Output convolution width; unset means the kernel width for convlstm
    /// and 1 for the pointwise variants.
    pub output_width: Option<usize>,
    pub exogenous: ExogenousFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: CellKind::ConvLstm,
            tau: 6,
            depth: 2,
            hidden: 16,
            kernel_width: 11,
            output_width: None,
            exogenous: ExogenousFlags::all(),
        }
    }
}

impl ModelConfig {
    /// Small ConvLSTM that trains on the default scenario in about two minutes on one core.
    pub fn desk() -> Self {
        Self {
            hidden: 8,
            depth: 1,
            ..Self::default()
        }
    }

    pub fn output_width(&self) -> usize {
        self.output_width.unwrap_or(if self.variant.is_spatial() { self.kernel_width } else { 1 })
    }

    /// Channels entering the first recurrent layer.
    pub fn input_channels(&self) -> usize {
        INPUT_CHANNELS + self.exogenous.channels()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.tau == 0 {
            bad.push("model.tau: must be >= 1".to_string());
        }
        if self.hidden == 0 {
            bad.push("model.hidden: must be >= 1".to_string());
        }
        if self.depth == 0 {
            bad.push("model.depth: must be >= 1".to_string());
        }
        if !self.variant.is_spatial() && self.depth > MAX_POINTWISE_LAYERS {
            bad.push(format!("model.depth: pointwise variants allow 1..={MAX_POINTWISE_LAYERS}, got {}", self.depth));
        }
        if self.kernel_width % 2 == 0 {
            bad.push(format!("model.kernel_width: must be odd, got {}", self.kernel_width));
        }
        if self.output_width() % 2 == 0 {
            bad.push(format!("model.output_width: must be odd, got {}", self.output_width()));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    /// Largest distance at which an input perturbation can reach the forecast.
    ///
    /// Each recurrent step widens the reach by one kernel half-width, so layer
    /// `d` at step `t` sees `(t + d) * r` around the first step's input; the
    /// output convolution adds its own half-width.
    pub fn receptive_radius(&self) -> usize {
        let out = (self.output_width() - 1) / 2;
        if self.variant.is_spatial() {
            (self.kernel_width - 1) / 2 * (self.tau - 1 + self.depth) + out
        } else {
            out
        }
    }
}

/// Standardization fitted on the training split. Targets are predicted in the
/// scale of the vertical channels and mapped back to millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_mean: [f64; INPUT_CHANNELS],
    pub x_std: [f64; INPUT_CHANNELS],
    pub passthrough: PassthroughScaling,
}

impl Default for Standardization {
    fn default() -> Self {
        Self::identity()
    }
}

impl Standardization {
    pub fn identity() -> Self {
        Self {
            x_mean: [0.0; INPUT_CHANNELS],
            x_std: [1.0; INPUT_CHANNELS],
            passthrough: PassthroughScaling::identity(),
        }
    }

    pub fn fit(train: &TrackDataset) -> Self {
        let p = &train.irregularities;
        let (t_n, _, l_n) = p.dims();
        let n = (t_n * l_n) as f64;
        let mut out = Self::identity();
        for c in 0..INPUT_CHANNELS {
            let mean = (0..t_n).map(|t| p.row(t, c).iter().sum::<f64>()).sum::<f64>() / n;
            let var = (0..t_n)
                .map(|t| p.row(t, c).iter().map(|v| (v - mean).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n;
            out.x_mean[c] = mean;
            out.x_std[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        out.passthrough = PassthroughScaling::fit(&train.exogenous);
        out
    }

    fn target_scale(&self) -> ([f64; 2], [f64; 2]) {
        let v = VERTICAL_LEFT;
        ([self.x_std[v], self.x_std[v + 1]], [self.x_mean[v], self.x_mean[v + 1]])
    }

    /// Standardized copy of one inspection over `crop`.
    pub fn input_slice(&self, panel: &Tensor3, t: usize, crop: Crop) -> Tensor2 {
        let mut out = Tensor2::zeros(INPUT_CHANNELS, crop.len);
        for c in 0..INPUT_CHANNELS {
            let src = &panel.row(t, c)[crop.start..crop.start + crop.len];
            for (o, v) in out.row_mut(c).iter_mut().zip(src) {
                *o = (v - self.x_mean[c]) / self.x_std[c];
            }
        }
        out
    }
}

/// Parameters and configuration of one forecaster.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub config: ModelConfig,
    /// Track length the peephole weights are laid out for.
    pub positions: usize,
    pub store: ParamStore,
    pub embedding: EmbeddingParams,
    pub layers: Vec<RecurrentLayer>,
    pub output_weight: ParamId,
    pub output_bias: ParamId,
    pub scaling: Standardization,
}

impl ForecastModel {
    /// Fresh model with parameters drawn from the `init` stream of `seed`.
    pub fn new(config: ModelConfig, positions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if positions == 0 {
            return Err(Error::Config("positions must be >= 1".into()));
        }
        let mut rng = substream(seed, INIT);
        let mut store = ParamStore::new();
        let embedding = EmbeddingParams::init(&mut store, &mut rng)?;
        let mut layers = Vec::with_capacity(config.depth);
        let mut cin = config.input_channels();
        for d in 0..config.depth {
            let prefix = format!("cell{d}");
            let layer = match config.variant {
                CellKind::ConvLstm => RecurrentLayer::ConvLstm(ConvLstmCellParams::init(
                    &mut store,
                    &prefix,
                    cin,
                    config.hidden,
                    config.kernel_width,
                    positions,
                    &mut rng,
                )?),
                kind => RecurrentLayer::Pointwise(PointwiseRnnParams::init(
                    &mut store,
                    &prefix,
                    kind,
                    cin,
                    config.hidden,
                    &mut rng,
                )?),
            };
            layers.push(layer);
            cin = config.hidden;
        }
        let width = config.output_width();
        let fan = config.hidden * config.tau * width;
        let output_weight = store.add_uniform(
            "output.w",
            vec![TARGET_CHANNELS, config.hidden * config.tau, width],
            fan,
            &mut rng,
        )?;
        let output_bias = store.add_uniform("output.b", vec![TARGET_CHANNELS, 1], fan, &mut rng)?;
        Ok(Self {
            config,
            positions,
            store,
            embedding,
            layers,
            output_weight,
            output_bias,
            scaling: Standardization::identity(),
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.total_len()
    }

    /// Records the forecast for inspections `window` of `panel`/`exo` over `crop`.
    /// Returns a `(2, crop.len)` node in millimetres.
    pub fn record(
        &self,
        tape: &mut GradientTape,
        panel: &Tensor3,
        exo: &ExogenousBundle,
        window: std::ops::Range<usize>,
        crop: Crop,
    ) -> Result<Var> {
        self.check_inputs(panel, exo, &window, crop)?;
        let flags = &self.config.exogenous;
        let z = if flags.channels() > 0 {
            let enc = encode_window(exo, window.clone(), crop, &self.scaling.passthrough)?;
            Some(embed_tape(tape, &self.store, &self.embedding, &enc, flags)?)
        } else {
            None
        };
        let mut seq = Vec::with_capacity(window.len());
        for (k, t) in window.enumerate() {
            let x = tape.constant(self.scaling.input_slice(panel, t, crop));
            seq.push(match &z {
                Some(z) => tape.concat(&[x, z[k]])?,
                None => x,
            });
        }
        for layer in &self.layers {
            seq = unroll_tape(layer, tape, &self.store, &seq, Some(crop))?;
        }
        let features = tape.concat(&seq)?;
        let w = tape.param(&self.store, self.output_weight);
        let b = tape.param(&self.store, self.output_bias);
        let out = tape.conv1d(features, w, Some(b), self.config.output_width())?;
        let (scale, shift) = self.scaling.target_scale();
        tape.row_affine(out, &scale, &shift)
    }

    fn check_inputs(
        &self,
        panel: &Tensor3,
        exo: &ExogenousBundle,
        window: &std::ops::Range<usize>,
        crop: Crop,
    ) -> Result<()> {
        let (t_n, c_n, l_n) = panel.dims();
        if c_n != INPUT_CHANNELS {
            return Err(Error::dim(format!("expected {INPUT_CHANNELS} input channels, got {c_n}")));
        }
        if window.len() != self.config.tau || window.end > t_n {
            return Err(Error::dim(format!(
                "window {window:?} must hold tau = {} inspections of {t_n}",
                self.config.tau
            )));
        }
        if exo.inspections() != t_n || exo.positions() != l_n {
            return Err(Error::dim("exogenous bundle does not match the irregularity panel"));
        }
        if l_n != self.positions {
            return Err(Error::dim(format!(
                "model is laid out for {} positions, input has {l_n}",
                self.positions
            )));
        }
        if crop.len == 0 || crop.start + crop.len > l_n {
            return Err(Error::dim(format!("crop {crop:?} outside {l_n} positions")));
        }
        Ok(())
    }

    /// `ŷ_{t+1}` over the whole track, `(2, L)`, from a `(τ, 10, L)` window and
    /// the exogenous data of the same τ inspections.
    pub fn forecast(&self, x_window: &Tensor3, exo_window: &ExogenousBundle) -> Result<Tensor2> {
        exo_window.validate()?;
        let mut tape = GradientTape::new();
        let crop = Crop {
            start: 0,
            len: x_window.positions(),
        };
        let out = self.record(&mut tape, x_window, exo_window, 0..x_window.time(), crop)?;
        Ok(tape.value(out).clone())
    }

    /// Forecast for one window of a dataset.
    pub fn forecast_window(&self, ds: &TrackDataset, w: &Window) -> Result<Tensor2> {
        let mut tape = GradientTape::new();
        let crop = Crop {
            start: 0,
            len: ds.positions(),
        };
        let out = self.record(&mut tape, &ds.irregularities, &ds.exogenous, w.inputs.clone(), crop)?;
        Ok(tape.value(out).clone())
    }
}

/// Observed `(2, L)` target of a window.
pub fn target_of(ds: &TrackDataset, w: &Window) -> Tensor2 {
    let l_n = ds.positions();
    let mut y = Tensor2::zeros(TARGET_CHANNELS, l_n);
    for c in 0..TARGET_CHANNELS {
        y.row_mut(c).copy_from_slice(ds.irregularities.row(w.target, VERTICAL_LEFT + c));
    }
    y
}
