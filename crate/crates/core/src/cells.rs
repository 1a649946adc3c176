//! Recurrent cells: the 1D ConvLSTM cell with peepholes, and position-wise
//! LSTM / GRU cells that share one weight set across every spatial position.
//!
//! Fused gate tensors stack the per-gate blocks along the output-channel axis:
//! ConvLSTM and LSTM use `[input, forget, candidate, output]`, GRU uses
//! `[reset, update, candidate]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GradientTape, ParamId, ParamStore, Tensor2, Var};

/// Largest stack depth accepted for the position-wise baselines.
pub const MAX_POINTWISE_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[serde(rename = "convlstm")]
    ConvLstm,
    Lstm,
    Gru,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::ConvLstm => "convlstm",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, CellKind::ConvLstm)
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convlstm" => Ok(CellKind::ConvLstm),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!(
                "unknown model variant `{other}` (expected convlstm, lstm or gru)"
            ))),
        }
    }
}

/// Hidden and cell tensors, each (hidden channels, positions).
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub hidden: Tensor2,
    pub cell: Tensor2,
}

impl CellState {
    pub fn zeros(channels: usize, positions: usize) -> Self {
        Self {
            hidden: Tensor2::zeros(channels, positions),
            cell: Tensor2::zeros(channels, positions),
        }
    }
}

/// Parameters of one ConvLSTM cell, stored in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLstmCellParams {
    pub input_channels: usize,
    pub hidden: usize,
    pub width: usize,
    pub positions: usize,
    /// `W_x{i,f,c,o}`: (4H, input_channels, width)
    pub w_x: ParamId,
    /// `W_h{i,f,c,o}`: (4H, H, width)
    pub w_h: ParamId,
    /// `W_ci`, `W_cf`, `W_co`: (H, positions) each
    pub peep_i: ParamId,
    pub peep_f: ParamId,
    pub peep_o: ParamId,
    /// `b_{i,f,c,o}`: (4H, 1)
    pub bias: ParamId,
}

impl ConvLstmCellParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_channels: usize,
        hidden: usize,
        width: usize,
        positions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("kernel width must be odd, got {width}")));
        }
        if input_channels == 0 || hidden == 0 || positions == 0 {
            return Err(Error::Config("cell dimensions must be >= 1".into()));
        }
        let g = 4 * hidden;
        let fan_x = input_channels * width;
        let fan_h = hidden * width;
        Ok(Self {
            input_channels,
            hidden,
            width,
            positions,
            w_x: store.add_uniform(format!("{prefix}.w_x"), vec![g, input_channels, width], fan_x, rng)?,
            w_h: store.add_uniform(format!("{prefix}.w_h"), vec![g, hidden, width], fan_h, rng)?,
            peep_i: store.add_uniform(format!("{prefix}.w_ci"), vec![hidden, positions], fan_h, rng)?,
            peep_f: store.add_uniform(format!("{prefix}.w_cf"), vec![hidden, positions], fan_h, rng)?,
            peep_o: store.add_uniform(format!("{prefix}.w_co"), vec![hidden, positions], fan_h, rng)?,
            bias: store.add_uniform(format!("{prefix}.b"), vec![g, 1], fan_x, rng)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [self.w_x, self.w_h, self.peep_i, self.peep_f, self.peep_o, self.bias]
    }
}

/// One position-wise LSTM or GRU layer (PyTorch gate conventions, two biases).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointwiseRnnParams {
    pub kind: CellKind,
    pub input_channels: usize,
    pub hidden: usize,
    /// (G·H, input_channels, 1)
    pub w_x: ParamId,
    /// (G·H, H, 1)
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
}

impl PointwiseRnnParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        kind: CellKind,
        input_channels: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let gates = match kind {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
            CellKind::ConvLstm => {
                return Err(Error::Config("pointwise layer cannot be a convlstm".into()))
            }
        };
        if input_channels == 0 || hidden == 0 {
            return Err(Error::Config("cell dimensions must be >= 1".into()));
        }
        let g = gates * hidden;
        Ok(Self {
            kind,
            input_channels,
            hidden,
            w_x: store.add_uniform(format!("{prefix}.w_x"), vec![g, input_channels, 1], hidden, rng)?,
            w_h: store.add_uniform(format!("{prefix}.w_h"), vec![g, hidden, 1], hidden, rng)?,
            b_x: store.add_uniform(format!("{prefix}.b_x"), vec![g, 1], hidden, rng)?,
            b_h: store.add_uniform(format!("{prefix}.b_h"), vec![g, 1], hidden, rng)?,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w_x, self.w_h, self.b_x, self.b_h]
    }
}

/// Per-step recurrent state on a tape. `cell` is absent for GRU.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub hidden: Var,
    pub cell: Option<Var>,
}

/// Spatial crop applied to position-dependent parameters (peepholes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentLayer {
    ConvLstm(ConvLstmCellParams),
    Pointwise(PointwiseRnnParams),
}

impl RecurrentLayer {
    pub fn kind(&self) -> CellKind {
        match self {
            RecurrentLayer::ConvLstm(_) => CellKind::ConvLstm,
            RecurrentLayer::Pointwise(p) => p.kind,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            RecurrentLayer::ConvLstm(p) => p.hidden,
            RecurrentLayer::Pointwise(p) => p.hidden,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self {
            RecurrentLayer::ConvLstm(p) => p.input_channels,
            RecurrentLayer::Pointwise(p) => p.input_channels,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        match self {
            RecurrentLayer::ConvLstm(p) => p.ids().to_vec(),
            RecurrentLayer::Pointwise(p) => p.ids().to_vec(),
        }
    }

    pub fn zero_state(&self, tape: &mut GradientTape, positions: usize) -> StateVars {
        let h = self.hidden();
        let hidden = tape.constant(Tensor2::zeros(h, positions));
        let cell = match self.kind() {
            CellKind::Gru => None,
            _ => Some(tape.constant(Tensor2::zeros(h, positions))),
        };
        StateVars { hidden, cell }
    }

    pub fn step(
        &self,
        tape: &mut GradientTape,
        store: &ParamStore,
        x: Var,
        prev: StateVars,
        crop: Option<Crop>,
    ) -> Result<StateVars> {
        let (c, _) = tape.shape(x);
        if c != self.input_channels() {
            return Err(Error::dim(format!(
                "cell expects {} input channels, got {c}",
                self.input_channels()
            )));
        }
        match self {
            RecurrentLayer::ConvLstm(p) => convlstm_step_tape(tape, store, p, x, prev, crop),
            RecurrentLayer::Pointwise(p) if p.kind == CellKind::Lstm => lstm_step_tape(tape, store, p, x, prev),
            RecurrentLayer::Pointwise(p) => gru_step_tape(tape, store, p, x, prev),
        }
    }
}

fn split4(tape: &mut GradientTape, v: Var, h: usize) -> Result<[Var; 4]> {
    Ok([
        tape.slice_rows(v, 0, h)?,
        tape.slice_rows(v, h, h)?,
        tape.slice_rows(v, 2 * h, h)?,
        tape.slice_rows(v, 3 * h, h)?,
    ])
}

fn convlstm_step_tape(
    tape: &mut GradientTape,
    store: &ParamStore,
    p: &ConvLstmCellParams,
    x: Var,
    prev: StateVars,
    crop: Option<Crop>,
) -> Result<StateVars> {
    let h = p.hidden;
    let (_, len) = tape.shape(x);
    let prev_c = prev.cell.ok_or_else(|| Error::Usage("convlstm state needs a cell tensor".into()))?;
    if tape.shape(prev.hidden) != (h, len) || tape.shape(prev_c) != (h, len) {
        return Err(Error::dim("previous state does not match input positions"));
    }
    let crop = crop.unwrap_or(Crop { start: 0, len: p.positions });
    if crop.len != len || crop.start + crop.len > p.positions {
        return Err(Error::dim(format!(
            "input has {len} positions, cell is configured for {} (crop {crop:?})",
            p.positions
        )));
    }
    let w_x = tape.param(store, p.w_x);
    let w_h = tape.param(store, p.w_h);
    let b = tape.param(store, p.bias);
    let peep = |tape: &mut GradientTape, id| {
        let full = tape.param(store, id);
        tape.slice_cols(full, crop.start, crop.len)
    };
    let w_ci = peep(tape, p.peep_i)?;
    let w_cf = peep(tape, p.peep_f)?;
    let w_co = peep(tape, p.peep_o)?;

    let gx = tape.conv1d(x, w_x, Some(b), p.width)?;
    let gh = tape.conv1d(prev.hidden, w_h, None, p.width)?;
    let pre = tape.add(gx, gh)?;
    let [pi, pf, pc, po] = split4(tape, pre, h)?;

    let ci = tape.mul(w_ci, prev_c)?;
    let i_pre = tape.add(pi, ci)?;
    let i = tape.sigmoid(i_pre)?;
    let cf = tape.mul(w_cf, prev_c)?;
    let f_pre = tape.add(pf, cf)?;
    let f = tape.sigmoid(f_pre)?;
    let cand = tape.tanh(pc)?;
    let keep = tape.mul(f, prev_c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let co = tape.mul(w_co, c)?;
    let o_pre = tape.add(po, co)?;
    let o = tape.sigmoid(o_pre)?;
    let tc = tape.tanh(c)?;
    let hidden = tape.mul(o, tc)?;
    Ok(StateVars {
        hidden,
        cell: Some(c),
    })
}

fn lstm_step_tape(
    tape: &mut GradientTape,
    store: &ParamStore,
    p: &PointwiseRnnParams,
    x: Var,
    prev: StateVars,
) -> Result<StateVars> {
    let h = p.hidden;
    let prev_c = prev.cell.ok_or_else(|| Error::Usage("lstm state needs a cell tensor".into()))?;
    let (w_x, w_h) = (tape.param(store, p.w_x), tape.param(store, p.w_h));
    let (b_x, b_h) = (tape.param(store, p.b_x), tape.param(store, p.b_h));
    let gx = tape.linear(x, w_x, Some(b_x))?;
    let gh = tape.linear(prev.hidden, w_h, Some(b_h))?;
    let pre = tape.add(gx, gh)?;
    let [pi, pf, pg, po] = split4(tape, pre, h)?;
    let i = tape.sigmoid(pi)?;
    let f = tape.sigmoid(pf)?;
    let g = tape.tanh(pg)?;
    let o = tape.sigmoid(po)?;
    let keep = tape.mul(f, prev_c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let hidden = tape.mul(o, tc)?;
    Ok(StateVars {
        hidden,
        cell: Some(c),
    })
}

fn gru_step_tape(
    tape: &mut GradientTape,
    store: &ParamStore,
    p: &PointwiseRnnParams,
    x: Var,
    prev: StateVars,
) -> Result<StateVars> {
    let h = p.hidden;
    let (w_x, w_h) = (tape.param(store, p.w_x), tape.param(store, p.w_h));
    let (b_x, b_h) = (tape.param(store, p.b_x), tape.param(store, p.b_h));
    let gx = tape.linear(x, w_x, Some(b_x))?;
    let gh = tape.linear(prev.hidden, w_h, Some(b_h))?;
    let (xr, xz, xn) = (
        tape.slice_rows(gx, 0, h)?,
        tape.slice_rows(gx, h, h)?,
        tape.slice_rows(gx, 2 * h, h)?,
    );
    let (hr, hz, hn) = (
        tape.slice_rows(gh, 0, h)?,
        tape.slice_rows(gh, h, h)?,
        tape.slice_rows(gh, 2 * h, h)?,
    );
    let r_pre = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_pre)?;
    let z_pre = tape.add(xz, hz)?;
    let z = tape.sigmoid(z_pre)?;
    let gated = tape.mul(r, hn)?;
    let n_pre = tape.add(xn, gated)?;
    let n = tape.tanh(n_pre)?;
    let one_minus_z = tape.one_minus(z)?;
    let fresh = tape.mul(one_minus_z, n)?;
    let carried = tape.mul(z, prev.hidden)?;
    let hidden = tape.add(fresh, carried)?;
    Ok(StateVars { hidden, cell: None })
}

/// Threads the state through `inputs` starting from zeros; returns every hidden state.
pub fn unroll_tape(
    layer: &RecurrentLayer,
    tape: &mut GradientTape,
    store: &ParamStore,
    inputs: &[Var],
    crop: Option<Crop>,
) -> Result<Vec<Var>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Usage("cannot unroll over an empty sequence".into()))?;
    let (_, len) = tape.shape(first);
    let mut state = layer.zero_state(tape, len);
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = layer.step(tape, store, x, state, crop)?;
        out.push(state.hidden);
    }
    Ok(out)
}

fn state_to_vars(tape: &mut GradientTape, prev: &CellState, with_cell: bool) -> StateVars {
    StateVars {
        hidden: tape.constant(prev.hidden.clone()),
        cell: with_cell.then(|| tape.constant(prev.cell.clone())),
    }
}

/// One ConvLSTM step on plain tensors.
pub fn convlstm_step(
    x: &Tensor2,
    prev: &CellState,
    params: &ConvLstmCellParams,
    store: &ParamStore,
) -> Result<CellState> {
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let pv = state_to_vars(&mut tape, prev, true);
    let next = RecurrentLayer::ConvLstm(*params).step(&mut tape, store, xv, pv, None)?;
    Ok(CellState {
        hidden: tape.value(next.hidden).clone(),
        cell: tape.value(next.cell.expect("convlstm has a cell")).clone(),
    })
}

/// One position-wise LSTM step; `x` is (channels, positions), positions may be 1.
pub fn lstm_step(
    x: &Tensor2,
    prev: &CellState,
    params: &PointwiseRnnParams,
    store: &ParamStore,
) -> Result<CellState> {
    if params.kind != CellKind::Lstm {
        return Err(Error::Usage("lstm_step needs LSTM parameters".into()));
    }
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let pv = state_to_vars(&mut tape, prev, true);
    let next = RecurrentLayer::Pointwise(*params).step(&mut tape, store, xv, pv, None)?;
    Ok(CellState {
        hidden: tape.value(next.hidden).clone(),
        cell: tape.value(next.cell.expect("lstm has a cell")).clone(),
    })
}

/// One position-wise GRU step.
pub fn gru_step(
    x: &Tensor2,
    prev_hidden: &Tensor2,
    params: &PointwiseRnnParams,
    store: &ParamStore,
) -> Result<Tensor2> {
    if params.kind != CellKind::Gru {
        return Err(Error::Usage("gru_step needs GRU parameters".into()));
    }
    let mut tape = GradientTape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(prev_hidden.clone());
    let next = RecurrentLayer::Pointwise(*params).step(
        &mut tape,
        store,
        xv,
        StateVars {
            hidden: hv,
            cell: None,
        },
        None,
    )?;
    Ok(tape.value(next.hidden).clone())
}

/// Runs `layer` over `inputs` from a zero state and returns all hidden tensors.
pub fn unroll(layer: &RecurrentLayer, store: &ParamStore, inputs: &[Tensor2]) -> Result<Vec<Tensor2>> {
    let mut tape = GradientTape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let hs = unroll_tape(layer, &mut tape, store, &vars, None)?;
    Ok(hs.into_iter().map(|h| tape.value(h).clone()).collect())
}
