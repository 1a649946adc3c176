use crate::error::{Error, Result};

/// Channels x positions, row-major (one contiguous row per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    channels: usize,
    positions: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(channels: usize, positions: usize) -> Self {
        Self {
            channels,
            positions,
            data: vec![0.0; channels * positions],
        }
    }

    pub fn filled(channels: usize, positions: usize, value: f64) -> Self {
        Self {
            channels,
            positions,
            data: vec![value; channels * positions],
        }
    }

    pub fn from_vec(channels: usize, positions: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || positions == 0 {
            return Err(Error::dim(format!(
                "tensor dims must be >= 1, got ({channels}, {positions})"
            )));
        }
        if data.len() != channels * positions {
            return Err(Error::dim(format!(
                "data length {} does not match ({channels}, {positions})",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            positions,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.len();
        let positions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != positions) {
            return Err(Error::dim("ragged rows"));
        }
        Self::from_vec(channels, positions, rows.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, channel: usize, position: usize) -> f64 {
        self.data[channel * self.positions + position]
    }

    pub fn set(&mut self, channel: usize, position: usize, value: f64) {
        self.data[channel * self.positions + position] = value;
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.positions..(channel + 1) * self.positions]
    }

    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.data[channel * self.positions..(channel + 1) * self.positions]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Time x channels x positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    time: usize,
    channels: usize,
    positions: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(time: usize, channels: usize, positions: usize) -> Self {
        Self {
            time,
            channels,
            positions,
            data: vec![0.0; time * channels * positions],
        }
    }

    pub fn from_vec(time: usize, channels: usize, positions: usize, data: Vec<f64>) -> Result<Self> {
        if time == 0 || channels == 0 || positions == 0 {
            return Err(Error::dim(format!(
                "tensor dims must be >= 1, got ({time}, {channels}, {positions})"
            )));
        }
        if data.len() != time * channels * positions {
            return Err(Error::dim(format!(
                "data length {} does not match ({time}, {channels}, {positions})",
                data.len()
            )));
        }
        Ok(Self {
            time,
            channels,
            positions,
            data,
        })
    }

    pub fn from_slices(slices: &[Tensor2]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::dim("empty slice list"))?;
        let (c, l) = (first.channels(), first.positions());
        if slices.iter().any(|s| s.channels() != c || s.positions() != l) {
            return Err(Error::dim("slices are not congruent"));
        }
        let data = slices.iter().flat_map(|s| s.data().iter().copied()).collect();
        Self::from_vec(slices.len(), c, l, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.time, self.channels, self.positions)
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn index(&self, t: usize, c: usize, l: usize) -> usize {
        (t * self.channels + c) * self.positions + l
    }

    pub fn get(&self, t: usize, c: usize, l: usize) -> f64 {
        self.data[self.index(t, c, l)]
    }

    pub fn set(&mut self, t: usize, c: usize, l: usize, value: f64) {
        let i = self.index(t, c, l);
        self.data[i] = value;
    }

    pub fn row(&self, t: usize, c: usize) -> &[f64] {
        let start = self.index(t, c, 0);
        &self.data[start..start + self.positions]
    }

    pub fn row_mut(&mut self, t: usize, c: usize) -> &mut [f64] {
        let start = self.index(t, c, 0);
        &mut self.data[start..start + self.positions]
    }

    /// Copy of one time slice as a (channels, positions) tensor.
    pub fn slice(&self, t: usize) -> Tensor2 {
        let n = self.channels * self.positions;
        Tensor2 {
            channels: self.channels,
            positions: self.positions,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }

    /// Sub-range of the time axis.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.time {
            return Err(Error::Range(format!(
                "window {start}..{} outside time axis of length {}",
                start + len,
                self.time
            )));
        }
        let n = self.channels * self.positions;
        Self::from_vec(
            len,
            self.channels,
            self.positions,
            self.data[start * n..(start + len) * n].to_vec(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights laid out as (out_channels, in_channels, width).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel1D {
    out_channels: usize,
    in_channels: usize,
    width: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel1D {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        width: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("kernel width must be odd, got {width}")));
        }
        if weights.len() != out_channels * in_channels * width {
            return Err(Error::dim(format!(
                "kernel weights length {} does not match {out_channels}x{in_channels}x{width}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::dim(format!(
                "kernel bias length {} does not match {out_channels} outputs",
                bias.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            width,
            weights,
            bias,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, width: usize) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            width,
            vec![0.0; out_channels * in_channels * width],
            vec![0.0; out_channels],
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn half_width(&self) -> usize {
        self.width / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, out: usize, input: usize, tap: usize) -> f64 {
        self.weights[(out * self.in_channels + input) * self.width + tap]
    }
}
