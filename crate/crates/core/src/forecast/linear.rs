use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::trackgen::{TrackDataset, Window, TARGET_CHANNELS, VERTICAL_LEFT};

/// Observations the baseline fits its line through.
pub const LINEAR_HISTORY: usize = 3;

/// `value = slope * date + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWindowParams {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearWindowParams {
    pub fn at(&self, date: f64) -> f64 {
        self.slope * date + self.intercept
    }
}

/// Least-squares line through `(date, value)` points with distinct dates.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LinearWindowParams> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {}", points.len())));
    }
    for (i, a) in points.iter().enumerate() {
        if points[i + 1..].iter().any(|b| b.0 == a.0) {
            return Err(Error::Degenerate(format!("duplicate date {}", a.0)));
        }
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearWindowParams {
        slope,
        intercept: my - slope * mx,
    })
}

/// Fits the last observations and evaluates the line at `next_date`.
pub fn linear_forecast(history: &[(f64, f64)], next_date: f64) -> Result<f64> {
    let p = fit_line(history)?;
    // Centre on the last date so large day stamps do not cost precision.
    let last = history[history.len() - 1].0;
    Ok(p.at(last) + p.slope * (next_date - last))
}

/// Baseline `(2, L)` forecast for a window from its last three inspections.
pub fn linear_baseline(ds: &TrackDataset, w: &Window) -> Result<Tensor2> {
    if w.inputs.len() < LINEAR_HISTORY {
        return Err(Error::Size(format!(
            "linear baseline needs {LINEAR_HISTORY} past inspections, window has {}",
            w.inputs.len()
        )));
    }
    let l_n = ds.positions();
    let ts: Vec<usize> = (w.inputs.end - LINEAR_HISTORY..w.inputs.end).collect();
    let next = ds.dates[w.target] as f64;
    let mut out = Tensor2::zeros(TARGET_CHANNELS, l_n);
    let mut pts = [(0.0, 0.0); LINEAR_HISTORY];
    for c in 0..TARGET_CHANNELS {
        for l in 0..l_n {
            for (k, &t) in ts.iter().enumerate() {
                pts[k] = (ds.dates[t] as f64, ds.irregularities.get(t, VERTICAL_LEFT + c, l));
            }
            out.set(c, l, linear_forecast(&pts, next)?);
        }
    }
    Ok(out)
}
