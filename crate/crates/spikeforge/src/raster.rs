//! Binary spike rasters and their on-disk text format.
//!
//! A raster is a `(n_steps, n_channels)` 0/1 matrix with a step size `dt`.
//! The text format stores only the spike coordinates:
//!
//! ```text
//! # dt_ms=1 n_steps=500 n_channels=60
//! 0,3
//! 0,17
//! 2,5
//! ```
//!
//! one `step,channel` pair per line, sorted by step then channel.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeRaster {
    data: Array2<u8>,
    dt: f64,
}

impl SpikeRaster {
    /// Wraps a dense 0/1 matrix. Rows are time steps, columns channels.
    pub fn new(data: Array2<u8>, dt: f64) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::invalid(format!("raster dt must be finite and positive, got {dt}")));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("raster entries must be 0 or 1, got {bad}")));
        }
        Ok(SpikeRaster { data, dt })
    }

    /// All-zero raster.
    pub fn zeros(n_steps: usize, n_channels: usize, dt: f64) -> Result<Self> {
        Self::new(Array2::zeros((n_steps, n_channels)), dt)
    }

    /// Builds a raster from `(step, channel)` spike coordinates.
    pub fn from_events(
        events: &[(usize, usize)],
        n_steps: usize,
        n_channels: usize,
        dt: f64,
    ) -> Result<Self> {
        let mut r = Self::zeros(n_steps, n_channels, dt)?;
        for &(step, ch) in events {
            if step >= n_steps || ch >= n_channels {
                return Err(Error::invalid(format!(
                    "spike ({step},{ch}) outside raster of {n_steps} steps x {n_channels} channels"
                )));
            }
            r.data[[step, ch]] = 1;
        }
        Ok(r)
    }

    pub fn n_steps(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn get(&self, step: usize, channel: usize) -> u8 {
        self.data[[step, channel]]
    }

    pub fn set(&mut self, step: usize, channel: usize, spike: bool) {
        self.data[[step, channel]] = spike as u8;
    }

    /// Total number of spikes in one channel.
    pub fn channel_count(&self, channel: usize) -> usize {
        self.data.column(channel).iter().map(|&v| v as usize).sum()
    }

    /// Total number of spikes in the raster.
    pub fn total_count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Spike coordinates sorted by step, then channel.
    pub fn events(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (step, row) in self.data.rows().into_iter().enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                if v != 0 {
                    out.push((step, ch));
                }
            }
        }
        out
    }

    /// Dense matrix as f64, for loss arithmetic.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(|v| v as f64)
    }

    /// The raster delayed by one step: row `t` holds the spikes of `t - 1`,
    /// the first row is silent, the last row drops off. This is the signal
    /// a downstream layer sees across a one-step axonal hop.
    pub fn delay_one_step(&self) -> SpikeRaster {
        let mut data = Array2::zeros(self.data.raw_dim());
        for t in 1..self.n_steps() {
            let src = self.data.row(t - 1).to_owned();
            data.row_mut(t).assign(&src);
        }
        SpikeRaster { data, dt: self.dt }
    }

    /// Serializes to the sparse text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# dt_ms={} n_steps={} n_channels={}",
            self.dt * 1e3,
            self.n_steps(),
            self.n_channels()
        );
        for (step, ch) in self.events() {
            let _ = writeln!(s, "{step},{ch}");
        }
        s
    }

    /// Parses the sparse text format. Spike coordinates outside the header's
    /// dimensions are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { what: "raster", line: 1, detail: "empty input".into() })?;
        let (dt, n_steps, n_channels) = parse_header(header)?;
        let mut raster = Self::zeros(n_steps, n_channels, dt)?;
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (step, ch) = line.split_once(',').ok_or_else(|| Error::Parse {
                what: "raster",
                line: idx + 1,
                detail: format!("expected 'step,channel', got '{line}'"),
            })?;
            let step: usize = step.trim().parse().map_err(|e| Error::Parse {
                what: "raster",
                line: idx + 1,
                detail: format!("bad step: {e}"),
            })?;
            let ch: usize = ch.trim().parse().map_err(|e| Error::Parse {
                what: "raster",
                line: idx + 1,
                detail: format!("bad channel: {e}"),
            })?;
            if step >= n_steps || ch >= n_channels {
                return Err(Error::Parse {
                    what: "raster",
                    line: idx + 1,
                    detail: format!(
                        "spike ({step},{ch}) outside raster of {n_steps} steps x {n_channels} channels"
                    ),
                });
            }
            raster.data[[step, ch]] = 1;
        }
        Ok(raster)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn parse_header(header: &str) -> Result<(f64, usize, usize)> {
    let err = |detail: String| Error::Parse { what: "raster", line: 1, detail };
    let rest = header
        .strip_prefix('#')
        .ok_or_else(|| err(format!("header must start with '#', got '{header}'")))?
        .trim();
    let mut dt_ms = None;
    let mut n_steps = None;
    let mut n_channels = None;
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("bad header field '{field}'")))?;
        match key {
            "dt_ms" => {
                dt_ms = Some(value.parse::<f64>().map_err(|e| err(format!("bad dt_ms: {e}")))?)
            }
            "n_steps" => {
                n_steps = Some(value.parse::<usize>().map_err(|e| err(format!("bad n_steps: {e}")))?)
            }
            "n_channels" => {
                n_channels =
                    Some(value.parse::<usize>().map_err(|e| err(format!("bad n_channels: {e}")))?)
            }
            other => return Err(err(format!("unknown header field '{other}'"))),
        }
    }
    match (dt_ms, n_steps, n_channels) {
        (Some(dt_ms), Some(s), Some(c)) => Ok((dt_ms * 1e-3, s, c)),
        _ => Err(err("header must define dt_ms, n_steps and n_channels".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let r = SpikeRaster::from_events(&[(0, 3), (0, 1), (2, 0), (4, 5)], 5, 6, 1e-3).unwrap();
        let text = r.to_text();
        assert!(text.starts_with("# dt_ms=1 n_steps=5 n_channels=6\n"));
        let parsed = SpikeRaster::from_text(&text).unwrap();
        assert_eq!(parsed, r);
    }

    #[test]
    fn events_are_sorted() {
        let r = SpikeRaster::from_events(&[(4, 5), (0, 3), (0, 1)], 5, 6, 1e-3).unwrap();
        assert_eq!(r.events(), vec![(0, 1), (0, 3), (4, 5)]);
    }

    #[test]
    fn out_of_range_spikes_rejected() {
        let text = "# dt_ms=1 n_steps=5 n_channels=6\n5,0\n";
        assert!(SpikeRaster::from_text(text).is_err());
        let text = "# dt_ms=1 n_steps=5 n_channels=6\n0,6\n";
        assert!(SpikeRaster::from_text(text).is_err());
        assert!(SpikeRaster::from_events(&[(0, 6)], 5, 6, 1e-3).is_err());
    }

    #[test]
    fn malformed_input_rejected() {
        assert!(SpikeRaster::from_text("").is_err());
        assert!(SpikeRaster::from_text("0,0\n").is_err());
        assert!(SpikeRaster::from_text("# dt_ms=1 n_steps=5\n").is_err());
        assert!(SpikeRaster::from_text("# dt_ms=1 n_steps=5 n_channels=6\nnope\n").is_err());
    }

    #[test]
    fn empty_raster_round_trips() {
        let r = SpikeRaster::zeros(0, 4, 1e-3).unwrap();
        let parsed = SpikeRaster::from_text(&r.to_text()).unwrap();
        assert_eq!(parsed.n_steps(), 0);
        assert_eq!(parsed.n_channels(), 4);
    }

    #[test]
    fn non_binary_entries_rejected() {
        let mut m = Array2::<u8>::zeros((2, 2));
        m[[0, 0]] = 2;
        assert!(SpikeRaster::new(m, 1e-3).is_err());
        assert!(SpikeRaster::zeros(2, 2, 0.0).is_err());
    }
}
