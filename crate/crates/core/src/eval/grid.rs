use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evenly spaced alpha values `start, start + step, ..., end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            start: 0.0,
            end: 1.0,
            step: 0.1,
        }
    }
}

impl AlphaGrid {
    /// Points are computed as `start + (end - start) * i / n`, so interior
    /// values such as 0.7 come out exact rather than accumulated.
    pub fn points(&self) -> Result<Vec<f64>> {
        let AlphaGrid { start, end, step } = *self;
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
            return Err(Error::Config(format!("grid bounds must satisfy 0 <= start <= end <= 1, got {start}:{end}")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        let span = end - start;
        let n = (span / step).round();
        if (n * step - span).abs() > 1e-9 {
            return Err(Error::Config(format!("step {step} does not divide [{start}, {end}]")));
        }
        let n = n as usize;
        if n == 0 {
            return Ok(vec![start]);
        }
        Ok((0..=n).map(|i| start + span * i as f64 / n as f64).collect())
    }
}

impl FromStr for AlphaGrid {
    type Err = Error;

    /// `start:end:step`, e.g. `0:1:0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            [a, b, c] => {
                let g = AlphaGrid {
                    start: num(a)?,
                    end: num(b)?,
                    step: num(c)?,
                };
                g.points()?;
                Ok(g)
            }
            _ => Err(Error::Config(format!("grid must be start:end:step, got {s:?}"))),
        }
    }
}
