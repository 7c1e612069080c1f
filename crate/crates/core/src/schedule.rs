//! Leaky-ReLU slope schedules for deep training.
//!
//! The slope starts at 0 (ReLU) and reaches 1 (identity) at the final epoch,
//! at which point the two convolutions around it can be merged.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMethod {
    /// `a = 1 − cos(π·e / 2E)`
    Cosine,
    /// `a = e / E`
    Linear,
}

impl FromStr for ScheduleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(invalid(format!("unknown schedule method `{other}`"))),
        }
    }
}

impl fmt::Display for ScheduleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSpec {
    pub method: ScheduleMethod,
    pub total_epochs: u32,
}

impl ScheduleSpec {
    pub fn new(method: ScheduleMethod, total_epochs: u32) -> Result<Self> {
        if total_epochs == 0 {
            return Err(invalid("total epochs must be at least 1"));
        }
        Ok(Self { method, total_epochs })
    }

    pub fn slope(&self, epoch: u32) -> Result<f64> {
        slope(self, epoch)
    }

    /// `(e, a(e))` for every epoch `0..=E`.
    pub fn table(&self) -> Vec<(u32, f64)> {
        (0..=self.total_epochs).map(|e| (e, slope(self, e).expect("in range"))).collect()
    }
}

/// Endpoints are exact: `a(0) = 0` and `a(E) = 1` for both methods.
pub fn slope(spec: &ScheduleSpec, epoch: u32) -> Result<f64> {
    let total = spec.total_epochs;
    if total == 0 {
        return Err(invalid("total epochs must be at least 1"));
    }
    if epoch > total {
        return Err(invalid(format!("epoch {epoch} outside 0..={total}")));
    }
    if epoch == 0 {
        return Ok(0.0);
    }
    if epoch == total {
        return Ok(1.0);
    }
    let t = epoch as f64 / total as f64;
    Ok(match spec.method {
        ScheduleMethod::Cosine => 1.0 - (FRAC_PI_2 * t).cos(),
        ScheduleMethod::Linear => t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_values() {
        let s = ScheduleSpec::new(ScheduleMethod::Cosine, 300).unwrap();
        assert_eq!(s.slope(0).unwrap(), 0.0);
        assert_eq!(s.slope(300).unwrap(), 1.0);
        assert!((s.slope(150).unwrap() - 0.292_893_218_8).abs() < 1e-9);
    }

    #[test]
    fn linear_values() {
        let s = ScheduleSpec::new(ScheduleMethod::Linear, 4).unwrap();
        let t: Vec<f64> = s.table().into_iter().map(|(_, a)| a).collect();
        assert_eq!(t, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn out_of_range() {
        let s = ScheduleSpec::new(ScheduleMethod::Linear, 10).unwrap();
        assert!(s.slope(11).is_err());
        assert!(ScheduleSpec::new(ScheduleMethod::Cosine, 0).is_err());
    }

    #[test]
    fn parse_method() {
        assert_eq!("Cosine".parse::<ScheduleMethod>().unwrap(), ScheduleMethod::Cosine);
        assert_eq!("linear".parse::<ScheduleMethod>().unwrap(), ScheduleMethod::Linear);
        assert!("step".parse::<ScheduleMethod>().is_err());
    }
}
