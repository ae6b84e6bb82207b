use std::fmt;

use crate::error::{Error, Result};

/// Slack applied when comparing grid times against sample times, in seconds
/// (or in frames when counting grid points). Absorbs float rounding only.
pub(crate) const TIME_EPS: f64 = 1e-9;

/// A sampling rate held as an exact ratio `num / den` Hz.
///
/// Grid times are computed as `start + k * den / num` so long recordings do
/// not accumulate drift from a rounded period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    /// The tactile sensor rate, 50/3 Hz (displayed as 16.67 Hz).
    pub const TACTILE: Rate = Rate { num: 50, den: 3 };

    pub fn from_ratio(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!("invalid rate {num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Rate {
            num: num / g,
            den: den / g,
        })
    }

    /// Converts a decimal rate to the simplest ratio within half a unit of
    /// its second decimal, so `16.67` becomes `50/3`.
    pub fn from_hz(hz: f64) -> Result<Self> {
        if !hz.is_finite() || hz <= 0.0 {
            return Err(Error::Config(format!("rate must be positive, got {hz}")));
        }
        for den in 1..=1000u64 {
            let num = (hz * den as f64).round();
            if num >= 1.0 && (hz - num / den as f64).abs() <= 5e-3 {
                return Rate::from_ratio(num as u64, den);
            }
        }
        Rate::from_ratio((hz * 1e6).round().max(1.0) as u64, 1_000_000)
    }

    pub fn hz(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn period(self) -> f64 {
        self.den as f64 / self.num as f64
    }

    pub fn grid_time(self, start: f64, k: usize) -> f64 {
        start + (k as f64 * self.den as f64) / self.num as f64
    }

    /// Number of grid points `start + k / rate` inside a span of `span` seconds,
    /// counting both ends: `floor(span * rate) + 1`.
    pub fn frames_in(self, span: f64) -> usize {
        let frames = span * self.num as f64 / self.den as f64;
        (frames + TIME_EPS).floor() as usize + 1
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{} Hz", self.num)
        } else {
            write!(f, "{:.2} Hz", self.hz())
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_tactile_rate_snaps_to_ratio() {
        assert_eq!(Rate::from_hz(16.67).unwrap(), Rate::TACTILE);
        assert_eq!(Rate::from_hz(50.0 / 3.0).unwrap(), Rate::TACTILE);
        assert_eq!(Rate::from_hz(1000.0).unwrap(), Rate::from_ratio(1000, 1).unwrap());
        assert_eq!(Rate::from_hz(60.0).unwrap().hz(), 60.0);
        assert_eq!(Rate::TACTILE.to_string(), "16.67 Hz");
    }

    #[test]
    fn three_second_span_at_tactile_rate_has_51_points() {
        assert_eq!(Rate::TACTILE.frames_in(3.0), 51);
        assert_eq!(Rate::TACTILE.frames_in(0.0), 1);
        assert_eq!(Rate::TACTILE.frames_in(0.0599), 1);
    }

    #[test]
    fn grid_is_drift_free() {
        let r = Rate::TACTILE;
        // 50 frames at 50/3 Hz is exactly 3 s
        assert_eq!(r.grid_time(0.0, 50), 3.0);
        assert_eq!(r.grid_time(0.0, 50_000), 3000.0);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(Rate::from_hz(0.0).is_err());
        assert!(Rate::from_hz(-1.0).is_err());
        assert!(Rate::from_hz(f64::NAN).is_err());
        assert!(Rate::from_ratio(0, 1).is_err());
    }
}
