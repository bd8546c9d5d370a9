//! Integer-nanosecond timeline.
//!
//! Every schedule computation in the crate is done on these two newtypes so
//! that grant epochs, start times and burst edges compose exactly. Floating
//! point only appears at the edges (configuration input, reported metrics).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// An instant, in nanoseconds, on some clock (global or node-local).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimePoint(pub i64);

/// A signed duration in nanoseconds. Durations used as grant sizes are never
/// negative; clock offsets may be.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeSpan(pub i64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0);
    pub const MAX: TimePoint = TimePoint(i64::MAX);

    pub fn from_secs_f64(s: f64) -> Self {
        TimePoint((s * 1e9).round() as i64)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }
}

impl TimeSpan {
    pub const ZERO: TimeSpan = TimeSpan(0);

    pub const fn from_nanos(ns: i64) -> Self {
        TimeSpan(ns)
    }

    pub const fn from_micros(us: i64) -> Self {
        TimeSpan(us * 1_000)
    }

    pub const fn from_millis(ms: i64) -> Self {
        TimeSpan(ms * 1_000_000)
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_micros_f64(us: f64) -> Self {
        TimeSpan((us * 1e3).round() as i64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        TimeSpan((ms * 1e6).round() as i64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        TimeSpan((s * 1e9).round() as i64)
    }

    pub fn as_nanos(self) -> i64 {
        self.0
    }

    pub fn as_micros_f64(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn max(self, other: TimeSpan) -> TimeSpan {
        TimeSpan(self.0.max(other.0))
    }

    pub fn min(self, other: TimeSpan) -> TimeSpan {
        TimeSpan(self.0.min(other.0))
    }
}

impl Add<TimeSpan> for TimePoint {
    type Output = TimePoint;
    fn add(self, rhs: TimeSpan) -> TimePoint {
        TimePoint(self.0 + rhs.0)
    }
}

impl AddAssign<TimeSpan> for TimePoint {
    fn add_assign(&mut self, rhs: TimeSpan) {
        self.0 += rhs.0;
    }
}

impl Sub<TimeSpan> for TimePoint {
    type Output = TimePoint;
    fn sub(self, rhs: TimeSpan) -> TimePoint {
        TimePoint(self.0 - rhs.0)
    }
}

impl Sub for TimePoint {
    type Output = TimeSpan;
    fn sub(self, rhs: TimePoint) -> TimeSpan {
        TimeSpan(self.0 - rhs.0)
    }
}

impl Add for TimeSpan {
    type Output = TimeSpan;
    fn add(self, rhs: TimeSpan) -> TimeSpan {
        TimeSpan(self.0 + rhs.0)
    }
}

impl AddAssign for TimeSpan {
    fn add_assign(&mut self, rhs: TimeSpan) {
        self.0 += rhs.0;
    }
}

impl Sub for TimeSpan {
    type Output = TimeSpan;
    fn sub(self, rhs: TimeSpan) -> TimeSpan {
        TimeSpan(self.0 - rhs.0)
    }
}

impl SubAssign for TimeSpan {
    fn sub_assign(&mut self, rhs: TimeSpan) {
        self.0 -= rhs.0;
    }
}

impl Neg for TimeSpan {
    type Output = TimeSpan;
    fn neg(self) -> TimeSpan {
        TimeSpan(-self.0)
    }
}

impl Mul<i64> for TimeSpan {
    type Output = TimeSpan;
    fn mul(self, rhs: i64) -> TimeSpan {
        TimeSpan(self.0 * rhs)
    }
}

impl Sum for TimeSpan {
    fn sum<I: Iterator<Item = TimeSpan>>(iter: I) -> TimeSpan {
        TimeSpan(iter.map(|t| t.0).sum())
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Line rate of a wavelength channel, in bits per second.
///
/// Conversions between bytes and channel time round so that a byte count
/// never takes less time than its exact transmission time, and a time budget
/// never yields more bytes than fit in it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRate(pub u64);

impl LineRate {
    pub const GIGABIT: LineRate = LineRate(1_000_000_000);

    pub fn bits_per_sec(self) -> u64 {
        self.0
    }

    pub fn tx_time(self, bytes: u64) -> TimeSpan {
        let num = bytes as u128 * 8 * 1_000_000_000;
        let den = self.0 as u128;
        TimeSpan(num.div_ceil(den) as i64)
    }

    pub fn bytes_in(self, span: TimeSpan) -> u64 {
        if span.0 <= 0 {
            return 0;
        }
        (span.0 as u128 * self.0 as u128 / 8_000_000_000u128) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kilobyte_at_gigabit_is_eight_micros() {
        assert_eq!(LineRate::GIGABIT.tx_time(1000), TimeSpan::from_micros(8));
        assert_eq!(LineRate::GIGABIT.bytes_in(TimeSpan::from_micros(8)), 1000);
    }

    #[test]
    fn bytes_in_never_overfills() {
        let rate = LineRate(2_500_000_000);
        for ns in 0..200 {
            let b = rate.bytes_in(TimeSpan(ns));
            assert!(rate.tx_time(b) <= TimeSpan(ns));
        }
    }

    #[test]
    fn point_span_arithmetic() {
        let t = TimePoint(100) + TimeSpan(50);
        assert_eq!(t, TimePoint(150));
        assert_eq!(t - TimePoint(20), TimeSpan(130));
        assert_eq!(TimeSpan::from_micros_f64(1.5), TimeSpan(1500));
    }
}
