//! Interpolation kernels for stage-time history values.

use crate::error::{Error, Result};

/// Quadratic through `(0, p0)`, `(1, p1)`, `(2, p2)` evaluated at `x`.
pub fn lagrange3(p0: f64, p1: f64, p2: f64, x: f64) -> f64 {
    let l0 = 0.5 * (x - 1.0) * (x - 2.0);
    let l1 = -x * (x - 2.0);
    let l2 = 0.5 * x * (x - 1.0);
    l0 * p0 + l1 * p1 + l2 * p2
}

/// Weights of [`lagrange3`] at `x`.
pub fn lagrange3_weights(x: f64) -> [f64; 3] {
    [0.5 * (x - 1.0) * (x - 2.0), -x * (x - 2.0), 0.5 * x * (x - 1.0)]
}

/// Weights of [`catmull_rom`] at `t`.
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t + 2.0 * t2 - t3),
        0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
        0.5 * (t + 4.0 * t2 - 3.0 * t3),
        0.5 * (t3 - t2),
    ]
}

/// Catmull-Rom spline between `p1` (at `t = 0`) and `p2` (at `t = 1`).
pub fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    0.5 * (2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
}

/// Per-channel ring buffer of samples at the base step, read back at
/// fractional delays with Catmull-Rom interpolation. Unwritten slots read
/// as zero (silence before onset).
#[derive(Debug, Clone)]
pub struct DelayLine {
    channels: usize,
    len: usize,
    data: Vec<f64>,
    /// Number of samples pushed so far.
    count: u64,
}

impl DelayLine {
    /// Buffer able to serve delays up to `max_delay` base steps.
    pub fn new(channels: usize, max_delay: f64) -> Result<Self> {
        if !(max_delay.is_finite() && max_delay >= 0.0) {
            return Err(Error::Config(format!("invalid delay bound {max_delay}")));
        }
        let len = max_delay.ceil() as usize + 4;
        Ok(Self {
            channels,
            len,
            data: vec![0.0; channels * len],
            count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.len
    }

    /// Index of the most recent sample (sample `k` was taken at `k·Δt`).
    pub fn latest(&self) -> Option<u64> {
        self.count.checked_sub(1)
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels);
        let slot = (self.count % self.len as u64) as usize;
        self.data[slot * self.channels..(slot + 1) * self.channels].copy_from_slice(values);
        self.count += 1;
    }

    fn sample(&self, k: i64, ch: usize) -> f64 {
        if k < 0 || k as u64 >= self.count || self.count - k as u64 > self.len as u64 {
            return 0.0;
        }
        let slot = (k as u64 % self.len as u64) as usize;
        self.data[slot * self.channels + ch]
    }

    /// Value of channel `ch` at time `pos` measured in base steps. Needs
    /// `pos ≤ latest − 1` so that all four spline points exist.
    pub fn read(&self, ch: usize, pos: f64) -> f64 {
        let i = pos.floor();
        let t = pos - i;
        let i = i as i64;
        catmull_rom(
            self.sample(i - 1, ch),
            self.sample(i, ch),
            self.sample(i + 1, ch),
            self.sample(i + 2, ch),
            t,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lagrange_hits_nodes() {
        assert_eq!(lagrange3(1.0, 2.0, 5.0, 0.0), 1.0);
        assert_eq!(lagrange3(1.0, 2.0, 5.0, 1.0), 2.0);
        assert_eq!(lagrange3(1.0, 2.0, 5.0, 2.0), 5.0);
    }

    #[test]
    fn catmull_rom_hits_inner_nodes() {
        assert_eq!(catmull_rom(3.0, -1.0, 4.0, 7.0, 0.0), -1.0);
        assert_eq!(catmull_rom(3.0, -1.0, 4.0, 7.0, 1.0), 4.0);
    }

    #[test]
    fn weights_match_direct_forms() {
        let (p, q) = ([0.3, -1.2, 2.5, 0.7], 0.37);
        let w = catmull_rom_weights(q);
        let via_w: f64 = w.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((via_w - catmull_rom(p[0], p[1], p[2], p[3], q)).abs() < 1e-14);
        let l = lagrange3_weights(1.0 + q);
        let via_l = l[0] * p[0] + l[1] * p[1] + l[2] * p[2];
        assert!((via_l - lagrange3(p[0], p[1], p[2], 1.0 + q)).abs() < 1e-14);
        assert_eq!(catmull_rom_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(lagrange3_weights(1.0), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn delay_line_reads_back_and_wraps() {
        let mut d = DelayLine::new(2, 5.0).unwrap();
        for k in 0..40 {
            d.push(&[k as f64, -2.0 * k as f64]);
        }
        // linear data is reproduced exactly by the spline
        assert!((d.read(0, 36.25) - 36.25).abs() < 1e-12);
        assert!((d.read(1, 35.5) + 71.0).abs() < 1e-12);
        assert_eq!(d.latest(), Some(39));
    }

    #[test]
    fn delay_line_is_silent_before_onset() {
        let mut d = DelayLine::new(1, 3.0).unwrap();
        assert_eq!(d.read(0, -5.5), 0.0);
        d.push(&[1.0]);
        assert_eq!(d.read(0, -3.0), 0.0);
    }

    proptest! {
        #[test]
        fn lagrange_exact_on_quadratics(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, x in 0.0f64..2.0) {
            let f = |s: f64| a + b * s + c * s * s;
            prop_assert!((lagrange3(f(0.0), f(1.0), f(2.0), x) - f(x)).abs() < 1e-10);
        }

        #[test]
        fn catmull_rom_exact_on_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..1.0) {
            let f = |s: f64| a + b * s;
            prop_assert!((catmull_rom(f(-1.0), f(0.0), f(1.0), f(2.0), t) - f(t)).abs() < 1e-10);
        }

        #[test]
        fn catmull_rom_is_affine_in_samples(
            p in prop::collection::vec(-3.0f64..3.0, 4),
            q in prop::collection::vec(-3.0f64..3.0, 4),
            t in 0.0f64..1.0,
        ) {
            let s: Vec<f64> = p.iter().zip(&q).map(|(x, y)| x + y).collect();
            let lhs = catmull_rom(s[0], s[1], s[2], s[3], t);
            let rhs = catmull_rom(p[0], p[1], p[2], p[3], t) + catmull_rom(q[0], q[1], q[2], q[3], t);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
