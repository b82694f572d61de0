//! Butterworth bandpass design via the prewarped bilinear transform, and
//! causal second-order-section filtering.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z2;
        num / den
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IirFilter {
    pub sections: Vec<Sos>,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

impl IirFilter {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let nyquist = 0.5 * self.sample_rate_hz;
        // exact points on the unit circle where the design places its zeros
        let z_inv = if freq_hz == 0.0 {
            Complex64::new(1.0, 0.0)
        } else if freq_hz == nyquist {
            Complex64::new(-1.0, 0.0)
        } else {
            Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.sample_rate_hz)
        };
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.magnitude(freq_hz).log10()
    }

    pub fn is_stable(&self) -> bool {
        self.sections
            .iter()
            .all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }

    /// Plain-text dump of the sections, one `b0 b1 b2 1 a1 a2` row each
    /// (the layout of scipy's `sos` arrays).
    pub fn export_sos(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# butterworth bandpass order={} low_hz={} high_hz={} fs_hz={}",
            self.order, self.low_hz, self.high_hz, self.sample_rate_hz
        );
        let _ = writeln!(out, "# b0 b1 b2 a0 a1 a2");
        for s in &self.sections {
            let _ = writeln!(
                out,
                "{:.17e} {:.17e} {:.17e} 1 {:.17e} {:.17e}",
                s.b[0], s.b[1], s.b[2], s.a[0], s.a[1]
            );
        }
        out
    }
}

/// Designs a digital Butterworth bandpass of analog-prototype order
/// `order` (so `2 * order` poles).
///
/// The band edges are prewarped, so the -3 dB points of the digital filter
/// land exactly on `low_hz` and `high_hz`.
pub fn design_butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs_hz: f64) -> Result<IirFilter> {
    if order == 0 {
        return Err(Error::Design("order must be at least 1".into()));
    }
    let nyquist = fs_hz / 2.0;
    if !(fs_hz > 0.0 && low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::Design(format!(
            "band edges {low_hz}-{high_hz} Hz must satisfy 0 < low < high < {nyquist} Hz"
        )));
    }

    let fs2 = 2.0 * fs_hz;
    let w_low = fs2 * (PI * low_hz / fs_hz).tan();
    let w_high = fs2 * (PI * high_hz / fs_hz).tan();
    let bw = w_high - w_low;
    let w0_sq = w_low * w_high;

    // Analog lowpass prototype poles on the left half of the unit circle.
    let n = order as f64;
    let proto: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // Lowpass -> bandpass: each prototype pole p yields the two roots of
    // s^2 - p*bw*s + w0^2.
    let mut analog_poles = Vec::with_capacity(2 * order);
    for p in &proto {
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        analog_poles.push((pb + disc) / 2.0);
        analog_poles.push((pb - disc) / 2.0);
    }
    // `order` zeros at s = 0, `order` at infinity; analog gain bw^order.
    let analog_gain = bw.powi(order as i32);

    let digital_poles: Vec<Complex64> = analog_poles.iter().map(|&s| (fs2 + s) / (fs2 - s)).collect();
    // Zeros at s=0 map to z=1, zeros at infinity to z=-1.
    let gain_num = fs2.powi(order as i32);
    let gain_den = analog_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, &p| acc * (fs2 - p));
    let gain = analog_gain * (gain_num / gain_den).re;

    let sections = pair_sections(&digital_poles, order)?;
    let per_section = gain.abs().powf(1.0 / order as f64);
    let mut sections: Vec<Sos> = sections
        .into_iter()
        .map(|a| Sos {
            b: [per_section, 0.0, -per_section],
            a,
        })
        .collect();
    if gain < 0.0 {
        for b in sections[0].b.iter_mut() {
            *b = -*b;
        }
    }

    let filter = IirFilter {
        sections,
        order,
        low_hz,
        high_hz,
        sample_rate_hz: fs_hz,
    };
    if !filter.is_stable() {
        return Err(Error::Design("designed filter is unstable".into()));
    }
    Ok(filter)
}

/// Groups `2*order` poles into `order` real-coefficient denominators:
/// conjugate pairs first, remaining real poles two at a time.
fn pair_sections(poles: &[Complex64], order: usize) -> Result<Vec<[f64; 2]>> {
    const REAL_TOL: f64 = 1e-12;
    let mut dens = Vec::with_capacity(order);
    let mut reals: Vec<f64> = Vec::new();
    for p in poles {
        if p.im.abs() <= REAL_TOL * p.norm().max(1.0) {
            reals.push(p.re);
        } else if p.im > 0.0 {
            dens.push([-2.0 * p.re, p.norm_sqr()]);
        }
    }
    reals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    for pair in reals.chunks(2) {
        match pair {
            [r1, r2] => dens.push([-(r1 + r2), r1 * r2]),
            _ => return Err(Error::Design("odd number of real poles".into())),
        }
    }
    if dens.len() != order {
        return Err(Error::Design(format!(
            "pole pairing produced {} sections for order {order}",
            dens.len()
        )));
    }
    Ok(dens)
}

/// Runs the cascade forward in time from zero state (transposed direct
/// form II per section).
pub fn filter_causal(f: &IirFilter, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in &f.sections {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b2 * input - a2 * out;
            *v = out;
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn design_default() -> IirFilter {
        design_butterworth_bandpass(3, 4.0, 30.0, 160.0).unwrap()
    }

    #[test]
    fn edges_are_half_power() {
        let f = design_default();
        let target = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f.magnitude(4.0) - target).abs() < 1e-3);
        assert!((f.magnitude(30.0) - target).abs() < 1e-3);
        assert!((f.magnitude_db(4.0) + 3.0103).abs() < 0.01);
        assert!((f.magnitude_db(30.0) + 3.0103).abs() < 0.01);
    }

    #[test]
    fn nulls_at_dc_and_nyquist() {
        let f = design_default();
        assert_eq!(f.magnitude(0.0), 0.0);
        assert_eq!(f.magnitude(80.0), 0.0);
        assert_eq!(f.sections.len(), 3);
        assert!(f.is_stable());
    }

    #[test]
    fn stopband_attenuation_on_dense_grid() {
        let f = design_default();
        // dense-grid oracle: the stopbands below 1 Hz and above 60 Hz stay
        // beneath -20 dB everywhere, not only at the two probe points
        let grid = (0..=8000).map(|i| i as f64 * 0.01);
        for hz in grid {
            if hz <= 1.0 || hz >= 60.0 {
                assert!(f.magnitude_db(hz) < -20.0, "{hz} Hz at {} dB", f.magnitude_db(hz));
            }
            if (4.0..=30.0).contains(&hz) {
                assert!(f.magnitude_db(hz) > -3.02);
            }
        }
    }

    #[test]
    fn zeros_in_zeros_out() {
        let y = filter_causal(&design_default(), &[0.0; 500]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_matches_design() {
        let f = design_default();
        let n = 4096;
        let mut imp = vec![0.0; n];
        imp[0] = 1.0;
        let h = filter_causal(&f, &imp);
        let mut buf: Vec<num_complex::Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter().enumerate().take(n / 2) {
            let hz = k as f64 * 160.0 / n as f64;
            if (4.0..=30.0).contains(&hz) {
                let d = (c - f.response(hz)).norm();
                assert!(d < 1e-6, "{hz} Hz off by {d}");
            }
        }
    }

    #[test]
    fn impulse_response_decays() {
        let f = design_default();
        let mut imp = vec![0.0; 3200];
        imp[0] = 1.0;
        let h = filter_causal(&f, &imp);
        assert!(h[1600..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn causality_is_bit_exact() {
        let f = design_default();
        let x: Vec<f64> = (0..600).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let mut x2 = x.clone();
        x2[300] += 17.5;
        let (y1, y2) = (filter_causal(&f, &x), filter_causal(&f, &x2));
        assert_eq!(y1[..300], y2[..300]);
        assert_ne!(y1[300], y2[300]);
    }

    #[test]
    fn invalid_bands() {
        assert!(design_butterworth_bandpass(3, 0.0, 30.0, 160.0).is_err());
        assert!(design_butterworth_bandpass(3, 30.0, 4.0, 160.0).is_err());
        assert!(design_butterworth_bandpass(3, 4.0, 80.0, 160.0).is_err());
        assert!(design_butterworth_bandpass(0, 4.0, 30.0, 160.0).is_err());
    }

    #[test]
    fn other_orders_keep_edges() {
        for order in 1..=6 {
            let f = design_butterworth_bandpass(order, 8.0, 13.0, 250.0).unwrap();
            assert_eq!(f.sections.len(), order);
            assert!((f.magnitude_db(8.0) + 3.0103).abs() < 0.01);
            assert!((f.magnitude_db(13.0) + 3.0103).abs() < 0.01);
        }
    }

    #[test]
    fn export_lists_sections() {
        let text = design_default().export_sos();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }
}
