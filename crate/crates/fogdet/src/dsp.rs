//! Signal-path primitives: Butterworth design, causal second-order-section
//! filtering, decimation of 200 Hz recordings to 40 Hz, and a 128-point FFT
//! with band-power helpers.
//!
//! All filters are designed as analog Butterworth prototypes and mapped to
//! the z-domain with the bilinear transform, pre-warping the cutoff so the
//! half-power point lands exactly on the requested frequency. Filtering is
//! causal by default; [`filter_apply_zero_phase`] offers the forward-backward
//! variant for callers that need zero lag at the price of doubled order.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Sample rate all windowed analysis runs at.
pub const RESAMPLED_RATE_HZ: f64 = 40.0;
/// Sample rate recordings are captured at.
pub const CAPTURE_RATE_HZ: f64 = 200.0;
/// Analysis window length in samples at 40 Hz.
pub const FFT_LEN: usize = 128;
/// Width of one FFT bin in Hz: 40 / 128.
pub const BIN_HZ: f64 = RESAMPLED_RATE_HZ / FFT_LEN as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// One biquad stage, denominator normalized to `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl SosSection {
    /// Transfer function of this stage at `z`.
    fn response_at(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = Complex64::new(self.b0, 0.0) + zi * self.b1 + zi * zi * self.b2;
        let den = Complex64::new(1.0, 0.0) + zi * self.a1 + zi * zi * self.a2;
        num / den
    }

    /// Roots of the denominator polynomial `z^2 + a1 z + a2`.
    fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [
            (disc - self.a1) / 2.0,
            (-disc - self.a1) / 2.0,
        ]
    }
}

/// A cascade of second-order sections with a single scalar gain out front.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<SosSection>,
    pub overall_gain: f64,
}

impl SosFilter {
    /// Complex response at `freq_hz` for a cascade running at `fs_hz`.
    pub fn response(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs_hz);
        self.sections
            .iter()
            .fold(Complex64::new(self.overall_gain, 0.0), |acc, s| {
                acc * s.response_at(z)
            })
    }

    /// Magnitude response in dB at `freq_hz`.
    pub fn magnitude_db(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        20.0 * self.response(freq_hz, fs_hz).norm().log10()
    }

    /// Largest pole magnitude across all sections.
    pub fn max_pole_magnitude(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }
}

/// Margin every pole must keep from the unit circle.
const POLE_MARGIN: f64 = 1e-9;

/// Designs a digital Butterworth filter of the given order.
///
/// The analog prototype is pre-warped so the −3.01 dB point of the digital
/// filter falls exactly on `cutoff_hz`. Lowpass designs have unit gain at DC,
/// highpass designs a structural zero at DC and unit gain at Nyquist.
///
/// `order` must lie in `1..=8` and `cutoff_hz` strictly between 0 and the
/// Nyquist frequency.
pub fn design_butterworth(
    kind: FilterKind,
    order: usize,
    cutoff_hz: f64,
    fs_hz: f64,
) -> Result<SosFilter> {
    if !(1..=8).contains(&order) {
        return Err(Error::validation(format!(
            "filter order must be between 1 and 8, got {order}"
        )));
    }
    if !(fs_hz > 0.0) {
        return Err(Error::validation(format!(
            "sample rate must be positive, got {fs_hz}"
        )));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(Error::validation(format!(
            "cutoff must lie strictly between 0 and Nyquist ({} Hz), got {cutoff_hz}",
            fs_hz / 2.0
        )));
    }

    // Unit-circle prototype poles, all strictly in the left half-plane.
    let n = order;
    let proto: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
        .collect();

    let warped = 2.0 * fs_hz * (PI * cutoff_hz / fs_hz).tan();
    let analog_poles: Vec<Complex64> = match kind {
        FilterKind::Lowpass => proto.iter().map(|p| p * warped).collect(),
        FilterKind::Highpass => proto.iter().map(|p| warped / p).collect(),
    };

    // Bilinear transform. Lowpass zeros sit at infinity and map to z = -1;
    // the highpass zeros at s = 0 map to z = +1.
    let fs2 = 2.0 * fs_hz;
    let digital_poles: Vec<Complex64> = analog_poles
        .iter()
        .map(|p| (fs2 + p) / (fs2 - p))
        .collect();

    // Split into one optional real pole (odd orders) plus conjugate pairs.
    let mut real_poles: Vec<Complex64> = Vec::new();
    let mut upper_poles: Vec<Complex64> = Vec::new();
    for p in &digital_poles {
        if p.im.abs() < 1e-12 {
            real_poles.push(*p);
        } else if p.im > 0.0 {
            upper_poles.push(*p);
        }
    }
    upper_poles.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    debug_assert_eq!(real_poles.len() + 2 * upper_poles.len(), n);

    let zero_sign = match kind {
        FilterKind::Lowpass => 1.0,
        FilterKind::Highpass => -1.0,
    };
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    for p in &real_poles {
        sections.push(SosSection {
            b0: 1.0,
            b1: zero_sign,
            b2: 0.0,
            a1: -p.re,
            a2: 0.0,
        });
    }
    for p in &upper_poles {
        sections.push(SosSection {
            b0: 1.0,
            b1: 2.0 * zero_sign,
            b2: 1.0,
            a1: -2.0 * p.re,
            a2: p.norm_sqr(),
        });
    }

    let mut filter = SosFilter {
        sections,
        overall_gain: 1.0,
    };

    // Normalize at the passband reference: DC for lowpass, Nyquist for
    // highpass. The bilinear gain formula would land within rounding error of
    // this; dividing by the realized response makes the reference exact.
    let reference_hz = match kind {
        FilterKind::Lowpass => 0.0,
        FilterKind::Highpass => fs_hz / 2.0,
    };
    let reference = filter.response(reference_hz, fs_hz);
    debug_assert!(reference.im.abs() < 1e-9 * reference.re.abs());
    filter.overall_gain = 1.0 / reference.re;

    let worst = filter.max_pole_magnitude();
    if worst >= 1.0 - POLE_MARGIN {
        return Err(Error::validation(format!(
            "designed filter is too close to instability (pole magnitude {worst})"
        )));
    }
    Ok(filter)
}

/// Runs `x` through the cascade causally (direct form II transposed), with
/// all delay lines starting at zero.
pub fn filter_apply(filter: &SosFilter, x: &[f64]) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().map(|&v| v * filter.overall_gain).collect();
    for s in &filter.sections {
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for v in &mut y {
            let xin = *v;
            let out = s.b0 * xin + z1;
            z1 = s.b1 * xin - s.a1 * out + z2;
            z2 = s.b2 * xin - s.a2 * out;
            *v = out;
        }
    }
    y
}

/// Forward-backward variant of [`filter_apply`]: zero phase lag, squared
/// magnitude response, and non-causal edge transients. Kept out of the main
/// path, which is strictly causal.
pub fn filter_apply_zero_phase(filter: &SosFilter, x: &[f64]) -> Vec<f64> {
    let mut y = filter_apply(filter, x);
    y.reverse();
    let mut y = filter_apply(filter, &y);
    y.reverse();
    y
}

/// Decimation filter: order 8 lowpass at 16 Hz, designed once per call set.
fn antialias_filter() -> &'static SosFilter {
    static FILTER: OnceLock<SosFilter> = OnceLock::new();
    FILTER.get_or_init(|| {
        design_butterworth(FilterKind::Lowpass, 8, 16.0, CAPTURE_RATE_HZ)
            .expect("fixed antialias design parameters are valid")
    })
}

/// Resamples a 200 Hz triaxial recording to 40 Hz.
///
/// Each axis is lowpass filtered (order 8, 16 Hz cutoff) and every fifth
/// sample kept, starting at index 0. Labels are decimated by taking the same
/// indices. `fs_hz` must be exactly 200.
pub fn resample_to_40hz(
    samples: &[[f64; 3]],
    labels: &[bool],
    fs_hz: f64,
) -> Result<(Vec<[f64; 3]>, Vec<bool>)> {
    if fs_hz != CAPTURE_RATE_HZ {
        return Err(Error::validation(format!(
            "resampling expects a {CAPTURE_RATE_HZ} Hz input, got {fs_hz} Hz"
        )));
    }
    if samples.len() != labels.len() {
        return Err(Error::validation(format!(
            "sample count {} does not match label count {}",
            samples.len(),
            labels.len()
        )));
    }
    let filter = antialias_filter();
    let step = (CAPTURE_RATE_HZ / RESAMPLED_RATE_HZ) as usize;
    let out_len = samples.len().div_ceil(step);
    let mut out = vec![[0.0f64; 3]; out_len];
    for axis in 0..3 {
        let channel: Vec<f64> = samples.iter().map(|s| s[axis]).collect();
        let filtered = filter_apply(filter, &channel);
        for (i, v) in filtered.iter().step_by(step).enumerate() {
            out[i][axis] = *v;
        }
    }
    let out_labels: Vec<bool> = labels.iter().copied().step_by(step).collect();
    Ok((out, out_labels))
}

fn twiddles() -> &'static [Complex64; FFT_LEN / 2] {
    static TW: OnceLock<[Complex64; FFT_LEN / 2]> = OnceLock::new();
    TW.get_or_init(|| {
        let mut t = [Complex64::new(0.0, 0.0); FFT_LEN / 2];
        for (k, slot) in t.iter_mut().enumerate() {
            *slot = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / FFT_LEN as f64);
        }
        t
    })
}

/// Full 128-point transform of a real window, radix-2 decimation in time.
/// Returned bins follow the usual convention: `X[k] = Σ x[n]·e^{-2πikn/128}`.
pub fn fft128(x: &[f64; FFT_LEN]) -> [Complex64; FFT_LEN] {
    const BITS: u32 = FFT_LEN.trailing_zeros();
    let mut a = [Complex64::new(0.0, 0.0); FFT_LEN];
    for (i, &v) in x.iter().enumerate() {
        let j = (i as u32).reverse_bits() >> (32 - BITS);
        a[j as usize].re = v;
    }
    let tw = twiddles();
    let mut len = 2;
    while len <= FFT_LEN {
        let stride = FFT_LEN / len;
        for start in (0..FFT_LEN).step_by(len) {
            for k in 0..len / 2 {
                let w = tw[k * stride];
                let u = a[start + k];
                let v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
    a
}

/// Magnitudes of the 64 non-negative-frequency bins of a 128-sample window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum64 {
    pub bins: [f64; FFT_LEN / 2],
}

impl Spectrum64 {
    /// Center frequency of bin `k` in Hz.
    pub fn bin_hz(k: usize) -> f64 {
        k as f64 * BIN_HZ
    }
}

/// Magnitude spectrum of one 3.2 s window: `|X[k]|` for bins 0..=63.
pub fn rfft128(window: &[f64; FFT_LEN]) -> Spectrum64 {
    let full = fft128(window);
    let mut bins = [0.0f64; FFT_LEN / 2];
    for (k, b) in bins.iter_mut().enumerate() {
        *b = full[k].norm();
    }
    Spectrum64 { bins }
}

/// Sum of squared bin magnitudes over `[f_lo, f_hi)`.
///
/// A bin at `k · 0.3125 Hz` contributes when that frequency is at or above
/// `f_lo` and strictly below `f_hi`. Both bounds must lie in `[0, 20]` with
/// `f_lo < f_hi`.
pub fn band_power(spectrum: &Spectrum64, f_lo: f64, f_hi: f64) -> f64 {
    assert!(
        0.0 <= f_lo && f_lo < f_hi && f_hi <= RESAMPLED_RATE_HZ / 2.0,
        "band [{f_lo}, {f_hi}) outside the representable range"
    );
    spectrum
        .bins
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = Spectrum64::bin_hz(*k);
            f >= f_lo && f < f_hi
        })
        .map(|(_, &m)| m * m)
        .sum()
}
