//! Independent reference implementations used to cross-check the fast paths.
//!
//! Everything here is written for obviousness, not speed: quadratic DFTs,
//! exhaustive threshold scans, full permutation enumerations. The
//! verification command and the test suite compare pipeline results against
//! these; nothing in the pipeline itself calls them.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Textbook O(n²) discrete Fourier transform of a 128-sample window.
pub fn naive_dft128(x: &[f64; 128]) -> [Complex64; 128] {
    let n = 128;
    let mut out = [Complex64::new(0.0, 0.0); 128];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let phase = -2.0 * PI * (k * i) as f64 / n as f64;
            acc += Complex64::from_polar(v, phase);
        }
        *slot = acc;
    }
    out
}
