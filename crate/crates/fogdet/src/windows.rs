//! Window segmentation and the feature representations computed per
//! window: the 21-value summary vector, normalized raw windows, stacked
//! spectral pairs, and spectral sequences with previous-window history.
//!
//! A [`WindowSet`] keeps spectra for every hop-grid position internally,
//! including positions whose mixed labels exclude them as samples. That is
//! what lets a retained window's spectral sequence reach back to its
//! temporal predecessors regardless of their label status.

use serde::{Deserialize, Serialize};

use crate::dsp::{band_power, rfft128, Spectrum64, FFT_LEN, RESAMPLED_RATE_HZ};
use crate::error::{Error, Result};
use crate::synthcohort::{MedState, Recording};

/// Samples per analysis window (3.2 s at 40 Hz).
pub const WINDOW_LEN: usize = FFT_LEN;
/// Values in one summary feature vector: 7 features × 3 axes.
pub const MAZILU_LEN: usize = 21;
/// Values in one spectral time step: 64 bins × 3 channels.
pub const STEP_LEN: usize = 192;

/// Window overlap: 50% (hop 64) or 75% (hop 32).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Overlap {
    Half,
    ThreeQuarters,
}

impl Overlap {
    pub fn hop(self) -> usize {
        match self {
            Overlap::Half => WINDOW_LEN / 2,
            Overlap::ThreeQuarters => WINDOW_LEN / 4,
        }
    }

    pub fn percent(self) -> u8 {
        match self {
            Overlap::Half => 50,
            Overlap::ThreeQuarters => 75,
        }
    }
}

impl TryFrom<u8> for Overlap {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            50 => Ok(Overlap::Half),
            75 => Ok(Overlap::ThreeQuarters),
            other => Err(format!("overlap must be 50 or 75, got {other}")),
        }
    }
}

impl From<Overlap> for u8 {
    fn from(o: Overlap) -> u8 {
        o.percent()
    }
}

/// One retained (unambiguously labeled) window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retained {
    /// First sample index in the 40 Hz recording.
    pub start: usize,
    /// Position on the hop grid (`start == grid_index * hop`).
    pub grid_index: usize,
    pub fog: bool,
}

/// All windows of one resampled recording, labeled and spectra attached.
#[derive(Debug, Clone)]
pub struct WindowSet {
    subject_id: String,
    med_state: MedState,
    hop: usize,
    samples: Vec<[f64; 3]>,
    grid_spectra: Vec<[Spectrum64; 3]>,
    retained: Vec<Retained>,
    discarded: usize,
    too_short: bool,
}

/// Splits a 40 Hz recording into 128-sample windows at the overlap's hop.
///
/// A window is FOG when a strict majority of its samples are labeled FOG,
/// NONFOG only when none are, and discarded otherwise (counted, not kept).
/// A recording shorter than one window yields an empty set with
/// [`WindowSet::too_short`] raised rather than an error.
pub fn segment(rec: &Recording, overlap: Overlap) -> Result<WindowSet> {
    rec.validate()?;
    if rec.fs_hz != RESAMPLED_RATE_HZ {
        return Err(Error::validation(format!(
            "segmentation expects a {RESAMPLED_RATE_HZ} Hz recording, got {} Hz",
            rec.fs_hz
        )));
    }
    let hop = overlap.hop();
    let n = rec.samples.len();
    let mut set = WindowSet {
        subject_id: rec.subject_id.clone(),
        med_state: rec.med_state,
        hop,
        samples: rec.samples.clone(),
        grid_spectra: Vec::new(),
        retained: Vec::new(),
        discarded: 0,
        too_short: n < WINDOW_LEN,
    };
    if set.too_short {
        return Ok(set);
    }
    let mut grid_index = 0usize;
    let mut start = 0usize;
    while start + WINDOW_LEN <= n {
        let mut spectra = [Spectrum64 { bins: [0.0; 64] }, Spectrum64 { bins: [0.0; 64] }, Spectrum64 { bins: [0.0; 64] }];
        let mut axis_buf = [0.0f64; WINDOW_LEN];
        for (axis, out) in spectra.iter_mut().enumerate() {
            for (k, slot) in axis_buf.iter_mut().enumerate() {
                *slot = rec.samples[start + k][axis];
            }
            *out = rfft128(&axis_buf);
        }
        set.grid_spectra.push(spectra);

        let fog_count = rec.labels[start..start + WINDOW_LEN]
            .iter()
            .filter(|&&l| l)
            .count();
        if fog_count > WINDOW_LEN / 2 {
            set.retained.push(Retained {
                start,
                grid_index,
                fog: true,
            });
        } else if fog_count == 0 {
            set.retained.push(Retained {
                start,
                grid_index,
                fog: false,
            });
        } else {
            set.discarded += 1;
        }
        grid_index += 1;
        start += hop;
    }
    Ok(set)
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn med_state(&self) -> MedState {
        self.med_state
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Hop expressed in seconds: the episode time base downstream.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / RESAMPLED_RATE_HZ
    }

    pub fn retained(&self) -> &[Retained] {
        &self.retained
    }

    /// Mixed-label windows dropped during segmentation.
    pub fn discarded_count(&self) -> usize {
        self.discarded
    }

    /// True when the recording could not hold even one window.
    pub fn too_short(&self) -> bool {
        self.too_short
    }

    /// The 128 samples of retained window `i`.
    pub fn window(&self, i: usize) -> &[[f64; 3]] {
        let start = self.retained[i].start;
        &self.samples[start..start + WINDOW_LEN]
    }

    /// Per-axis spectra of retained window `i`.
    pub fn spectra(&self, i: usize) -> &[Spectrum64; 3] {
        &self.grid_spectra[self.retained[i].grid_index]
    }

    /// Spectral sequence ending at retained window `i`: the window's own
    /// spectra preceded by its `n_prev` hop-grid predecessors, oldest
    /// first. `None` when the window sits too early in the recording to
    /// have full history.
    pub fn spectral_sequence(&self, i: usize, n_prev: usize) -> Option<SpectralSequence> {
        assert!((1..=3).contains(&n_prev), "n_prev must be 1, 2, or 3");
        let g = self.retained[i].grid_index;
        if g < n_prev {
            return None;
        }
        let t = n_prev + 1;
        let mut values = Vec::with_capacity(t * STEP_LEN);
        for step in 0..t {
            let spectra = &self.grid_spectra[g - n_prev + step];
            for bin in 0..64 {
                for axis_spec in spectra.iter() {
                    values.push(axis_spec.bins[bin]);
                }
            }
        }
        Some(SpectralSequence { t, values })
    }

    /// Every retained window's spectral sequence plus labels and window
    /// provenance; windows without full history are excluded and counted.
    pub fn sequence_dataset(&self, n_prev: usize) -> SequenceDataset {
        let t = n_prev + 1;
        let width = t * STEP_LEN;
        let mut out = SequenceDataset {
            t,
            width,
            values: Vec::new(),
            labels: Vec::new(),
            starts: Vec::new(),
            excluded_no_history: 0,
        };
        for (i, r) in self.retained.iter().enumerate() {
            match self.spectral_sequence(i, n_prev) {
                Some(seq) => {
                    out.values.extend_from_slice(&seq.values);
                    out.labels.push(u8::from(r.fog));
                    out.starts.push(r.start);
                }
                None => out.excluded_no_history += 1,
            }
        }
        out
    }

    /// Summary-feature rows for every retained window, with labels and
    /// window provenance.
    pub fn mazilu_dataset(&self) -> FeatureDataset {
        let mut out = FeatureDataset {
            values: Vec::with_capacity(self.len() * MAZILU_LEN),
            labels: Vec::with_capacity(self.len()),
            starts: Vec::with_capacity(self.len()),
        };
        for (i, r) in self.retained.iter().enumerate() {
            out.values.extend_from_slice(&mazilu_features(self.window(i)));
            out.labels.push(u8::from(r.fog));
            out.starts.push(r.start);
        }
        out
    }
}

/// Spectral-sequence rows (`rows × t×64×3`) ready for the network.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    pub t: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    /// Start sample of each row's current window, for trace provenance.
    pub starts: Vec<usize>,
    pub excluded_no_history: usize,
}

impl SequenceDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }
}

/// Summary-feature rows (`rows × 21`).
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    pub starts: Vec<usize>,
}

impl FeatureDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * MAZILU_LEN..(i + 1) * MAZILU_LEN]
    }
}

/// One network input: `t` time steps of 64×3 spectral magnitudes, current
/// window last, flattened time-major as `[step][bin][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    pub t: usize,
    pub values: Vec<f64>,
}

/// The 21-value window summary: per axis, in order — mean, standard
/// deviation, variance, spectral entropy, spectral energy, freeze index
/// (3–8 Hz power over 0.5–3 Hz power, denominator floored at 1e-12), and
/// 0.5–8 Hz band power.
pub fn mazilu_features(window: &[[f64; 3]]) -> [f64; MAZILU_LEN] {
    assert_eq!(window.len(), WINDOW_LEN, "feature window must be 128 samples");
    let mut out = [0.0f64; MAZILU_LEN];
    let mut axis_buf = [0.0f64; WINDOW_LEN];
    for axis in 0..3 {
        for (k, slot) in axis_buf.iter_mut().enumerate() {
            *slot = window[k][axis];
        }
        let mean = axis_buf.iter().sum::<f64>() / WINDOW_LEN as f64;
        let variance =
            axis_buf.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / WINDOW_LEN as f64;
        let std = variance.sqrt();

        let spectrum = rfft128(&axis_buf);
        // DC carries the mean, already a feature; spectral statistics use
        // bins 1..=63.
        let powers: Vec<f64> = spectrum.bins[1..].iter().map(|m| m * m).collect();
        let energy: f64 = powers.iter().sum();
        let entropy = if energy > 0.0 {
            -powers
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| {
                    let q = p / energy;
                    q * q.ln()
                })
                .sum::<f64>()
        } else {
            0.0
        };
        let freeze_index =
            band_power(&spectrum, 3.0, 8.0) / band_power(&spectrum, 0.5, 3.0).max(1e-12);
        let locomotor_and_freeze = band_power(&spectrum, 0.5, 8.0);

        let base = axis * 7;
        out[base] = mean;
        out[base + 1] = std;
        out[base + 2] = variance;
        out[base + 3] = entropy;
        out[base + 4] = energy;
        out[base + 5] = freeze_index;
        out[base + 6] = locomotor_and_freeze;
    }
    out
}

/// Per-channel scaling of a raw window into [−1, 1]: each axis divided by
/// its own peak magnitude; an all-zero axis stays zero.
pub fn raw_normalized(window: &[[f64; 3]]) -> Vec<[f64; 3]> {
    assert_eq!(window.len(), WINDOW_LEN, "window must be 128 samples");
    let mut peak = [0.0f64; 3];
    for s in window {
        for (axis, p) in peak.iter_mut().enumerate() {
            *p = p.max(s[axis].abs());
        }
    }
    window
        .iter()
        .map(|s| {
            let mut row = [0.0f64; 3];
            for axis in 0..3 {
                row[axis] = if peak[axis] > 0.0 {
                    s[axis] / peak[axis]
                } else {
                    0.0
                };
            }
            row
        })
        .collect()
}

/// Two consecutive non-overlapping windows' spectra stacked channel-wise:
/// `[prev_x, prev_y, prev_z, curr_x, curr_y, curr_z]`, each 64 bins.
pub struct StackedPair {
    pub channels: [Spectrum64; 6],
}

/// Builds the stacked representation from two windows given by their start
/// indices; the windows must be adjacent with hop 128.
pub fn fft_stacked_pair(
    prev: (&[[f64; 3]], usize),
    curr: (&[[f64; 3]], usize),
) -> Result<StackedPair> {
    let (prev_win, prev_start) = prev;
    let (curr_win, curr_start) = curr;
    if curr_start != prev_start + WINDOW_LEN {
        return Err(Error::validation(format!(
            "stacked windows must be adjacent: previous starts at {prev_start}, \
             current at {curr_start}, expected {}",
            prev_start + WINDOW_LEN
        )));
    }
    assert_eq!(prev_win.len(), WINDOW_LEN);
    assert_eq!(curr_win.len(), WINDOW_LEN);
    let mut channels = [Spectrum64 { bins: [0.0; 64] }; 6];
    let mut axis_buf = [0.0f64; WINDOW_LEN];
    for (half, win) in [prev_win, curr_win].into_iter().enumerate() {
        for axis in 0..3 {
            for (k, slot) in axis_buf.iter_mut().enumerate() {
                *slot = win[k][axis];
            }
            channels[half * 3 + axis] = rfft128(&axis_buf);
        }
    }
    Ok(StackedPair { channels })
}

/// Per-(bin, channel) z-scoring statistics pooled over time steps, fit on
/// training data only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Fits on flat sequence rows (`rows × t·192`); needs at least two rows.
    /// Standard deviations are floored at 1e-8 so constant bins map to 0.
    pub fn fit(values: &[f64], width: usize) -> Result<Standardizer> {
        if width == 0 || width % STEP_LEN != 0 {
            return Err(Error::validation(format!(
                "sequence width {width} is not a multiple of {STEP_LEN}"
            )));
        }
        if values.len() % width != 0 {
            return Err(Error::validation(
                "value buffer does not divide into rows".to_string(),
            ));
        }
        let rows = values.len() / width;
        if rows < 2 {
            return Err(Error::validation(format!(
                "standardization needs at least 2 training sequences, got {rows}"
            )));
        }
        let steps_per_row = width / STEP_LEN;
        let count = (rows * steps_per_row) as f64;
        let mut mean = vec![0.0f64; STEP_LEN];
        for row in values.chunks_exact(width) {
            for step in row.chunks_exact(STEP_LEN) {
                for (m, v) in mean.iter_mut().zip(step) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0f64; STEP_LEN];
        for row in values.chunks_exact(width) {
            for step in row.chunks_exact(STEP_LEN) {
                for ((s, v), m) in var.iter_mut().zip(step).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|s| (s / count).sqrt().max(1e-8))
            .collect();
        Ok(Standardizer { mean, std })
    }

    /// Z-scores one or more concatenated sequence rows in place.
    pub fn apply_in_place(&self, values: &mut [f64]) {
        assert_eq!(values.len() % STEP_LEN, 0);
        for step in values.chunks_exact_mut(STEP_LEN) {
            for ((v, m), s) in step.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::resample_to_40hz;
    use crate::synthcohort::{generate_subject, CohortSpec};

    /// A 40 Hz recording with hand-chosen labels.
    fn synthetic_recording(n: usize, fog_spans: &[(usize, usize)]) -> Recording {
        let mut labels = vec![false; n];
        for &(start, len) in fog_spans {
            labels[start..start + len].fill(true);
        }
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 40.0;
                let v = (2.0 * std::f64::consts::PI * 2.0 * t).sin();
                [0.3 * v, 0.5 * v, v]
            })
            .collect();
        Recording {
            subject_id: "t01".to_string(),
            med_state: MedState::On,
            fs_hz: 40.0,
            samples,
            labels,
        }
    }

    fn resampled(rec: &Recording) -> Recording {
        let (samples, labels) = resample_to_40hz(&rec.samples, &rec.labels, rec.fs_hz).unwrap();
        Recording {
            fs_hz: 40.0,
            samples,
            labels,
            ..rec.clone()
        }
    }

    #[test]
    fn majority_rule_labels_windows() {
        // One window exactly: vary the FOG count across the boundary.
        for (fog_count, expect) in [(65, Some(true)), (64, None), (0, Some(false)), (128, Some(true))] {
            let rec = synthetic_recording(WINDOW_LEN, &[(0, fog_count)]);
            let set = segment(&rec, Overlap::Half).unwrap();
            match expect {
                Some(fog) => {
                    assert_eq!(set.len(), 1, "fog_count {fog_count}");
                    assert_eq!(set.retained()[0].fog, fog);
                    assert_eq!(set.discarded_count(), 0);
                }
                None => {
                    assert_eq!(set.len(), 0, "fog_count {fog_count}");
                    assert_eq!(set.discarded_count(), 1);
                }
            }
        }
    }

    #[test]
    fn hop_matches_overlap() {
        let rec = synthetic_recording(512, &[]);
        let half = segment(&rec, Overlap::Half).unwrap();
        let three_q = segment(&rec, Overlap::ThreeQuarters).unwrap();
        assert_eq!(half.hop(), 64);
        assert_eq!(three_q.hop(), 32);
        assert_eq!(half.hop_seconds(), 1.6);
        assert_eq!(three_q.hop_seconds(), 0.8);
        assert_eq!(half.len(), (512 - 128) / 64 + 1);
        assert_eq!(three_q.len(), (512 - 128) / 32 + 1);
    }

    #[test]
    fn starts_are_grid_aligned_and_increasing() {
        let rec = synthetic_recording(1000, &[(300, 200)]);
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        let mut prev: Option<usize> = None;
        for r in set.retained() {
            assert_eq!(r.start % set.hop(), 0);
            assert_eq!(r.start, r.grid_index * set.hop());
            if let Some(p) = prev {
                assert!(r.start > p);
            }
            prev = Some(r.start);
        }
    }

    #[test]
    fn windows_slice_the_recording_exactly() {
        let rec = synthetic_recording(640, &[]);
        let set = segment(&rec, Overlap::Half).unwrap();
        for i in 0..set.len() {
            let start = set.retained()[i].start;
            assert_eq!(set.window(i), &rec.samples[start..start + WINDOW_LEN]);
        }
    }

    #[test]
    fn label_soundness_on_generated_data() {
        let spec = CohortSpec {
            n_subjects: 2,
            minutes_per_state: 1.0,
            seed: 31,
            ..CohortSpec::default()
        };
        let rec = resampled(&generate_subject(&spec, 0, MedState::Off).unwrap());
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        assert!(set.len() > 50);
        for r in set.retained() {
            let fog = rec.labels[r.start..r.start + WINDOW_LEN]
                .iter()
                .filter(|&&l| l)
                .count();
            if r.fog {
                assert!(fog > WINDOW_LEN / 2);
            } else {
                assert_eq!(fog, 0);
            }
        }
    }

    #[test]
    fn short_recording_yields_empty_set_with_warning() {
        let rec = synthetic_recording(100, &[]);
        let set = segment(&rec, Overlap::Half).unwrap();
        assert!(set.too_short());
        assert!(set.is_empty());
        assert_eq!(set.discarded_count(), 0);
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let mut rec = synthetic_recording(256, &[]);
        rec.fs_hz = 200.0;
        assert!(segment(&rec, Overlap::Half).is_err());
    }

    fn tone_window(freq: f64) -> Vec<[f64; 3]> {
        (0..WINDOW_LEN)
            .map(|i| {
                let v = (2.0 * std::f64::consts::PI * freq * i as f64 / 40.0).sin();
                [v, v, v]
            })
            .collect()
    }

    #[test]
    fn freeze_index_separates_tone_bands() {
        let freeze = mazilu_features(&tone_window(5.0));
        let locomotion = mazilu_features(&tone_window(1.5));
        for axis in 0..3 {
            assert!(freeze[axis * 7 + 5] > 100.0, "5 Hz FI {}", freeze[axis * 7 + 5]);
            assert!(
                locomotion[axis * 7 + 5] < 0.01,
                "1.5 Hz FI {}",
                locomotion[axis * 7 + 5]
            );
        }
    }

    #[test]
    fn zero_window_degenerates_cleanly() {
        let window = vec![[0.0; 3]; WINDOW_LEN];
        let f = mazilu_features(&window);
        for axis in 0..3 {
            let base = axis * 7;
            assert_eq!(f[base], 0.0, "mean");
            assert_eq!(f[base + 2], 0.0, "variance");
            assert_eq!(f[base + 3], 0.0, "entropy");
            assert_eq!(f[base + 5], 0.0, "freeze index");
        }
    }

    #[test]
    fn mazilu_time_features_match_hand_computation() {
        let mut window = vec![[0.0; 3]; WINDOW_LEN];
        for (i, s) in window.iter_mut().enumerate() {
            s[0] = if i % 2 == 0 { 1.0 } else { 3.0 };
        }
        let f = mazilu_features(&window);
        assert!((f[0] - 2.0).abs() < 1e-12, "mean");
        assert!((f[1] - 1.0).abs() < 1e-12, "std");
        assert!((f[2] - 1.0).abs() < 1e-12, "variance");
    }

    #[test]
    fn entropy_is_low_for_tones_and_high_for_noise() {
        use rand::Rng;
        use rand::SeedableRng;
        let tone = mazilu_features(&tone_window(5.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<[f64; 3]> = (0..WINDOW_LEN)
            .map(|_| [rng.gen_range(-1.0..1.0), 0.0, 0.0])
            .collect();
        let noisy = mazilu_features(&noise);
        assert!(tone[3] < 0.1, "bin-aligned tone entropy {}", tone[3]);
        assert!(noisy[3] > 3.0, "noise entropy {}", noisy[3]);
    }

    #[test]
    fn raw_normalization_follows_the_peak_rule() {
        let mut window = vec![[0.0; 3]; WINDOW_LEN];
        window[0] = [2.0, 0.5, 0.0];
        window[1] = [-4.0, -1.0, 0.0];
        window[2] = [1.0, 0.25, 0.0];
        let normed = raw_normalized(&window);
        assert_eq!(normed[0][0], 0.5);
        assert_eq!(normed[1][0], -1.0);
        assert_eq!(normed[2][0], 0.25);
        // Channel already peaking at 1 is unchanged.
        assert_eq!(normed[1][1], -1.0);
        assert_eq!(normed[0][1], 0.5);
        // All-zero channel stays zero.
        assert!(normed.iter().all(|row| row[2] == 0.0));
        assert!(normed
            .iter()
            .all(|row| row.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn stacked_pair_is_two_spectra_side_by_side() {
        let rec = synthetic_recording(256, &[]);
        let prev = &rec.samples[0..128];
        let curr = &rec.samples[128..256];
        let pair = fft_stacked_pair((prev, 0), (curr, 128)).unwrap();

        let mut axis_buf = [0.0f64; WINDOW_LEN];
        for (k, slot) in axis_buf.iter_mut().enumerate() {
            *slot = prev[k][1];
        }
        let expect_prev_y = rfft128(&axis_buf);
        for (k, slot) in axis_buf.iter_mut().enumerate() {
            *slot = curr[k][1];
        }
        let expect_curr_y = rfft128(&axis_buf);
        assert_eq!(pair.channels[1].bins, expect_prev_y.bins);
        assert_eq!(pair.channels[4].bins, expect_curr_y.bins);
    }

    #[test]
    fn stacked_pair_identical_windows_match_halves() {
        let rec = synthetic_recording(256, &[]);
        let win = &rec.samples[0..128];
        let pair = fft_stacked_pair((win, 0), (win, 128)).unwrap();
        for axis in 0..3 {
            assert_eq!(pair.channels[axis].bins, pair.channels[axis + 3].bins);
        }
    }

    #[test]
    fn stacked_pair_rejects_non_adjacent_windows() {
        let rec = synthetic_recording(512, &[]);
        let a = &rec.samples[0..128];
        let b = &rec.samples[256..384];
        assert!(fft_stacked_pair((a, 0), (b, 256)).is_err());
    }

    #[test]
    fn sequences_have_full_history_or_are_excluded() {
        let rec = synthetic_recording(1000, &[]);
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        assert!(set.spectral_sequence(0, 1).is_none());
        assert!(set.spectral_sequence(0, 3).is_none());
        assert!(set.spectral_sequence(3, 3).is_some());
        let ds = set.sequence_dataset(3);
        assert_eq!(ds.excluded_no_history, 3);
        assert_eq!(ds.n_rows(), set.len() - 3);
        assert_eq!(ds.width, 4 * STEP_LEN);
        assert_eq!(ds.t, 4);
    }

    #[test]
    fn sequence_steps_are_the_grid_spectra_oldest_first() {
        let rec = synthetic_recording(1000, &[]);
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        let i = 5;
        let seq = set.spectral_sequence(i, 2).unwrap();
        assert_eq!(seq.t, 3);
        let g = set.retained()[i].grid_index;
        for step in 0..3 {
            let spectra = &set.grid_spectra[g - 2 + step];
            for bin in 0..64 {
                for axis in 0..3 {
                    assert_eq!(
                        seq.values[step * STEP_LEN + bin * 3 + axis],
                        spectra[axis].bins[bin]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_recording_gives_identical_time_steps() {
        let mut rec = synthetic_recording(512, &[]);
        for s in &mut rec.samples {
            *s = [0.5, -0.25, 1.0];
        }
        let set = segment(&rec, Overlap::Half).unwrap();
        let seq = set.spectral_sequence(3, 3).unwrap();
        let first = &seq.values[..STEP_LEN];
        for step in 1..seq.t {
            assert_eq!(&seq.values[step * STEP_LEN..(step + 1) * STEP_LEN], first);
        }
    }

    #[test]
    fn history_crosses_discarded_grid_positions() {
        // FOG span sized to make some windows mixed (discarded) while
        // later windows still need their spectra as history.
        let rec = synthetic_recording(1000, &[(200, 300)]);
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        assert!(set.discarded_count() > 0);
        let ds = set.sequence_dataset(3);
        // Every retained window with grid index >= 3 must be present, even
        // right after a run of discarded positions.
        let expected = set
            .retained()
            .iter()
            .filter(|r| r.grid_index >= 3)
            .count();
        assert_eq!(ds.n_rows(), expected);
    }

    #[test]
    fn standardizer_zero_means_and_unit_stds_on_training_data() {
        let spec = CohortSpec {
            n_subjects: 2,
            minutes_per_state: 1.0,
            seed: 17,
            ..CohortSpec::default()
        };
        let rec = resampled(&generate_subject(&spec, 1, MedState::Off).unwrap());
        let set = segment(&rec, Overlap::ThreeQuarters).unwrap();
        let ds = set.sequence_dataset(3);
        let st = Standardizer::fit(&ds.values, ds.width).unwrap();
        let mut values = ds.values.clone();
        st.apply_in_place(&mut values);

        let steps = values.len() / STEP_LEN;
        for j in 0..STEP_LEN {
            let mut mean = 0.0;
            for s in 0..steps {
                mean += values[s * STEP_LEN + j];
            }
            mean /= steps as f64;
            let mut var = 0.0;
            for s in 0..steps {
                let d = values[s * STEP_LEN + j] - mean;
                var += d * d;
            }
            var /= steps as f64;
            assert!(mean.abs() < 1e-9, "bin {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "bin {j} std {}", var.sqrt());
        }
    }

    #[test]
    fn constant_bins_standardize_to_zero() {
        let width = STEP_LEN;
        let mut values = vec![0.0; 4 * width];
        for row in 0..4 {
            values[row * width] = 2.5; // constant bin 0
            values[row * width + 1] = row as f64; // varying bin 1
        }
        let st = Standardizer::fit(&values, width).unwrap();
        let mut applied = values.clone();
        st.apply_in_place(&mut applied);
        for row in 0..4 {
            assert_eq!(applied[row * width], 0.0);
        }
    }

    #[test]
    fn standardizer_never_produces_non_finite_output() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rows = rng.gen_range(2..6);
            let width = 2 * STEP_LEN;
            let train: Vec<f64> = (0..rows * width).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let st = Standardizer::fit(&train, width).unwrap();
            let mut held: Vec<f64> = (0..width).map(|_| rng.gen_range(-100.0..100.0)).collect();
            st.apply_in_place(&mut held);
            assert!(held.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn standardizer_rejects_degenerate_fits() {
        assert!(Standardizer::fit(&[0.0; STEP_LEN], STEP_LEN).is_err());
        assert!(Standardizer::fit(&[0.0; 10], 10).is_err());
    }

    #[test]
    fn overlap_serializes_as_percent() {
        let text = serde_json::to_string(&Overlap::ThreeQuarters).unwrap();
        assert_eq!(text, "75");
        let back: Overlap = serde_json::from_str("50").unwrap();
        assert_eq!(back, Overlap::Half);
        assert!(serde_json::from_str::<Overlap>("60").is_err());
    }
}
