//! Synthetic multi-subject accelerometer cohorts with per-sample freeze
//! labels, plus the recording file format.
//!
//! The generator is not a gait simulator. It reproduces the spectral
//! signature that matters to the pipeline: walking concentrates energy in
//! the locomotion band (0.5–3 Hz, at a subject-specific step frequency),
//! freezing attenuates that band and fills 3–8 Hz with band-limited
//! tremor, and standing is just the noise floor. Boundary ramps, brief
//! unlabeled freeze-band flickers during walking, and per-episode tremor
//! variability keep the classes from separating on any single window.
//!
//! Everything is a pure function of [`CohortSpec`]: the same spec yields
//! the same cohort bit for bit, and each subject/state recording can be
//! regenerated alone.

mod io;
mod plan;

pub use io::{read_recording, write_recording};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{design_butterworth, filter_apply, FilterKind, CAPTURE_RATE_HZ};
use crate::error::{Error, Result};
use crate::seed::SeedStream;

use plan::{plan_recording, Plan, SegKind};

/// Acceleration that saturates the simulated sensor, in g.
pub const SENSOR_RANGE_G: f64 = 6.0;

/// Medication state of a recording session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MedState {
    #[serde(rename = "ON")]
    On,
    #[serde(rename = "OFF")]
    Off,
}

impl MedState {
    pub fn as_str(self) -> &'static str {
        match self {
            MedState::On => "ON",
            MedState::Off => "OFF",
        }
    }
}

impl std::fmt::Display for MedState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One subject/state session: triaxial acceleration with per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub med_state: MedState,
    pub fs_hz: f64,
    pub samples: Vec<[f64; 3]>,
    pub labels: Vec<bool>,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::validation("recording needs a subject id"));
        }
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::validation(format!(
                "sampling rate must be positive, got {}",
                self.fs_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::validation("recording contains no samples"));
        }
        if self.samples.len() != self.labels.len() {
            return Err(Error::validation(format!(
                "{} samples but {} labels",
                self.samples.len(),
                self.labels.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            for v in s {
                if !v.is_finite() || v.abs() > SENSOR_RANGE_G {
                    return Err(Error::validation(format!(
                        "sample {i} is outside the sensor range: {v} g"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }

    /// Fraction of samples labeled FOG.
    pub fn fog_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.labels.len() as f64
    }
}

/// Log-normal episode-duration parameters. The default puts the median at
/// 4 s with roughly 80% of episodes under 10 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDurationShape {
    pub median_seconds: f64,
    pub log_sigma: f64,
}

impl Default for EpisodeDurationShape {
    fn default() -> Self {
        EpisodeDurationShape {
            median_seconds: 4.0,
            log_sigma: 1.09,
        }
    }
}

/// Everything the generator needs; the cohort is a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_subjects: usize,
    /// Length of each ON and each OFF session, in minutes.
    pub minutes_per_state: f64,
    /// Target FOG fraction pooled over the whole cohort.
    pub target_fog_fraction: f64,
    /// How much more FOG the OFF state carries than ON.
    pub off_on_burden_ratio: f64,
    /// Relative spread of per-subject FOG burden around the target; the
    /// assigned multipliers average to exactly 1 across the cohort.
    pub burden_spread: f64,
    /// 0 keeps tremor strong and band-separated; 1 buries it in the noise
    /// floor and lets it overlap the locomotion band.
    pub difficulty: f64,
    pub episode_duration_shape: EpisodeDurationShape,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_subjects: 8,
            minutes_per_state: 20.0,
            target_fog_fraction: 0.105,
            off_on_burden_ratio: 2.5,
            burden_spread: 0.25,
            difficulty: 0.0,
            episode_duration_shape: EpisodeDurationShape::default(),
            seed: 7,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::validation(format!(
                "a cohort needs at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(self.minutes_per_state.is_finite() && self.minutes_per_state > 0.0) {
            return Err(Error::validation(format!(
                "minutes_per_state must be positive, got {}",
                self.minutes_per_state
            )));
        }
        if self.state_samples() < 1 {
            return Err(Error::validation(
                "minutes_per_state is too short to hold a single sample".to_string(),
            ));
        }
        if !(self.target_fog_fraction > 0.0 && self.target_fog_fraction < 1.0) {
            return Err(Error::validation(format!(
                "target_fog_fraction must lie in (0, 1), got {}",
                self.target_fog_fraction
            )));
        }
        if !(self.off_on_burden_ratio >= 1.0 && self.off_on_burden_ratio.is_finite()) {
            return Err(Error::validation(format!(
                "off_on_burden_ratio must be at least 1, got {}",
                self.off_on_burden_ratio
            )));
        }
        if !(0.0..=0.5).contains(&self.burden_spread) {
            return Err(Error::validation(format!(
                "burden_spread must lie in [0, 0.5], got {}",
                self.burden_spread
            )));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::validation(format!(
                "difficulty must lie in [0, 1], got {}",
                self.difficulty
            )));
        }
        let shape = &self.episode_duration_shape;
        if !(shape.median_seconds.is_finite() && shape.median_seconds > 0.0) {
            return Err(Error::validation(format!(
                "episode duration median must be positive, got {}",
                shape.median_seconds
            )));
        }
        if !(shape.log_sigma > 0.0 && shape.log_sigma <= 3.0) {
            return Err(Error::validation(format!(
                "episode duration log-sigma must lie in (0, 3], got {}",
                shape.log_sigma
            )));
        }
        let heaviest = self.off_fraction() * (1.0 + self.burden_spread);
        if heaviest > 0.9 {
            return Err(Error::validation(format!(
                "target fraction, burden ratio, and spread put the heaviest \
                 OFF session at {heaviest:.3} FOG; at most 0.9 is placeable"
            )));
        }
        Ok(())
    }

    fn state_samples(&self) -> usize {
        (self.minutes_per_state * 60.0 * CAPTURE_RATE_HZ).round() as usize
    }

    /// FOG fraction of an average subject's ON session.
    fn on_fraction(&self) -> f64 {
        2.0 * self.target_fog_fraction / (1.0 + self.off_on_burden_ratio)
    }

    /// FOG fraction of an average subject's OFF session.
    fn off_fraction(&self) -> f64 {
        self.on_fraction() * self.off_on_burden_ratio
    }

    /// Per-subject burden multiplier. Subjects are assigned evenly spaced
    /// multipliers in `1 ± burden_spread` through a seeded permutation, so
    /// the cohort mean is exactly 1 and any subject's value can be
    /// recomputed without generating the others.
    fn burden_multiplier(&self, subject_index: usize) -> f64 {
        use rand::seq::SliceRandom;
        let n = self.n_subjects;
        let mut slots: Vec<usize> = (0..n).collect();
        let stream = SeedStream::new(self.seed).child("cohort").child("burden");
        slots.shuffle(&mut stream.rng());
        let centered = 2.0 * (slots[subject_index] as f64 + 0.5) / n as f64 - 1.0;
        1.0 + self.burden_spread * centered
    }
}

/// Stable traits of one simulated subject, shared by both sessions.
struct SubjectTraits {
    step_hz: f64,
    gait_amp: f64,
    h2: f64,
    h3: f64,
    sway_amp: f64,
    tremor_rms: f64,
    tremor_gain: [f64; 3],
    phase: [f64; 5],
    dc: [f64; 3],
    drift_amp: [f64; 3],
    drift_hz: [f64; 3],
    drift_phase: [f64; 3],
    noise_sigma: f64,
}

impl SubjectTraits {
    fn draw(rng: &mut impl Rng) -> Self {
        use std::f64::consts::TAU;
        fn triple(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
            [
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
                rng.gen_range(lo..hi),
            ]
        }
        let step_hz = rng.gen_range(1.6..2.4);
        let gait_amp = rng.gen_range(0.38..0.55);
        let h2 = rng.gen_range(0.28..0.42);
        let h3 = rng.gen_range(0.10..0.20);
        let sway_amp = rng.gen_range(0.05..0.12);
        let tremor_rms = rng.gen_range(0.26..0.38);
        let tremor_gain = [rng.gen_range(0.70..0.95), rng.gen_range(0.80..1.0), 1.0];
        let phase = [
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
            rng.gen_range(0.0..TAU),
        ];
        let dc = [rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12), 1.0];
        let drift_amp = triple(rng, 0.02, 0.06);
        let drift_hz = triple(rng, 0.05, 0.15);
        let drift_phase = triple(rng, 0.0, TAU);
        let noise_sigma = rng.gen_range(0.025..0.035);
        SubjectTraits {
            step_hz,
            gait_amp,
            h2,
            h3,
            sway_amp,
            tremor_rms,
            tremor_gain,
            phase,
            dc,
            drift_amp,
            drift_hz,
            drift_phase,
            noise_sigma,
        }
    }
}

/// Centered box average with shrinking edge windows, applied in place.
fn box_smooth(x: &mut [f64], half: usize) {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in x.iter() {
        acc += v;
        prefix.push(acc);
    }
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        x[i] = (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64;
    }
}

/// Builds the per-sample gait and tremor amplitude envelopes from the plan.
///
/// Freezes carry a 1 s lead-in and 0.8 s lead-out where gait decays and
/// tremor creeps in while the labels stay non-FOG; the aprons only paint
/// over walking. Two box-smoothing passes round every transition.
fn build_envelopes(n: usize, plan: &Plan, difficulty: f64) -> (Vec<f64>, Vec<f64>) {
    let fs = CAPTURE_RATE_HZ;
    let residual_gait = 0.12 + difficulty * (0.5 - 0.12);

    let mut kind = vec![0u8; n]; // 0 walk, 1 stand, 2 freeze
    let mut gait = vec![1.0f64; n];
    let mut tremor = vec![0.0f64; n];
    for seg in &plan.segments {
        match seg.kind {
            SegKind::Walk => {}
            SegKind::Stand => {
                kind[seg.start..seg.end()].fill(1);
                gait[seg.start..seg.end()].fill(0.0);
            }
            SegKind::Freeze { tremor_rms } => {
                kind[seg.start..seg.end()].fill(2);
                gait[seg.start..seg.end()].fill(residual_gait);
                tremor[seg.start..seg.end()].fill(tremor_rms);
            }
        }
    }
    for seg in &plan.segments {
        let SegKind::Freeze { tremor_rms } = seg.kind else {
            continue;
        };
        let lead_in = (1.0 * fs) as usize;
        let lead_out = (0.8 * fs) as usize;
        let pre = seg.start.saturating_sub(lead_in)..seg.start;
        for i in pre {
            if kind[i] == 0 {
                gait[i] = 0.55;
                tremor[i] = 0.45 * tremor_rms;
            }
        }
        let post = seg.end()..(seg.end() + lead_out).min(n);
        for i in post {
            if kind[i] == 0 {
                gait[i] = 0.55;
                tremor[i] = 0.35 * tremor_rms;
            }
        }
    }
    for f in &plan.flickers {
        let span = f.start..(f.start + f.len).min(n);
        for i in span {
            if kind[i] == 0 {
                tremor[i] = tremor[i].max(f.tremor_rms);
                gait[i] = gait[i].min(0.85);
            }
        }
    }

    let half = (0.15 * fs) as usize;
    box_smooth(&mut gait, half);
    box_smooth(&mut gait, half);
    box_smooth(&mut tremor, half);
    box_smooth(&mut tremor, half);
    (gait, tremor)
}

/// Unit-RMS band-limited tremor carrier (3–8 Hz at difficulty 0; the lower
/// edge slides toward the locomotion band as difficulty rises).
fn tremor_track(n: usize, difficulty: f64, stream: &SeedStream) -> Vec<f64> {
    let f_lo = 3.0 - 1.5 * difficulty;
    let highpass = design_butterworth(FilterKind::Highpass, 6, f_lo, CAPTURE_RATE_HZ)
        .expect("fixed band edges");
    let lowpass =
        design_butterworth(FilterKind::Lowpass, 6, 8.0, CAPTURE_RATE_HZ).expect("fixed band edges");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream.rng();
    let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut track = filter_apply(&lowpass, &filter_apply(&highpass, &white));
    let rms = (track.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let scale = 1.0 / rms;
        for v in &mut track {
            *v *= scale;
        }
    }
    track
}

fn synthesize(
    n: usize,
    traits: &SubjectTraits,
    state: MedState,
    plan: &Plan,
    difficulty: f64,
    stream: &SeedStream,
) -> Vec<[f64; 3]> {
    use std::f64::consts::TAU;
    let fs = CAPTURE_RATE_HZ;
    let (gait_env, tremor_env) = build_envelopes(n, plan, difficulty);
    let track = tremor_track(n, difficulty, &stream.child("tremor"));

    // OFF gait is slower and weaker than the same subject's ON gait.
    let (f0, amp) = match state {
        MedState::On => (traits.step_hz, traits.gait_amp),
        MedState::Off => (0.85 * traits.step_hz, 0.8 * traits.gait_amp),
    };
    let w1 = TAU * f0 / fs;
    let ws = TAU * 0.5 * f0 / fs;
    let wd = [
        TAU * traits.drift_hz[0] / fs,
        TAU * traits.drift_hz[1] / fs,
        TAU * traits.drift_hz[2] / fs,
    ];
    let [p2, p3, py, px, psway] = traits.phase;

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut nrng = stream.child("noise").rng();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64;
        let p1 = w1 * t;
        let g = gait_env[i];
        let tr = tremor_env[i] * track[i];
        let gait_z = amp * g * (p1.sin() + traits.h2 * (2.0 * p1 + p2).sin() + traits.h3 * (3.0 * p1 + p3).sin());
        let gait_y = 0.7 * amp * g * ((p1 + py).sin() + 0.5 * traits.h2 * (2.0 * p1 + p2 + 0.7).sin());
        let gait_x = 0.5 * amp * g * (p1 + px).sin() + traits.sway_amp * g * (ws * t + psway).sin();
        let mut s = [gait_x, gait_y, gait_z];
        for (axis, v) in s.iter_mut().enumerate() {
            *v += traits.dc[axis]
                + traits.drift_amp[axis] * (wd[axis] * t + traits.drift_phase[axis]).sin()
                + traits.tremor_gain[axis] * tr
                + traits.noise_sigma * normal.sample(&mut nrng);
            *v = v.clamp(-SENSOR_RANGE_G, SENSOR_RANGE_G);
        }
        out.push(s);
    }
    out
}

fn subject_id(index: usize) -> String {
    format!("s{:02}", index + 1)
}

/// Generates one subject/state session at 200 Hz.
///
/// Deterministic per `(spec.seed, subject_index, state)`: the result is
/// identical whether generated alone or as part of [`generate_cohort`].
pub fn generate_subject(
    spec: &CohortSpec,
    subject_index: usize,
    state: MedState,
) -> Result<Recording> {
    spec.validate()?;
    if subject_index >= spec.n_subjects {
        return Err(Error::validation(format!(
            "subject index {subject_index} outside the cohort of {}",
            spec.n_subjects
        )));
    }
    let n = spec.state_samples();
    let sub = SeedStream::new(spec.seed)
        .child("cohort")
        .child_idx("subject", subject_index as u64);
    let traits = SubjectTraits::draw(&mut sub.child("traits").rng());
    let st = sub.child(state.as_str());

    let base_fraction = match state {
        MedState::On => spec.on_fraction(),
        MedState::Off => spec.off_fraction(),
    };
    let fraction = (base_fraction * spec.burden_multiplier(subject_index)).min(0.9);
    let mut fog_target = (n as f64 * fraction).round() as usize;
    if state == MedState::Off {
        // Every subject freezes at least once in OFF, whatever the budget.
        fog_target = fog_target.max(plan::MIN_EPISODE.min(n / 4));
    }

    let p = plan_recording(
        n,
        fog_target,
        &spec.episode_duration_shape,
        traits.tremor_rms,
        spec.difficulty,
        &st.child("plan"),
    );
    let samples = synthesize(n, &traits, state, &p, spec.difficulty, &st.child("synth"));
    let labels = p.labels(n);

    let rec = Recording {
        subject_id: subject_id(subject_index),
        med_state: state,
        fs_hz: CAPTURE_RATE_HZ,
        samples,
        labels,
    };
    debug_assert!(rec.validate().is_ok());
    Ok(rec)
}

/// Generates the full cohort: an ON and an OFF session per subject, in
/// subject order.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<Recording>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2 * spec.n_subjects);
    for i in 0..spec.n_subjects {
        out.push(generate_subject(spec, i, MedState::On)?);
        out.push(generate_subject(spec, i, MedState::Off)?);
    }
    Ok(out)
}

/// Pooled FOG fraction over a set of recordings.
pub fn cohort_fog_fraction(recordings: &[Recording]) -> f64 {
    let fog: usize = recordings
        .iter()
        .map(|r| r.labels.iter().filter(|&&l| l).count())
        .sum();
    let total: usize = recordings.iter().map(|r| r.labels.len()).sum();
    fog as f64 / total as f64
}
