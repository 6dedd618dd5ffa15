//! Timeline planning for one synthetic recording: how many samples of
//! freezing to place, where, and what fills the time in between.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::dsp::CAPTURE_RATE_HZ;
use crate::seed::SeedStream;

use super::EpisodeDurationShape;

/// Shortest plannable freeze episode, in samples (1 s at capture rate).
pub(super) const MIN_EPISODE: usize = CAPTURE_RATE_HZ as usize;
/// Longest single episode; log-normal tails are clipped here (40 s).
const MAX_EPISODE: usize = 40 * CAPTURE_RATE_HZ as usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(super) enum SegKind {
    Walk,
    Stand,
    Freeze {
        /// Target tremor RMS for this episode, in g.
        tremor_rms: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub(super) struct Segment {
    pub start: usize,
    pub len: usize,
    pub kind: SegKind,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

/// A brief unlabeled freeze-band burst inside a walking stretch: the kind
/// of transient a stumble or abrupt turn produces. These keep single-window
/// spectra from being a giveaway.
#[derive(Debug, Clone, Copy)]
pub(super) struct Flicker {
    pub start: usize,
    pub len: usize,
    pub tremor_rms: f64,
}

#[derive(Debug, Clone)]
pub(super) struct Plan {
    pub segments: Vec<Segment>,
    pub flickers: Vec<Flicker>,
}

impl Plan {
    /// Per-sample FOG labels: exactly the freeze segments.
    pub fn labels(&self, n: usize) -> Vec<bool> {
        let mut labels = vec![false; n];
        for seg in &self.segments {
            if matches!(seg.kind, SegKind::Freeze { .. }) {
                labels[seg.start..seg.end()].fill(true);
            }
        }
        labels
    }

    #[cfg(test)]
    pub fn fog_samples(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s.kind, SegKind::Freeze { .. }))
            .map(|s| s.len)
            .sum()
    }
}

/// Draws episode lengths until they cover `fog_target` samples exactly.
fn draw_episodes(
    fog_target: usize,
    shape: &EpisodeDurationShape,
    stream: &SeedStream,
) -> Vec<usize> {
    if fog_target == 0 {
        return Vec::new();
    }
    let min_ep = MIN_EPISODE.min(fog_target);
    let max_ep = MAX_EPISODE.min(fog_target);
    let dist = LogNormal::new(
        (shape.median_seconds * CAPTURE_RATE_HZ).ln(),
        shape.log_sigma,
    )
    .expect("validated shape");
    let mut rng = stream.rng();
    let mut episodes: Vec<usize> = Vec::new();
    let mut total = 0usize;
    while total < fog_target {
        let d = (dist.sample(&mut rng).round() as usize).clamp(min_ep, max_ep);
        episodes.push(d);
        total += d;
    }
    // Trim the overshoot off the last episode; if that leaves a sliver,
    // fold it into its predecessor instead.
    let over = total - fog_target;
    let last = episodes.last_mut().expect("at least one episode");
    *last -= over;
    if *last < min_ep && episodes.len() > 1 {
        let sliver = episodes.pop().expect("nonempty");
        *episodes.last_mut().expect("nonempty") += sliver;
    }
    debug_assert_eq!(episodes.iter().sum::<usize>(), fog_target);
    episodes
}

/// Splits `total_gap` samples of non-freeze time into `k + 1` stretches
/// with log-normal relative lengths; first and last are biased shorter so
/// recordings do not start or end with their longest walk.
fn draw_gaps(total_gap: usize, k: usize, stream: &SeedStream) -> Vec<usize> {
    let mut rng = stream.rng();
    let jitter = LogNormal::new(0.0, 0.6).expect("fixed sigma");
    let weights: Vec<f64> = (0..=k)
        .map(|i| {
            let edge = if i == 0 || i == k { 0.6 } else { 1.0 };
            edge * jitter.sample(&mut rng)
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut gaps = Vec::with_capacity(k + 1);
    let mut acc = 0.0;
    let mut assigned = 0usize;
    for w in &weights {
        acc += w;
        let upto = (acc / weight_sum * total_gap as f64).round() as usize;
        gaps.push(upto.saturating_sub(assigned));
        assigned = upto.max(assigned);
    }
    debug_assert_eq!(gaps.iter().sum::<usize>(), total_gap);
    gaps
}

/// Replaces long walking stretches with walk/stand/walk about a third of
/// the time, so quiet segments exist in every recording of realistic length.
fn insert_stands(segments: Vec<Segment>, stream: &SeedStream) -> Vec<Segment> {
    let fs = CAPTURE_RATE_HZ;
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(segments.len());
    for seg in segments {
        let long_walk = seg.kind == SegKind::Walk && seg.len as f64 >= 30.0 * fs;
        if !long_walk || rng.gen_range(0.0..1.0) >= 0.35 {
            out.push(seg);
            continue;
        }
        let stand_len = (rng.gen_range(3.0..8.0) * fs) as usize;
        let latest = seg.len - stand_len;
        let offset = ((seg.len as f64 * rng.gen_range(0.25..0.75)) as usize).min(latest);
        out.push(Segment {
            start: seg.start,
            len: offset,
            kind: SegKind::Walk,
        });
        out.push(Segment {
            start: seg.start + offset,
            len: stand_len,
            kind: SegKind::Stand,
        });
        out.push(Segment {
            start: seg.start + offset + stand_len,
            len: seg.len - offset - stand_len,
            kind: SegKind::Walk,
        });
    }
    out.retain(|s| s.len > 0);
    out
}

/// Scatters flickers through the walking stretches with exponential
/// spacing (one per ~35 s of walking on average).
fn place_flickers(segments: &[Segment], base_tremor_rms: f64, stream: &SeedStream) -> Vec<Flicker> {
    let fs = CAPTURE_RATE_HZ;
    let margin = 2.0 * fs;
    let spacing = Exp::new(1.0 / 35.0).expect("positive rate");
    let amp = LogNormal::new(0.45f64.ln(), 0.4).expect("fixed sigma");
    let mut rng = stream.rng();
    let mut flickers = Vec::new();
    for seg in segments {
        if seg.kind != SegKind::Walk || (seg.len as f64) < 8.0 * fs {
            continue;
        }
        let mut t = seg.start as f64 + margin;
        loop {
            t += spacing.sample(&mut rng) * fs;
            let len = (rng.gen_range(0.5..1.0) * fs) as usize;
            if t + len as f64 > seg.end() as f64 - margin {
                break;
            }
            let rms = (base_tremor_rms * amp.sample(&mut rng))
                .clamp(0.1 * base_tremor_rms, 0.9 * base_tremor_rms);
            flickers.push(Flicker {
                start: t as usize,
                len,
                tremor_rms: rms,
            });
        }
    }
    flickers
}

fn episode_tremor_rms(base: f64, difficulty: f64, rng: &mut impl Rng) -> f64 {
    let jitter = LogNormal::new(0.0, 0.3).expect("fixed sigma");
    let rms = (base * jitter.sample(rng)).clamp(0.4 * base, 2.0 * base);
    // The difficulty knob pulls episode tremor toward the noise floor.
    rms + difficulty * (0.05 - rms)
}

/// Lays out one recording: `fog_target` samples of freezing split into
/// log-normal episodes, walking in between, occasional standing, and
/// unlabeled flickers.
pub(super) fn plan_recording(
    n: usize,
    fog_target: usize,
    shape: &EpisodeDurationShape,
    base_tremor_rms: f64,
    difficulty: f64,
    stream: &SeedStream,
) -> Plan {
    assert!(fog_target <= n);
    let episodes = draw_episodes(fog_target, shape, &stream.child("episodes"));
    let gaps = draw_gaps(n - fog_target, episodes.len(), &stream.child("gaps"));

    let mut amp_rng = stream.child("amps").rng();
    let mut segments = Vec::with_capacity(2 * episodes.len() + 1);
    let mut pos = 0usize;
    for (i, &gap) in gaps.iter().enumerate() {
        if gap > 0 {
            segments.push(Segment {
                start: pos,
                len: gap,
                kind: SegKind::Walk,
            });
            pos += gap;
        }
        if i < episodes.len() {
            let tremor_rms = episode_tremor_rms(base_tremor_rms, difficulty, &mut amp_rng);
            segments.push(Segment {
                start: pos,
                len: episodes[i],
                kind: SegKind::Freeze { tremor_rms },
            });
            pos += episodes[i];
        }
    }
    debug_assert_eq!(pos, n);

    let segments = insert_stands(segments, &stream.child("stands"));
    let flickers = place_flickers(&segments, base_tremor_rms, &stream.child("flickers"));
    Plan { segments, flickers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> EpisodeDurationShape {
        EpisodeDurationShape::default()
    }

    #[test]
    fn plan_covers_the_recording_exactly() {
        for seed in 0..10u64 {
            let stream = SeedStream::new(seed);
            let n = 120_000;
            let target = 18_000;
            let plan = plan_recording(n, target, &shape(), 0.3, 0.0, &stream);
            assert_eq!(plan.fog_samples(), target);
            let mut pos = 0;
            for seg in &plan.segments {
                assert_eq!(seg.start, pos, "segments must tile without holes");
                pos = seg.end();
            }
            assert_eq!(pos, n);
        }
    }

    #[test]
    fn labels_match_freeze_segments() {
        let stream = SeedStream::new(3);
        let plan = plan_recording(60_000, 9_000, &shape(), 0.3, 0.0, &stream);
        let labels = plan.labels(60_000);
        assert_eq!(labels.iter().filter(|&&l| l).count(), 9_000);
        for seg in &plan.segments {
            let expect = matches!(seg.kind, SegKind::Freeze { .. });
            assert!(labels[seg.start..seg.end()].iter().all(|&l| l == expect));
        }
    }

    #[test]
    fn zero_target_means_no_episodes() {
        let stream = SeedStream::new(1);
        let plan = plan_recording(10_000, 0, &shape(), 0.3, 0.0, &stream);
        assert_eq!(plan.fog_samples(), 0);
        assert!(plan
            .segments
            .iter()
            .all(|s| !matches!(s.kind, SegKind::Freeze { .. })));
    }

    #[test]
    fn most_episode_durations_fall_under_ten_seconds() {
        let stream = SeedStream::new(7);
        // A long budget gives plenty of draws to see the distribution.
        let episodes = draw_episodes(1_000_000, &shape(), &stream);
        let short = episodes
            .iter()
            .filter(|&&e| (e as f64) < 10.0 * CAPTURE_RATE_HZ)
            .count();
        let frac = short as f64 / episodes.len() as f64;
        assert!(
            (0.65..0.95).contains(&frac),
            "short-episode fraction {frac}"
        );
        assert!(episodes.iter().all(|&e| e >= MIN_EPISODE));
    }

    #[test]
    fn flickers_stay_inside_walking_stretches() {
        let stream = SeedStream::new(11);
        let plan = plan_recording(240_000, 36_000, &shape(), 0.3, 0.0, &stream);
        for f in &plan.flickers {
            let host = plan
                .segments
                .iter()
                .find(|s| s.start <= f.start && f.start + f.len <= s.end());
            assert!(
                matches!(
                    host,
                    Some(Segment {
                        kind: SegKind::Walk,
                        ..
                    })
                ),
                "flicker at {} not inside a walk segment",
                f.start
            );
        }
        assert!(!plan.flickers.is_empty(), "a 20 min plan should flicker");
    }

    #[test]
    fn difficulty_pulls_episode_tremor_toward_the_noise_floor() {
        let stream = SeedStream::new(2);
        let easy = plan_recording(60_000, 9_000, &shape(), 0.3, 0.0, &stream);
        let hard = plan_recording(60_000, 9_000, &shape(), 0.3, 1.0, &stream);
        let mean_rms = |p: &Plan| {
            let eps: Vec<f64> = p
                .segments
                .iter()
                .filter_map(|s| match s.kind {
                    SegKind::Freeze { tremor_rms } => Some(tremor_rms),
                    _ => None,
                })
                .collect();
            eps.iter().sum::<f64>() / eps.len() as f64
        };
        assert!(mean_rms(&easy) > 0.15);
        assert!((mean_rms(&hard) - 0.05).abs() < 1e-12);
    }
}
