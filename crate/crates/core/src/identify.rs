//! Video source attribution over a registry of enrolled fingerprints.
//!
//! Three strategies are available:
//!
//! * **voting**: every sampled frame votes for the camera with the highest PCE between
//!   its residual and the camera fingerprint; the camera with most votes wins.
//! * **pattern correlation**: the sampled frames are turned into a fingerprint of their
//!   own, which is compared with each enrolled fingerprint (NCC by default, or PCE).
//! * **PCE vectors**: the per-frame vectors of PCE values (one per camera) are averaged,
//!   optionally after dividing each vector by its maximum; the largest mean wins.
//!
//! Ties are broken in favour of the lowest registry index and flagged in the report.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::denoise::{extract_residual, DenoiserConfig};
use crate::fingerprint::{enroll, load_fingerprint, Fingerprint};
use crate::imgio::{conform, select_frames, FrameImage, SamplingPolicy};
use crate::matching::{self, Correlator, Spectrum, DEFAULT_EXCLUSION};
use crate::{Error, Result};

/// File extension of fingerprints stored in a registry directory.
pub const FINGERPRINT_EXT: &str = "prnufp";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Voting,
    PatternCorrelation,
    PceVectors,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Voting, Method::PatternCorrelation, Method::PceVectors];

    /// Short name used on the command line and in output file names.
    pub fn short_name(self) -> &'static str {
        match self {
            Method::Voting => "vote",
            Method::PatternCorrelation => "pattern",
            Method::PceVectors => "pcevec",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            Method::Voting => "voting",
            Method::PatternCorrelation => "pattern_correlation",
            Method::PceVectors => "pce_vectors",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.short_name() == s || m.long_name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected vote, pattern or pcevec)")))
    }
}

/// How a test fingerprint is scored against an enrolled one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Comparator {
    #[default]
    Ncc,
    Pce,
}

impl Comparator {
    pub fn name(self) -> &'static str {
        match self {
            Comparator::Ncc => "ncc",
            Comparator::Pce => "pce",
        }
    }
}

impl FromStr for Comparator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc" => Ok(Comparator::Ncc),
            "pce" => Ok(Comparator::Pce),
            _ => Err(Error::InvalidConfig(format!(
                "unknown comparator `{s}` (expected ncc or pce)"
            ))),
        }
    }
}

/// Knobs shared by the three identification methods.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentifyOptions {
    pub denoiser: DenoiserConfig,
    pub exclusion: usize,
    pub comparator: Comparator,
    /// Divide each per-frame PCE vector by its maximum (PCE-vector method only).
    pub normalize: bool,
    /// Downscale larger frames to the registry resolution (nearest neighbour).
    pub rescale: bool,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            denoiser: DenoiserConfig::default(),
            exclusion: DEFAULT_EXCLUSION,
            comparator: Comparator::Ncc,
            normalize: false,
            rescale: false,
        }
    }
}

/// Enrolled fingerprints in a fixed order. Labels are unique and all fingerprints
/// share one resolution.
#[derive(Clone, Debug)]
pub struct CameraRegistry {
    entries: Vec<(String, Fingerprint)>,
}

impl CameraRegistry {
    pub fn new(entries: Vec<(String, Fingerprint)>) -> Result<Self> {
        if let Some((_, first)) = entries.first() {
            for (i, (label, fp)) in entries.iter().enumerate() {
                if entries[..i].iter().any(|(l, _)| l == label) {
                    return Err(Error::InvalidConfig(format!("duplicate camera label `{label}`")));
                }
                if fp.dims() != first.dims() {
                    return Err(Error::mismatch(first.dims(), fp.dims()));
                }
            }
        }
        Ok(CameraRegistry { entries })
    }

    /// Registry from fingerprints, keyed by their embedded labels.
    pub fn from_fingerprints(fps: Vec<Fingerprint>) -> Result<Self> {
        Self::new(fps.into_iter().map(|fp| (fp.label().to_string(), fp)).collect())
    }

    /// Loads every `*.prnufp` in `dir`; the label is the file stem, entries are sorted by label.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == FINGERPRINT_EXT) && path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        let entries = paths
            .iter()
            .map(|p| {
                let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                load_fingerprint(p).map(|fp| (label, fp))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(width, height)` of the enrolled fingerprints.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.entries.first().map(|(_, fp)| fp.dims())
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|(l, _)| l.clone()).collect()
    }

    pub fn entries(&self) -> &[(String, Fingerprint)] {
        &self.entries
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|(l, _)| l == label)
    }
}

/// Outcome of one identification query.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationReport {
    pub method: Method,
    /// Registry labels, in the order of `scores`.
    pub labels: Vec<String>,
    /// Votes, correlations or mean PCEs, one per camera.
    pub scores: Vec<f64>,
    pub predicted_index: usize,
    pub predicted: String,
    pub frames_processed: usize,
    /// Frames that contributed nothing (no usable comparison, or an all-zero vector).
    pub frames_skipped: usize,
    pub tie: bool,
}

impl IdentificationReport {
    fn build(
        method: Method,
        labels: Vec<String>,
        scores: Vec<f64>,
        frames_processed: usize,
        frames_skipped: usize,
    ) -> Self {
        let (predicted_index, tie) = argmax_lowest(&scores);
        IdentificationReport {
            method,
            predicted: labels[predicted_index].clone(),
            labels,
            scores,
            predicted_index,
            frames_processed,
            frames_skipped,
            tie,
        }
    }

    /// One line: `label,method,score1;score2;...`.
    pub fn record_line(&self) -> String {
        let scores: Vec<String> = self.scores.iter().map(|s| format_score(*s)).collect();
        format!("{},{},{}", self.predicted, self.method.long_name(), scores.join(";"))
    }
}

impl fmt::Display for IdentificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method:    {}", self.method.long_name())?;
        writeln!(
            f,
            "predicted: {}{}",
            self.predicted,
            if self.tie { " (tie, lowest index wins)" } else { "" }
        )?;
        writeln!(
            f,
            "frames:    {} processed, {} skipped",
            self.frames_processed, self.frames_skipped
        )?;
        for (i, (label, score)) in self.labels.iter().zip(&self.scores).enumerate() {
            let mark = if i == self.predicted_index { '*' } else { ' ' };
            writeln!(f, "  {mark} {label:<24} {}", format_score(*score))?;
        }
        Ok(())
    }
}

fn format_score(s: f64) -> String {
    if s.is_finite() {
        format!("{s:.6}")
    } else if s > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Index of the largest score, lowest index on ties; `true` when the maximum is shared.
pub fn argmax_lowest(scores: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    let top = scores.get(best).copied().unwrap_or(f64::NAN);
    let tie = scores.iter().filter(|&&s| s == top).count() > 1;
    (best, tie)
}

/// Vote counts from per-frame winners.
pub fn tally_votes(winners: &[usize], cameras: usize) -> Vec<f64> {
    let mut votes = vec![0.0; cameras];
    for &w in winners {
        votes[w] += 1.0;
    }
    votes
}

/// Mean of per-frame PCE vectors. With `normalize`, each vector is first divided by its
/// maximum and vectors whose maximum is not positive are skipped. Returns the mean and
/// the number of skipped vectors.
pub fn aggregate_pce_vectors(vectors: &[Vec<f64>], cameras: usize, normalize: bool) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; cameras];
    let (mut used, mut skipped) = (0usize, 0usize);
    for v in vectors {
        let scale = if normalize {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max.is_nan() || max <= 0.0 {
                skipped += 1;
                continue;
            }
            max
        } else {
            1.0
        };
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x / scale;
        }
        used += 1;
    }
    if used > 0 {
        sum.iter_mut().for_each(|s| *s /= used as f64);
    }
    (sum, skipped)
}

/// A registry prepared for repeated queries: FFT plans and fingerprint spectra are
/// computed once and shared read-only across worker threads.
pub struct Identifier<'a> {
    registry: &'a CameraRegistry,
    options: IdentifyOptions,
    correlator: Correlator,
    spectra: Vec<Spectrum>,
    dense: Vec<Array2<f64>>,
}

impl<'a> Identifier<'a> {
    pub fn new(registry: &'a CameraRegistry, options: IdentifyOptions) -> Result<Self> {
        options.denoiser.validate()?;
        let (w, h) = registry
            .dims()
            .ok_or_else(|| Error::Empty("camera registry has no fingerprints".into()))?;
        let correlator = Correlator::new(w, h)?;
        let dense: Vec<Array2<f64>> = registry.entries.iter().map(|(_, fp)| fp.to_f64()).collect();
        let spectra = dense
            .iter()
            .map(|d| correlator.spectrum(d.view()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Identifier {
            registry,
            options,
            correlator,
            spectra,
            dense,
        })
    }

    pub fn registry(&self) -> &CameraRegistry {
        self.registry
    }

    pub fn options(&self) -> &IdentifyOptions {
        &self.options
    }

    fn sampled(&self, frames: &[FrameImage], policy: SamplingPolicy) -> Result<Vec<FrameImage>> {
        if frames.is_empty() {
            return Err(Error::Empty("no frames to identify".into()));
        }
        let (w, h) = self.correlator.dims();
        select_frames(frames, policy)
            .into_iter()
            .map(|f| conform(f, w, h, self.options.rescale))
            .collect()
    }

    /// PCE of one frame's residual against every camera; `None` where the comparison
    /// is undefined (e.g. a constant frame or an all-zero fingerprint).
    fn frame_vector(&self, frame: &FrameImage) -> Result<Vec<Option<f64>>> {
        let residual = extract_residual(frame, &self.options.denoiser)?;
        let spec = self.correlator.spectrum(residual.values.view())?;
        Ok(self
            .spectra
            .iter()
            .map(|fp| {
                self.correlator
                    .pce(&spec, fp, self.options.exclusion)
                    .ok()
                    .map(|r| r.pce)
            })
            .collect())
    }

    /// Per-frame PCE vectors for the sampled frames, ordered by `source_index`.
    pub fn frame_pce_vectors(&self, frames: &[FrameImage], policy: SamplingPolicy) -> Result<Vec<Vec<Option<f64>>>> {
        let sampled = self.sampled(frames, policy)?;
        sampled.par_iter().map(|f| self.frame_vector(f)).collect()
    }

    /// Voting decision from precomputed per-frame vectors.
    pub fn vote_from_vectors(&self, vectors: &[Vec<Option<f64>>]) -> Result<IdentificationReport> {
        let winners: Vec<usize> = vectors
            .iter()
            .filter(|v| v.iter().any(Option::is_some))
            .map(|v| argmax_lowest(&v.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect::<Vec<_>>()).0)
            .collect();
        if winners.is_empty() {
            return Err(Error::Degenerate("no frame produced a usable PCE comparison".into()));
        }
        let votes = tally_votes(&winners, self.registry.len());
        Ok(IdentificationReport::build(
            Method::Voting,
            self.registry.labels(),
            votes,
            vectors.len(),
            vectors.len() - winners.len(),
        ))
    }

    /// PCE-vector decision from precomputed per-frame vectors.
    pub fn pce_vectors_from_vectors(&self, vectors: &[Vec<Option<f64>>]) -> Result<IdentificationReport> {
        let usable: Vec<Vec<f64>> = vectors
            .iter()
            .filter(|v| v.iter().any(Option::is_some))
            .map(|v| v.iter().map(|s| s.unwrap_or(0.0)).collect())
            .collect();
        if usable.is_empty() {
            return Err(Error::Degenerate("no frame produced a usable PCE comparison".into()));
        }
        let (mean, skipped) = aggregate_pce_vectors(&usable, self.registry.len(), self.options.normalize);
        if skipped == usable.len() {
            return Err(Error::Degenerate("every normalized PCE vector was all-zero".into()));
        }
        Ok(IdentificationReport::build(
            Method::PceVectors,
            self.registry.labels(),
            mean,
            vectors.len(),
            vectors.len() - usable.len() + skipped,
        ))
    }

    pub fn voting(&self, frames: &[FrameImage], policy: SamplingPolicy) -> Result<IdentificationReport> {
        self.vote_from_vectors(&self.frame_pce_vectors(frames, policy)?)
    }

    pub fn pce_vectors(&self, frames: &[FrameImage], policy: SamplingPolicy) -> Result<IdentificationReport> {
        self.pce_vectors_from_vectors(&self.frame_pce_vectors(frames, policy)?)
    }

    /// Scores of a test fingerprint against every enrolled camera; undefined comparisons
    /// score `-inf`.
    pub fn score_fingerprint(&self, test: &Fingerprint) -> Result<Vec<f64>> {
        if test.dims() != self.correlator.dims() {
            return Err(Error::mismatch(self.correlator.dims(), test.dims()));
        }
        let values = test.to_f64();
        let test_spec = match self.options.comparator {
            Comparator::Pce => self.correlator.spectrum(values.view()).ok(),
            Comparator::Ncc => None,
        };
        Ok(self
            .dense
            .iter()
            .zip(&self.spectra)
            .zip(&self.registry.entries)
            .map(|((dense, spec), (label, _))| {
                let score = match (self.options.comparator, &test_spec) {
                    (Comparator::Ncc, _) => matching::ncc(values.view(), dense.view()),
                    (Comparator::Pce, Some(ts)) => self.correlator.pce(ts, spec, self.options.exclusion).map(|r| r.pce),
                    (Comparator::Pce, None) => Err(Error::Degenerate("test fingerprint has no spectrum".into())),
                };
                score.unwrap_or_else(|e| {
                    log::warn!("comparison with `{label}` is undefined: {e}");
                    f64::NEG_INFINITY
                })
            })
            .collect())
    }

    pub fn pattern_correlation(&self, frames: &[FrameImage], policy: SamplingPolicy) -> Result<IdentificationReport> {
        let sampled = self.sampled(frames, policy)?;
        let test = enroll(&sampled, SamplingPolicy::every_frame(), &self.options.denoiser, "query")?;
        let scores = self.score_fingerprint(&test)?;
        Ok(IdentificationReport::build(
            Method::PatternCorrelation,
            self.registry.labels(),
            scores,
            sampled.len(),
            0,
        ))
    }

    pub fn identify(
        &self,
        method: Method,
        frames: &[FrameImage],
        policy: SamplingPolicy,
    ) -> Result<IdentificationReport> {
        match method {
            Method::Voting => self.voting(frames, policy),
            Method::PatternCorrelation => self.pattern_correlation(frames, policy),
            Method::PceVectors => self.pce_vectors(frames, policy),
        }
    }
}

pub fn identify_voting(
    frames: &[FrameImage],
    registry: &CameraRegistry,
    policy: SamplingPolicy,
    options: &IdentifyOptions,
) -> Result<IdentificationReport> {
    Identifier::new(registry, options.clone())?.voting(frames, policy)
}

pub fn identify_pattern_correlation(
    frames: &[FrameImage],
    registry: &CameraRegistry,
    policy: SamplingPolicy,
    options: &IdentifyOptions,
) -> Result<IdentificationReport> {
    Identifier::new(registry, options.clone())?.pattern_correlation(frames, policy)
}

pub fn identify_pce_vectors(
    frames: &[FrameImage],
    registry: &CameraRegistry,
    policy: SamplingPolicy,
    options: &IdentifyOptions,
) -> Result<IdentificationReport> {
    Identifier::new(registry, options.clone())?.pce_vectors(frames, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{flat_scene, render_frame, simulate_camera, textured_scene};

    #[test]
    fn vote_counting() {
        let votes = tally_votes(&[0, 0, 1, 0, 2], 3);
        assert_eq!(votes, vec![3.0, 1.0, 1.0]);
        assert_eq!(argmax_lowest(&votes), (0, false));
    }

    #[test]
    fn normalized_vectors_tie() {
        let v = vec![vec![10.0, 5.0], vec![2.0, 4.0]];
        let (mean, skipped) = aggregate_pce_vectors(&v, 2, true);
        assert_eq!(mean, vec![0.75, 0.75]);
        assert_eq!(skipped, 0);
        assert_eq!(argmax_lowest(&mean), (0, true));

        let (mean, _) = aggregate_pce_vectors(&v, 2, false);
        assert_eq!(mean, vec![6.0, 4.5]);
        assert_eq!(argmax_lowest(&mean), (0, false));
    }

    #[test]
    fn normalized_skips_zero_vectors() {
        let v = vec![vec![0.0, 0.0], vec![2.0, 4.0]];
        let (mean, skipped) = aggregate_pce_vectors(&v, 2, true);
        assert_eq!((mean, skipped), (vec![0.5, 1.0], 1));
    }

    #[test]
    fn argmax_edge_cases() {
        assert_eq!(argmax_lowest(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), (0, true));
        assert_eq!(argmax_lowest(&[f64::NEG_INFINITY, 0.2, 0.2]), (1, true));
        assert_eq!(argmax_lowest(&[1.0]), (0, false));
        assert_eq!(argmax_lowest(&[f64::NAN, 0.5]), (1, false));
    }

    #[test]
    fn method_and_comparator_names() {
        for m in Method::ALL {
            assert_eq!(m.short_name().parse::<Method>().unwrap(), m);
            assert_eq!(m.long_name().parse::<Method>().unwrap(), m);
        }
        assert!("votes".parse::<Method>().is_err());
        assert_eq!("pce".parse::<Comparator>().unwrap(), Comparator::Pce);
        assert!("xcorr".parse::<Comparator>().is_err());
    }

    fn camera_frames(seed: u64, n: u64, textured: bool) -> (Vec<FrameImage>, Vec<FrameImage>) {
        let cam = simulate_camera("c", 64, 64, 0.05, 1.0, seed).unwrap();
        let train = (0..n)
            .map(|i| render_frame(&cam, &flat_scene(64, 64, 128.0, i), seed * 1000 + i).unwrap())
            .collect();
        let test = (0..n)
            .map(|i| {
                let scene = if textured {
                    textured_scene(64, 64, seed, i)
                } else {
                    flat_scene(64, 64, 150.0, i)
                };
                render_frame(&cam, &scene, seed * 2000 + i).unwrap()
            })
            .collect();
        (train, test)
    }

    #[test]
    fn registry_validation() {
        let a = Fingerprint::new(Array2::from_elem((4, 4), 0.1f32), 1, "a").unwrap();
        let b = Fingerprint::new(Array2::from_elem((4, 5), 0.1f32), 1, "b").unwrap();
        assert!(CameraRegistry::new(vec![("a".into(), a.clone()), ("a".into(), a.clone())]).is_err());
        assert!(CameraRegistry::new(vec![("a".into(), a.clone()), ("b".into(), b)]).is_err());
        let empty = CameraRegistry::new(vec![]).unwrap();
        assert!(matches!(
            Identifier::new(&empty, IdentifyOptions::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn identical_frames_correlate_perfectly() {
        let cfg = IdentifyOptions::default();
        let mut fps = Vec::new();
        let mut probe = Vec::new();
        for seed in 0..3 {
            let (train, _) = camera_frames(seed + 1, 4, false);
            fps.push(
                enroll(
                    &train,
                    SamplingPolicy::every_frame(),
                    &cfg.denoiser,
                    format!("cam{seed}"),
                )
                .unwrap(),
            );
            if seed == 1 {
                probe = train;
            }
        }
        let reg = CameraRegistry::from_fingerprints(fps).unwrap();
        let r = identify_pattern_correlation(&probe, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        assert_eq!(r.predicted, "cam1");
        assert_eq!(r.scores[1], 1.0);
        assert!(!r.tie);
    }

    #[test]
    fn single_camera_registry_always_wins() {
        let cfg = IdentifyOptions::default();
        let (train, test) = camera_frames(9, 3, true);
        let reg = CameraRegistry::from_fingerprints(vec![enroll(
            &train,
            SamplingPolicy::every_frame(),
            &cfg.denoiser,
            "only",
        )
        .unwrap()])
        .unwrap();
        let (_, other) = camera_frames(10, 3, true);
        let v = identify_voting(&other, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        assert_eq!((v.predicted.as_str(), v.scores[0]), ("only", 3.0));
        assert_eq!(v.frames_processed, 3);
        let p = identify_pattern_correlation(&test, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        assert_eq!(p.predicted, "only");
    }

    #[test]
    fn one_frame_pce_vectors_match_voting() {
        let cfg = IdentifyOptions::default();
        let fps: Vec<Fingerprint> = (0..3)
            .map(|s| {
                let (train, _) = camera_frames(20 + s, 3, false);
                enroll(&train, SamplingPolicy::every_frame(), &cfg.denoiser, format!("c{s}")).unwrap()
            })
            .collect();
        let reg = CameraRegistry::from_fingerprints(fps).unwrap();
        let (_, test) = camera_frames(22, 1, true);
        let v = identify_voting(&test, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        let p = identify_pce_vectors(&test, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        assert_eq!(v.predicted, p.predicted);
        assert_eq!(p.predicted, "c2");
    }

    #[test]
    fn empty_and_mismatched_frames() {
        let cfg = IdentifyOptions::default();
        let (train, _) = camera_frames(3, 2, false);
        let reg =
            CameraRegistry::from_fingerprints(vec![
                enroll(&train, SamplingPolicy::every_frame(), &cfg.denoiser, "a").unwrap()
            ])
            .unwrap();
        assert!(matches!(
            identify_voting(&[], &reg, SamplingPolicy::every_frame(), &cfg),
            Err(Error::Empty(_))
        ));

        let big = vec![textured_scene(128, 96, 1, 0)];
        assert!(matches!(
            identify_pce_vectors(&big, &reg, SamplingPolicy::every_frame(), &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let rescaling = IdentifyOptions {
            rescale: true,
            ..cfg.clone()
        };
        assert!(identify_pce_vectors(&big, &reg, SamplingPolicy::every_frame(), &rescaling).is_ok());

        let small = vec![textured_scene(32, 32, 1, 0)];
        assert!(identify_voting(&small, &reg, SamplingPolicy::every_frame(), &rescaling).is_err());
    }

    #[test]
    fn constant_query_scores_negative_infinity() {
        let cfg = IdentifyOptions::default();
        let (train, _) = camera_frames(4, 2, false);
        let reg =
            CameraRegistry::from_fingerprints(vec![
                enroll(&train, SamplingPolicy::every_frame(), &cfg.denoiser, "a").unwrap()
            ])
            .unwrap();
        let flat = vec![FrameImage::constant(64, 64, 100.0, 0).unwrap()];
        let r = identify_pattern_correlation(&flat, &reg, SamplingPolicy::every_frame(), &cfg).unwrap();
        assert_eq!(r.scores, vec![f64::NEG_INFINITY]);
        assert!(identify_voting(&flat, &reg, SamplingPolicy::every_frame(), &cfg).is_err());
    }

    #[test]
    fn report_formats() {
        let r = IdentificationReport::build(
            Method::PceVectors,
            vec!["a".into(), "b".into()],
            vec![1.5, f64::NEG_INFINITY],
            2,
            0,
        );
        assert_eq!(r.record_line(), "a,pce_vectors,1.500000;-inf");
        let text = r.to_string();
        assert!(text.contains("* a") && text.contains("pce_vectors"));
    }
}
