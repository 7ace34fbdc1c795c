//! Batch evaluation over sampling rates and identification methods.
//!
//! An experiment config is a flat `key = value` text file. `#` starts a comment and
//! blank lines are ignored. Lists are comma separated.
//!
//! ```text
//! mode           = synthetic | directories        (default synthetic)
//! seed           = <u64>                           (default 0)
//! methods        = vote, pattern, pcevec           (default all three)
//! rates          = 30, 25, 20, 15, 10              (N or 1/N; default as shown)
//! comparator     = ncc | pce                       (pattern method; default ncc)
//! normalize      = true | false                    (pcevec method; default false)
//! sigma          = <float>                         (default 3.0)
//! levels         = <int>                           (default 4)
//! exclusion      = <odd int>                       (default 11)
//!
//! # synthetic mode
//! cameras        = <int>                           (default 5)
//! size           = <W>x<H>                         (default 256x256)
//! strength       = <float>                         (default 0.05)
//! additive_sigma = <float>                         (default 2.0)
//! train_frames   = <int>   frames in each training video (default 20)
//! test_frames    = <int>   frames in each test video     (default 10)
//! test_videos    = <int>   test videos per camera and set (default 1)
//! test_sets      = textured, flat                  (default textured)
//!
//! # directories mode (relative paths are resolved against the config file)
//! db             = <dir of .prnufp files>          (fixed registry), or
//! train          = <label> <frames dir>            (repeatable; enrolled at each rate)
//! video          = <test set> <true label> <frames dir>   (repeatable)
//! rescale        = <W>x<H>                         (downscale larger frames)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    confusion_matrix, derive_seed, flat_scene, format_rate, render_frame, simulate_camera, success_error_rate,
    textured_scene, ConfusionMatrix, SyntheticCamera, FLAT_SCENE_LEVELS,
};
use crate::denoise::DenoiserConfig;
use crate::fingerprint::{enroll, Fingerprint};
use crate::identify::{
    aggregate_pce_vectors, CameraRegistry, Comparator, IdentificationReport, Identifier, IdentifyOptions, Method,
};
use crate::imgio::{conform, write_atomic, FrameDir, FrameImage, SamplingPolicy};
use crate::{Error, Result};

/// Sampling divisors used when a config does not list its own.
pub const DEFAULT_RATES: [u32; 5] = [30, 25, 20, 15, 10];

const TAG_CAMERA: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_SCENE: u64 = 3;
const TAG_TEST: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SceneKind {
    /// Moving smooth texture with a few hard-edged patches.
    Textured,
    /// Constant backgrounds, one level per test video.
    Flat,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Textured => "textured",
            SceneKind::Flat => "flat",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "textured" => Ok(SceneKind::Textured),
            "flat" => Ok(SceneKind::Flat),
            _ => Err(Error::InvalidConfig(format!(
                "unknown test set kind `{s}` (expected textured or flat)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSetup {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub strength: f64,
    pub additive_sigma: f64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub test_videos: usize,
    pub test_sets: Vec<SceneKind>,
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        SyntheticSetup {
            cameras: 5,
            width: 256,
            height: 256,
            strength: 0.05,
            additive_sigma: 2.0,
            train_frames: 20,
            test_frames: 10,
            test_videos: 1,
            test_sets: vec![SceneKind::Textured],
        }
    }
}

impl SyntheticSetup {
    pub fn camera_label(index: usize) -> String {
        format!("cam{index}")
    }

    pub fn camera(&self, seed: u64, index: usize) -> Result<SyntheticCamera> {
        simulate_camera(
            Self::camera_label(index),
            self.width,
            self.height,
            self.strength,
            self.additive_sigma,
            derive_seed(seed, &[TAG_CAMERA, index as u64]),
        )
    }

    /// Training frame `i`: a flat background cycling through [`FLAT_SCENE_LEVELS`].
    pub fn training_frame(&self, cam: &SyntheticCamera, seed: u64, index: usize, i: usize) -> Result<FrameImage> {
        let level = FLAT_SCENE_LEVELS[i % FLAT_SCENE_LEVELS.len()];
        let scene = flat_scene(self.width, self.height, level, i as u64);
        render_frame(cam, &scene, derive_seed(seed, &[TAG_TRAIN, index as u64, i as u64]))
    }

    /// Frame `i` of test video `video` of the given kind.
    pub fn test_frame(
        &self,
        cam: &SyntheticCamera,
        seed: u64,
        kind: SceneKind,
        index: usize,
        video: usize,
        i: usize,
    ) -> Result<FrameImage> {
        let tags = [kind as u64, index as u64, video as u64];
        let scene = match kind {
            SceneKind::Textured => textured_scene(
                self.width,
                self.height,
                derive_seed(seed, &[TAG_SCENE, tags[0], tags[1], tags[2]]),
                i as u64,
            ),
            // skip saturated black and white backgrounds, which carry no pattern
            SceneKind::Flat => flat_scene(
                self.width,
                self.height,
                FLAT_SCENE_LEVELS[(index + video) % 6],
                i as u64,
            ),
        };
        render_frame(
            cam,
            &scene,
            derive_seed(seed, &[TAG_TEST, tags[0], tags[1], tags[2], i as u64]),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestVideo {
    pub test_set: String,
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirectorySetup {
    pub db: Option<PathBuf>,
    pub train: Vec<(String, PathBuf)>,
    pub videos: Vec<TestVideo>,
    pub rescale: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExperimentSource {
    Synthetic(SyntheticSetup),
    Directories(DirectorySetup),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub methods: Vec<Method>,
    pub rates: Vec<u32>,
    pub identify: IdentifyOptions,
    pub source: ExperimentSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            methods: Method::ALL.to_vec(),
            rates: DEFAULT_RATES.to_vec(),
            identify: IdentifyOptions::default(),
            source: ExperimentSource::Synthetic(SyntheticSetup::default()),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`")))
}

/// Parses `WxH`.
pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    let (w, h) = v
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::InvalidConfig(format!("size `{v}` is not WxH")))?;
    let (w, h): (usize, usize) = (parse_num("size", w.trim())?, parse_num("size", h.trim())?);
    if w == 0 || h == 0 {
        return Err(Error::InvalidConfig(format!("size `{v}` is empty")));
    }
    Ok((w, h))
}

fn parse_rate(v: &str) -> Result<u32> {
    let n = v.strip_prefix("1/").unwrap_or(v);
    let n: u32 = parse_num("rates", n.trim())?;
    SamplingPolicy::new(n)?;
    Ok(n)
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses the config grammar; relative directories resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synth = SyntheticSetup::default();
        let mut dirs = DirectorySetup::default();
        let mut denoiser = DenoiserConfig::default();
        let mut mode: Option<String> = None;
        let mut synthetic_keys = false;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            match key {
                "mode" => mode = Some(value.to_string()),
                "seed" => cfg.seed = parse_num(key, value)?,
                "methods" => cfg.methods = list(value).map(str::parse).collect::<Result<_>>()?,
                "rates" => cfg.rates = list(value).map(parse_rate).collect::<Result<_>>()?,
                "comparator" => cfg.identify.comparator = value.parse::<Comparator>()?,
                "normalize" => cfg.identify.normalize = parse_num(key, value)?,
                "sigma" => denoiser.sigma0 = parse_num(key, value)?,
                "levels" => denoiser.levels = parse_num(key, value)?,
                "exclusion" => cfg.identify.exclusion = parse_num(key, value)?,
                "cameras" | "size" | "strength" | "additive_sigma" | "train_frames" | "test_frames" | "test_videos"
                | "test_sets" => {
                    synthetic_keys = true;
                    match key {
                        "cameras" => synth.cameras = parse_num(key, value)?,
                        "size" => (synth.width, synth.height) = parse_size(value)?,
                        "strength" => synth.strength = parse_num(key, value)?,
                        "additive_sigma" => synth.additive_sigma = parse_num(key, value)?,
                        "train_frames" => synth.train_frames = parse_num(key, value)?,
                        "test_frames" => synth.test_frames = parse_num(key, value)?,
                        "test_videos" => synth.test_videos = parse_num(key, value)?,
                        _ => synth.test_sets = list(value).map(SceneKind::parse).collect::<Result<_>>()?,
                    }
                }
                "db" => dirs.db = Some(resolve(value)),
                "train" => {
                    let (label, dir) = value
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| Error::InvalidConfig(format!("line {}: `train = <label> <dir>`", lineno + 1)))?;
                    dirs.train.push((label.to_string(), resolve(dir.trim())));
                }
                "video" => {
                    let mut parts = value.splitn(3, char::is_whitespace);
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(set), Some(label), Some(dir)) if !dir.trim().is_empty() => dirs.videos.push(TestVideo {
                            test_set: set.to_string(),
                            label: label.to_string(),
                            dir: resolve(dir.trim()),
                        }),
                        _ => {
                            return Err(Error::InvalidConfig(format!(
                                "line {}: `video = <test set> <label> <dir>`",
                                lineno + 1
                            )))
                        }
                    }
                }
                "rescale" => dirs.rescale = Some(parse_size(value)?),
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }

        cfg.identify.denoiser = denoiser;
        cfg.identify.rescale = dirs.rescale.is_some();
        cfg.source = match mode.as_deref() {
            None | Some("synthetic") => ExperimentSource::Synthetic(synth),
            Some("directories") => {
                if synthetic_keys {
                    return Err(Error::InvalidConfig("synthetic keys given in directories mode".into()));
                }
                ExperimentSource::Directories(dirs)
            }
            Some(other) => return Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.identify.denoiser.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if self.rates.is_empty() {
            return Err(Error::InvalidConfig("no sampling rates given".into()));
        }
        for r in &self.rates {
            SamplingPolicy::new(*r)?;
        }
        let exc = self.identify.exclusion;
        if exc == 0 || exc.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("exclusion {exc} must be odd")));
        }
        match &self.source {
            ExperimentSource::Synthetic(s) => {
                if s.cameras == 0 || s.train_frames == 0 || s.test_frames == 0 || s.test_videos == 0 {
                    return Err(Error::InvalidConfig(
                        "cameras, train_frames, test_frames and test_videos must be >= 1".into(),
                    ));
                }
                if s.test_sets.is_empty() {
                    return Err(Error::InvalidConfig("no test sets".into()));
                }
                if s.width == 0 || s.height == 0 {
                    return Err(Error::InvalidConfig("empty frame size".into()));
                }
                if !(s.strength >= 0.0 && s.additive_sigma >= 0.0) {
                    return Err(Error::InvalidConfig("strength and additive_sigma must be >= 0".into()));
                }
            }
            ExperimentSource::Directories(d) => {
                if d.db.is_none() == d.train.is_empty() {
                    return Err(Error::InvalidConfig(
                        "give either `db` or `train` entries, not both".into(),
                    ));
                }
                if d.videos.is_empty() {
                    return Err(Error::InvalidConfig("no `video` entries".into()));
                }
            }
        }
        Ok(())
    }

    /// Test set names in output column order.
    pub fn test_sets(&self) -> Vec<String> {
        match &self.source {
            ExperimentSource::Synthetic(s) => s.test_sets.iter().map(|k| k.name().to_string()).collect(),
            ExperimentSource::Directories(d) => {
                let mut seen = Vec::new();
                for v in &d.videos {
                    if !seen.contains(&v.test_set) {
                        seen.push(v.test_set.clone());
                    }
                }
                seen
            }
        }
    }
}

/// Result of one (method, rate, test set) cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CellOutcome {
    Done {
        confusion: ConfusionMatrix,
        error_rate: f64,
    },
    Failed(String),
}

/// One identification query inside an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub rate: u32,
    pub test_set: String,
    pub true_label: String,
    pub video: usize,
    pub frames: usize,
    pub predicted: Option<String>,
    pub tie: bool,
    /// Score of the true camera.
    pub matched_score: f64,
    /// Best score among the other cameras.
    pub best_other_score: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub methods: Vec<Method>,
    pub rates: Vec<u32>,
    pub test_sets: Vec<String>,
    pub labels: Vec<String>,
    pub cells: BTreeMap<(Method, u32, String), CellOutcome>,
    /// Mean over test videos of the true camera's mean PCE, per `(rate, test set)`.
    pub matched_pce: BTreeMap<(u32, String), f64>,
    pub trials: Vec<TrialRecord>,
    pub metadata: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn cell(&self, method: Method, rate: u32, test_set: &str) -> Option<&CellOutcome> {
        self.cells.get(&(method, rate, test_set.to_string()))
    }

    /// Error rate `q` of a cell, `None` when it failed or does not exist.
    pub fn error_rate(&self, method: Method, rate: u32, test_set: &str) -> Option<f64> {
        match self.cell(method, rate, test_set)? {
            CellOutcome::Done { error_rate, .. } => Some(*error_rate),
            CellOutcome::Failed(_) => None,
        }
    }

    /// Mean of `q` over all test sets; `None` if any cell failed.
    pub fn mean_error(&self, method: Method, rate: u32) -> Option<f64> {
        let qs: Option<Vec<f64>> = self
            .test_sets
            .iter()
            .map(|s| self.error_rate(method, rate, s))
            .collect();
        qs.map(|qs| qs.iter().sum::<f64>() / qs.len() as f64)
    }

    pub fn failures(&self) -> Vec<(Method, u32, String, String)> {
        self.cells
            .iter()
            .filter_map(|((m, r, s), c)| match c {
                CellOutcome::Failed(e) => Some((*m, *r, s.clone(), e.clone())),
                CellOutcome::Done { .. } => None,
            })
            .collect()
    }

    fn rate_label(rate: u32) -> String {
        format!("1/{rate}")
    }

    /// Rows are rates, columns test sets, cells `q` in percent.
    pub fn table_csv(&self, method: Method) -> String {
        let mut out = format!("rate,{}\n", self.test_sets.join(","));
        for &rate in &self.rates {
            let cells: Vec<String> = self
                .test_sets
                .iter()
                .map(|s| {
                    self.error_rate(method, rate, s)
                        .map_or_else(|| "error".into(), format_rate)
                })
                .collect();
            let _ = writeln!(out, "{},{}", Self::rate_label(rate), cells.join(","));
        }
        out
    }

    /// Confusion matrices of one (method, rate) for every test set; rows are true labels.
    pub fn confusion_csv(&self, method: Method, rate: u32) -> String {
        let mut out = format!("test_set,true_label,{}\n", self.labels.join(","));
        for set in &self.test_sets {
            match self.cell(method, rate, set) {
                Some(CellOutcome::Done { confusion, .. }) => {
                    for (label, row) in confusion.labels().iter().zip(confusion.counts()) {
                        let row: Vec<String> = row.iter().map(u64::to_string).collect();
                        let _ = writeln!(out, "{set},{label},{}", row.join(","));
                    }
                }
                _ => {
                    let _ = writeln!(out, "{set},error,{}", vec![""; self.labels.len()].join(","));
                }
            }
        }
        out
    }

    /// Mean error over test sets, rows are rates and columns methods.
    pub fn mean_error_csv(&self) -> String {
        let names: Vec<&str> = self.methods.iter().map(|m| m.short_name()).collect();
        let mut out = format!("rate,{}\n", names.join(","));
        for &rate in &self.rates {
            let cells: Vec<String> = self
                .methods
                .iter()
                .map(|&m| self.mean_error(m, rate).map_or_else(|| "error".into(), format_rate))
                .collect();
            let _ = writeln!(out, "{},{}", Self::rate_label(rate), cells.join(","));
        }
        out
    }

    pub fn matched_pce_csv(&self) -> String {
        let mut out = format!("rate,{}\n", self.test_sets.join(","));
        for &rate in &self.rates {
            let cells: Vec<String> = self
                .test_sets
                .iter()
                .map(|s| {
                    self.matched_pce
                        .get(&(rate, s.clone()))
                        .map_or_else(|| "error".into(), |v| format!("{v:.4}"))
                })
                .collect();
            let _ = writeln!(out, "{},{}", Self::rate_label(rate), cells.join(","));
        }
        out
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from(
            "method,rate,test_set,true_label,video,frames,predicted,tie,matched_score,best_other_score,error\n",
        );
        for t in &self.trials {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{}",
                t.method.short_name(),
                Self::rate_label(t.rate),
                t.test_set,
                t.true_label,
                t.video,
                t.frames,
                t.predicted.as_deref().unwrap_or(""),
                t.tie,
                t.matched_score,
                t.best_other_score,
                t.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            );
        }
        out
    }

    pub fn metadata_text(&self) -> String {
        self.metadata.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes all output files into `out_dir` and returns their paths.
    pub fn write(&self, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut files: Vec<(String, String)> = Vec::new();
        for &m in &self.methods {
            files.push((format!("table_{}.csv", m.short_name()), self.table_csv(m)));
            for &rate in &self.rates {
                files.push((
                    format!("confusion_{}_{}.csv", m.short_name(), rate),
                    self.confusion_csv(m, rate),
                ));
            }
        }
        files.push(("mean_error.csv".into(), self.mean_error_csv()));
        if !self.matched_pce.is_empty() {
            files.push(("matched_pce.csv".into(), self.matched_pce_csv()));
        }
        files.push(("trials.csv".into(), self.trials_csv()));
        files.push(("metadata.txt".into(), self.metadata_text()));
        let failures = self.failures();
        if !failures.is_empty() {
            let mut text = String::from("method,rate,test_set,error\n");
            for (m, r, s, e) in failures {
                let _ = writeln!(
                    text,
                    "{},{},{},{}",
                    m.short_name(),
                    Self::rate_label(r),
                    s,
                    e.replace([',', '\n'], ";")
                );
            }
            files.push(("errors.csv".into(), text));
        }
        files
            .into_iter()
            .map(|(name, body)| {
                let p = out_dir.join(name);
                write_atomic(&p, body.as_bytes()).map(|_| p)
            })
            .collect()
    }
}

/// A test video whose frames are produced on demand.
enum Video<'a> {
    Synthetic {
        setup: &'a SyntheticSetup,
        cam: &'a SyntheticCamera,
        seed: u64,
        kind: SceneKind,
        index: usize,
        video: usize,
    },
    Dir(PathBuf),
}

impl Video<'_> {
    fn load_sampled(&self, policy: SamplingPolicy) -> Result<Vec<FrameImage>> {
        match self {
            Video::Synthetic {
                setup,
                cam,
                seed,
                kind,
                index,
                video,
            } => crate::imgio::sample_indices(setup.test_frames, policy)
                .into_iter()
                .map(|i| setup.test_frame(cam, *seed, *kind, *index, *video, i))
                .collect(),
            Video::Dir(dir) => {
                let fd = FrameDir::open(dir)?;
                if fd.is_empty() {
                    return Err(Error::Empty(format!("no frames in {}", dir.display())));
                }
                fd.load_sampled(policy)
            }
        }
    }
}

struct TestCase<'a> {
    test_set: String,
    label: String,
    video_no: usize,
    video: Video<'a>,
}

/// Per-video outcome for every requested method.
struct VideoOutcome {
    frames: usize,
    reports: BTreeMap<Method, Result<IdentificationReport>>,
    matched_pce: Option<f64>,
}

fn enroll_dir(
    dir: &Path,
    label: &str,
    policy: SamplingPolicy,
    options: &IdentifyOptions,
    rescale: Option<(usize, usize)>,
) -> Result<Fingerprint> {
    let fd = FrameDir::open(dir)?;
    if fd.is_empty() {
        return Err(Error::Empty(format!("no frames in {}", dir.display())));
    }
    let mut frames = fd.load_sampled(policy)?;
    if let Some((w, h)) = rescale {
        frames = frames.iter().map(|f| conform(f, w, h, true)).collect::<Result<_>>()?;
    }
    enroll(&frames, SamplingPolicy::every_frame(), &options.denoiser, label)
}

fn build_registry(
    cfg: &ExperimentConfig,
    cameras: &[SyntheticCamera],
    db: Option<&CameraRegistry>,
    rate: u32,
) -> Result<CameraRegistry> {
    let policy = SamplingPolicy::new(rate)?;
    match &cfg.source {
        ExperimentSource::Synthetic(setup) => {
            let fps = cameras
                .par_iter()
                .enumerate()
                .map(|(c, cam)| {
                    let frames = crate::imgio::sample_indices(setup.train_frames, policy)
                        .into_iter()
                        .map(|i| setup.training_frame(cam, cfg.seed, c, i))
                        .collect::<Result<Vec<_>>>()?;
                    enroll(
                        &frames,
                        SamplingPolicy::every_frame(),
                        &cfg.identify.denoiser,
                        cam.label.clone(),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            CameraRegistry::from_fingerprints(fps)
        }
        ExperimentSource::Directories(d) => match db {
            Some(reg) => Ok(reg.clone()),
            None => {
                let fps = d
                    .train
                    .par_iter()
                    .map(|(label, dir)| enroll_dir(dir, label, policy, &cfg.identify, d.rescale))
                    .collect::<Result<Vec<_>>>()?;
                CameraRegistry::from_fingerprints(fps)
            }
        },
    }
}

fn run_video(
    cfg: &ExperimentConfig,
    ident: &Identifier<'_>,
    case: &TestCase<'_>,
    policy: SamplingPolicy,
) -> VideoOutcome {
    let frames = match case.video.load_sampled(policy) {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            return VideoOutcome {
                frames: 0,
                reports: cfg
                    .methods
                    .iter()
                    .map(|&m| (m, Err(Error::InvalidConfig(msg.clone()))))
                    .collect(),
                matched_pce: None,
            };
        }
    };
    let truth = ident.registry().index_of(&case.label);
    let wants_vectors = cfg
        .methods
        .iter()
        .any(|m| matches!(m, Method::Voting | Method::PceVectors));
    let vectors = wants_vectors.then(|| ident.frame_pce_vectors(&frames, SamplingPolicy::every_frame()));

    let mut matched_pce = None;
    if let (Some(Ok(v)), Some(t)) = (&vectors, truth) {
        let dense: Vec<Vec<f64>> = v.iter().map(|x| x.iter().map(|s| s.unwrap_or(0.0)).collect()).collect();
        let (mean, _) = aggregate_pce_vectors(&dense, ident.registry().len(), false);
        matched_pce = Some(mean[t]);
    }

    let reports = cfg
        .methods
        .iter()
        .map(|&m| {
            let report = match (m, &vectors) {
                (Method::PatternCorrelation, _) => ident.pattern_correlation(&frames, SamplingPolicy::every_frame()),
                (_, Some(Err(e))) => Err(Error::Degenerate(e.to_string())),
                (Method::Voting, Some(Ok(v))) => ident.vote_from_vectors(v),
                (Method::PceVectors, Some(Ok(v))) => ident.pce_vectors_from_vectors(v),
                (_, None) => unreachable!("vectors are computed whenever vote or pcevec is requested"),
            };
            (m, report)
        })
        .collect();
    VideoOutcome {
        frames: frames.len(),
        reports,
        matched_pce,
    }
}

struct RateOutcome {
    rate: u32,
    cells: Vec<((Method, u32, String), CellOutcome)>,
    matched: Vec<((u32, String), f64)>,
    trials: Vec<TrialRecord>,
    training_frames: usize,
}

fn run_rate(
    cfg: &ExperimentConfig,
    cameras: &[SyntheticCamera],
    db: Option<&CameraRegistry>,
    cases: &[TestCase<'_>],
    test_sets: &[String],
    rate: u32,
) -> RateOutcome {
    let fail_all = |msg: String| RateOutcome {
        rate,
        cells: cfg
            .methods
            .iter()
            .flat_map(|&m| {
                let msg = &msg;
                test_sets
                    .iter()
                    .map(move |s| ((m, rate, s.clone()), CellOutcome::Failed(msg.clone())))
            })
            .collect(),
        matched: Vec::new(),
        trials: Vec::new(),
        training_frames: 0,
    };
    let policy = match SamplingPolicy::new(rate) {
        Ok(p) => p,
        Err(e) => return fail_all(e.to_string()),
    };
    let registry = match build_registry(cfg, cameras, db, rate) {
        Ok(r) => r,
        Err(e) => return fail_all(format!("enrollment failed: {e}")),
    };
    let ident = match Identifier::new(&registry, cfg.identify.clone()) {
        Ok(i) => i,
        Err(e) => return fail_all(e.to_string()),
    };
    let training_frames = registry
        .entries()
        .iter()
        .map(|(_, fp)| fp.frames_used() as usize)
        .max()
        .unwrap_or(0);
    let labels = registry.labels();

    let outcomes: Vec<VideoOutcome> = cases.par_iter().map(|c| run_video(cfg, &ident, c, policy)).collect();

    let mut cells = Vec::new();
    let mut trials = Vec::new();
    for &method in &cfg.methods {
        for set in test_sets {
            let mut pairs = Vec::new();
            let mut failure: Option<String> = None;
            for (case, outcome) in cases.iter().zip(&outcomes).filter(|(c, _)| &c.test_set == set) {
                let mut record = TrialRecord {
                    method,
                    rate,
                    test_set: set.clone(),
                    true_label: case.label.clone(),
                    video: case.video_no,
                    frames: outcome.frames,
                    predicted: None,
                    tie: false,
                    matched_score: f64::NAN,
                    best_other_score: f64::NAN,
                    error: None,
                };
                match &outcome.reports[&method] {
                    Ok(r) => {
                        if let Some(t) = registry.index_of(&case.label) {
                            record.matched_score = r.scores[t];
                            record.best_other_score = r
                                .scores
                                .iter()
                                .enumerate()
                                .filter(|(i, _)| *i != t)
                                .map(|(_, &s)| s)
                                .fold(f64::NEG_INFINITY, f64::max);
                        }
                        record.predicted = Some(r.predicted.clone());
                        record.tie = r.tie;
                        pairs.push((case.label.clone(), r.predicted.clone()));
                    }
                    Err(e) => {
                        record.error = Some(e.to_string());
                        failure.get_or_insert_with(|| format!("{} video {} ({}): {e}", case.label, case.video_no, set));
                    }
                }
                trials.push(record);
            }
            let outcome = match failure {
                Some(msg) => CellOutcome::Failed(msg),
                None => match confusion_matrix(&pairs, &labels).and_then(|cm| {
                    let q = success_error_rate(&cm)?.1;
                    Ok((cm, q))
                }) {
                    Ok((confusion, error_rate)) => CellOutcome::Done { confusion, error_rate },
                    Err(e) => CellOutcome::Failed(e.to_string()),
                },
            };
            cells.push(((method, rate, set.clone()), outcome));
        }
    }

    let mut matched = Vec::new();
    for set in test_sets {
        let values: Option<Vec<f64>> = cases
            .iter()
            .zip(&outcomes)
            .filter(|(c, _)| &c.test_set == set)
            .map(|(_, o)| o.matched_pce)
            .collect();
        if let Some(v) = values.filter(|v| !v.is_empty()) {
            matched.push(((rate, set.clone()), v.iter().sum::<f64>() / v.len() as f64));
        }
    }

    RateOutcome {
        rate,
        cells,
        matched,
        trials,
        training_frames,
    }
}

/// Runs every (method, rate, test set) cell.
///
/// Work is spread over the current rayon pool; all reductions are ordered, so the
/// report does not depend on the number of threads. A failing input marks only the
/// cells it feeds as failed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let test_sets = cfg.test_sets();

    let (cameras, db) = match &cfg.source {
        ExperimentSource::Synthetic(setup) => (
            (0..setup.cameras)
                .into_par_iter()
                .map(|c| setup.camera(cfg.seed, c))
                .collect::<Result<Vec<_>>>()?,
            None,
        ),
        ExperimentSource::Directories(d) => (Vec::new(), d.db.as_ref().map(CameraRegistry::load_dir).transpose()?),
    };

    let cases: Vec<TestCase<'_>> = match &cfg.source {
        ExperimentSource::Synthetic(setup) => setup
            .test_sets
            .iter()
            .flat_map(|&kind| {
                cameras.iter().enumerate().flat_map(move |(c, cam)| {
                    (0..setup.test_videos).map(move |v| TestCase {
                        test_set: kind.name().to_string(),
                        label: cam.label.clone(),
                        video_no: v,
                        video: Video::Synthetic {
                            setup,
                            cam,
                            seed: cfg.seed,
                            kind,
                            index: c,
                            video: v,
                        },
                    })
                })
            })
            .collect(),
        ExperimentSource::Directories(d) => {
            let mut counters: BTreeMap<(String, String), usize> = BTreeMap::new();
            d.videos
                .iter()
                .map(|v| {
                    let n = counters.entry((v.test_set.clone(), v.label.clone())).or_default();
                    *n += 1;
                    TestCase {
                        test_set: v.test_set.clone(),
                        label: v.label.clone(),
                        video_no: *n - 1,
                        video: Video::Dir(v.dir.clone()),
                    }
                })
                .collect()
        }
    };

    let outcomes: Vec<RateOutcome> = cfg
        .rates
        .par_iter()
        .map(|&rate| run_rate(cfg, &cameras, db.as_ref(), &cases, &test_sets, rate))
        .collect();

    let labels = match &cfg.source {
        ExperimentSource::Synthetic(_) => cameras.iter().map(|c| c.label.clone()).collect(),
        ExperimentSource::Directories(d) => match &db {
            Some(reg) => reg.labels(),
            None => d.train.iter().map(|(l, _)| l.clone()).collect(),
        },
    };

    let mut metadata = experiment_metadata(cfg, &test_sets, &cases);
    let mut report = ExperimentReport {
        methods: cfg.methods.clone(),
        rates: cfg.rates.clone(),
        test_sets,
        labels,
        cells: BTreeMap::new(),
        matched_pce: BTreeMap::new(),
        trials: Vec::new(),
        metadata: Vec::new(),
    };
    for o in outcomes {
        metadata.push((
            format!("training_frames_per_camera[1/{}]", o.rate),
            o.training_frames.to_string(),
        ));
        report.cells.extend(o.cells);
        report.matched_pce.extend(o.matched);
        report.trials.extend(o.trials);
    }
    report.metadata = metadata;
    Ok(report)
}

fn experiment_metadata(cfg: &ExperimentConfig, test_sets: &[String], cases: &[TestCase<'_>]) -> Vec<(String, String)> {
    let mut md: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| md.push((k.to_string(), v));
    put("seed", cfg.seed.to_string());
    put(
        "methods",
        cfg.methods
            .iter()
            .map(|m| m.short_name())
            .collect::<Vec<_>>()
            .join(", "),
    );
    put(
        "rates",
        cfg.rates
            .iter()
            .map(|r| format!("1/{r}"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    put("comparator", cfg.identify.comparator.name().to_string());
    put("normalize", cfg.identify.normalize.to_string());
    put("sigma", cfg.identify.denoiser.sigma0.to_string());
    put("levels", cfg.identify.denoiser.levels.to_string());
    put("exclusion", cfg.identify.exclusion.to_string());
    match &cfg.source {
        ExperimentSource::Synthetic(s) => {
            put("mode", "synthetic".into());
            put("cameras", s.cameras.to_string());
            put("size", format!("{}x{}", s.width, s.height));
            put("strength", s.strength.to_string());
            put("additive_sigma", s.additive_sigma.to_string());
            put("train_frames", s.train_frames.to_string());
            put("test_frames", s.test_frames.to_string());
            put("test_videos_per_camera_and_set", s.test_videos.to_string());
        }
        ExperimentSource::Directories(d) => {
            put("mode", "directories".into());
            if let Some((w, h)) = d.rescale {
                put("rescale", format!("{w}x{h}"));
            }
        }
    }
    let mut per_set: BTreeSet<(String, usize)> = BTreeSet::new();
    for set in test_sets {
        per_set.insert((set.clone(), cases.iter().filter(|c| &c.test_set == set).count()));
    }
    for (set, n) in per_set {
        put(&format!("test_videos[{set}]"), n.to_string());
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text, Path::new("/base")).unwrap()
    }

    #[test]
    fn parse_defaults_and_values() {
        let cfg = small_config("# nothing\n\n");
        assert_eq!(cfg, ExperimentConfig::default());

        let cfg = small_config(
            "seed = 9\nmethods = pattern, vote\nrates = 1/30, 10\ncomparator = pce\nnormalize = true\n\
             sigma = 2.5\nlevels = 3\nexclusion = 7\ncameras = 3\nsize = 64x48\nstrength = 0.01\n\
             additive_sigma = 4\ntrain_frames = 12\ntest_frames = 6\ntest_videos = 2\ntest_sets = flat, textured # both\n",
        );
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.methods, vec![Method::PatternCorrelation, Method::Voting]);
        assert_eq!(cfg.rates, vec![30, 10]);
        assert_eq!(cfg.identify.comparator, Comparator::Pce);
        assert!(cfg.identify.normalize);
        assert_eq!(cfg.identify.denoiser.sigma0, 2.5);
        assert_eq!(cfg.identify.denoiser.levels, 3);
        assert_eq!(cfg.identify.exclusion, 7);
        let ExperimentSource::Synthetic(s) = &cfg.source else {
            panic!()
        };
        assert_eq!((s.cameras, s.width, s.height, s.test_videos), (3, 64, 48, 2));
        assert_eq!(s.test_sets, vec![SceneKind::Flat, SceneKind::Textured]);
        assert_eq!(cfg.test_sets(), vec!["flat", "textured"]);
    }

    #[test]
    fn parse_directories() {
        let cfg = small_config(
            "mode = directories\ntrain = camA train/a\ntrain = camB /abs/b\n\
             video = T1 camA test/a1\nvideo = T1 camB test/b1\nvideo = T3 camA hd/a\nrescale = 640x360\n",
        );
        let ExperimentSource::Directories(d) = &cfg.source else {
            panic!()
        };
        assert_eq!(d.train[0], ("camA".to_string(), PathBuf::from("/base/train/a")));
        assert_eq!(d.train[1].1, PathBuf::from("/abs/b"));
        assert_eq!(d.videos.len(), 3);
        assert_eq!(d.rescale, Some((640, 360)));
        assert!(cfg.identify.rescale);
        assert_eq!(cfg.test_sets(), vec!["T1", "T3"]);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "bogus = 1",
            "no equals sign",
            "rates = 0",
            "methods = nope",
            "methods = ",
            "size = 12",
            "exclusion = 10",
            "mode = directories\nvideo = T camA d",
            "mode = directories\ntrain = a d\ndb = x\nvideo = T a d",
            "mode = directories\ncameras = 2\ntrain = a d\nvideo = T a d",
            "mode = directories\ntrain = a d\nvideo = T a",
            "mode = tape",
            "cameras = 0",
            "test_sets = hd",
            "sigma = -1",
        ] {
            assert!(ExperimentConfig::parse(bad, Path::new(".")).is_err(), "{bad}");
        }
    }

    #[test]
    fn single_cell_shape() {
        let cfg = small_config(
            "seed = 3\nmethods = pattern\nrates = 2\ncameras = 2\nsize = 48x48\ntrain_frames = 4\ntest_frames = 2\n",
        );
        let report = run_experiment(&cfg).unwrap();
        let table = report.table_csv(Method::PatternCorrelation);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "rate,textured");
        assert_eq!(lines[1].split(',').count(), 2);
        assert!(lines[1].starts_with("1/2,"));
        assert_eq!(report.cells.len(), 1);
        let confusion = report.confusion_csv(Method::PatternCorrelation, 2);
        assert_eq!(confusion.lines().count(), 3);
        assert!(report.matched_pce.is_empty());
    }

    #[test]
    fn missing_directory_fails_only_its_cells() {
        let dir = tempfile::tempdir().unwrap();
        let cam = simulate_camera("a", 32, 32, 0.05, 1.0, 1).unwrap();
        let train = dir.path().join("train");
        let good = dir.path().join("good");
        fs::create_dir_all(&train).unwrap();
        fs::create_dir_all(&good).unwrap();
        for i in 0..3u64 {
            let f = render_frame(&cam, &flat_scene(32, 32, 128.0, i), i).unwrap();
            crate::imgio::save_pgm(&f, train.join(format!("frame_{i:06}.pgm"))).unwrap();
            let t = render_frame(&cam, &textured_scene(32, 32, 4, i), 100 + i).unwrap();
            crate::imgio::save_pgm(&t, good.join(format!("frame_{i:06}.pgm"))).unwrap();
        }
        let text = format!(
            "mode = directories\nmethods = pattern, vote\nrates = 1\ntrain = a {}\nvideo = ok a {}\nvideo = broken a {}\n",
            train.display(),
            good.display(),
            dir.path().join("missing").display()
        );
        let cfg = ExperimentConfig::parse(&text, dir.path()).unwrap();
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.error_rate(Method::PatternCorrelation, 1, "ok"), Some(0.0));
        assert!(matches!(
            report.cell(Method::Voting, 1, "broken"),
            Some(CellOutcome::Failed(_))
        ));
        assert_eq!(report.mean_error(Method::Voting, 1), None);
        let out = dir.path().join("out");
        let files = report.write(&out).unwrap();
        assert!(files.iter().any(|p| p.ends_with("errors.csv")));
        let table = fs::read_to_string(out.join("table_vote.csv")).unwrap();
        assert_eq!(table, "rate,ok,broken\n1/1,0.00,error\n");
    }
}
