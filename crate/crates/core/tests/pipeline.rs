use ndarray::Array2;
use prnu_core::eval::{flat_scene, render_frame, simulate_camera, textured_scene, SyntheticCamera, FLAT_SCENE_LEVELS};
use prnu_core::fingerprint::{enroll, save_fingerprint, Fingerprint};
use prnu_core::identify::{
    identify_pattern_correlation, identify_voting, CameraRegistry, Identifier, IdentifyOptions, Method,
};
use prnu_core::imgio::{save_pgm, FrameDir, FrameImage, SamplingPolicy};
use prnu_core::matching::ncc;
use prnu_core::Error;

const SIZE: usize = 256;

fn cameras(n: usize, size: usize) -> Vec<SyntheticCamera> {
    (0..n)
        .map(|c| simulate_camera(format!("cam{c}"), size, size, 0.05, 2.0, 100 + c as u64).unwrap())
        .collect()
}

fn training(cam: &SyntheticCamera, n: usize, seed: u64) -> Vec<FrameImage> {
    let (w, h) = cam.dims();
    (0..n)
        .map(|i| {
            let scene = flat_scene(w, h, FLAT_SCENE_LEVELS[i % FLAT_SCENE_LEVELS.len()], i as u64);
            render_frame(cam, &scene, seed * 1000 + i as u64).unwrap()
        })
        .collect()
}

fn test_video(cam: &SyntheticCamera, n: usize, seed: u64) -> Vec<FrameImage> {
    let (w, h) = cam.dims();
    (0..n)
        .map(|i| render_frame(cam, &textured_scene(w, h, seed, i as u64), seed * 7919 + i as u64).unwrap())
        .collect()
}

fn registry(cams: &[SyntheticCamera], train: usize) -> CameraRegistry {
    let cfg = IdentifyOptions::default().denoiser;
    let fps = cams
        .iter()
        .enumerate()
        .map(|(c, cam)| {
            enroll(
                &training(cam, train, c as u64),
                SamplingPolicy::every_frame(),
                &cfg,
                cam.label.clone(),
            )
            .unwrap()
        })
        .collect();
    CameraRegistry::from_fingerprints(fps).unwrap()
}

#[test]
fn voting_identifies_three_cameras() {
    let cams = cameras(3, SIZE);
    let reg = registry(&cams, 10);
    for (c, cam) in cams.iter().enumerate() {
        let video = test_video(cam, 5, 50 + c as u64);
        let r = identify_voting(&video, &reg, SamplingPolicy::every_frame(), &IdentifyOptions::default()).unwrap();
        assert_eq!(r.predicted, cam.label);
        assert_eq!(r.scores[c], 5.0, "{:?}", r.scores);
    }
}

#[test]
fn pattern_correlation_margin_on_five_cameras() {
    let cams = cameras(5, SIZE);
    let reg = registry(&cams, 20);
    let mut worst = f64::INFINITY;
    for (c, cam) in cams.iter().enumerate() {
        let video = test_video(cam, 10, 70 + c as u64);
        let r = identify_pattern_correlation(&video, &reg, SamplingPolicy::every_frame(), &IdentifyOptions::default())
            .unwrap();
        assert_eq!(r.predicted, cam.label);
        let best_other = r
            .scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != c)
            .map(|(_, s)| s.abs())
            .fold(0.0, f64::max);
        worst = worst.min(r.scores[c] / best_other);
    }
    assert!(worst >= 5.0, "margin {worst}");
}

#[test]
fn enrolled_fingerprint_tracks_planted_pattern() {
    let cam = &cameras(1, SIZE)[0];
    let fp = enroll(
        &training(cam, 20, 3),
        SamplingPolicy::every_frame(),
        &Default::default(),
        "cam0",
    )
    .unwrap();
    let corr = ncc(fp.to_f64().view(), cam.k.view()).unwrap();
    assert!(corr > 0.5, "ncc {corr}");
}

#[test]
fn frame_order_does_not_matter() {
    let cams = cameras(3, 64);
    let reg = registry(&cams, 8);
    let video = test_video(&cams[1], 6, 9);
    let mut reversed = video.clone();
    reversed.reverse();
    let opts = IdentifyOptions::default();
    let ident = Identifier::new(&reg, opts).unwrap();
    let policy = SamplingPolicy::new(2).unwrap();
    for method in Method::ALL {
        let a = ident.identify(method, &video, policy).unwrap();
        let b = ident.identify(method, &reversed, policy).unwrap();
        assert_eq!(a.predicted, b.predicted);
        assert_eq!(a.frames_processed, 3);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{method}: {x} vs {y}");
        }
    }
}

#[test]
fn registry_order_permutes_scores() {
    let cams = cameras(3, 64);
    let reg = registry(&cams, 8);
    let mut entries: Vec<Fingerprint> = reg.entries().iter().map(|(_, fp)| fp.clone()).collect();
    entries.rotate_left(1);
    let rotated = CameraRegistry::from_fingerprints(entries).unwrap();
    let video = test_video(&cams[2], 4, 11);
    let opts = IdentifyOptions::default();
    for method in Method::ALL {
        let a = Identifier::new(&reg, opts.clone())
            .unwrap()
            .identify(method, &video, SamplingPolicy::every_frame())
            .unwrap();
        let b = Identifier::new(&rotated, opts.clone())
            .unwrap()
            .identify(method, &video, SamplingPolicy::every_frame())
            .unwrap();
        assert_eq!(a.predicted, b.predicted);
        for (i, label) in a.labels.iter().enumerate() {
            let j = b.labels.iter().position(|l| l == label).unwrap();
            assert_eq!(a.scores[i], b.scores[j], "{method} {label}");
        }
    }
}

#[test]
fn files_on_disk_round_trip_through_identification() {
    let dir = tempfile::tempdir().unwrap();
    let cams = cameras(2, 64);
    let db = dir.path().join("db");
    std::fs::create_dir_all(&db).unwrap();
    for (c, cam) in cams.iter().enumerate() {
        let frames_dir = dir.path().join(format!("train_{c}"));
        std::fs::create_dir_all(&frames_dir).unwrap();
        for (i, f) in training(cam, 12, c as u64).iter().enumerate() {
            save_pgm(f, frames_dir.join(format!("frame_{i:06}.pgm"))).unwrap();
        }
        let frames = FrameDir::open(&frames_dir)
            .unwrap()
            .load_sampled(SamplingPolicy::every_frame())
            .unwrap();
        let fp = enroll(
            &frames,
            SamplingPolicy::every_frame(),
            &Default::default(),
            cam.label.clone(),
        )
        .unwrap();
        save_fingerprint(&fp, db.join(format!("{}.prnufp", cam.label))).unwrap();
    }
    let reg = CameraRegistry::load_dir(&db).unwrap();
    assert_eq!(reg.labels(), vec!["cam0", "cam1"]);
    let video = test_video(&cams[1], 4, 5);
    let r =
        identify_pattern_correlation(&video, &reg, SamplingPolicy::every_frame(), &IdentifyOptions::default()).unwrap();
    assert_eq!(r.predicted, "cam1");
    assert!(r.record_line().starts_with("cam1,pattern_correlation,"));
}

#[test]
fn larger_frames_need_rescale() {
    let cams = cameras(2, 32);
    let reg = registry(&cams, 6);
    let big: Vec<FrameImage> = (0..3)
        .map(|i| {
            FrameImage::new(
                Array2::from_shape_fn((64, 64), |(r, c)| ((r * 3 + c * 5 + i) % 200) as f64),
                i as u64,
            )
            .unwrap()
        })
        .collect();
    let opts = IdentifyOptions::default();
    let err = identify_voting(&big, &reg, SamplingPolicy::every_frame(), &opts).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }), "{err}");
    let opts = IdentifyOptions { rescale: true, ..opts };
    let r = identify_voting(&big, &reg, SamplingPolicy::every_frame(), &opts).unwrap();
    assert_eq!(r.frames_processed, 3);
}
