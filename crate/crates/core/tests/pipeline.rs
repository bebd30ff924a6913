use lvamm::amm::{
    amm_to_bmode, bmode_to_amm, extract_clip, sample_scanline, synthesize_amm, EchoClip, Frame,
    FrameSize, Point, Scanline,
};
use lvamm::detector::{write_heatmaps, DetectorDescriptor};
use lvamm::formats::Phase;
use lvamm::heatmap::{make_targets, HeatmapConfig};
use lvamm::metrics::segment_lengths;
use lvamm::phantom::{ground_truth_landmarks, render_video, PhantomSpec};
use lvamm::pipeline::{measure_clip, ClipInfo, PipelineConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_clip(rng: &mut ChaCha8Rng, w: usize, h: usize, frames: usize) -> EchoClip {
    let frames = (0..frames)
        .map(|_| Frame::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect::<Vec<_>>();
    EchoClip {
        anchor_index: frames.len() / 2,
        frames,
        spacing_cm_per_px: 0.05,
        frame_interval_s: 0.02,
    }
}

// Four-corner interpolation written from scratch against the raw buffer.
fn corner_oracle(f: &Frame, x: f64, y: f64) -> f64 {
    let (w, h) = (f.width(), f.height());
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = if x0 + 1 < w { x0 + 1 } else { x0 };
    let y1 = if y0 + 1 < h { y0 + 1 } else { y0 };
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let px = |xx: usize, yy: usize| f.data()[yy * w + xx];
    px(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + px(x1, y0) * fx * (1.0 - fy)
        + px(x0, y1) * (1.0 - fx) * fy
        + px(x1, y1) * fx * fy
}

#[test]
fn amm_matches_corner_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let clip = noise_clip(&mut rng, 40, 30, 5);
        let sl = Scanline {
            p_start: Point::new(rng.random_range(0.0..39.0), rng.random_range(0.0..29.0)),
            p_end: Point::new(rng.random_range(0.0..39.0), rng.random_range(0.0..29.0)),
        };
        if sl.length() < 1.0 {
            continue;
        }
        let amm = synthesize_amm(&clip, &sl, 33).unwrap();
        for v in 0..33 {
            let t = v as f64 / 32.0;
            let x = sl.p_start.x + t * (sl.p_end.x - sl.p_start.x);
            let y = sl.p_start.y + t * (sl.p_end.y - sl.p_start.y);
            for (w, f) in clip.frames.iter().enumerate() {
                assert!((amm.get(v, w) - corner_oracle(f, x, y)).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn static_clip_gives_identical_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let one = noise_clip(&mut rng, 20, 20, 1);
    let video = vec![one.frames[0].clone(); 7];
    let clip = extract_clip(&video, 3, 9, 0.05, 0.02).unwrap();
    let sl = Scanline {
        p_start: Point::new(10.0, 0.0),
        p_end: Point::new(10.0, 19.0),
    };
    let amm = synthesize_amm(&clip, &sl, 20).unwrap();
    for w in 1..amm.w_count() {
        assert_eq!(amm.column(w), amm.column(0));
    }
}

fn noiseless_phantom() -> PhantomSpec {
    PhantomSpec {
        noise_sd: 0.0,
        ..PhantomSpec::default()
    }
}

fn vertical(spec: &PhantomSpec) -> Scanline {
    lvamm::formats::default_phantom_scanline(spec)
}

#[test]
fn baseline_recovers_noiseless_phantom_within_two_rows() {
    let spec = noiseless_phantom();
    let video = render_video(&spec).unwrap();
    let sl = vertical(&spec);
    let cfg = PipelineConfig::default();
    for anchor in [0, 12, 25, 37] {
        let clip = extract_clip(&video, anchor, cfg.w_count, 0.05, spec.frame_interval_s).unwrap();
        let info = ClipInfo {
            id: format!("f{anchor}"),
            phase: Phase::EndDiastole,
        };
        let m = measure_clip(&clip, &info, &sl, &cfg.baseline_descriptor(), &cfg).unwrap();
        let gt = ground_truth_landmarks(&spec, spec.frame_time(anchor), &sl).unwrap();
        let path = sample_scanline(&sl, cfg.v_count, FrameSize { width: 256, height: 256 }).unwrap();
        for k in 0..4 {
            let gt_row = bmode_to_amm(gt[k], &path, cfg.w_count).y;
            let got = m.report.landmarks_amm[k].y;
            assert!((got - gt_row).abs() <= 2.0, "frame {anchor} landmark {k}: {got} vs {gt_row}");
        }
        let gl = segment_lengths(&gt, 0.05).unwrap().as_array();
        for (k, l) in m.report.segment_lengths.as_array().iter().enumerate() {
            assert!((l - gl[k]).abs() <= 0.1);
        }
    }
}

#[test]
fn external_files_drive_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = noiseless_phantom();
    let video = render_video(&spec).unwrap();
    let clip = extract_clip(&video, 10, 16, 0.05, spec.frame_interval_s).unwrap();
    let cfg = PipelineConfig {
        w_count: 16,
        ..PipelineConfig::default()
    };
    let rows = [30.0, 70.3, 150.25, 200.0];
    let coords = rows.map(|y| lvamm::AmmPoint { x: 8.0, y });
    let stack = make_targets(
        &coords,
        &HeatmapConfig {
            sigma: 2.0,
            v_count: cfg.v_count,
            w_count: 16,
        },
    )
    .unwrap();
    write_heatmaps(&dir.path().join("clipA"), &stack).unwrap();
    let prefix = dir.path().join("{clip_id}").to_string_lossy().into_owned();
    let det = DetectorDescriptor::external("file", prefix);
    let info = ClipInfo {
        id: "clipA".into(),
        phase: Phase::EndSystole,
    };
    let r = measure_clip(&clip, &info, &vertical(&spec), &det, &cfg).unwrap().report;
    for k in 0..4 {
        assert!((r.landmarks_amm[k].y - rows[k]).abs() <= 0.5);
        assert_eq!(r.path_indices[k], rows[k].round() as usize);
    }
    assert_eq!(r.detector_id, "file");

    let missing = ClipInfo {
        id: "clipB".into(),
        phase: Phase::EndSystole,
    };
    let err = measure_clip(&clip, &missing, &vertical(&spec), &det, &cfg).unwrap_err();
    assert!(err.is_input_error());
    assert!(err.to_string().contains("clipB"));
}

#[test]
fn report_json_round_trips() {
    let spec = noiseless_phantom();
    let video = render_video(&spec).unwrap();
    let clip = extract_clip(&video, 20, 8, 0.05, spec.frame_interval_s).unwrap();
    let cfg = PipelineConfig::default();
    let info = ClipInfo {
        id: "x".into(),
        phase: Phase::EndDiastole,
    };
    let r = measure_clip(&clip, &info, &vertical(&spec), &cfg.baseline_descriptor(), &cfg)
        .unwrap()
        .report;
    let back: lvamm::MeasurementReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["phase"], "ED");
    assert!(v["coordinate_convention"].as_str().unwrap().contains("top-left"));
}

proptest! {
    #[test]
    fn round_trip_within_half_spacing(
        x0 in 0.0f64..255.0, y0 in 0.0f64..255.0,
        x1 in 0.0f64..255.0, y1 in 0.0f64..255.0,
        v_count in 2usize..400, t in 0.0f64..=1.0,
    ) {
        let sl = Scanline { p_start: Point::new(x0, y0), p_end: Point::new(x1, y1) };
        prop_assume!(sl.length() > 1.0 && (y1 - y0).abs() > 1e-6);
        let path = sample_scanline(&sl, v_count, FrameSize { width: 256, height: 256 }).unwrap();
        let c = sl.p_start.lerp(sl.p_end, t);
        let back = amm_to_bmode(bmode_to_amm(c, &path, 64), &path).unwrap();
        prop_assert!(back.distance(c) <= path.spacing / 2.0 + 1e-9);
        prop_assert!(sl.perpendicular_distance(back) <= 1e-9);
    }

    #[test]
    fn anchor_column_is_half_width(w_count in 1usize..40, anchor in 0usize..10) {
        let video = vec![Frame::filled(8, 8, 0.5); 10];
        let clip = extract_clip(&video, anchor, w_count, 0.05, 0.02).unwrap();
        prop_assert_eq!(clip.anchor_index, w_count / 2);
        prop_assert!(std::ptr::eq(clip.anchor_frame(), &clip.frames[w_count / 2]));
        let sl = Scanline { p_start: Point::new(1.0, 1.0), p_end: Point::new(6.0, 6.0) };
        let amm = synthesize_amm(&clip, &sl, 16).unwrap();
        prop_assert_eq!(amm.anchor_column, w_count / 2);
        prop_assert_eq!(amm.w_count(), w_count);
    }
}
