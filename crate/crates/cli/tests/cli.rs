use std::path::Path;
use std::process::{Command, Output};

use image::RgbImage;
use vidref_cli::visualize::{blend, outlined_panels, render_strip, strip_width, StripStyle, GROUND_TRUTH, PREDICTION};
use vidref_core::baselines::concat_sequence;
use vidref_core::{Image, Mask, PseudoVideoSequence};

fn vidref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidref")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path) {
    let out = vidref(&["synth", "--out", dir.to_str().unwrap(), "--classes", "3", "--per-class", "4", "--size", "48"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_exits_zero() {
    let out = vidref(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_exit_two() {
    assert_eq!(vidref(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vidref(&["segment", "--bogus"]).status.code(), Some(2));
}

#[test]
fn invalid_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"method": "cav", "ttga": {"step": 10}}"#).unwrap();
    synth(dir.path());
    let manifest = dir.path().join("manifest.json");
    let out = vidref(&["--config", cfg.to_str().unwrap(), "evaluate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`step`"));
}

#[test]
fn segment_cav_writes_mask_and_strip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let ep = dir.path().join("episode.json");
    let run = dir.path().join("run");
    let out = vidref(&[
        "segment", "--episode", ep.to_str().unwrap(), "--method", "cav", "--resolution", "48", "--out", run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = Mask::load(run.join("target_mask.png")).unwrap();
    assert_eq!(mask.dims(), (48, 48));
    let strip = image::open(run.join("strip.png")).unwrap().to_rgb8();
    assert_eq!((strip.width() as usize, strip.height() as usize), (strip_width(48, 11, 4), 48));
    assert_eq!(outlined_panels(&strip, 48, 11, 4), vec![0, 1, 2, 3, 4, 5]);

    // visualize re-renders the same strip from the saved run
    let again = dir.path().join("again.png");
    let out = vidref(&[
        "visualize", "--episode", ep.to_str().unwrap(), "--run", run.to_str().unwrap(), "--out", again.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(image::open(&again).unwrap().to_rgb8(), strip);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"method": "cav", "resolution": 48}"#).unwrap();
    let run = dir.path().join("run");
    let out = vidref(&[
        "--config", cfg.to_str().unwrap(), "segment", "--episode", dir.path().join("episode.json").to_str().unwrap(),
        "--method", "concat", "--out", run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "concat");
    assert_eq!(summary["frames"], 2);
}

#[test]
fn adapt_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let log = dir.path().join("log.jsonl");
    let out = vidref(&[
        "adapt", "--episode", dir.path().join("episode.json").to_str().unwrap(), "--steps", "7", "--resolution", "48",
        "--out", log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(log).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 7);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["step"], i);
        for key in ["l_aug", "l_cyc", "loss", "pseudo_fg_fraction"] {
            assert!(l[key].is_number(), "{key}");
        }
    }
}

#[test]
fn generate_sequence_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let seq_dir = dir.path().join("seq");
    let img = |n: &str| dir.path().join("images").join(n).to_str().unwrap().to_string();
    let out = vidref(&[
        "generate-sequence", "--ref", &img("c00_000.png"), "--target", &img("c00_001.png"), "--ref-mask",
        dir.path().join("masks/c00_000.png").to_str().unwrap(), "--n-frames", "3", "--preset", "fast", "--resolution",
        "48", "--out", seq_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (seq, _) = PseudoVideoSequence::read_dir(&seq_dir).unwrap();
    assert_eq!(seq.len(), 5);
    assert_eq!(seq.alphas(), &[0.0, 0.2, 0.5, 0.8, 1.0]);
    assert_eq!(seq.prompted_indices(), vec![0]);
}

#[test]
fn evaluate_is_byte_deterministic_and_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let manifest = dir.path().join("manifest.json");
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["--seed", "3", "evaluate", "--manifest", manifest.to_str().unwrap()];
        args.extend_from_slice(&["--episodes", "6", "--resolution", "48", "--workers", "2", "--out", out.to_str().unwrap()]);
        args.extend_from_slice(extra);
        vidref(&args)
    };
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(run(&a, &[]).status.success());
    assert!(run(&b, &[]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    // every episode fails when the tracker bridge is missing
    let cfg = dir.path().join("broken.json");
    std::fs::write(&cfg, r#"{"tracker": "deva", "tracker_command": ["/nonexistent/bridge"]}"#).unwrap();
    let out = vidref(&[
        "--config", cfg.to_str().unwrap(), "evaluate", "--manifest", manifest.to_str().unwrap(), "--episodes", "3",
        "--resolution", "48",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

fn solid(h: usize, w: usize, rgb: [f32; 3]) -> Image {
    Image::from_fn(h, w, 3, |_, _, c| rgb[c]).unwrap()
}

#[test]
fn concat_strip_has_two_panels_first_outlined() {
    let img = solid(10, 12, [0.5, 0.5, 0.5]);
    let mask = Mask::from_fn(10, 12, |y, x| y > 3 && x > 3);
    let seq = concat_sequence(&img, &mask, &img).unwrap();
    let style = StripStyle::default();
    let strip = render_strip(&seq, &[mask.clone(), mask.clone()], Some(&mask), None, &style);
    assert_eq!(strip.width() as usize, 12 * 2 + style.gutter);
    assert_eq!(outlined_panels(&strip, 12, 2, style.gutter), vec![0]);
}

#[test]
fn overlay_blend_exact_pixels() {
    // 0.2 * 255 = 51, 0.4 * 255 = 102, 0.6 * 255 = 153
    let frame = solid(16, 16, [0.2, 0.4, 0.6]);
    let gt = Mask::from_fn(16, 16, |y, x| (6..10).contains(&y) && (6..10).contains(&x));
    let pred = Mask::from_fn(16, 16, |y, x| (6..10).contains(&y) && (8..12).contains(&x));
    let seq = concat_sequence(&frame, &gt, &frame).unwrap();
    let strip: RgbImage = render_strip(&seq, &[gt.clone(), pred.clone()], Some(&gt), Some(&gt), &StripStyle::default());
    let x1 = 16 + StripStyle::default().gutter as u32;
    let base = [51u8, 102, 153];
    // reference panel: ground truth only, (51+200)/2 = 125.5 -> 126
    assert_eq!(strip.get_pixel(7, 7).0, [126, 51, 177]);
    assert_eq!(strip.get_pixel(7, 7).0, blend(base, GROUND_TRUTH, 0.5));
    assert_eq!(strip.get_pixel(4, 7).0, base);
    // target panel: ground truth under prediction where both apply
    assert_eq!(strip.get_pixel(x1 + 7, 7).0, blend(base, GROUND_TRUTH, 0.5));
    assert_eq!(strip.get_pixel(x1 + 9, 7).0, blend(blend(base, GROUND_TRUTH, 0.5), PREDICTION, 0.5));
    assert_eq!(strip.get_pixel(x1 + 11, 7).0, blend(base, PREDICTION, 0.5));
    assert_eq!(strip.get_pixel(x1 + 7, 12).0, base);
}

#[test]
fn strip_does_not_touch_inputs() {
    let frame = solid(8, 8, [0.1, 0.2, 0.3]);
    let mask = Mask::from_fn(8, 8, |y, _| y < 4);
    let seq = concat_sequence(&frame, &mask, &frame).unwrap();
    let before = seq.clone();
    let _ = render_strip(&seq, &[mask.clone(), mask.clone()], Some(&mask), Some(&mask), &StripStyle::default());
    assert_eq!(seq.frames(), before.frames());
}
