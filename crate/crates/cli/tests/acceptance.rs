//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! when any fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use tempfile::TempDir;

use layered_dr::bench::{benchmark_pipeline, run_benchmark, run_benchmark_with, BenchConfig, BenchReport};
use layered_dr::compositor::{compose, BlendParams};
use layered_dr::geometry::{Camera, Ray};
use layered_dr::pipeline::{default_grid, process_frame};
use layered_dr::raycast::{cast_ray, clip_to_grid, RaycastParams};
use layered_dr::scene::{benchmark_suite, marking_mask, render_rgbd, NoiseModel, Scene, Sequence};
use layered_dr::segmentation::BackgroundModel;
use layered_dr::tsdf::{fuse, truncate, FusionParams, GridSpec};
use layered_dr::{Vec3, VoxelGrid};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        name,
        pass,
        detail: detail.into(),
    }
}

fn report(o: &Outcome) {
    println!("{} {:<28} {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
}

// ---------------------------------------------------------------------------
// plane oracle

/// Optical-axis depth of the plane `z = h` at a continuous pixel position.
fn plane_depth(cam: &Camera<f64>, h: f64, pixel: [f64; 2]) -> Option<f64> {
    let ray = cam.ray_through_pixel(pixel).ok()?;
    let t = (h - ray.origin.z()) / ray.direction.z();
    (t > 0.0).then(|| cam.pose.transform(&ray.at(t)).z())
}

/// Analytic signed distance along the ray from `cam` through `p` to the plane.
fn plane_signed_distance(cam: &Camera<f64>, h: f64, p: &Vec3) -> Option<f64> {
    let c = cam.optical_center();
    let d = *p - c;
    let t = (h - c.z()) / d.z();
    (t > 0.0).then(|| (t - 1.0) * d.norm())
}

fn plane_oracle() -> Outcome {
    let name = "tsdf plane oracle";
    let suite = benchmark_suite();
    let seq = &suite[2];
    let rig = seq.rig.build().unwrap();
    let plane = seq.scene.background_only();
    let h = plane.plane.height;
    let views: Vec<_> = rig
        .sides
        .iter()
        .map(|c| render_rgbd::<f64>(&plane, c, 0, None).unwrap())
        .collect();
    // 2 mm voxels centered on the plane, so whole voxel layers sit inside the band
    let spec = GridSpec::cube(128, 0.002, Vec3::new(0.0, 0.0, h)).unwrap();
    let params = FusionParams::default();
    let start = Instant::now();
    let grid = fuse(&views, &spec, &params).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let [nx, ny, nz] = spec.dims;
    let (mut band, mut good) = (0usize, 0usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = spec.index(i, j, k);
                if grid.weight_sum(idx) != 2.0 {
                    continue;
                }
                let p = spec.voxel_center(i, j, k);
                let mut expected = 0.0;
                let mut tol = 1e-6;
                let mut in_band = true;
                for cam in &rig.sides {
                    let Some(s) = plane_signed_distance(cam, h, &p) else {
                        in_band = false;
                        break;
                    };
                    in_band &= s.abs() < params.delta_trunc;
                    let phi = truncate(s, params.delta_trunc);
                    expected += phi / 2.0;
                    // the depth image is sampled at one pixel: bound the change of
                    // φ over the pixel cell the voxel projects into
                    let proj = cam.project(&p).unwrap();
                    let range = (p - cam.optical_center()).norm();
                    let [u, v] = proj.pixel;
                    let (cu, cv) = ((u + 0.5).floor(), (v + 0.5).floor());
                    let mut spread: f64 = 0.0;
                    for (du, dv) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)] {
                        if let Some(d) = plane_depth(cam, h, [cu + du, cv + dv]) {
                            let q = truncate(range * d / proj.depth - range, params.delta_trunc);
                            spread = spread.max((q - phi).abs());
                        }
                    }
                    tol += spread / 2.0;
                }
                if !in_band {
                    continue;
                }
                band += 1;
                if (grid.tsdf(idx).unwrap() - expected).abs() <= tol {
                    good += 1;
                }
            }
        }
    }
    let frac = good as f64 / band.max(1) as f64;
    outcome(
        name,
        band > 1000 && frac >= 0.99 && elapsed < 30.0,
        format!(
            "{:.2}% of {band} band voxels match (need 99%), fusion {elapsed:.2} s at 128³ (limit 30 s)",
            100.0 * frac
        ),
    )
}

// ---------------------------------------------------------------------------
// raycast oracle

/// Fine linear march: first positive-to-negative sign change between
/// consecutive observed samples, located by linear interpolation.
fn fine_march(grid: &VoxelGrid, ray: &Ray<f64>, step: f64) -> Option<f64> {
    let (enter, exit) = clip_to_grid(grid, ray)?;
    let mut last: Option<(f64, f64)> = None;
    for k in 0usize.. {
        let t = enter + step * k as f64;
        if t > exit {
            return None;
        }
        match grid.field_at(&ray.at(t)) {
            None => last = None,
            Some(v) if v > 0.0 => last = Some((t, v)),
            Some(v) if v < 0.0 => {
                if let Some((ta, va)) = last {
                    return Some(ta + (t - ta) * va / (va - v));
                }
            }
            Some(_) => {}
        }
    }
    None
}

fn raycast_equivalence() -> Outcome {
    let name = "raycast oracle equivalence";
    let voxel = 0.512 / 64.0;
    // keep the truncation band and visibility tolerance the same size in voxels
    let scale = voxel / 0.002;
    let defaults = FusionParams::<f64>::default();
    let params = FusionParams {
        delta_trunc: defaults.delta_trunc * scale,
        eta: defaults.eta * scale,
        ..defaults
    };
    let spec = default_grid(64, voxel);
    let rc = RaycastParams::default();
    let noise = NoiseModel::default();
    let (mut pixels, mut hits, mut disagreements) = (0usize, 0usize, 0usize);
    let mut examples = Vec::new();
    for seq in benchmark_suite() {
        let rig = seq.rig.build().unwrap();
        let cam = rig.target;
        for f in 0..seq.live_frames() {
            let views = seq.live_views::<f64>(f, Some(&noise)).unwrap();
            let grid = fuse(&views, &spec, &params).unwrap();
            for y in 0..cam.height() {
                for x in 0..cam.width() {
                    let ray = cam.ray_through_pixel([x as f64, y as f64]).unwrap();
                    let fast = cast_ray(&grid, &ray, 0.0, &rc).map(|c| c.t);
                    let slow = fine_march(&grid, &ray, voxel / 16.0);
                    pixels += 1;
                    let agree = match (fast, slow) {
                        (Some(a), Some(b)) => {
                            hits += 1;
                            (a - b).abs() <= voxel / 8.0
                        }
                        (None, None) => true,
                        _ => false,
                    };
                    if !agree {
                        disagreements += 1;
                        if examples.len() < 3 {
                            examples.push(format!("seq {} frame {f} pixel ({x},{y}): {fast:?} vs {slow:?}", seq.id));
                        }
                    }
                }
            }
        }
    }
    outcome(
        name,
        disagreements == 0,
        if disagreements == 0 {
            format!("{pixels} rays over six scenes at 64³, {hits} hits, all within voxel/8")
        } else {
            format!("{disagreements} of {pixels} rays disagree, e.g. {}", examples.join("; "))
        },
    )
}

// ---------------------------------------------------------------------------
// benchmark-derived criteria

#[derive(Default)]
struct Observations {
    frames: usize,
    preset_failures: Vec<String>,
    /// Per sequence: marking pixels in the recovered region, and how many carry the marking color.
    markings: Vec<(usize, usize, usize)>,
    drift_model: Option<(Sequence, BackgroundModel<f64>)>,
}

const MARKING_SEQUENCES: [usize; 3] = [3, 4, 5];

fn observe(obs: &mut Observations, ctx: &layered_dr::bench::FrameContext) {
    obs.frames += 1;
    let l = &ctx.output.layers;
    let xray_only = compose(l, &BlendParams::new(0.0, 0.0, 1.0, 1.0).unwrap()).unwrap();
    if xray_only != l.xray.to_rgb() {
        obs.preset_failures
            .push(format!("seq {} frame {}: (0,0,1,1) differs from the x-ray", ctx.sequence.id, ctx.frame));
    }
    let fg_only = compose(l, &BlendParams::new(1.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
    let (w, h) = fg_only.dims();
    let mismatch = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let want = if l.mask.get(x, y) { l.fg_color.get(x, y) } else { l.bg_color.get(x, y) };
            fg_only.get(x, y) != want
        })
        .count();
    if mismatch > 0 {
        obs.preset_failures
            .push(format!("seq {} frame {}: (1,0,0,0) differs on {mismatch} pixels", ctx.sequence.id, ctx.frame));
    }

    if MARKING_SEQUENCES.contains(&ctx.sequence.id) {
        // far enough inside the outline that the pixel footprint stays on the ink
        let inset = 0.0015;
        let scene = &ctx.sequence.scene;
        let cam = &ctx.rig.target;
        let eval = marking_mask(scene, cam, inset).and(&l.mask).and(&l.bg_valid);
        let matched = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| eval.get(x, y))
            .filter(|&(x, y)| {
                let ray = cam.ray_through_pixel([x as f64, y as f64]).unwrap();
                let p = scene.plane_point(&ray).unwrap();
                let want = scene.plane.texture.marking_at(p.x(), p.y(), inset).unwrap().color();
                let c = l.bg_color.get(x, y);
                (0..3).all(|i| c[i].abs_diff(want[i]) <= 40)
            })
            .count();
        match obs.markings.iter_mut().find(|m| m.0 == ctx.sequence.id) {
            Some(m) => {
                m.1 += eval.count();
                m.2 += matched;
            }
            None => obs.markings.push((ctx.sequence.id, eval.count(), matched)),
        }
    }
    if ctx.sequence.id == 3 && obs.drift_model.is_none() {
        obs.drift_model = Some((ctx.sequence.clone(), ctx.model.clone()));
    }
}

fn mean_recovery(r: &BenchReport, id: usize) -> f64 {
    r.row(id).map_or(f64::NAN, |s| s.mean_recovery_pct)
}

fn recovery_trend(noisy: &BenchReport, bench_secs: f64, ideal: &BenchReport) -> Outcome {
    let m = |id| mean_recovery(noisy, id);
    let height_trend = m(3) > m(1) && m(4) > m(2);
    let lowest = (3..=5).all(|id| m(6) < m(id));
    let ideal_ok = [3, 4].iter().all(|&id| mean_recovery(ideal, id) >= 90.0);
    let failures: usize = noisy.sequences.iter().map(|s| s.failures.len()).sum();
    outcome(
        "background recovery trend",
        height_trend && lowest && ideal_ok && bench_secs < 300.0 && failures == 0,
        format!(
            "recovery 1..6 = [{}], noise-free 3/4 = {:.1}/{:.1} (need 90), bench {bench_secs:.0} s (limit 300), {failures} failed frames",
            (1..=6).map(|id| format!("{:.1}", m(id))).collect::<Vec<_>>().join(", "),
            mean_recovery(ideal, 3),
            mean_recovery(ideal, 4),
        ),
    )
}

fn background_fidelity(noisy: &BenchReport, obs: &Observations) -> Outcome {
    let maes: Vec<(usize, Option<f64>)> = MARKING_SEQUENCES
        .iter()
        .map(|&id| (id, noisy.row(id).and_then(|s| s.mean_bg_mae)))
        .collect();
    let mae_ok = maes.iter().all(|(_, m)| m.is_some_and(|m| m <= 10.0));
    let marks_ok = MARKING_SEQUENCES.iter().all(|id| {
        obs.markings
            .iter()
            .find(|m| m.0 == *id)
            .is_some_and(|&(_, n, ok)| n > 0 && ok as f64 >= 0.9 * n as f64)
    });
    outcome(
        "recovered background fidelity",
        mae_ok && marks_ok,
        format!(
            "MAE {} (limit 10); marking pixels matched {}",
            maes.iter()
                .map(|(id, m)| format!("{id}: {}", m.map_or("-".into(), |m| format!("{m:.2}"))))
                .collect::<Vec<_>>()
                .join(", "),
            obs.markings
                .iter()
                .map(|(id, n, ok)| format!("{id}: {ok}/{n}"))
                .collect::<Vec<_>>()
                .join(", "),
        ),
    )
}

fn drifted(scene: &Scene, dz: f64) -> Scene {
    let mut s = scene.background_only();
    s.plane.height += dz;
    s
}

fn segmentation_oracle(noisy: &BenchReport, obs: &Observations) -> Outcome {
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut checked = 0;
    for s in &noisy.sequences {
        for f in s.per_frame.iter().filter(|f| f.height >= 0.10 - 1e-9) {
            checked += 1;
            if worst.is_none_or(|w| f.mask_iou < w.2) {
                worst = Some((s.sequence, f.frame, f.mask_iou));
            }
        }
    }
    let iou_ok = checked > 0 && worst.is_some_and(|w| w.2 >= 0.90);

    // background moved 2 cm toward the cameras, under the 3 cm margin
    let (seq, model) = obs.drift_model.as_ref().expect("sequence 3 processed");
    let rig = seq.rig.build().unwrap();
    let scene = drifted(&seq.scene, 0.02);
    let noise = NoiseModel::default();
    let views: Vec<_> = rig
        .sides
        .iter()
        .map(|c| render_rgbd::<f64>(&scene, c, 10_000, Some(&noise)).unwrap())
        .collect();
    let xray = layered_dr::image::GrayImage::new(
        rig.target.width(),
        rig.target.height(),
        vec![0; rig.target.width() * rig.target.height()],
    )
    .unwrap();
    let out = process_frame(&views, &rig.target, model, xray, &benchmark_pipeline()).unwrap();
    let drift_fg = out.layers.mask.count();
    let (ws, wf, wi) = worst.unwrap_or((0, 0, f64::NAN));
    outcome(
        "segmentation oracle",
        iou_ok && drift_fg == 0,
        format!(
            "min IoU {wi:.3} (seq {ws} frame {wf}) over {checked} frames at >= 10 cm (need 0.90); 2 cm drift gives {drift_fg} foreground pixels"
        ),
    )
}

fn recovery_bound(reports: &[&BenchReport]) -> Outcome {
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut frames = 0;
    for r in reports {
        for s in &r.sequences {
            for f in &s.per_frame {
                frames += 1;
                let excess = f.recovery_pct - f.oracle_pct;
                if worst.is_none_or(|w| excess > w.2) {
                    worst = Some((s.sequence, f.frame, excess));
                }
            }
        }
    }
    let (ws, wf, we) = worst.unwrap_or((0, 0, f64::NAN));
    outcome(
        "recovery upper bound",
        frames > 0 && we <= 2.0,
        format!("largest excess over the visibility oracle {we:+.2} points (seq {ws} frame {wf}) over {frames} frames (limit 2)"),
    )
}

// ---------------------------------------------------------------------------
// determinism

fn run_pipeline(dir: &Path, manifest: &Path, threads: &str) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_layered-dr");
    let layers = dir.join("layers");
    let steps: [Vec<String>; 3] = [
        vec![
            "synthesize".into(),
            manifest.display().to_string(),
            "-o".into(),
            layers.display().to_string(),
            "--grid-dims".into(),
            "128".into(),
            "--voxel-size".into(),
            "0.004".into(),
        ],
        vec![
            "compose".into(),
            layers.display().to_string(),
            "--frame".into(),
            "1".into(),
            "--preset".into(),
            "three-layer".into(),
            "-o".into(),
            dir.join("three-layer.ppm").display().to_string(),
        ],
        vec![
            "compose".into(),
            layers.display().to_string(),
            "--frame".into(),
            "2".into(),
            "-o".into(),
            dir.join("custom.png").display().to_string(),
            "0.3".into(),
            "0.3".into(),
            "0.4".into(),
            "0.7".into(),
        ],
    ];
    for args in steps {
        let out = Command::new(bin)
            .env(layered_dr_cli::THREADS_ENV, threads)
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
    }
    Ok(())
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let name = "determinism";
    let tmp = TempDir::new().unwrap();
    let seq_dir = tmp.path().join("seq");
    let export = Command::new(env!("CARGO_BIN_EXE_layered-dr"))
        .args(["export", "5", "-o", seq_dir.to_str().unwrap(), "--init-frames", "2"])
        .output()
        .unwrap();
    if !export.status.success() {
        return outcome(name, false, String::from_utf8_lossy(&export.stderr).into_owned());
    }
    let manifest = seq_dir.join("manifest.json");
    let mut trees = Vec::new();
    for threads in ["1", "8"] {
        let dir = tmp.path().join(format!("threads{threads}"));
        if let Err(e) = run_pipeline(&dir, &manifest, threads) {
            return outcome(name, false, format!("run with {threads} threads failed: {e}"));
        }
        trees.push(tree(&dir));
    }
    let files = trees[0].len();
    let same = trees[0] == trees[1];
    let differing: Vec<_> = trees[0]
        .iter()
        .zip(&trees[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.clone())
        .collect();
    outcome(
        name,
        same && files > 0,
        if same {
            format!("{files} output files byte-identical with 1 and 8 threads")
        } else {
            format!("outputs differ: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters: this target has no named tests
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results = Vec::new();
    let mut step = |o: Outcome| {
        report(&o);
        results.push(o.pass);
    };
    step(plane_oracle());
    step(raycast_equivalence());

    let suite = benchmark_suite();
    let mut obs = Observations::default();
    let start = Instant::now();
    let noisy = run_benchmark_with(&suite, &BenchConfig::default(), |ctx| observe(&mut obs, ctx)).unwrap();
    let bench_secs = start.elapsed().as_secs_f64();
    let ideal_suite: Vec<_> = suite.iter().filter(|s| s.id == 3 || s.id == 4).cloned().collect();
    let ideal = run_benchmark(
        &ideal_suite,
        &BenchConfig {
            noise: None,
            ..BenchConfig::default()
        },
    )
    .unwrap();

    step(outcome(
        "blend preset fidelity",
        obs.frames > 0 && obs.preset_failures.is_empty(),
        if obs.preset_failures.is_empty() {
            format!("x-ray-only and foreground presets exact on {} frames", obs.frames)
        } else {
            obs.preset_failures.join("; ")
        },
    ));
    step(recovery_trend(&noisy, bench_secs, &ideal));
    step(background_fidelity(&noisy, &obs));
    step(segmentation_oracle(&noisy, &obs));
    step(recovery_bound(&[&noisy, &ideal]));
    step(determinism());

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
