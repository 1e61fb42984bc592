//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Release build recommended: `cargo test --release -p ivbench --test acceptance`.

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use ivbench::compare::compare;
use ivbench::config::Pipeline;
use ivbench::harness::{
    consistency_violation, decode_stream, dsde_monotone_violation, encode_stream, regularizer_experiment, Experiment,
};
use ivbench::records::to_csv;
use ivbench::scaling::scaling_probe;
use ivbench::{ExperimentConfig, RdRecord};
use ivbench_core::camera::{
    convert_convention, euler_to_rotation, project, rotation_to_euler, unproject, CameraParams, Convention, Intrinsics,
    Pose, ViewFrame,
};
use ivbench_core::codec::{self, spectral_report, RatePoint};
use ivbench_core::container::{demux, mux, pack_atlases, stream_size, unpack_atlases};
use ivbench_core::dsde::{self, plane_depths, DepthMap};
use ivbench_core::dsgs;
use ivbench_core::image::RgbImage;
use ivbench_core::metrics::{bd_quality, bd_rate, interview_delta, psnr, ssim, QualityVector, RdCurve, ViewQuality};
use ivbench_core::rasterizer::{
    bin_tiles, composite, gsc1, prepare, project_gaussian, render, render_naive, render_naive_rows, Gaussian,
    GaussianScene, ProjectedSplat, RasterConfig,
};
use ivbench_core::scenegen::SceneSpec;
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn config(name: &str) -> Result<ExperimentConfig, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    ok(ExperimentConfig::load(&path))
}

/// Lazily generated datasets for the committed configs.
#[derive(Default)]
struct Fixtures {
    textured_plane: OnceCell<Experiment>,
    specular_sphere: OnceCell<Experiment>,
    noise_augmented: OnceCell<Experiment>,
    smoke: OnceCell<Experiment>,
}

impl Fixtures {
    fn get(&self, name: &str) -> Result<&Experiment, String> {
        let cell = match name {
            "textured_plane" => &self.textured_plane,
            "specular_sphere" => &self.specular_sphere,
            "noise_augmented" => &self.noise_augmented,
            "smoke" => &self.smoke,
            _ => return Err(format!("no fixture {name}")),
        };
        if cell.get().is_none() {
            let exp = ok(Experiment::new(config(name)?))?;
            let _ = cell.set(exp);
        }
        Ok(cell.get().unwrap())
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn run(n: u8, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(detail) => {
            println!("PASS {n:>2} {name} [{secs:.1} s]: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {n:>2} {name} [{secs:.1} s]: {detail}");
            false
        }
    }
}

fn camera(id: u32, w: u32, h: u32, position: [f64; 3]) -> CameraParams {
    CameraParams {
        id,
        intrinsics: Intrinsics::with_hfov(w, h, 60.0),
        pose: Pose {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            position,
            convention: Convention::Miv,
        },
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> Gaussian {
    let mu = Vector3::new(rng.gen_range(0.5..5.0), rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0));
    let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let mut g = Gaussian::isotropic(mu, 0.1, rng.gen_range(0.02..0.99), rgb, 0);
    g.rot = UnitQuaternion::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    g.log_scale = Vector3::new(rng.gen_range(-5.0..-1.5), rng.gen_range(-5.0..-1.5), rng.gen_range(-5.0..-1.5));
    g
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    let (fx, fy) = (rng.gen_range(0.01..0.5), rng.gen_range(0.01..0.5));
    let noise = rng.gen_range(0..64u8);
    for y in 0..h {
        for x in 0..w {
            let base = 127.0 + 100.0 * ((x as f64 * fx).sin() * (y as f64 * fy).cos());
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let n = if noise > 0 { rng.gen_range(0..noise) } else { 0 };
                *v = (base as u8).wrapping_add(n).wrapping_add(40 * c as u8);
            }
            img.put_pixel(x, y, px);
        }
    }
    img
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn c1_rasterizer_correctness() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (96usize, 64usize);
    let cam = camera(0, w as u32, h as u32, [0.0; 3]);
    let view = ok(ViewFrame::new(&cam))?;
    let bg = [0.1, 0.2, 0.3];
    let cfg = RasterConfig {
        background: bg,
        ..Default::default()
    };
    let pools: Vec<rayon::ThreadPool> = [1, 3]
        .iter()
        .map(|&n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap())
        .collect();
    let mut worst = 0f32;
    let mut max_splats = 0;
    for case in 0..50 {
        let n = rng.gen_range(0..=200);
        let scene = ok(GaussianScene::new((0..n).map(|_| random_gaussian(&mut rng)).collect(), 0))?;
        let frame = prepare(&scene, &view, &cfg);
        max_splats = max_splats.max(frame.splats.len());
        let naive = render_naive(&frame.splats, w, h, bg);
        let reference = composite(&frame.bins, &frame.splats, w, h, bg);
        for ts in [8, 16, 32, 64] {
            let out = composite(&bin_tiles(&frame.splats, w, h, ts), &frame.splats, w, h, bg);
            let d = max_abs_diff(&out.color, &naive.color).max(max_abs_diff(&out.alpha, &naive.alpha));
            worst = worst.max(d);
            ensure!(d <= 1e-6, "case {case}: tile {ts} differs from naive by {d:e}");
            ensure!(out == reference, "case {case}: tile {ts} not bitwise equal to tile 16");
        }
        for pool in &pools {
            let out = pool.install(|| composite(&frame.bins, &frame.splats, w, h, bg));
            ensure!(out == reference, "case {case}: {} workers change the output", pool.current_num_threads());
        }
    }

    // Single splat on the optical axis of a camera whose principal point is a pixel center.
    let cam = camera(0, 65, 49, [0.0; 3]);
    let view = ok(ViewFrame::new(&cam))?;
    let g = Gaussian::isotropic(Vector3::new(2.0, 0.0, 0.0), 0.05, 0.5, [0.2, 0.6, 0.9], 0);
    let fp = project_gaussian(&g, &view, &cfg).ok_or("single splat not visible")?;
    let color = [0.25f32, 0.5, 0.75];
    let s = ProjectedSplat::from_footprint(&fp, 1.0, color, 65, 49).ok_or("single splat culled")?;
    let out = composite(&bin_tiles(&[s], 65, 49, 16), &[s], 65, 49, bg);
    let i = 24 * 65 + 32;
    ensure!(s.mean == [32.0, 24.0], "splat mean {:?} is not the pixel center", s.mean);
    ensure!(out.color[i * 3..i * 3 + 3] == color, "center pixel {:?} != {:?}", &out.color[i * 3..i * 3 + 3], color);

    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!(
        "50 scenes (<= {max_splats} visible splats), max |tiled - naive| = {worst:e}, tiles 8/16/32/64 and 1/3 workers bitwise equal, center pixel exact, {secs:.2} s"
    ))
}

fn c2_rasterizer_speed() -> Check {
    // 50k splats spread through the frustum of a 960x540 camera, sized like scene surface splats.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gs: Vec<Gaussian> = (0..50_000)
        .map(|_| {
            let x: f64 = rng.gen_range(1.0..5.0);
            let mu = Vector3::new(x, rng.gen_range(-0.55..0.55) * x, rng.gen_range(-0.3..0.3) * x);
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            Gaussian::isotropic(mu, rng.gen_range(0.005..0.03), rng.gen_range(0.3..0.95), rgb, 0)
        })
        .collect();
    let scene = ok(GaussianScene::new(gs, 0))?;
    let cam = camera(0, 960, 540, [0.0; 3]);
    let cfg = RasterConfig::default();
    let view = ok(ViewFrame::new(&cam))?;
    let frame = prepare(&scene, &view, &cfg);
    let (w, h) = (960, 540);
    let mut tiled_s = f64::INFINITY;
    let mut tiled = None;
    for _ in 0..3 {
        let t = Instant::now();
        let bins = bin_tiles(&frame.splats, w, h, cfg.tile_size);
        let out = composite(&bins, &frame.splats, w, h, cfg.background);
        tiled_s = tiled_s.min(t.elapsed().as_secs_f64());
        tiled = Some(out);
    }
    let tiled = tiled.unwrap();
    let rows: Vec<usize> = (0..h).step_by(27).collect();
    let t = Instant::now();
    let naive_rows = render_naive_rows(&frame.splats, w, &rows, cfg.background);
    let naive_s = t.elapsed().as_secs_f64() * h as f64 / rows.len() as f64;
    for (k, &y) in rows.iter().enumerate() {
        let a = &naive_rows[k * w * 3..(k + 1) * w * 3];
        let b = &tiled.color[y * w * 3..(y + 1) * w * 3];
        ensure!(max_abs_diff(a, b) <= 1e-6, "row {y}: naive and tiled disagree");
    }
    let speedup = naive_s / tiled_s;
    ensure!(speedup >= 5.0, "speedup {speedup:.1}x (tiled {tiled_s:.3} s, naive {naive_s:.1} s)");
    Ok(format!(
        "{} of 50000 splats visible at 960x540: tiled {:.3} s, naive {:.1} s (extrapolated from {} rows), speedup {speedup:.0}x",
        frame.splats.len(),
        tiled_s,
        naive_s,
        rows.len()
    ))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    ((a - b + 180.0).rem_euclid(360.0) - 180.0).abs()
}

fn c3_camera_math() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut euler, mut ortho, mut conv, mut px_err, mut m_err, mut equiv) = (0f64, 0f64, 0f64, 0f64, 0f64, 0f64);
    for case in 0..1000 {
        let (yaw, pitch, roll) = (rng.gen_range(-179.999..180.0), rng.gen_range(-89.0..89.0), rng.gen_range(-179.999..180.0));
        let convention = if rng.gen_bool(0.5) { Convention::Miv } else { Convention::Cv };
        let r = ok(euler_to_rotation(yaw, pitch, roll, convention))?;
        let (y2, p2, r2) = ok(rotation_to_euler(&r, convention))?;
        euler = euler.max(angle_diff(yaw, y2)).max(angle_diff(pitch, p2)).max(angle_diff(roll, r2));
        ortho = ortho.max((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max()).max((r.determinant() - 1.0).abs());

        let (w, h) = (2 * rng.gen_range(16..960u32), 2 * rng.gen_range(16..540u32));
        let miv = CameraParams {
            id: case,
            intrinsics: Intrinsics {
                focal_x: rng.gen_range(100.0..2000.0),
                focal_y: rng.gen_range(100.0..2000.0),
                principal_x: rng.gen_range(0.0..w as f64),
                principal_y: rng.gen_range(0.0..h as f64),
                width: w,
                height: h,
            },
            pose: Pose {
                yaw_deg: yaw,
                pitch_deg: pitch,
                roll_deg: roll,
                position: [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                convention: Convention::Miv,
            },
        };
        let cv = ok(convert_convention(&miv, Convention::Cv))?;
        let back = ok(convert_convention(&cv, Convention::Miv))?;
        conv = conv
            .max(angle_diff(back.pose.yaw_deg, yaw))
            .max(angle_diff(back.pose.pitch_deg, pitch))
            .max(angle_diff(back.pose.roll_deg, roll));

        let pixel = Vector2::new(rng.gen_range(0.0..w as f64 - 1.0), rng.gen_range(0.0..h as f64 - 1.0));
        let depth = rng.gen_range(0.3..20.0);
        for cam in [&miv, &cv] {
            let p = ok(unproject(&pixel, depth, cam))?;
            let pd = ok(project(&p, cam))?.ok_or(format!("case {case}: unprojected point behind camera"))?;
            px_err = px_err.max((pd.pixel - pixel).norm());
            let q = ok(unproject(&pd.pixel, pd.depth, cam))?;
            m_err = m_err.max((q - p).norm()).max((pd.depth - depth).abs());
        }
        let p = ok(unproject(&pixel, depth, &miv))?;
        let a = ok(project(&p, &miv))?.ok_or("behind MIV camera")?;
        let b = ok(project(&p, &cv))?.ok_or("behind CV camera")?;
        equiv = equiv.max((a.pixel - b.pixel).norm());
    }
    ensure!(euler < 1e-9, "Euler round trip error {euler:e} deg");
    ensure!(ortho <= 1e-12, "orthonormality error {ortho:e}");
    ensure!(conv <= 1e-12, "MIV->CV->MIV angle error {conv:e} deg");
    ensure!(px_err < 1e-9, "project/unproject pixel error {px_err:e}");
    ensure!(m_err < 1e-9, "unproject/project error {m_err:e} m");
    ensure!(equiv < 1e-9, "MIV vs CV projection differs by {equiv:e} px");
    Ok(format!(
        "1000 cases: Euler {euler:.1e} deg, R^T R / det {ortho:.1e}, MIV<->CV {conv:.1e} deg, reprojection {px_err:.1e} px / {m_err:.1e} m, convention equivalence {equiv:.1e} px"
    ))
}

fn mutate(rng: &mut ChaCha8Rng, valid: &[u8]) -> Vec<u8> {
    let mut m = valid.to_vec();
    match rng.gen_range(0..5) {
        0 => {
            for _ in 0..rng.gen_range(1..8) {
                let i = rng.gen_range(0..m.len());
                m[i] ^= 1 << rng.gen_range(0..8);
            }
        }
        1 => m.truncate(rng.gen_range(0..m.len())),
        2 => {
            // Overwrite a length or header field with an extreme value.
            let i = rng.gen_range(0..m.len().min(64));
            let v: u8 = if rng.gen_bool(0.5) { 0xff } else { 0 };
            for b in m.iter_mut().skip(i).take(4) {
                *b = v;
            }
        }
        3 => {
            let extra: Vec<u8> = (0..rng.gen_range(1..64)).map(|_| rng.gen()).collect();
            let at = rng.gen_range(0..=m.len());
            m.splice(at..at, extra);
        }
        _ => m = (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect(),
    }
    m
}

fn c4_container() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut streams = Vec::new();
    for case in 0..100 {
        let n: usize = rng.gen_range(1..=9);
        let (w, h) = (2 * rng.gen_range(4..40), 2 * rng.gen_range(4..30));
        let views: Vec<(CameraParams, RgbImage)> = (0..n)
            .map(|i| (camera(i as u32, w as u32, h as u32, [0.0, 0.1 * i as f64, 0.0]), random_image(&mut rng, w, h)))
            .collect();
        let atlas_count = rng.gen_range(n.div_ceil(4)..=3);
        let (atlases, mut manifest) = ok(pack_atlases(&views, atlas_count))?;
        let images: Vec<RgbImage> = atlases.iter().map(|a| a.image.clone()).collect();
        let back = ok(unpack_atlases(&images, &manifest))?;
        ensure!(back == views, "case {case}: pack/unpack round trip differs");
        manifest.rate_point = RatePoint::ALL[rng.gen_range(0..5)];
        let payloads: Vec<Vec<u8>> = images
            .iter()
            .map(|a| ok(codec::encode(a, manifest.rate_point)).map(|c| c.payload))
            .collect::<Result<_, _>>()?;
        let bytes = ok(mux(&manifest, &payloads))?;
        let expected = stream_size(manifest.to_json().len(), payloads.iter().map(Vec::len));
        ensure!(bytes.len() == expected, "case {case}: stream is {} bytes, accounting says {expected}", bytes.len());
        let d = ok(demux(&bytes))?;
        ensure!(d.manifest == manifest && d.payloads == payloads, "case {case}: mux/demux round trip differs");
        ensure!(ok(mux(&d.manifest, &d.payloads))? == bytes, "case {case}: re-mux is not byte-identical");
        streams.push(bytes);
    }
    let mut panics = 0;
    let mut rejected = 0;
    let fuzz = 5000;
    for i in 0..fuzz {
        let m = mutate(&mut rng, &streams[i % streams.len()]);
        match catch_unwind(|| {
            if let Ok(d) = demux(&m) {
                for p in &d.payloads {
                    let _ = codec::decode_payload(p);
                }
                false
            } else {
                true
            }
        }) {
            Ok(true) => rejected += 1,
            Ok(false) => {}
            Err(_) => panics += 1,
        }
    }
    ensure!(panics == 0, "{panics} of {fuzz} fuzzed streams panicked");
    Ok(format!(
        "100 pack/unpack + mux/demux round trips bit-exact with exact size accounting; {fuzz} fuzzed streams, {rejected} rejected, 0 panics"
    ))
}

fn c5_codec(fx: &Fixtures) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..20 {
        let (w, h) = (8 * rng.gen_range(1..40), 8 * rng.gen_range(1..30));
        let img = random_image(&mut rng, w, h);
        let dec = ok(codec::decode(&ok(codec::encode(&img, RatePoint::Rp0))?))?;
        ensure!(dec == img, "case {case}: RP0 round trip is not bit-exact");
    }
    let mut lines = vec!["20 random images RP0 bit-exact".to_string()];
    let mut seen: Vec<SceneSpec> = Vec::new();
    for name in ["textured_plane", "noise_augmented", "specular_sphere", "smoke"] {
        let exp = fx.get(name)?;
        if seen.contains(&exp.dataset.spec) {
            continue;
        }
        seen.push(exp.dataset.spec.clone());
        let atlas_count = exp.config.atlas_counts[0];
        let atlases = ok(encode_stream(&exp.dataset.cameras, &exp.dataset.views, atlas_count, RatePoint::Rp0))?.atlases;
        let mut sizes = Vec::new();
        let mut ratios = Vec::new();
        for rp in RatePoint::ALL {
            let mut size = 0;
            let mut ratio = 0.0;
            for a in &atlases {
                let coded = ok(codec::encode(a, rp))?;
                size += coded.size_bytes();
                ratio += ok(spectral_report(a, &ok(codec::decode(&coded))?))?;
            }
            sizes.push(size);
            ratios.push(ratio / atlases.len() as f64);
        }
        ensure!(sizes[1..].windows(2).all(|w| w[1] < w[0]), "{name}: sizes {sizes:?} not strictly decreasing RP1..RP4");
        ensure!(ratios.iter().all(|&r| r <= 1.0), "{name}: spectral ratio above 1: {ratios:?}");
        ensure!(ratios[1..].windows(2).all(|w| w[1] <= w[0]), "{name}: spectral ratios {ratios:?} increase with qscale");
        let shrink = sizes[0] as f64 / sizes[1] as f64;
        if name == "textured_plane" {
            ensure!(shrink >= 5.0, "textured_plane RP0/RP1 = {shrink:.2}");
        }
        let spec: Vec<String> = ratios[1..].iter().map(|r| format!("{r:.3}")).collect();
        lines.push(format!("{name} sizes {sizes:?} (RP0/RP1 {shrink:.1}) spectral {}", spec.join("/")));
    }
    Ok(lines.join("; "))
}

fn c6_dsde_oracle(fx: &Fixtures) -> Check {
    let exp = fx.get("textured_plane")?;
    let d = &exp.dataset;
    let cfg = exp.config.dsde_config();
    let ins: Vec<(CameraParams, RgbImage)> = d.cameras.iter().copied().zip(d.views.iter().cloned()).collect();
    let others: Vec<_> = ins.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, v)| v.clone()).collect();
    let cv = ok(dsde::build_cost_volume((&ins[1].0, &ins[1].1), &others, cfg.planes, cfg.depth_range))?;
    let depth = dsde::estimate_depth(&cv);
    let planes = plane_depths(cfg.planes, cfg.depth_range.0, cfg.depth_range.1);
    let nearest = |z: f64| {
        (0..planes.len())
            .min_by(|&a, &b| (1.0 / planes[a] - 1.0 / z).abs().total_cmp(&(1.0 / planes[b] - 1.0 / z).abs()))
            .unwrap()
    };
    let target_plane = nearest(2.0);
    let raster = RasterConfig::default();
    let truth = ok(render(&d.scene, &ins[1].0, &raster))?;
    let textured: Vec<usize> = (0..truth.alpha.len()).filter(|&i| truth.alpha[i] >= 0.5).collect();
    let hits = textured.iter().filter(|&&i| nearest(depth.depth[i] as f64) == target_plane).count();
    let frac = hits as f64 / textured.len() as f64;
    ensure!(frac >= 0.95, "{:.2}% of textured pixels select plane {target_plane}", 100.0 * frac);

    let oracle = |cam: &CameraParams| -> Result<(RgbImage, DepthMap), String> {
        let r = ok(render(&d.scene, cam, &raster))?;
        Ok((r.to_rgb8(), DepthMap::from_depths(r.width, r.height, r.depth)))
    };
    let (c1, c2) = (d.cameras[1], d.cameras[2]);
    let mut mid = c1;
    mid.id = 100;
    for k in 0..3 {
        mid.pose.position[k] = 0.5 * (c1.pose.position[k] + c2.pose.position[k]);
    }
    let (i1, d1) = oracle(&c1)?;
    let (i2, d2) = oracle(&c2)?;
    let (reference, _) = oracle(&mid)?;
    let out = ok(dsde::dibr_synthesize(&[(c1, i1.clone(), d1), (c2, i2, d2)], &mid))?;
    let q = ok(psnr(&out, &reference))?;
    ensure!(q >= 30.0, "oracle DIBR at the mid-rig target: {q:.2} dB");

    let (_, d1) = oracle(&c1)?;
    let same = ok(dsde::dibr_synthesize(&[(c1, i1.clone(), d1)], &c1))?;
    let worst = same.as_raw().iter().zip(i1.as_raw()).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
    ensure!(worst <= 1, "identity DIBR differs by {worst}/255");
    Ok(format!(
        "{:.2}% of {} textured pixels select plane {target_plane} ({:.4} m); oracle DIBR mid-rig {q:.2} dB; identity max error {worst}/255",
        100.0 * frac,
        textured.len(),
        planes[target_plane]
    ))
}

fn c7_dsgs_contract(fx: &Fixtures) -> Check {
    let exp = fx.get("textured_plane")?;
    let stream = ok(exp.encode(exp.config.atlas_counts[0], RatePoint::Rp0))?;
    let views = ok(decode_stream(&stream.bytes))?.views;
    let cfg = exp.config.predictor_config();
    let (scene, trace) = ok(dsgs::predict(&views, &cfg))?;
    let residuals: Vec<f64> = trace.records.iter().map(|r| r.aggregate).collect();
    let counts: Vec<usize> = trace.records.iter().map(|r| r.splat_count).collect();
    ensure!(residuals.windows(2).all(|w| w[1] <= w[0]), "residual trace increases: {residuals:?}");
    let dims: Vec<_> = views.iter().map(|(_, v)| v.dims()).collect();
    let bound = cfg.splat_bound(&dims);
    ensure!(counts.iter().all(|&c| c <= bound), "splat counts {counts:?} exceed bound {bound}");
    ensure!(counts.windows(2).all(|w| w[1] <= w[0]), "splat count increases: {counts:?}");
    ensure!(counts.last() == Some(&scene.len()), "trace ends at {:?} splats, scene has {}", counts.last(), scene.len());
    let (again, trace2) = ok(dsgs::predict(&views, &cfg))?;
    ensure!(gsc1::encode(&again) == gsc1::encode(&scene) && trace2 == trace, "prediction is not deterministic");
    let mut worst = f64::INFINITY;
    for (cam, img) in &views {
        let r = ok(render(&scene, cam, &RasterConfig::default()))?.to_rgb8();
        worst = worst.min(ok(psnr(&r, img))?);
    }
    ensure!(worst >= 30.0, "transmitted-view re-render {worst:.2} dB");
    Ok(format!(
        "residual {:.6} -> {:.6} over {} iterations, splats {} -> {} (bound {bound}), byte-identical rerun, min transmitted re-render {worst:.2} dB",
        residuals[0],
        residuals.last().unwrap(),
        residuals.len() - 1,
        counts[0],
        counts.last().unwrap()
    ))
}

fn c8_metrics() -> Check {
    let a = RgbImage::new(32, 32);
    let b = RgbImage::from_raw(32, 32, vec![16; 32 * 32 * 3]).ok_or("bad image")?;
    let q = ok(psnr(&a, &b))?;
    let analytic = 20.0 * (255.0f64 / 16.0).log10();
    ensure!((q - analytic).abs() <= 1e-6 && (q - 24.05).abs() < 0.005, "uniform-16 PSNR {q}");
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(8), 40, 30);
    let s = ok(ssim(&img, &img))?;
    ensure!((s - 1.0).abs() <= 1e-12, "SSIM(identical) = {s}");
    let qv = QualityVector {
        views: [24.1, 30.5, 41.3]
            .iter()
            .enumerate()
            .map(|(i, &p)| ViewQuality {
                view_id: i as u32,
                psnr_db: p,
                ssim: 0.9,
            })
            .collect(),
    };
    let (dp, _) = ok(interview_delta(&qv))?;
    ensure!(dp == 17.2, "interview_delta = {dp:?}");

    let rates = [1e5, 2.3e5, 4.1e5, 9e5, 2e6];
    let quals = [30.0, 32.5, 34.0, 36.2, 37.1];
    let curve = |label: &str, f: &dyn Fn(f64, f64) -> (f64, f64)| {
        ok(RdCurve::new(label, rates.iter().zip(quals).map(|(&r, q)| f(r, q)).collect()))
    };
    let anchor = curve("a", &|r, q| (r, q))?;
    let shifted = curve("b", &|r, q| (r, q + 0.75))?;
    let halved = curve("c", &|r, q| (r / 2.0, q))?;
    let off = ok(bd_quality(&anchor, &shifted))?;
    ensure!((off - 0.75).abs() <= 1e-9, "BD-quality offset case {off}");
    let rate = ok(bd_rate(&anchor, &halved))?;
    ensure!((rate + 50.0).abs() <= 1e-6, "BD-rate halved-size case {rate}");

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut asym = 0f64;
    for _ in 0..200 {
        let mut make = |label: &str| {
            let mut r = rng.gen_range(1e4..1e5);
            let mut q = rng.gen_range(20.0..30.0);
            let pts: Vec<(f64, f64)> = (0..5)
                .map(|_| {
                    r *= rng.gen_range(1.3..3.0);
                    q += rng.gen_range(0.5..3.0);
                    (r, q)
                })
                .collect();
            ok(RdCurve::new(label, pts))
        };
        let (x, y) = (make("x")?, make("y")?);
        if let (Ok(f), Ok(g)) = (bd_quality(&x, &y), bd_quality(&y, &x)) {
            asym = asym.max((f + g).abs());
        }
        if let (Ok(f), Ok(g)) = (bd_rate(&x, &y), bd_rate(&y, &x)) {
            asym = asym.max(((1.0 + f / 100.0) * (1.0 + g / 100.0)).log10().abs());
        }
    }
    ensure!(asym <= 1e-9, "BD antisymmetry error {asym:e}");
    Ok(format!(
        "uniform-16 PSNR {q:.6} dB, SSIM(identical) {s}, interview_delta {dp}, BD offset {off:.12}, BD-rate {rate:.9}%, antisymmetry {asym:.1e}"
    ))
}

fn c9_protocol(fx: &Fixtures) -> Check {
    let exp = fx.get("smoke")?;
    let dirs = [ok(tempfile::tempdir())?, ok(tempfile::tempdir())?];
    let mut csvs = Vec::new();
    let all: Vec<u32> = exp.dataset.cameras.iter().map(|c| c.id).collect();
    for dir in &dirs {
        let out = ok(exp.sweep(Some(dir.path())))?;
        ensure!(out.failures.is_empty(), "sweep failures: {:?}", out.failures);
        let cfg = &exp.config;
        let expected = cfg.atlas_counts.len() * cfg.rate_points.len() * cfg.pipelines.len();
        ensure!(out.records.len() == expected, "{} records, expected {expected}", out.records.len());
        for (r, digest) in out.records.iter().zip(&out.consumed) {
            let key = (r.atlas_count, r.rate_point.index());
            ensure!(out.produced.get(&key) == Some(digest), "{} consumed a different stream at {key:?}", r.pipeline);
            ensure!(r.quality.view_ids() == all, "{} at {key:?} evaluated {:?}", r.pipeline, r.quality.view_ids());
            let path = dir.path().join(format!("a{}_rp{}.ivb", r.atlas_count, r.rate_point.index()));
            let len = ok(std::fs::metadata(&path))?.len();
            ensure!(r.size_bytes == len, "{key:?}: size {} but file is {len} bytes", r.size_bytes);
        }
        for key in out.produced.keys() {
            let users: BTreeSet<Pipeline> = out
                .records
                .iter()
                .filter(|r| (r.atlas_count, r.rate_point.index()) == *key)
                .map(|r| r.pipeline)
                .collect();
            ensure!(users.len() == cfg.pipelines.len(), "{key:?} decoded by {users:?} only");
        }
        let csv = to_csv(&out.records);
        let path = dir.path().join("sweep.csv");
        ok(std::fs::write(&path, &csv))?;
        csvs.push(ok(std::fs::read(&path))?);
    }
    ensure!(csvs[0] == csvs[1], "sweep CSV differs between runs");
    Ok(format!(
        "{} (atlas, rate point) streams each consumed by both pipelines with equal SHA-256; all {} cameras evaluated; sizes equal file lengths; CSV ({} bytes) identical across runs",
        exp.config.atlas_counts.len() * exp.config.rate_points.len(),
        all.len(),
        csvs[0].len()
    ))
}

fn c10_findings(fx: &Fixtures) -> Check {
    let report = ok(regularizer_experiment(&config("noise_augmented")?))?;
    let argmax = report.argmax();
    let floaters: Vec<usize> = report.rows.iter().map(|r| r.floaters).collect();
    let psnrs: Vec<String> = report.rows.iter().map(|r| format!("{:.2}", r.mean_psnr)).collect();
    let a_ok = matches!(argmax, RatePoint::Rp1 | RatePoint::Rp2) && report.floaters_drop() == Some(true);
    let a = format!("(a) DSGS PSNR {} argmax {argmax}, floaters {floaters:?}", psnrs.join("/"));

    let spec = fx.get("specular_sphere")?;
    let out = ok(spec.sweep(None))?;
    ensure!(out.failures.is_empty(), "specular sweep failures: {:?}", out.failures);
    let deltas = |p: Pipeline| -> String {
        out.records.iter().filter(|r| r.pipeline == p).map(|r| format!("{:.2}", r.delta_psnr)).collect::<Vec<_>>().join("/")
    };
    let b_violation = consistency_violation(&out.records);
    let b = format!("(b) delta-PSNR DSGS {} vs DSDE {}", deltas(Pipeline::Dsgs), deltas(Pipeline::Dsde));

    let tp = fx.get("textured_plane")?;
    let dsde_only = Experiment {
        config: ExperimentConfig {
            pipelines: vec![Pipeline::Dsde],
            ..tp.config.clone()
        },
        dataset: tp.dataset.clone(),
    };
    let tp_out = ok(dsde_only.sweep(None))?;
    ensure!(tp_out.failures.is_empty(), "textured_plane sweep failures: {:?}", tp_out.failures);
    let ssims = |rs: &[RdRecord]| -> String {
        rs.iter().filter(|r| r.pipeline == Pipeline::Dsde).map(|r| format!("{:.4}", r.mean_ssim)).collect::<Vec<_>>().join("/")
    };
    let c_violation = dsde_monotone_violation(&out.records).or_else(|| dsde_monotone_violation(&tp_out.records));
    let c = format!(
        "(c) DSDE SSIM specular_sphere {} textured_plane {}",
        ssims(&out.records),
        ssims(&tp_out.records)
    );
    let detail = format!("{a}; {b}; {c}");
    ensure!(a_ok, "{detail}; regularizer verdict: {}", report.verdict());
    if let Some(v) = b_violation {
        return Err(format!("{detail}; {v}"));
    }
    if let Some(v) = c_violation {
        return Err(format!("{detail}; {v}"));
    }
    Ok(detail)
}

fn table_record(pipeline: Pipeline, rp: RatePoint, kb: f64, psnr_db: f64, ssim: f64) -> RdRecord {
    let quality = QualityVector {
        views: vec![ViewQuality {
            view_id: 0,
            psnr_db,
            ssim,
        }],
    };
    RdRecord {
        pipeline,
        atlas_count: 1,
        rate_point: rp,
        size_bytes: (kb * 1000.0) as u64,
        mean_psnr: psnr_db,
        mean_ssim: ssim,
        quality,
        delta_psnr: 0.0,
        delta_ssim: 0.0,
        t_decode_ms: None,
        t_synth_ms: None,
    }
}

fn c11_report() -> Check {
    let sizes = [3107.0, 297.0, 184.0, 111.0, 59.0];
    let dsgs_psnr = [24.20, 24.41, 24.43, 24.36, 23.97];
    let dsgs_ssim = [0.925, 0.927, 0.926, 0.921, 0.907];
    let dsde_psnr = [17.87, 17.88, 17.86, 17.84, 17.82];
    let dsde_ssim = [0.860, 0.858, 0.856, 0.852, 0.843];
    let rows = |p: Pipeline, q: &[f64; 5], s: &[f64; 5]| -> Vec<RdRecord> {
        RatePoint::ALL.iter().enumerate().map(|(i, &rp)| table_record(p, rp, sizes[i], q[i], s[i])).collect()
    };
    let report = ok(compare(&rows(Pipeline::Dsde, &dsde_psnr, &dsde_ssim), &rows(Pipeline::Dsgs, &dsgs_psnr, &dsgs_ssim)))?;
    let one = report.per_atlas.iter().find(|a| a.atlas_count == 1).ok_or("no 1-atlas comparison")?;
    let p = one.column("test_psnr").ok_or("no test_psnr column")?;
    let s = one.column("test_ssim").ok_or("no test_ssim column")?;
    ensure!(p.best() == [2] && p.second() == [1], "PSNR marks best {:?} second {:?}", p.best(), p.second());
    ensure!(s.best() == [1], "SSIM best {:?}", s.best());
    Ok(format!(
        "DSGS PSNR best RP{} second RP{}, IV-SSIM best RP{}; BD-PSNR vs DSDE {:+.2} dB",
        p.best()[0],
        p.second()[0],
        s.best()[0],
        one.bd_psnr
    ))
}

fn c12_scaling() -> Check {
    let r = ok(scaling_probe(&config("scaling")?))?;
    let fmt = |v: &[(usize, f64)]| v.iter().map(|(n, ms)| format!("{n}:{ms:.0}ms")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "DSDE exponent {:.3} ({}), DSGS exponent {:.3} ({})",
        r.dsde_exponent,
        fmt(&r.dsde),
        r.dsgs_exponent,
        fmt(&r.dsgs)
    );
    let inside = |e: f64| (0.8..=1.3).contains(&e);
    ensure!(inside(r.dsde_exponent) && inside(r.dsgs_exponent), "{detail}");
    Ok(detail)
}

fn main() {
    // The libtest-style flags cargo passes (e.g. --nocapture) are ignored.
    let fx = Fixtures::default();
    let t = Instant::now();
    let results = [
        run(1, "rasterizer correctness", c1_rasterizer_correctness),
        run(2, "rasterizer performance", c2_rasterizer_speed),
        run(3, "camera math", c3_camera_math),
        run(4, "container", c4_container),
        run(5, "codec", || c5_codec(&fx)),
        run(6, "DSDE oracle", || c6_dsde_oracle(&fx)),
        run(7, "DSGS contract", || c7_dsgs_contract(&fx)),
        run(8, "metrics", c8_metrics),
        run(9, "protocol fidelity", || c9_protocol(&fx)),
        run(10, "directional findings", || c10_findings(&fx)),
        run(11, "report reproduction", c11_report),
        run(12, "scaling probe", c12_scaling),
    ];
    let failed = results.iter().filter(|r| !**r).count();
    println!("acceptance: {} passed, {failed} failed in {:.0} s", results.len() - failed, t.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
