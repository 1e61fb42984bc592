use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivbench::compare::compare;
use ivbench::formats::{self, encode_pfm, encode_pgm, read_dataset, read_views, write_dataset, write_file, write_views};
use ivbench::harness::{decode_stream, encode_stream, regularizer_experiment, synthesize, Experiment, SweepOutput};
use ivbench::records::{from_csv, to_csv, RdRecord};
use ivbench::scaling::scaling_probe;
use ivbench::{ExperimentConfig, HarnessError, Pipeline, Result};
use ivbench_core::codec::RatePoint;
use ivbench_core::metrics::{evaluate, interview_delta};
use ivbench_core::rasterizer::gsc1;
use ivbench_core::scenegen::generate;

/// Decoder-side immersive video benchmark: depth estimation + DIBR against splat prediction.
#[derive(Parser)]
#[command(name = "ivbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset described by a config's [scene] table.
    GenScene {
        config: PathBuf,
        /// Output directory (default: <output_dir>/dataset).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Pack, encode and mux a dataset into one bitstream.
    Encode {
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        atlases: usize,
        #[arg(long, value_parser = parse_rp, default_value = "RP0")]
        rp: RatePoint,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Demux and decode a bitstream into its transmitted views.
    Decode {
        stream: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a decoder-side pipeline and render every camera of the stream.
    Synth {
        #[arg(long)]
        pipeline: Pipeline,
        stream: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Experiment config supplying pipeline parameters and the depth range.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score rendered views against reference views, matched by view id.
    Eval {
        rendered: PathBuf,
        truth: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the configured rate sweep; writes sweep.csv and the streams under output_dir.
    Sweep { config: PathBuf },
    /// Compare two sweep CSVs (BD deltas, inter-view deltas, column marks).
    Compare {
        anchor: PathBuf,
        test: PathBuf,
        /// Keep only this pipeline's rows of the anchor file.
        #[arg(long)]
        anchor_pipeline: Option<Pipeline>,
        /// Keep only this pipeline's rows of the test file.
        #[arg(long)]
        test_pipeline: Option<Pipeline>,
    },
    /// DSGS quality, spectral ratio and floaters across rate points on a noise_augmented scene.
    Regularizer { config: PathBuf },
    /// Fit time-growth exponents for the cost volume and the refinement loop.
    ProbeScaling { config: PathBuf },
}

fn parse_rp(s: &str) -> std::result::Result<RatePoint, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenScene { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = output.unwrap_or_else(|| cfg.output_dir.join("dataset"));
            let d = generate(&cfg.scene_spec())?;
            write_dataset(&dir, &d)?;
            println!("{} cameras, {} splats -> {}", d.cameras.len(), d.scene.len(), dir.display());
        }
        Command::Encode { dataset, atlases, rp, output } => {
            let d = read_dataset(&dataset)?;
            let stream = encode_stream(&d.manifest.cameras, &d.views, atlases, rp)?;
            write_file(&output, &stream.bytes)?;
            println!("{} bytes, {} atlas(es), {rp} -> {}", stream.bytes.len(), stream.atlases.len(), output.display());
        }
        Command::Decode { stream, output } => {
            let decoded = decode_stream(&formats::read_file(&stream)?)?;
            write_views(&output, decoded.views.iter().map(|(c, v)| (c.id, v)))?;
            write_file(&output.join("manifest.json"), &decoded.manifest.to_json())?;
            println!("{} view(s) -> {}", decoded.views.len(), output.display());
        }
        Command::Synth {
            pipeline,
            stream,
            output,
            config,
        } => synth(pipeline, &stream, &output, config.as_deref())?,
        Command::Eval { rendered, truth, output } => eval(&rendered, &truth, &output)?,
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let exp = Experiment::new(cfg.clone())?;
            let out = exp.sweep(Some(&cfg.output_dir.join("streams")))?;
            write_file(&cfg.output_dir.join("sweep.csv"), to_csv(&out.records).as_bytes())?;
            print_sweep(&out);
            check_sweep_gates(&cfg, &out.records)?;
            if !out.failures.is_empty() {
                return Err(HarnessError::Config(format!("{} sweep point(s) failed", out.failures.len())));
            }
        }
        Command::Compare {
            anchor,
            test,
            anchor_pipeline,
            test_pipeline,
        } => {
            let a = select(load_csv(&anchor)?, anchor_pipeline, &anchor)?;
            let t = select(load_csv(&test)?, test_pipeline, &test)?;
            print!("{}", compare(&a, &t)?.render());
        }
        Command::Regularizer { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = regularizer_experiment(&cfg)?;
            print!("{}", report.render());
            if cfg.gates.regularizer && !(report.lossy_peak() && report.floaters_drop() == Some(true)) {
                return Err(HarnessError::Assertion(report.verdict()));
            }
        }
        Command::ProbeScaling { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", scaling_probe(&cfg)?.render());
        }
    }
    Ok(())
}

fn synth(pipeline: Pipeline, stream: &Path, output: &Path, config: Option<&Path>) -> Result<()> {
    let decoded = decode_stream(&formats::read_file(stream)?)?;
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(Default::default()),
    };
    let targets = decoded.manifest.cameras.clone();
    let s = synthesize(pipeline, &decoded.views, &targets, &cfg)?;
    write_views(output, targets.iter().map(|c| c.id).zip(&s.images))?;
    if let Some(depths) = &s.depths {
        for ((cam, _), d) in decoded.views.iter().zip(depths) {
            write_file(&output.join(format!("depth_{:04}.pfm", cam.id)), &encode_pfm(d.width, d.height, &d.depth))?;
            let conf: Vec<u8> = d.conf.iter().map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            write_file(&output.join(format!("conf_{:04}.pgm", cam.id)), &encode_pgm(d.width, d.height, &conf))?;
        }
    }
    if let (Some(scene), Some(trace)) = (&s.scene, &s.trace) {
        write_file(&output.join("scene.gsc1"), &gsc1::encode(scene))?;
        let mut csv = String::from("iter");
        for i in 0..decoded.views.len() {
            csv.push_str(&format!(",residual_view_{i}"));
        }
        csv.push_str(",splats,accepted,rejected\n");
        for (k, r) in trace.records.iter().enumerate() {
            csv.push_str(&k.to_string());
            for v in &r.per_view {
                csv.push_str(&format!(",{v}"));
            }
            csv.push_str(&format!(",{},{},{}\n", r.splat_count, r.accepted, r.rejected));
        }
        write_file(&output.join("trace.csv"), csv.as_bytes())?;
    }
    println!("{pipeline}: {} view(s) -> {}", s.images.len(), output.display());
    Ok(())
}

fn eval(rendered: &Path, truth: &Path, output: &Path) -> Result<()> {
    let got = read_views(rendered, "view")?;
    let mut refs = read_views(truth, "truth")?;
    if refs.is_empty() {
        refs = read_views(truth, "view")?;
    }
    let mut ids = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (id, img) in got {
        if let Some((_, r)) = refs.iter().find(|(rid, _)| *rid == id) {
            ids.push(id);
            a.push(img);
            b.push(r.clone());
        }
    }
    if ids.is_empty() {
        return Err(HarnessError::Config("no matching view ids between the two directories".into()));
    }
    let q = evaluate(&ids, &a, &b)?;
    let (dp, ds) = interview_delta(&q)?;
    let mut csv = String::from("view_id,psnr_db,ssim\n");
    for v in &q.views {
        csv.push_str(&format!("{},{},{}\n", v.view_id, v.psnr_db, v.ssim));
    }
    write_file(output, csv.as_bytes())?;
    println!(
        "{} view(s): mean PSNR {:.3} dB, mean SSIM {:.4}, delta PSNR {dp:.3} dB, delta SSIM {ds:.4}",
        q.views.len(),
        q.mean_psnr(),
        q.mean_ssim()
    );
    Ok(())
}

fn load_csv(path: &Path) -> Result<Vec<RdRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    from_csv(&text).map_err(|e| match e {
        HarnessError::Parse { context, message } => HarnessError::parse(format!("{}: {context}", path.display()), message),
        other => other,
    })
}

fn select(records: Vec<RdRecord>, pipeline: Option<Pipeline>, path: &Path) -> Result<Vec<RdRecord>> {
    match pipeline {
        Some(p) => Ok(records.into_iter().filter(|r| r.pipeline == p).collect()),
        None => {
            let first = records.first().map(|r| r.pipeline);
            if records.iter().any(|r| Some(r.pipeline) != first) {
                return Err(HarnessError::Config(format!("{} mixes pipelines; pick one with --anchor-pipeline/--test-pipeline", path.display())));
            }
            Ok(records)
        }
    }
}

fn print_sweep(out: &SweepOutput) {
    print!("{}", ivbench::harness::REPORT_HEADER);
    println!("pipeline atlases rp   size_bytes  mean_psnr  mean_ssim  delta_psnr  delta_ssim");
    for r in &out.records {
        println!(
            "{:<8} {:>7} {:<4} {:>10}  {:>9.3}  {:>9.4}  {:>10.3}  {:>10.4}",
            r.pipeline.to_string(),
            r.atlas_count,
            r.rate_point.to_string(),
            r.size_bytes,
            r.mean_psnr,
            r.mean_ssim,
            r.delta_psnr,
            r.delta_ssim
        );
    }
    for f in &out.failures {
        println!("FAILED {} {} atlas(es) {}: {}", f.pipeline, f.atlas_count, f.rate_point, f.message);
    }
}

fn check_sweep_gates(cfg: &ExperimentConfig, records: &[RdRecord]) -> Result<()> {
    if cfg.gates.dsde_monotone {
        if let Some(msg) = ivbench::harness::dsde_monotone_violation(records) {
            return Err(HarnessError::Assertion(msg));
        }
    }
    if cfg.gates.consistency {
        if let Some(msg) = ivbench::harness::consistency_violation(records) {
            return Err(HarnessError::Assertion(msg));
        }
    }
    Ok(())
}
