use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use camset::matcher::{build_index, match_bidirectional, PointMatch, ScenePointCloud};
use camset::pipeline::io;
use camset::pipeline::{
    evaluate, generate_suite, localize, refine_registration, render_csv, render_text,
    set_correspondences, EvalReport, LocalizationResult, LocalizationStatus, LocalizeMode,
    PipelineConfig, QuerySet, ReportRow,
};
use camset::solver::ransac_estimate;
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

/// Camera-set localization against a scene point cloud.
#[derive(Debug, Parser)]
#[command(name = "camset", version)]
struct Cli {
    /// Overrides the synthetic-scene seed and the RANSAC seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with pipeline settings; missing fields keep their defaults.
    #[arg(long, global = true, env = "CAMSET_CONFIG")]
    config: Option<PathBuf>,
    /// -v for progress, -vv for per-query detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Auto,
    SingleImage,
    ImageSet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene, query sets and their ground truth.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        queries: usize,
    },
    /// Build the descriptor index of a scene and print its size.
    Index {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Bidirectional 3D-3D matching of every query set against the scene.
    Match {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Robust linear estimate of each set's similarity transform.
    Solve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nonlinear refinement of solved transforms; writes localization results.
    Refine {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        transforms: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the joint refinement of cameras and local points.
        #[arg(long)]
        transform_only: bool,
    },
    /// Full localization of every query set.
    Localize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Pose errors and registration rate of results against ground truth.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Writes the report as JSON; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Registration and error tables from evaluation reports.
    Report {
        /// DATASET:METHOD=PATH, one per evaluated run.
        #[arg(long = "eval", required = true)]
        evals: Vec<String>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config: PipelineConfig = match &cli.config {
        Some(path) => serde_json::from_reader(open(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.synthetic.seed = seed;
        config.localize.ransac.rng_seed = seed;
    }
    config.synthetic.validate()?;
    config.localize.validate()?;
    Ok(config)
}

fn read_scene(path: &Path) -> Result<ScenePointCloud> {
    io::read_scene(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_queries(path: &Path) -> Result<Vec<QuerySet>> {
    io::read_queries(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn matches_for<'a>(all: &'a io::QueryMatches, id: &str) -> &'a [PointMatch] {
    all.iter()
        .find(|(q, _)| q == id)
        .map_or(&[], |(_, m)| m.as_slice())
}

fn status_code(failed: usize) -> ExitCode {
    if failed > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Generate { out, queries } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (scene, suite) = generate_suite(&config.synthetic, queries)?;
            let sets: Vec<QuerySet> = suite.iter().map(|q| q.query.clone()).collect();
            let truths: Vec<_> = suite.into_iter().map(|q| q.truth).collect();
            let mut w = create(&out.join("scene.jsonl"))?;
            io::write_scene(&mut w, &scene)?;
            w.flush()?;
            let mut w = create(&out.join("queries.jsonl"))?;
            io::write_queries(&mut w, &sets)?;
            w.flush()?;
            let mut w = create(&out.join("truth.jsonl"))?;
            io::write_truths(&mut w, &truths)?;
            w.flush()?;
            println!(
                "{} scene points, {} descriptors, {} query sets -> {}",
                scene.points.len(),
                scene.descriptors.len(),
                sets.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Index { scene } => {
            let scene = read_scene(&scene)?;
            let index = build_index(&scene)?;
            println!(
                "{}",
                serde_json::json!({
                    "points": scene.points.len(),
                    "descriptors": index.len(),
                    "dimension": index.dim(),
                })
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Match {
            scene,
            queries,
            out,
        } => {
            let scene = read_scene(&scene)?;
            let index = build_index(&scene)?;
            let mut all = Vec::new();
            for q in read_queries(&queries)? {
                let m = match_bidirectional(
                    &q.model.local_points(),
                    &index,
                    config.localize.ratio_threshold,
                )?;
                info!("{}: {} matches", q.id, m.len());
                all.push((q.id, m));
            }
            let mut w = create(&out)?;
            io::write_matches(&mut w, &all)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve {
            scene,
            queries,
            matches,
            out,
        } => {
            let scene = read_scene(&scene)?;
            let matches = io::read_matches(open(&matches)?)?;
            let mut solved = Vec::new();
            let mut failed = 0;
            for q in read_queries(&queries)? {
                let corr = set_correspondences(&q.model, &scene, matches_for(&matches, &q.id))?;
                match ransac_estimate(&corr.rays, &config.localize.ransac) {
                    Ok((out, diag)) => {
                        info!(
                            "{}: {} / {} inliers, condition {:e}",
                            q.id,
                            out.num_inliers,
                            corr.rays.len(),
                            diag.condition_number
                        );
                        solved.push((q.id, out.model));
                    }
                    Err(e) => {
                        warn!("{}: {e}", q.id);
                        failed += 1;
                    }
                }
            }
            let mut w = create(&out)?;
            io::write_transforms(&mut w, &solved)?;
            w.flush()?;
            Ok(status_code(failed))
        }
        Command::Refine {
            scene,
            queries,
            matches,
            transforms,
            out,
            transform_only,
        } => {
            let scene = read_scene(&scene)?;
            let matches = io::read_matches(open(&matches)?)?;
            let transforms = io::read_transforms(open(&transforms)?)?;
            let mut localize_config = config.localize.clone();
            localize_config.joint_refinement &= !transform_only;
            let threshold = localize_config.ransac.inlier_angle_threshold;
            let mut results = Vec::new();
            for q in read_queries(&queries)? {
                let Some((_, initial)) = transforms.iter().find(|(id, _)| *id == q.id) else {
                    warn!("{}: no transform, skipped", q.id);
                    continue;
                };
                let found = matches_for(&matches, &q.id);
                let corr = set_correspondences(&q.model, &scene, found)?;
                let inliers: Vec<bool> = corr
                    .rays
                    .iter()
                    .map(|c| {
                        c.ray.angle_to(&initial.apply(&c.global_point.euclidean())) < threshold
                    })
                    .collect();
                let (transform, cameras) =
                    refine_registration(&q.model, &corr, &inliers, initial, &localize_config);
                let per_camera: Vec<_> = cameras.iter().map(|c| c.registered(&transform)).collect();
                results.push(LocalizationResult {
                    query_id: q.id.clone(),
                    status: LocalizationStatus::ImageSetSuccess,
                    target_pose_global: Some(per_camera[q.model.target_camera]),
                    transform: Some(transform),
                    inlier_count: inliers.iter().filter(|k| **k).count(),
                    match_count: found.len(),
                    per_camera_poses_global: per_camera,
                    failure: None,
                });
            }
            let mut w = create(&out)?;
            io::write_results(&mut w, &results)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Localize {
            scene,
            queries,
            out,
            mode,
        } => {
            let scene = read_scene(&scene)?;
            let index = build_index(&scene)?;
            let mut localize_config = config.localize.clone();
            if let Some(mode) = mode {
                localize_config.mode = match mode {
                    Mode::Auto => LocalizeMode::Auto,
                    Mode::SingleImage => LocalizeMode::SingleImage,
                    Mode::ImageSet => LocalizeMode::ImageSet,
                };
            }
            let mut results = Vec::new();
            for q in read_queries(&queries)? {
                let r = localize(&scene, &index, &q, &localize_config)?;
                match &r.failure {
                    Some(why) => warn!("{}: failed: {why}", r.query_id),
                    None => info!("{}: {:?}, {} inliers", r.query_id, r.status, r.inlier_count),
                }
                results.push(r);
            }
            let mut w = create(&out)?;
            io::write_results(&mut w, &results)?;
            w.flush()?;
            let failed = results.iter().filter(|r| !r.is_registered()).count();
            println!("{}/{} registered", results.len() - failed, results.len());
            Ok(status_code(failed))
        }
        Command::Evaluate {
            results,
            truth,
            out,
        } => {
            let results = io::read_results(open(&results)?)?;
            let truths = io::read_truths(open(&truth)?)?;
            let report = evaluate(&results, &truths)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    writeln!(w, "{json}")?;
                    w.flush()?;
                    let g = &report.registration;
                    println!("{}/{} registered", g.registered, g.total);
                }
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { evals, format, out } => {
            let mut rows = Vec::new();
            for spec in &evals {
                let Some((label, path)) = spec.split_once('=') else {
                    bail!("expected DATASET:METHOD=PATH, got {spec}");
                };
                let (dataset, method) = label.split_once(':').unwrap_or((label, "camset"));
                let report: EvalReport = serde_json::from_reader(open(Path::new(path))?)
                    .with_context(|| format!("parsing {path}"))?;
                rows.push(ReportRow {
                    dataset: dataset.to_string(),
                    method: method.to_string(),
                    report,
                });
            }
            let text = match format {
                Format::Text => render_text(&rows),
                Format::Csv => render_csv(&rows)?,
            };
            match out {
                Some(path) => std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
