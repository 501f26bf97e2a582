use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jacfield::checkgrad;
use jacfield::fieldgrad::PoissonSystem;
use jacfield::mesh::normalize_unit_sphere;
use jacfield::metrics::{jacobian_deviation, self_intersection_ratio};
use jacfield::optim::{run, RunConfig};
use jacfield::raster::{rasterize, sample_cameras, write_pgm, Shading};
use jacfield::{Error, Mesh};

#[derive(Parser)]
#[command(name = "jacfield", version, about = "Jacobian-field mesh deformation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization described by a JSON config.
    Deform {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `optimizer.iterations=0`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render a mesh (normalized to the unit sphere) from sampled cameras to PGM files.
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 224)]
        resolution: usize,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 60.0)]
        fov: f64,
        #[arg(long, default_value = "renders")]
        out: PathBuf,
    },
    /// Print the self-intersection report of a mesh as JSON.
    Metrics {
        #[arg(long)]
        mesh: PathBuf,
        /// Undeformed source with the same connectivity; adds Jacobian deviation statistics.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suites on a mesh.
    Checkgrad {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit status 1: the inputs were unusable before any work started.
fn config_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::NonTriangleFace { .. }
            | Error::DegenerateFaces { .. }
            | Error::EmptyMesh
            | Error::ZeroExtent
            | Error::Disconnected { .. }
            | Error::Camera(_)
            | Error::PatchGrid(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Deform { config, overrides } => deform(config, &overrides),
        Command::Render {
            mesh,
            views,
            seed,
            resolution,
            radius,
            fov,
            out,
        } => render(mesh, views, seed, resolution, radius, fov, out),
        Command::Metrics { mesh, source } => metrics(mesh, source),
        Command::Checkgrad { mesh, seed } => check(mesh, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if config_failure(&e) { 1 } else { 2 })
        }
    }
}

fn deform(path: PathBuf, overrides: &[String]) -> jacfield::Result<ExitCode> {
    let mut config = RunConfig::load_with_overrides(&path, overrides)?;
    config.apply_env();
    config.validate()?;
    let outcome = match run(&config) {
        Ok(o) => o,
        // configuration was fine; anything from here on is a runtime abort
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let l = outcome.final_loss();
    println!(
        "loss: semantic {:e} vc {:e} identity {:e} total {:e}",
        l.semantic, l.view_consistency, l.identity_reg, l.total
    );
    let r = &outcome.intersections;
    println!(
        "self-intersection: {} of {} faces ({:.4}%)",
        r.intersecting_faces,
        r.total_faces,
        100.0 * r.ratio
    );
    println!("output: {}", outcome.output_dir.join("final.obj").display());
    Ok(ExitCode::SUCCESS)
}

fn render(
    mesh: PathBuf,
    views: usize,
    seed: u64,
    resolution: usize,
    radius: f64,
    fov: f64,
    out: PathBuf,
) -> jacfield::Result<ExitCode> {
    let (mesh, _) = normalize_unit_sphere(&Mesh::load_obj(&mesh)?)?;
    let cameras = sample_cameras(views, seed, radius, fov, resolution)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (i, cam) in cameras.iter().enumerate() {
        let buf = rasterize(mesh.faces(), mesh.vertices(), cam, &cam.headlight(), &Shading::default())?;
        let path = out.join(format!("view_{i:03}.pgm"));
        write_pgm(&path, resolution, &buf.image)?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics(mesh: PathBuf, source: Option<PathBuf>) -> jacfield::Result<ExitCode> {
    let mesh = Mesh::load_obj(&mesh)?;
    let report = self_intersection_ratio(mesh.faces(), mesh.vertices());
    let mut doc = serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(source) = source {
        let source = Mesh::load_obj(&source)?;
        if source.faces() != mesh.faces() {
            return Err(Error::Config("source and mesh have different connectivity".into()));
        }
        let deviation = jacobian_deviation(&PoissonSystem::new(&source)?, mesh.vertices())?;
        doc["jacobian_deviation"] = serde_json::to_value(&deviation).map_err(|e| Error::Config(e.to_string()))?;
    }
    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?);
    Ok(ExitCode::SUCCESS)
}

fn check(mesh: PathBuf, seed: u64) -> jacfield::Result<ExitCode> {
    let (mesh, _) = normalize_unit_sphere(&Mesh::load_obj(&mesh)?)?;
    let reports = checkgrad::all(&mesh, seed)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<24} trials {:>3}  max rel error {:.3e}  threshold {:.0e}  {}",
            r.name,
            r.trials,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "ok" } else { "FAILED" }
        );
        ok &= r.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
