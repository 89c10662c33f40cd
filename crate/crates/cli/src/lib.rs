//! `poeplan` command-line front end.
//!
//! Exit codes: 0 success, 2 I/O, 3 invalid input data or configuration,
//! 4 service failure (for example an occupied port). Malformed command lines
//! count as invalid input.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::ffi::OsString;

use clap::{Args, Parser, Subcommand};
use poeplan_core::experiment::{run_sweep_on, ExperimentPlan, SweepInputs};
use poeplan_core::feasibility::{compute_heatmap, HeatmapParams, Units};
use poeplan_core::grid::metaimage::{load_mask, save_metaimage};
use poeplan_core::phantom::{bundled, generate_airway, generate_lesion, PhantomSpec, BUNDLED_NAMES};
use poeplan_core::scene::lesion_metrics;
use poeplan_core::skeleton::extract_centerline;
use poeplan_core::{Error, VoxelGrid, DEFAULT_ERROR_DEG, DEFAULT_EXEMPT_FACTOR};
use poeplan_serve::{AppState, SceneSession};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "poeplan", version, about = "Biopsy point-of-entry planning")]
struct Cli {
    /// Worker threads for parallel stages; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Thin an airway mask to its centerline and write the points as JSON.
    Skeletonize {
        #[arg(long)]
        airways: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every centerline point against one lesion.
    Heatmap {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// Output directory for heatmap.csv and heatmap.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the placement and rotation study.
    Sweep {
        /// Experiment plan JSON; the bundled phantom plan when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        params: ParamArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write phantom airway and lesion volumes as MetaImage files.
    Phantom {
        /// Phantom spec JSON.
        #[arg(long, conflicts_with = "name", required_unless_present = "name")]
        config: Option<PathBuf>,
        /// A bundled phantom instead of a config file.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BUNDLED_NAMES))]
        name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for airway.mhd and lesion.mhd.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve one scene over HTTP. The bind address comes from POEPLAN_BIND.
    Serve {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Airway mask (.mhd).
    #[arg(long)]
    airways: PathBuf,
    /// Lesion mask (.mhd) on the airway grid.
    #[arg(long)]
    lesion: PathBuf,
}

#[derive(Args)]
struct ParamArgs {
    /// Cone half-angle, degrees [default: 5].
    #[arg(long)]
    error_deg: Option<f64>,
    /// mm3_per_mm or voxels_per_mm [default: mm3_per_mm].
    #[arg(long)]
    units: Option<Units>,
    /// Exit-neighborhood radius as a multiple of the local airway radius [default: 1.5].
    #[arg(long)]
    exempt_factor: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> HeatmapParams {
        HeatmapParams {
            error_deg: self.error_deg.unwrap_or(DEFAULT_ERROR_DEG),
            units: self.units.unwrap_or_default(),
            exempt_factor: self.exempt_factor.unwrap_or(DEFAULT_EXEMPT_FACTOR),
        }
    }

    fn apply_to(&self, plan: &mut ExperimentPlan) {
        if let Some(e) = self.error_deg {
            plan.error_deg = e;
        }
        if let Some(u) = self.units {
            plan.units = u;
        }
        if let Some(k) = self.exempt_factor {
            plan.exempt_factor = k;
        }
    }
}

enum Failure {
    Core(Error),
    Service(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_io() => 2,
            Failure::Core(_) => 3,
            Failure::Service(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => e.fmt(f),
            Failure::Service(m) => f.write_str(m),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. `--threads` sizes the global pool on first use only.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        // A pool that already exists is kept; outputs do not depend on it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Skeletonize { airways, out } => skeletonize(&airways, &out),
        Command::Heatmap { scene, params, out } => heatmap(&scene, params.resolve(), &out),
        Command::Sweep {
            config,
            seed,
            params,
            out,
        } => sweep(config.as_deref(), seed, &params, &out),
        Command::Phantom { config, name, seed, out } => phantom(config.as_deref(), name.as_deref(), seed, &out),
        Command::Serve { scene, params, port } => serve(&scene, params.resolve(), port),
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Parses a JSON config, reporting failures with the offending field path.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Failure::Core(Error::Config {
            path,
            reason: e.into_inner().to_string(),
        })
    })
}

fn skeletonize(airways: &Path, out: &Path) -> Result<(), Failure> {
    let airway = load_mask(airways)?;
    let airway = pad_if_touching(airway, None).0;
    let skeleton = extract_centerline(&airway)?;
    write(out, skeleton.to_json()?)?;
    println!(
        "{} centerline points, {} branch points",
        skeleton.len(),
        skeleton.branch_points().len()
    );
    Ok(())
}

/// Pads by one voxel when the airway touches the grid faces so it can be
/// thinned; world coordinates are unchanged.
fn pad_if_touching(airway: VoxelGrid, lesion: Option<VoxelGrid>) -> (VoxelGrid, Option<VoxelGrid>) {
    if airway.touches_boundary() {
        (airway.padded(1), lesion.map(|l| l.padded(1)))
    } else {
        (airway, lesion)
    }
}

fn load_scene(scene: &SceneArgs) -> Result<(VoxelGrid, VoxelGrid), Failure> {
    let airway = load_mask(&scene.airways)?;
    let lesion = load_mask(&scene.lesion)?;
    airway.geometry().ensure_same(lesion.geometry(), "airway vs lesion")?;
    let (airway, lesion) = pad_if_touching(airway, Some(lesion));
    Ok((airway, lesion.expect("lesion kept")))
}

fn heatmap(scene: &SceneArgs, params: HeatmapParams, out: &Path) -> Result<(), Failure> {
    params.validate()?;
    let (airway, lesion) = load_scene(scene)?;
    let skeleton = extract_centerline(&airway)?;
    let lesion = lesion_metrics(&lesion)?;
    let result = compute_heatmap(&skeleton, &lesion, &airway, &params)?;
    create_dir(out)?;
    write(&out.join("heatmap.csv"), result.to_csv_string()?)?;
    write(
        &out.join("heatmap.json"),
        serde_json::to_string_pretty(&result).map_err(Error::from)?,
    )?;
    println!("valid POEs: {} of {}", result.valid_count(), result.samples.len());
    Ok(())
}

fn sweep(config: Option<&Path>, seed: Option<u64>, params: &ParamArgs, out: &Path) -> Result<(), Failure> {
    let (mut plan, base) = match config {
        Some(path) => (
            read_config::<ExperimentPlan>(path)?,
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        ),
        None => (ExperimentPlan::bundled_default(), PathBuf::from(".")),
    };
    if let Some(s) = seed {
        plan.seed = s;
    }
    params.apply_to(&mut plan);
    plan.validate()?;
    let inputs = SweepInputs::load(&plan, &base)?;
    let result = run_sweep_on(&plan, &inputs, |done, total| {
        eprint!("\rscene {done}/{total}");
        if done == total {
            eprintln!();
        }
    })?;
    result.write_outputs(out)?;
    println!("{} scenes, {} POEs, outputs in {}", result.scenes.len(), result.poe_count, out.display());
    Ok(())
}

fn phantom(config: Option<&Path>, name: Option<&str>, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut spec: PhantomSpec = match (config, name) {
        (Some(path), _) => read_config(path)?,
        (None, Some(name)) => bundled(name).expect("name checked by the parser"),
        (None, None) => unreachable!("required by the parser"),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    create_dir(out)?;
    let mut written = Vec::new();
    if !spec.segments.is_empty() {
        let path = out.join("airway.mhd");
        save_metaimage(&generate_airway(&spec)?, &path)?;
        written.push(path);
    }
    if spec.lesion.is_some() {
        let path = out.join("lesion.mhd");
        save_metaimage(&generate_lesion(&spec)?, &path)?;
        written.push(path);
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn serve(scene: &SceneArgs, params: HeatmapParams, port: u16) -> Result<(), Failure> {
    params.validate()?;
    let host = std::env::var("POEPLAN_BIND").unwrap_or_else(|_| "127.0.0.1".into());
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .or_else(|_| format!("[{host}]:{port}").parse())
        .map_err(|_| Failure::Service(format!("invalid bind address `{host}`")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Service(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::Service(format!("cannot bind {addr}: {e}")))?;
        println!("listening on http://{}", listener.local_addr().map_err(|e| Failure::Service(e.to_string()))?);
        let state = AppState::loading();
        let (airway, lesion) = load_scene(scene)?;
        let loader = state.clone();
        let load = tokio::task::spawn_blocking(move || -> Result<(), Error> {
            loader.install(SceneSession::new(airway, &lesion, params)?);
            Ok(())
        });
        let server = tokio::spawn(poeplan_serve::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        }));
        load.await.map_err(|e| Failure::Service(e.to_string()))??;
        println!("scene loaded");
        server
            .await
            .map_err(|e| Failure::Service(e.to_string()))?
            .map_err(|e| Failure::Service(e.to_string()))
    })
}
