use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use binpick_core::grasp_gen::{generate_database, write_db, GraspGenConfig};
use binpick_core::grasp_plan::write_plan_log;
use binpick_core::gripper::{GripperModel, GripperSpec};
use binpick_core::object::ObjectSpec;
use binpick_core::pose_buffer::{write_track_log, ValidatedPose};
use binpick_core::sim::metrics::RunMetrics;
use binpick_core::sim::{ablate, AblationAxis, AblationRow, SimConfig, Simulator};

#[derive(Parser)]
#[command(name = "binpick", version, about = "Bin-picking planning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its artifacts
    Simulate(SimulateArgs),
    /// Run both settings of an ablation axis over several seeds
    Ablate(AblateArgs),
    /// Print the metrics of a finished run or ablation
    Report(ReportArgs),
    /// Build a grasp database for a mesh
    GenGrasps(GenGraspsArgs),
    /// Print the default run configuration as TOML
    DefaultConfig,
}

#[derive(Parser)]
struct Overrides {
    /// run configuration (TOML); defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// iteration budget
    #[arg(long)]
    iterations: Option<u64>,
    /// simulated-time budget, seconds
    #[arg(long)]
    duration: Option<f64>,
    /// depth preset
    #[arg(long)]
    depth: Option<String>,
    /// number of objects in the bin
    #[arg(long)]
    fill: Option<usize>,
    /// existing grasp database
    #[arg(long)]
    grasp_db: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<SimConfig> {
        let mut c = match &self.config {
            Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => SimConfig::default(),
        };
        if let Some(n) = self.iterations {
            c.max_iterations = Some(n);
        }
        if let Some(d) = self.duration {
            c.duration = Some(d);
        }
        if let Some(d) = &self.depth {
            c.depth_preset = d.clone();
        }
        if let Some(n) = self.fill {
            c.fill_count = n;
        }
        if let Some(p) = &self.grasp_db {
            c.grasp_db = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Dump {
    Voxels,
    Depth,
    Tracks,
    Poses,
}

#[derive(Parser)]
struct SimulateArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    /// disable the pose buffer
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    out: PathBuf,
    /// per-iteration dumps written under `<out>/dumps`
    #[arg(long, value_enum, value_delimiter = ',')]
    dump: Vec<Dump>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Memory,
    Depth,
}

#[derive(Parser)]
struct AblateArgs {
    #[arg(long, value_enum)]
    axis: Axis,
    #[command(flatten)]
    overrides: Overrides,
    /// comma-separated seeds, or a range `a..b` (exclusive end)
    #[arg(long, default_value = "1..11")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
struct ReportArgs {
    /// output directory of `simulate` or `ablate`
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Parser)]
struct GenGraspsArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// gripper geometry (TOML or JSON); default gripper otherwise
    #[arg(long)]
    gripper: Option<PathBuf>,
    /// grasp generation settings (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// scale applied to mesh coordinates
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    class_id: u32,
    #[arg(long)]
    out: PathBuf,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    let seeds = s.split(',').map(|p| p.trim().parse::<u64>()).collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

#[derive(Serialize)]
struct PoseDump<'a> {
    iteration: u64,
    poses: &'a [ValidatedPose],
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = args.overrides.resolve()?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.no_memory {
        config.memory = false;
    }
    fs::create_dir_all(&args.out)?;
    let dumps = args.out.join("dumps");
    if !args.dump.is_empty() {
        fs::create_dir_all(&dumps)?;
    }
    let mut sim = Simulator::new(config)?;
    let mut plans = Vec::new();
    let mut poses = match args.dump.contains(&Dump::Poses) {
        true => Some(BufWriter::new(File::create(dumps.join("poses.jsonl"))?)),
        false => None,
    };
    let mut tracks = match args.dump.contains(&Dump::Tracks) {
        true => Some(BufWriter::new(File::create(dumps.join("tracks.jsonl"))?)),
        false => None,
    };
    while let Some(r) = sim.step() {
        let k = r.event.iteration;
        plans.push(r.event.plan.clone());
        if args.dump.contains(&Dump::Voxels) {
            r.scene.voxels.write_dump(BufWriter::new(File::create(dumps.join(format!("voxels_{k:05}.rle")))?))?;
        }
        if args.dump.contains(&Dump::Depth) {
            r.depth.write_pgm(BufWriter::new(File::create(dumps.join(format!("depth_{k:05}.pgm")))?))?;
        }
        if let Some(w) = poses.as_mut() {
            serde_json::to_writer(&mut *w, &PoseDump { iteration: k, poses: &r.validated })?;
            w.write_all(b"\n")?;
        }
        let log = sim.take_track_log();
        if let Some(w) = tracks.as_mut() {
            write_track_log(&log, &mut *w)?;
        }
    }
    for w in [poses.as_mut(), tracks.as_mut()].into_iter().flatten() {
        w.flush()?;
    }
    let out = sim.finish();
    out.write_dir(&args.out)?;
    write_plan_log(&plans, BufWriter::new(File::create(args.out.join("plans.jsonl"))?))?;
    let m = &out.metrics;
    eprintln!(
        "{} iterations, {} attempts, {} successes, {} early exits; MPPH {:.1} SR {} EER {}",
        m.iterations,
        m.attempts,
        m.successes,
        m.early_exits,
        m.mpph,
        fmt_rate(m.sr),
        fmt_rate(m.eer)
    );
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0))
}

fn ablation(args: AblateArgs) -> Result<()> {
    let base = args.overrides.resolve()?;
    let seeds = parse_seeds(&args.seeds)?;
    let axis = match args.axis {
        Axis::Memory => AblationAxis::Memory,
        Axis::Depth => AblationAxis::Depth,
    };
    let rows = ablate(&base, axis, &seeds)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("ablation.json"), serde_json::to_string_pretty(&AblationFile { axis, rows: rows.clone() })?)?;
    write_ablation_csv(&rows, File::create(args.out.join("ablation.csv"))?)?;
    write_ablation_csv(&rows, io::stdout().lock())?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct AblationFile {
    axis: AblationAxis,
    rows: Vec<AblationRow>,
}

fn write_ablation_csv(rows: &[AblationRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["setting", "seed", "iterations", "attempts", "successes", "early_exits", "elapsed_s", "mpph", "sr", "eer", "removed"])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.setting.clone(),
            r.seed.to_string(),
            m.iterations.to_string(),
            m.attempts.to_string(),
            m.successes.to_string(),
            m.early_exits.to_string(),
            format!("{:.3}", m.elapsed),
            format!("{:.3}", m.mpph),
            m.sr.map_or(String::new(), |v| format!("{v:.6}")),
            m.eer.map_or(String::new(), |v| format!("{v:.6}")),
            r.removed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SummaryFile {
    metrics: RunMetrics,
}

fn report(args: ReportArgs) -> Result<()> {
    let summary = args.input.join("metrics.json");
    let ablation = args.input.join("ablation.json");
    let stdout = io::stdout().lock();
    if summary.exists() {
        let text = fs::read_to_string(&summary)?;
        match args.format {
            Format::Json => println!("{text}"),
            Format::Csv => {
                let s: SummaryFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", summary.display()))?;
                s.metrics.write_csv(stdout)?;
            }
        }
    } else if ablation.exists() {
        let text = fs::read_to_string(&ablation)?;
        let a: AblationFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", ablation.display()))?;
        match args.format {
            Format::Json => println!("{text}"),
            Format::Csv => write_ablation_csv(&a.rows, stdout)?,
        }
    } else {
        bail!("{} holds neither metrics.json nor ablation.json", args.input.display());
    }
    Ok(())
}

fn load_gripper(path: Option<&Path>) -> Result<GripperModel> {
    let spec = match path {
        Some(p) => GripperSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => GripperSpec::default(),
    };
    Ok(GripperModel::new(spec)?)
}

fn gen_grasps(args: GenGraspsArgs) -> Result<()> {
    let gripper = load_gripper(args.gripper.as_deref())?;
    let config: GraspGenConfig = match &args.config {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => GraspGenConfig::default(),
    };
    let model = ObjectSpec::Mesh { path: args.mesh.clone(), scale: args.scale, symmetry: None }.build(args.class_id)?;
    let db = generate_database(&model, &gripper, &config);
    if db.budget_exhausted {
        log::warn!("sampling budget exhausted before reaching {} pairs", config.n_target);
    }
    write_db(&db, &args.out)?;
    eprintln!("{} candidates written to {}", db.candidates.len(), args.out.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Ablate(a) => ablation(a),
        Command::Report(a) => report(a),
        Command::GenGrasps(a) => gen_grasps(a),
        Command::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("5, 9,2").unwrap(), vec![5, 9, 2]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
