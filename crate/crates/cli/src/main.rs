use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use terraforge::config::{reference_config, PipelineConfig};
use terraforge::elevation::{ElevationGrid, EditMode, ValidityMask, VirtualEdit};
use terraforge::pipeline;
use terraforge::telemetry::{stream_telemetry, UdpSender};
use terraforge::terrain::{generate, Heightfield, Robot, TerrainSpec, TerrainType};
use terraforge::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "terraforge", version, about = "Terrain, sensing, fusion and reward pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a curriculum terrain tile as an HFLD heightfield.
    Gen {
        #[arg(long, default_value = "lite3")]
        robot: Robot,
        #[arg(long, default_value = "tau1")]
        terrain: TerrainType,
        #[arg(long, default_value_t = 0)]
        level: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "terrain.hfld")]
        out: PathBuf,
        /// Also write a CSV copy next to the HFLD file.
        #[arg(long)]
        csv: bool,
    },
    /// Replay a trajectory through fusion, mapping and reward scoring.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        robot: Option<Robot>,
        #[arg(long)]
        terrain: Option<TerrainType>,
        #[arg(long)]
        level: Option<u8>,
    },
    /// Time the per-tick stages against the 5 ms budget.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Override a rectangle of a stored map with a fixed height.
    EditMap {
        /// HFLD map; a .hvld validity sidecar next to it is read and rewritten.
        #[arg(long)]
        map: PathBuf,
        /// x0,y0,x1,y1 in metres.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        region: Vec<f64>,
        #[arg(long, allow_hyphen_values = true)]
        height: f64,
        /// Write here instead of editing in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send the logs of a finished run as UDP telemetry.
    Stream {
        #[arg(long)]
        endpoint: String,
        /// Output directory of a previous `run`.
        #[arg(long, default_value = "out")]
        logs: PathBuf,
    },
    /// Print the reference configuration with every default.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_)
        | Error::SingularInnovation
        | Error::PoseScanDesync { .. }
        | Error::TimeRegression { .. } => EXIT_INVARIANT,
        _ => EXIT_USAGE,
    }
}

fn load_config(path: Option<&Path>) -> terraforge::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn sidecar(map: &Path) -> PathBuf {
    map.with_extension("hvld")
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> terraforge::Result<()>) -> terraforge::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn execute(cmd: Command) -> terraforge::Result<()> {
    match cmd {
        Command::Gen { robot, terrain, level, seed, out, csv } => {
            let mut spec = TerrainSpec::new(robot, terrain, level);
            spec.seed = seed;
            let param = spec.parameter()?;
            let hf = generate(&spec)?;
            write_file(&out, |w| hf.write_hfld(w))?;
            if csv {
                write_file(&out.with_extension("csv"), |w| hf.write_csv(w))?;
            }
            println!("{} {param:.3}", terrain.parameter_name());
            log::info!("wrote {}x{} heightfield to {}", hf.width, hf.height, out.display());
        }
        Command::Run { config, seed, out, robot, terrain, level } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = robot {
                cfg.terrain.robot = r;
            }
            if let Some(t) = terrain {
                cfg.terrain.terrain_type = t;
            }
            if let Some(l) = level {
                cfg.terrain.level = l;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let s = pipeline::run(&cfg, &dir)?;
            println!(
                "fused_poses {} policy_ticks {} scans {} max_position_error {:.4}",
                s.fused_poses, s.policy_ticks, s.scans, s.max_position_error
            );
            if cfg.output.udp_endpoint.is_some() {
                println!("telemetry sent {} dropped {}", s.telemetry_sent, s.telemetry_dropped);
            }
        }
        Command::Bench { config, iters, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = pipeline::bench(&cfg, iters)?;
            print!("{}", report.to_text());
            if !report.within_budget() {
                return Err(Error::Invariant(format!(
                    "tick p99 {:.1} us exceeds {:.0} us",
                    report.tick.p99_us, report.budget_us
                )));
            }
        }
        Command::EditMap { map, region, height, out } => {
            let region: [f64; 4] = region
                .try_into()
                .map_err(|_| Error::InvalidArgument("region needs x0,y0,x1,y1".into()))?;
            let edit = VirtualEdit { region, height, mode: EditMode::Override };
            edit.validate()?;
            let hf = Heightfield::read_hfld(BufReader::new(File::open(&map)?))?;
            let mask_path = sidecar(&map);
            let mask = if mask_path.exists() {
                Some(ValidityMask::read_hvld(BufReader::new(File::open(&mask_path)?))?)
            } else {
                None
            };
            let mut grid = ElevationGrid::from_heightfield(&hf, mask.as_ref())?;
            let n = grid.apply_edit(&edit)?;
            let target = out.unwrap_or(map);
            write_file(&target, |w| grid.to_heightfield().write_hfld(w))?;
            write_file(&sidecar(&target), |w| grid.validity_mask().write_hvld(w))?;
            println!("cells_affected {n}");
        }
        Command::Stream { endpoint, logs } => {
            let mut sender = UdpSender::connect(&endpoint)?;
            let msgs = pipeline::read_logs(&logs)?;
            let stats = stream_telemetry(&mut sender, msgs);
            println!("sent {} dropped {}", stats.sent, stats.dropped);
        }
        Command::Config { out } => match out {
            Some(p) => write_file(&p, |w| Ok(w.write_all(reference_config().as_bytes())?))?,
            None => print!("{}", reference_config()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TERRAFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
