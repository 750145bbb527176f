use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use distg::bench::{bench_cost_volume, to_csv, BenchConfig};
use distg::engine::load_checkpoint;
use distg::error::Error;
use distg::gradcheck::{network_suite, op_suite, Tolerances};
use distg::io::{self, BitDepth, GridLayout};
use distg::metrics::{MetricReport, BADPIX_EPSILONS};
use distg::nets::config::{parse_levels, KeyValues};
use distg::nets::{DistgAsr, DistgAsrConfig, DistgDisp, DistgDispConfig, DistgSsr, DistgSsrConfig, Network};
use distg::refocus::{refocus, Focus};
use distg::{Element, LightField};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

const OP_TOLERANCE: f64 = 1e-4;
const NETWORK_TOLERANCE: f64 = 1e-3;

/// Light-field toolkit: layout conversion, super-resolution, angular
/// synthesis, disparity estimation and refocusing.
#[derive(Parser, Debug)]
#[command(name = "distg", version, about)]
struct Cli {
    /// Checkpoint to load instead of seeded random weights.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,

    /// key=value network configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for weight initialisation and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Compute in 64-bit floating point.
    #[arg(long = "f64", global = true)]
    double: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite a light-field image between SAI-grid and MacPI layouts.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Output layout; defaults to the other layout from the input's.
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
        /// Output bit depth; defaults to the input's.
        #[arg(long, value_parser = ["8", "16"])]
        depth: Option<String>,
    },
    /// Spatial super-resolution.
    Ssr {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_parser = parse_scale)]
        scale: usize,
    },
    /// Angular super-resolution from corner views.
    Asr {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        in_ang: usize,
        #[arg(long)]
        out_ang: usize,
    },
    /// Centre-view disparity estimation, written as PFM.
    Disp { input: PathBuf, output: PathBuf },
    /// Shift-and-average refocusing.
    Refocus {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        focus: FocusArgs,
    },
    /// Time DS-AFE against shift-and-concat cost-volume construction.
    Bench(BenchArgs),
    /// Finite-difference gradient checks of every op and each network.
    Gradcheck {
        /// Parameter entries spot-checked per network.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Quality metrics of an estimate against ground truth.
    Metrics {
        estimate: PathBuf,
        reference: PathBuf,
        /// Compare PFM disparity maps instead of light-field images.
        #[arg(long)]
        disparity: bool,
        /// BadPix thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = BADPIX_EPSILONS)]
        eps: Vec<f64>,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct FocusArgs {
    /// Disparity of the plane to focus on.
    #[arg(long, allow_negative_numbers = true)]
    focus: Option<f64>,
    /// PFM disparity map for region refocusing.
    #[arg(long)]
    focus_map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 9)]
    ang_res: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// `lo..hi` or a comma list.
    #[arg(long, default_value = "-4..4", allow_hyphen_values = true)]
    levels: String,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Sai,
    Macpi,
}

impl From<LayoutArg> for GridLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Sai => GridLayout::SaiGrid,
            LayoutArg::Macpi => GridLayout::MacPI,
        }
    }
}

fn parse_scale(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "4" => Ok(4),
        _ => Err(format!("scale must be 2 or 4, got {s}")),
    }
}

fn read_config(path: Option<&Path>) -> Result<KeyValues, Error> {
    match path {
        Some(p) => KeyValues::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(KeyValues::default()),
    }
}

/// Sets `key` from a command-line value, refusing to silently override a
/// different value from the config file.
fn pin(kv: &mut KeyValues, key: &str, value: usize) -> Result<(), Error> {
    match kv.get::<usize>(key)? {
        Some(v) if v != value => Err(Error::Config(format!(
            "config sets {key}={v} but the input requires {value}"
        ))),
        _ => {
            kv.insert(key, value);
            Ok(())
        }
    }
}

fn load_weights<T: Element, N: Network<T>>(net: &N, path: Option<&Path>) -> Result<(), Error> {
    match path {
        Some(p) => load_checkpoint(net.store(), p),
        None => Ok(()),
    }
}

fn run<T: Element>(cli: &Cli) -> Result<(), Error> {
    let weights = cli.weights.as_deref();
    match &cli.command {
        Command::Convert {
            input,
            output,
            layout,
            depth,
        } => {
            let (lf, side, in_depth) = io::load_light_field::<T>(input)?;
            let layout = match layout {
                Some(l) => (*l).into(),
                None if side.layout == GridLayout::SaiGrid => GridLayout::MacPI,
                None => GridLayout::SaiGrid,
            };
            let depth = match depth.as_deref() {
                Some("16") => BitDepth::Sixteen,
                Some(_) => BitDepth::Eight,
                None => in_depth,
            };
            io::save_light_field(output, &lf, layout, depth)
        }
        Command::Ssr { input, output, scale } => {
            let (lf, side, depth) = io::load_light_field::<T>(input)?;
            let mut kv = read_config(cli.config.as_deref())?;
            pin(&mut kv, "ang_res", side.ang_res)?;
            pin(&mut kv, "upscale", *scale)?;
            let net = DistgSsr::<T>::new(DistgSsrConfig::from_kv(&kv)?, cli.seed)?;
            load_weights(&net, weights)?;
            io::save_light_field(output, &net.super_resolve(&lf)?, GridLayout::SaiGrid, depth)
        }
        Command::Asr {
            input,
            output,
            in_ang,
            out_ang,
        } => {
            let (lf, side, depth) = io::load_light_field::<T>(input)?;
            if side.ang_res != *in_ang {
                return Err(Error::Config(format!(
                    "--in-ang {in_ang} but the input has {0}x{0} views",
                    side.ang_res
                )));
            }
            let mut kv = read_config(cli.config.as_deref())?;
            pin(&mut kv, "ang_res_in", *in_ang)?;
            pin(&mut kv, "ang_res_out", *out_ang)?;
            let net = DistgAsr::<T>::new(DistgAsrConfig::from_kv(&kv)?, cli.seed)?;
            load_weights(&net, weights)?;
            io::save_light_field(output, &net.reconstruct(&lf)?, GridLayout::SaiGrid, depth)
        }
        Command::Disp { input, output } => {
            let (lf, side, _) = io::load_light_field::<T>(input)?;
            let mut kv = read_config(cli.config.as_deref())?;
            pin(&mut kv, "ang_res", side.ang_res)?;
            let net = DistgDisp::<T>::new(DistgDispConfig::from_kv(&kv)?, cli.seed)?;
            load_weights(&net, weights)?;
            io::save_pfm(output, &net.estimate(&lf)?)
        }
        Command::Refocus { input, output, focus } => {
            let (lf, _, depth) = io::load_light_field::<T>(input)?;
            let focus = match (&focus.focus, &focus.focus_map) {
                (Some(d), _) => Focus::Plane(*d),
                (None, Some(p)) => Focus::Map(io::load_pfm::<f64>(p)?),
                (None, None) => unreachable!("clap requires one focus argument"),
            };
            let img = refocus(&lf, &focus)?;
            let data: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
            io::write_gray(output, lf.height(), lf.width(), &data, depth)
        }
        Command::Bench(args) => {
            let cfg = BenchConfig {
                ang_res: args.ang_res,
                height: args.height,
                width: args.width,
                channels: args.channels,
                levels: parse_levels(&args.levels)?,
                repeats: args.repeats,
                seed: cli.seed,
            };
            let (ds, sc) = bench_cost_volume(&cfg)?;
            eprintln!(
                "shift-and-concat: {} view shifts; DS-AFE cost-volume speedup {:.2}x",
                sc.shifts, ds.speedup
            );
            let csv = to_csv(&[ds, sc]);
            match &args.output {
                Some(p) => fs::write(p, csv).map_err(|e| Error::io(p, e)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Gradcheck { count } => {
            let tol = Tolerances::default();
            let mut failed = 0;
            for c in op_suite(cli.seed, tol)? {
                let ok = c.max_rel_err <= OP_TOLERANCE;
                failed += usize::from(!ok);
                println!("{} op {} max_rel_err={:.3e}", verdict(ok), c.name, c.max_rel_err);
            }
            for (name, checks) in network_suite(cli.seed, *count, tol)? {
                let worst = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
                let ok = worst <= NETWORK_TOLERANCE;
                failed += usize::from(!ok);
                println!(
                    "{} net {name} entries={} max_rel_err={worst:.3e}",
                    verdict(ok),
                    checks.len()
                );
            }
            if failed > 0 {
                return Err(Error::Verification(format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
        Command::Metrics {
            estimate,
            reference,
            disparity,
            eps,
        } => {
            if *disparity {
                let est = io::load_pfm::<f64>(estimate)?;
                let gt = io::load_pfm::<f64>(reference)?;
                println!("mse100={:.6}", distg::metrics::mse100(&est, &gt)?);
                for &e in eps {
                    println!("badpix_{e}={:.6}", distg::metrics::badpix(&est, &gt, e)?);
                }
                return Ok(());
            }
            let (est, _, _): (LightField<T>, _, _) = io::load_light_field(estimate)?;
            let (gt, _, _): (LightField<T>, _, _) = io::load_light_field(reference)?;
            let report = MetricReport::for_light_fields(&est, &gt, eps)?;
            if report.psnr_excluded > 0 {
                eprintln!(
                    "warning: {} identical view(s) have infinite PSNR and were left out of the average",
                    report.psnr_excluded
                );
            }
            print!("{report}");
            Ok(())
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("DISTG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("DISTG_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = if cli.double { run::<f64>(&cli) } else { run::<f32>(&cli) };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
