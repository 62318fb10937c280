use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vfikit::io::{
    flow_viz, load_quad, read_flo, read_manifest, save_quads, write_atomic, write_flo, write_image, write_rgb8,
    Checkpoint, ManifestRow,
};
use vfikit::motion::reverse_flow;
use vfikit::pipeline::{load_dataset, train_on, DataSpec, LossRecord, Mode, Pipeline, PipelineConfig};
use vfikit::synth::{brute_force_reverse, make_dataset, Difficulty, Observation, Quad};
use vfikit::tensor::Tensor;
use vfikit::{Error, Result};

/// Quadratic-motion video frame interpolation.
#[derive(Parser)]
#[command(name = "vfikit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic quads and write them with a manifest.
    Synth {
        /// Difficulty preset: linear, moderate, occlusion or quadratic.
        #[arg(long, default_value = "moderate")]
        spec: String,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// exact, occluded-zero, occluder-motion or noise:<sigma>.
        #[arg(long)]
        observation: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Interpolate one quad at one or more times.
    Interpolate {
        /// `<manifest>#<row>` (0-based, default 0) or a quad directory.
        #[arg(long)]
        quad: String,
        #[arg(long, default_value = "analytic-baseline")]
        mode: Mode,
        /// Target times; defaults to the quad's own. Several times write
        /// `<stem>_t<t>.<ext>` next to `--out`.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output image (.png or .ppm).
        #[arg(long)]
        out: PathBuf,
        /// Directory for intermediate flows and the blending mask.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Train the learned pipeline and save a checkpoint.
    Train {
        /// TOML pipeline config.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss table (tab separated).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score interpolations against ground truth.
    Eval {
        /// `synth:<difficulty>:<n>:<seed>:<size>` or a manifest path.
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "analytic-baseline")]
        mode: Mode,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Report path: a `.toml` extension writes records, anything else a
        /// tab-separated table.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reverse a forward flow into a backward flow.
    ReverseFlow {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the brute-force reference instead of the fast path.
        #[arg(long)]
        oracle: bool,
    },
    /// Render a flow with the Middlebury colour wheel.
    Viz {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_observation(s: &str) -> Result<Observation> {
    match s {
        "exact" => Ok(Observation::Exact),
        "occluded-zero" => Ok(Observation::OccludedZero),
        "occluder-motion" => Ok(Observation::OccluderMotion),
        _ => s
            .strip_prefix("noise:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(Observation::OccludedNoise)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown observation {s:?} (exact, occluded-zero, occluder-motion, noise:<sigma>)"
                ))
            }),
    }
}

fn load_cli_quad(spec: &str, t: Option<f64>) -> Result<Quad> {
    let path = Path::new(spec);
    let mut row = if path.is_dir() {
        ManifestRow::from_dir(path, t.unwrap_or(0.5))?
    } else {
        let (file, index) = match spec.rsplit_once('#') {
            Some((f, i)) => {
                let i = i
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad manifest row in {spec:?}")))?;
                (f, i)
            }
            None => (spec, 0),
        };
        let rows = read_manifest(file)?;
        let n = rows.len();
        rows.into_iter()
            .nth(index)
            .ok_or_else(|| Error::Config(format!("{file} has {n} rows, asked for row {index}")))?
    };
    if let Some(t) = t {
        row.t = t;
    }
    load_quad(&row)
}

fn pipeline_for(mode: Mode, checkpoint: Option<&Path>) -> Result<Pipeline> {
    match (mode, checkpoint) {
        (_, Some(p)) => Pipeline::from_checkpoint(&Checkpoint::load(p)?)?.with_mode(mode),
        (Mode::Learned, None) => Err(Error::Config("learned mode needs --checkpoint".into())),
        (m, None) => Pipeline::new(PipelineConfig {
            mode: m,
            ..PipelineConfig::default()
        }),
    }
}

fn with_time(out: &Path, t: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_t{t}.{ext}"))
}

fn log_table(log: &[LossRecord]) -> String {
    let mut s = String::from(
        "step\tphase\ttotal\treconstruction\tperceptual\twarping\tsmoothness\tw_r\tw_p\tw_w\tw_s\n",
    );
    for r in log {
        let cols: Vec<String> = [r.total]
            .iter()
            .chain(&r.parts)
            .chain(&r.weights)
            .map(|v| v.to_string())
            .collect();
        s.push_str(&format!("{}\t{:?}\t{}\n", r.step, r.phase, cols.join("\t")));
    }
    s
}

fn write_diagnostics(dir: &Path, d: &vfikit::pipeline::Diagnostics) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    for (name, f) in [
        ("flow_t0", &d.flow_t0),
        ("flow_t1", &d.flow_t1),
        ("refined_t0", &d.refined_t0),
        ("refined_t1", &d.refined_t1),
    ] {
        write_flo(f, dir.join(format!("{name}.flo")))?;
    }
    let m = d.mask.data();
    let grey = Tensor::new(&[3, d.mask.shape()[1], d.mask.shape()[2]], [m, m, m].concat())?;
    write_image(&grey, dir.join("mask.png"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            n,
            seed,
            size,
            observation,
            out,
        } => {
            let mut d = Difficulty::preset(&spec)?;
            if let Some(o) = observation {
                d = d.with_observation(parse_observation(&o)?);
            }
            let manifest = save_quads(&make_dataset(n, seed, size, &d)?, &out)?;
            println!("{}", manifest.display());
        }
        Command::Interpolate {
            quad,
            mode,
            t,
            checkpoint,
            out,
            diagnostics,
        } => {
            let q = load_cli_quad(&quad, t.first().copied().filter(|_| t.len() == 1))?;
            let p = pipeline_for(mode, checkpoint.as_deref())?;
            if t.len() > 1 {
                for (t, frame) in p.interpolate_multi(&q, &t)? {
                    let path = with_time(&out, t);
                    write_image(&frame, &path)?;
                    println!("{}", path.display());
                }
            } else {
                let r = p.interpolate(&q, q.t)?;
                write_image(&r.frame, &out)?;
                if let Some(dir) = diagnostics {
                    write_diagnostics(&dir, &r.diagnostics)?;
                }
                println!("{}", out.display());
            }
        }
        Command::Train { config, out, log } => {
            let cfg = PipelineConfig::load(&config)?;
            let quads = load_dataset(&cfg.data)?;
            let res = train_on(&cfg, &quads, |r| {
                eprintln!("step {}\t{:?}\t{:.6}", r.step, r.phase, r.total)
            })?;
            res.checkpoint()?.save(&out)?;
            if let Some(path) = log {
                write_atomic(&path, log_table(&res.log).as_bytes())?;
            }
            if let (Some(a), Some(b)) = (res.log.first(), res.log.last()) {
                println!("loss {:.6} -> {:.6} over {} steps", a.total, b.total, res.log.len());
            }
        }
        Command::Eval {
            dataset,
            mode,
            checkpoint,
            report,
        } => {
            let quads = load_dataset(&DataSpec::parse(&dataset)?)?;
            let r = pipeline_for(mode, checkpoint.as_deref())?.evaluate(&quads)?;
            if let Some(path) = report {
                let text = match path.extension().and_then(|e| e.to_str()) {
                    Some("toml") => r.to_records(),
                    _ => r.to_table(),
                };
                write_atomic(&path, text.as_bytes())?;
            }
            println!("quads {}\tpsnr {:.4}\tssim {:.6}", r.rows.len(), r.mean_psnr, r.mean_ssim);
        }
        Command::ReverseFlow { input, out, oracle } => {
            let f = read_flo(&input)?;
            let (rev, holes) = if oracle {
                let (r, h) = brute_force_reverse(&f.cast::<f64>());
                (r.cast::<f32>(), h)
            } else {
                reverse_flow(&f)
            };
            write_flo(&rev, &out)?;
            println!("holes {}", holes.count());
        }
        Command::Viz { input, out } => write_rgb8(&flow_viz(&read_flo(&input)?), &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
