use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qrng_forge::pipeline::{
    self, ExtractOptions, Overrides, PipelineError, RunConfig, RunOptions, SweepParam,
};
use qrng_forge::stats::ExportFormat;

#[derive(Parser)]
#[command(name = "qrng-forge", version, about = "Entangled-photon QRNG pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Simulator RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pump power in mW.
    #[arg(long)]
    pump_power: Option<f64>,
    /// Coincidence window in ns.
    #[arg(long)]
    window_ns: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let o = Overrides {
            seed: self.seed,
            pump_power_mw: self.pump_power,
            window_ns: self.window_ns,
            out: self.out.clone(),
        };
        pipeline::load_config(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tag file and compare channel rates with the model.
    Simulate(Common),
    /// Match coincidences in a tag file and write raw bits.
    Coincide {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Certify a tag file (CHSH S, visibility, g2).
    Certify {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Toeplitz-extract a raw bit file.
    Extract {
        input: PathBuf,
        /// Acquisition time of the raw bits in seconds.
        #[arg(long, default_value_t = 0.0)]
        seconds: f64,
        /// certification.json whose verdict gates extraction.
        #[arg(long)]
        certification: Option<PathBuf>,
        /// Extract even if the run is UNCERTIFIED.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the statistical battery and autocorrelation on a bit file.
    Test {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline with a run manifest.
    Run {
        /// Re-run from a previous manifest.json.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Extract even if the run is UNCERTIFIED.
        #[arg(long)]
        force: bool,
        /// Also write the tag file.
        #[arg(long)]
        keep_tags: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the pipeline over a list of parameter values.
    Sweep {
        /// pump_power, window_tau or alpha.
        #[arg(long)]
        param: String,
        /// Comma-separated values (at least two).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// CSV output path (defaults to <out>/sweep.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a bit file to raw_packed or ascii01.
    Export {
        input: PathBuf,
        #[arg(long)]
        format: String,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    pipeline::init_threads()?;
    match cli.command {
        Command::Simulate(c) => {
            let r = pipeline::cmd_simulate(&c.load()?)?;
            print!("{}", r.table());
            println!("tags {} over {:.3} s, sha256 {}", r.n_tags, r.duration_s, r.digest);
        }
        Command::Coincide { input, common } => {
            let s = pipeline::cmd_coincide(&input, &common.load()?)?;
            for p in &s.pairs {
                println!("{:<6} {:>12} coincidences  CAR {:.2}", p.pair, p.coincidences, p.car);
            }
            println!("raw bits {} (ones {})", s.raw_bits, s.raw_ones);
        }
        Command::Certify { input, common } => {
            let r = pipeline::cmd_certify(&input, &common.load()?)?;
            println!(
                "S {:.4} ± {:.4}  g2 {:.3}  blocks {}  verdict {}",
                r.s,
                r.s_stderr,
                r.g2,
                r.blocks.len(),
                r.verdict
            );
            for (k, v) in &r.visibility {
                println!("visibility C2={k}: {v:.4}");
            }
        }
        Command::Extract {
            input,
            seconds,
            certification,
            force,
            common,
        } => {
            let opts = ExtractOptions {
                seconds,
                certification,
                force,
            };
            let r = pipeline::cmd_extract(&input, &common.load()?, &opts)?;
            println!(
                "H_min {:.5}  n {}  m {}  ratio {:.5}  bits {} -> {}  {:.3} Mbps",
                r.h_min, r.n, r.m, r.ratio, r.bits_in, r.bits_out, r.mbps
            );
        }
        Command::Test { input, common } => {
            let r = pipeline::cmd_test(&input, &common.load()?)?;
            match (&r.battery, r.quality.max_abs_autocorr) {
                (Some(b), _) => print!("{}", b.table()),
                (None, _) => println!("battery skipped: fewer bits than one sequence"),
            }
            if let Some(a) = r.quality.max_abs_autocorr {
                println!(
                    "max |autocorr| over {} lags: {:.3e} (bound {:.3e})",
                    r.quality.autocorr.len(),
                    a,
                    r.quality.autocorr_bound
                );
            }
        }
        Command::Run {
            manifest,
            force,
            keep_tags,
            common,
        } => {
            let opts = RunOptions { force, keep_tags };
            let m = match manifest {
                Some(path) => pipeline::cmd_rerun(&path, common.out.as_deref(), &opts)?,
                None => pipeline::cmd_run(&common.load()?, &opts)?,
            };
            for (stage, secs) in &m.timing_s {
                println!("{stage:<9} {secs:>8.3} s");
            }
            println!("{}", m.summary_line());
            println!("manifest {}", m.config.output_dir.join(pipeline::MANIFEST_FILE).display());
        }
        Command::Sweep {
            param,
            values,
            csv,
            common,
        } => {
            let param: SweepParam = param.parse()?;
            let cfg = common.load()?;
            let rows = pipeline::cmd_sweep(&cfg, param, &values)?;
            let path = csv.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
            }
            std::fs::write(&path, pipeline::sweep_csv(param, &rows))
                .map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            print!("{}", pipeline::sweep_table(param, &rows));
            println!("csv {}", path.display());
        }
        Command::Export { input, format, output } => {
            let format: ExportFormat = format
                .parse()
                .map_err(|e| PipelineError::Config(format!("{e}")))?;
            let n = pipeline::cmd_export(&input, format, &output)?;
            println!("wrote {n} bytes to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
