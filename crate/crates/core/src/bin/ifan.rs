use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ifan::bench;
use ifan::config;
use ifan::gradcheck::{run_check, standard_suite};
use ifan::io;
use ifan::losses;
use ifan::net::{describe, Network};
use ifan::synth::{self, SynthConfig};
use ifan::train::{self, deblur_any_size, EvalReport, IterLog, Progress, TrainConfig};
use ifan::warp::DisparityMap;
use ifan::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "ifan", version, about = "Single-image defocus deblurring with iterative filter adaptive networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic dual-pixel samples as a paired directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "r-max", default_value_t = 6.0)]
        r_max: f64,
        /// Image edge length.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Grid factor for the disparity maps.
        #[arg(long, default_value_t = 8)]
        s: usize,
    },
    /// Train a network; writes checkpoints, train_log.txt and summary.json.
    #[command(after_help = train_help())]
    Train {
        /// Flat `key = value` configuration file (defaults: toy preset).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deblur one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the estimated disparity map (1/s resolution) as PFM.
        #[arg(long = "dump-disparity")]
        dump_disparity: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a paired directory (source/, target/).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        /// Added to every check's seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// IAC vs FAC cost comparison and receptive-field sweep.
    Bench {
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 64)]
        w: usize,
        #[arg(long, default_value_t = 16)]
        c: usize,
        #[arg(long, default_value_t = 17)]
        n: usize,
        #[arg(long = "k-iac", default_value_t = 3)]
        k_iac: usize,
        #[arg(long = "k-fac", default_value_t = 11)]
        k_fac: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Filter-set counts for the receptive-field sweep.
        #[arg(long = "rf-ns", value_delimiter = ',', default_values_t = [8, 17, 26, 35, 44])]
        rf_ns: Vec<usize>,
        /// Write both tables as CSV files with this path prefix.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the architecture table for a configuration.
    Describe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        h: usize,
        #[arg(long, default_value_t = 256)]
        w: usize,
    },
}

fn train_help() -> String {
    format!("Configuration keys:\n{}", config::key_help())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => config::parse_train(&read_text(p)?),
        None => Ok(TrainConfig::toy()),
    }
}

fn load_network(ckpt: &Path) -> Result<Network> {
    let (cfg, params) = io::read_checkpoint(ckpt)?;
    // validates that the stored tensors match the stored config
    let expected = ifan::net::init_params(&cfg, 0)?;
    for ((en, et), (pn, pt)) in expected.iter().zip(params.iter()) {
        if en != pn || et.shape() != pt.shape() {
            return Err(Error::Format(format!("tensor `{pn}` does not match the stored config")));
        }
    }
    if expected.len() != params.len() {
        return Err(Error::Format("tensor count does not match the stored config".into()));
    }
    Ok(Network { cfg, params })
}

struct Printer;

impl Progress for Printer {
    fn iteration(&mut self, l: &IterLog) {
        let r = l.losses;
        eprintln!(
            "iter {:>7}  lr {:.2e}  deblur {:.4e}  disp {:.4e}  reblur {:.4e}  total {:.4e}",
            l.iter, l.lr, r.l_deblur, r.l_disp, r.l_reblur, r.l_total
        );
    }

    fn evaluation(&mut self, e: &EvalReport) {
        eprintln!(
            "eval @ {:>7}  PSNR {:.3} dB (input {:.3} dB)  SSIM {:.4}",
            e.iter, e.psnr, e.psnr_input, e.ssim
        );
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            seed,
            count,
            out,
            r_max,
            size,
            s,
        } => {
            let cfg = SynthConfig {
                h: size,
                w: size,
                r_max,
                s,
            };
            if s == 0 || size % s != 0 {
                return Err(Error::Contract(format!("size {size} must be a multiple of s = {s}")));
            }
            for sample in synth::make_samples(seed, count, &cfg)? {
                let png = format!("{}.png", sample.name);
                let pfm = format!("{}.pfm", sample.name);
                io::write_png(out.join("source").join(&png), &sample.blurred)?;
                io::write_png(out.join("target").join(&png), &sample.sharp)?;
                io::write_png(out.join("left").join(&png), sample.left.as_ref().expect("synthetic"))?;
                io::write_png(out.join("right").join(&png), sample.right.as_ref().expect("synthetic"))?;
                io::write_pfm(out.join("radius").join(&pfm), sample.radius.as_ref().expect("synthetic"))?;
                io::write_pfm(out.join("disparity").join(&pfm), sample.disparity.as_ref().expect("synthetic"))?;
            }
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train { config, out, seed } => {
            let mut cfg = load_train_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = train::train(&cfg, Some(&out), &mut Printer)?;
            if let Some(e) = report.final_eval() {
                println!(
                    "final: PSNR {:.3} dB (input {:.3} dB), SSIM {:.4}, checkpoint {}",
                    e.psnr,
                    e.psnr_input,
                    e.ssim,
                    report.final_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
                );
            }
            eprintln!("wall time {:.1} s", report.wall_seconds);
        }
        Command::Infer {
            ckpt,
            input,
            out,
            dump_disparity,
        } => {
            let net = load_network(&ckpt)?;
            let img = io::read_png(&input)?;
            let (deblurred, disparity) = deblur_any_size(&net, &img)?;
            io::write_png(&out, &deblurred)?;
            if let Some(p) = dump_disparity {
                let map = DisparityMap::new(disparity)?;
                if let Some(w) = map.sanity_warning() {
                    eprintln!("warning: {w}");
                }
                io::write_pfm(&p, map.tensor())?;
            }
        }
        Command::Eval { ckpt, data } => {
            let net = load_network(&ckpt)?;
            let dir = synth::load_paired_dir(&data)?;
            let mut rows = Vec::new();
            for sample in dir.iter() {
                let s = sample?;
                let (out, _) = deblur_any_size(&net, &s.blurred)?;
                rows.push((
                    s.name,
                    losses::psnr(&out, &s.sharp, 1.0)?,
                    losses::ssim(&out, &s.sharp)?,
                    losses::mae(&out, &s.sharp)?,
                ));
            }
            println!("{:<32} {:>8} {:>8} {:>12}", "image", "PSNR↑", "SSIM↑", "MAE(×10⁻¹)↓");
            for (name, p, s, m) in &rows {
                println!("{name:<32} {p:>8.3} {s:>8.4} {:>12.4}", 10.0 * m);
            }
            let n = rows.len().max(1) as f64;
            let mean = |f: fn(&(String, f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
            println!(
                "{:<32} {:>8.3} {:>8.4} {:>12.4}",
                "mean",
                mean(|r| r.1),
                mean(|r| r.2),
                10.0 * mean(|r| r.3)
            );
        }
        Command::Gradcheck { seed } => {
            let mut failed = 0;
            for mut check in standard_suite() {
                check.seed += seed;
                let out = run_check(&check)?;
                let ok = out.max_rel_error < GRADCHECK_TOLERANCE;
                failed += usize::from(!ok);
                println!(
                    "{:<18} {:<16} k={} N={} stride={}  {:>5} entries  max rel err {:.3e}  {}",
                    check.op.name(),
                    check.shape.to_string(),
                    check.k,
                    check.sets,
                    check.stride,
                    out.checked,
                    out.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} gradient checks exceeded {GRADCHECK_TOLERANCE:e}")));
            }
        }
        Command::Bench {
            h,
            w,
            c,
            n,
            k_iac,
            k_fac,
            reps,
            rf_ns,
            csv,
        } => {
            let (iac, fac) = bench::bench_pair(h, w, c, n, k_iac, k_fac, reps, 0)?;
            print!("{}", bench::pair_table(&iac, &fac));
            println!();
            let rows = bench::rf_sweep(&rf_ns, k_iac, h, w, c)?;
            print!("{}", bench::rf_table(&rows));
            if let Some(prefix) = csv {
                let with = |suffix: &str| {
                    let mut p = prefix.clone().into_os_string();
                    p.push(suffix);
                    PathBuf::from(p)
                };
                write_text(&with("_pair.csv"), &bench::pair_csv(&iac, &fac))?;
                write_text(&with("_rf.csv"), &bench::rf_csv(&rows))?;
            }
        }
        Command::Describe { config, h, w } => {
            let cfg = load_train_config(config.as_deref())?;
            print!("{}", describe(&cfg.net, h, w)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
