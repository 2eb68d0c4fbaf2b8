//! `uvmnet`: synthesize data, train, dehaze images, benchmark the scan and
//! count parameters/MACs.
//!
//! Exit codes: 0 success, 2 configuration or schema error, 3 numerical
//! failure, 4 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvmnet::haze::{
    self, apply_haze, ranking, run_ablation, sidecar_path, synth_scene, write_ablation_csv, RunConfig, Trainer,
    ABLATION_VARIANTS,
};
use uvmnet::net::{count_macs, count_params, load_checkpoint, uvm_forward};
use uvmnet::ops::{crop, reflect_pad_to};
use uvmnet::ssm::{ssm_scan_parallel, ssm_scan_sequential, SsmMode, SsmParams};
use uvmnet::{Error, Tensor};

const PAPER_PARAMS: &str = "19.25M";
const PAPER_MACS: &str = "173.55G";
const PAPER_PARAMS_N: f64 = 19.25e6;
const PAPER_MACS_N: f64 = 173.55e9;

#[derive(Parser)]
#[command(name = "uvmnet", version, about = "U-shaped state-space dehazing network")]
struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic hazy/GT PNG pairs and a scenes.csv
    Synth {
        /// Output directory (required)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a JSON run config
    Train {
        /// JSON run config (required)
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to continue from (default: none, start fresh)
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dehaze one PNG
    Infer {
        /// Checkpoint file (required)
        #[arg(long)]
        ckpt: PathBuf,
        /// Input PNG (required)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG (required)
        #[arg(long)]
        out: PathBuf,
        /// Run config (default: the checkpoint's .json sidecar)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time the sequential and chunked parallel scans
    Bench {
        #[arg(long = "impl", value_enum, default_value_t = BenchImpl::Both)]
        which: BenchImpl,
        #[arg(long = "L", default_value_t = 4096)]
        len: usize,
        #[arg(long = "N", default_value_t = 16)]
        state: usize,
        #[arg(long = "C", default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 256)]
        chunk: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report parameter and MAC counts
    Count {
        /// Run config (default: the default architecture)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Train every mixer variant under one config and tabulate the results
    Ablate {
        /// JSON run config (required)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's step count (default: keep it)
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchImpl {
    Seq,
    Par,
    Both,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::Dimension(_) | Error::Resource(_) => 2,
        Error::Numerical(_) => 3,
        Error::Io(_) | Error::Format { .. } | Error::Image(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Synth { out, count, size, seed } => synth(&out, count, size, seed),
        Cmd::Train { config, resume } => train(&config, resume.as_deref()),
        Cmd::Infer { ckpt, input, out, config } => infer(&ckpt, &input, &out, config.as_deref()),
        Cmd::Bench { which, len, state, channels, chunk, reps, seed } => {
            bench(which, len, state, channels, chunk, reps, seed)
        }
        Cmd::Count { config, size } => count(config.as_deref(), size),
        Cmd::Ablate { config, steps, out } => ablate(&config, steps, &out),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(path)?;
    eprintln!("effective config:\n{}", cfg.to_json());
    Ok(cfg)
}

fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<(), Error> {
    std::fs::create_dir_all(out.join("hazy"))?;
    std::fs::create_dir_all(out.join("GT"))?;
    let mut csv = std::fs::File::create(out.join("scenes.csv"))?;
    writeln!(csv, "seed,beta,airlight")?;
    for i in 0..count as u64 {
        let scene = synth_scene(seed + i, size, size)?;
        let name = format!("{:05}.png", i);
        haze::save_rgb(&apply_haze(&scene), out.join("hazy").join(&name))?;
        haze::save_rgb(&scene.sharp, out.join("GT").join(&name))?;
        writeln!(csv, "{},{},{}", scene.seed, scene.beta, scene.airlight)?;
    }
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

fn train(config: &Path, resume: Option<&Path>) -> Result<(), Error> {
    let cfg = load_config(config)?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(cfg, ckpt)?,
        None => Trainer::new(cfg)?,
    };
    eprintln!("starting at step {}", trainer.step());
    println!("{}", haze::METRICS_HEADER);
    let rows = trainer.run_logged()?;
    for r in &rows {
        println!("{}", r.csv());
    }
    let ckpt = trainer.cfg.train.checkpoint.clone();
    trainer.save(&ckpt)?;
    eprintln!("saved {} at step {}", ckpt.display(), trainer.step());
    Ok(())
}

fn infer(ckpt: &Path, input: &Path, out: &Path, config: Option<&Path>) -> Result<(), Error> {
    let cfg = match config {
        Some(path) => load_config(path)?,
        None => {
            let side = sidecar_path(ckpt, "json");
            let text = std::fs::read_to_string(&side)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", side.display())))?;
            let cfg = value
                .get("config")
                .ok_or_else(|| Error::Schema(format!("{} has no config", side.display())))?;
            RunConfig::from_json(&cfg.to_string())?
        }
    };
    let params = load_checkpoint(ckpt, &cfg.net)?;
    let img = haze::load_rgb(input)?;
    let (_, h, w) = img.dims3()?;
    // pad to 2^stages, one level beyond what the forward pass strictly needs
    let d = 2 * cfg.net.divisor();
    let (hp, wp) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    let x = reflect_pad_to(&img.reshape(&[1, 3, h, w])?, hp, wp)?;
    let y = crop(&uvm_forward(&x, &cfg.net, &params)?, h, w)?;
    haze::save_rgb(&y, out)?;
    eprintln!("{}x{} (padded to {hp}x{wp}) -> {}", h, w, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(which: BenchImpl, len: usize, n: usize, c: usize, chunk: usize, reps: usize, seed: u64) -> Result<(), Error> {
    if len == 0 || n == 0 || c == 0 || chunk == 0 || reps == 0 {
        return Err(Error::Config("bench sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = SsmParams::<Tensor<f32>>::init(c, n, SsmMode::Selective, &mut rng);
    let u = Tensor::rand_uniform(&[1, len, c], -1.0, 1.0, &mut rng);
    let seq = ssm_scan_sequential(&u, &p)?;
    let par = ssm_scan_parallel(&u, &p, chunk)?;
    let diff = seq.max_abs_diff(&par)?;
    if diff >= 1e-4 {
        return Err(Error::Numerical(format!("parallel scan differs from sequential by {diff:e}")));
    }
    println!("impl,L,N,C,chunk,ns_per_element");
    let elements = (len * c) as f64;
    for _ in 0..reps {
        for (name, on) in [("seq", which != BenchImpl::Par), ("par", which != BenchImpl::Seq)] {
            if !on {
                continue;
            }
            let t0 = Instant::now();
            let y = if name == "seq" { ssm_scan_sequential(&u, &p)? } else { ssm_scan_parallel(&u, &p, chunk)? };
            let ns = t0.elapsed().as_nanos() as f64 / elements;
            std::hint::black_box(y);
            println!("{name},{len},{n},{c},{chunk},{ns:.3}");
        }
    }
    Ok(())
}

fn count(config: Option<&Path>, size: usize) -> Result<(), Error> {
    let cfg = match config {
        Some(path) => load_config(path)?.net,
        None => Default::default(),
    };
    cfg.validate()?;
    cfg.check_input(size, size)?;
    let params = count_params(&cfg);
    let macs = count_macs(&cfg, size, size);
    println!("params {params} ({:.2}M)", params as f64 / 1e6);
    println!("macs@{size}x{size} {macs} ({:.2}G)", macs as f64 / 1e9);
    println!("paper reports {PAPER_PARAMS} / {PAPER_MACS}");
    if size == 256 {
        println!(
            "ratio to paper: params {:.3}x, macs {:.3}x",
            params as f64 / PAPER_PARAMS_N,
            macs as f64 / PAPER_MACS_N
        );
    }
    Ok(())
}

fn ablate(config: &Path, steps: Option<u64>, out: &Path) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    let rows = run_ablation(&cfg, &ABLATION_VARIANTS)?;
    write_ablation_csv(&rows, out)?;
    println!("{}", haze::ABLATION_HEADER);
    for r in &rows {
        println!("{}", r.csv());
    }
    let order: Vec<&str> = ranking(&rows).into_iter().map(|v| v.name()).collect();
    println!("observed ordering by psnr: {}", order.join(" > "));
    println!("paper ordering: ssm (39.88) > sdp (38.25) > conv1d (35.11)");
    Ok(())
}
