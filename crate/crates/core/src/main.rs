use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use iscat_core::experiment::{
    self, austria_csv, austria_study, bim_report, bp_report, grid_csv, load_dataset, model_report, snr_label,
    trend_checks, variant_config, write_dataset, ExperimentConfig, MieCheckConfig, SimContext, Split,
};
use iscat_core::loss::LossVariant;
use iscat_core::metrics::MetricReport;
use iscat_core::net::{TrainConfig, TrainLog, TrainState, Trainer};
use iscat_core::store::{read_checkpoint, write_checkpoint, Checkpoint};
use iscat_core::{selfcheck, Error, Result};

#[derive(Parser)]
#[command(name = "iscat", version, about = "2D TM inverse scattering experiments")]
struct Cli {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the dataset, initialization and shuffling seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the reference single-threaded schedule.
    #[arg(long, global = true, env = "ISCAT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArg {
    /// Dataset root written by `gen` (holds train/ and test/).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the train and test datasets.
    Gen,
    /// Score back-propagation inputs on the test split.
    Bp(DataArg),
    /// Score the Born iterative method on the test split.
    Bim(DataArg),
    /// Train the configured loss variant.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// SNR mismatch grid and Austria permittivity sweep.
    Report {
        /// Reuse a dataset instead of simulating one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare the forward solver with the analytic cylinder series.
    MieCheck,
    /// Run the built-in consistency checks.
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate()?;
    let out = cli.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.json"), &cfg.to_json()?)?;

    match cli.command {
        Command::Gen => cmd_gen(&cfg, out)?,
        Command::Bp(d) => cmd_bp(&cfg, &d.data, out)?,
        Command::Bim(d) => cmd_bim(&cfg, &d.data, out)?,
        Command::Train { data, resume } => cmd_train(&cfg, &data.data, resume.as_deref(), out)?,
        Command::Eval { data, checkpoint } => cmd_eval(&cfg, &data.data, &checkpoint, out)?,
        Command::Report { data } => cmd_report(&cfg, data.as_deref(), out)?,
        Command::MieCheck => return cmd_mie(out),
        Command::Selfcheck => return cmd_selfcheck(out),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    for (split, count) in [(Split::Train, cfg.dataset.train_count), (Split::Test, cfg.dataset.test_count)] {
        let records = experiment::generate_records(&ctx, &cfg.dataset, split, count)?;
        write_dataset(&out.join(split.name()), &ctx.scene, &cfg.dataset, split, &records)?;
        println!("{}: {} samples", split.name(), records.len());
    }
    Ok(())
}

/// Loads one split and checks it was simulated for the configured scene.
fn load_split(ctx: &SimContext, root: &Path, split: Split) -> Result<Vec<iscat_core::store::SampleRecord>> {
    let (manifest, records) = load_dataset(&root.join(split.name()))?;
    if manifest.scene != ctx.scene {
        return Err(Error::Config(format!(
            "dataset {} was simulated for a different scene",
            root.display()
        )));
    }
    Ok(records)
}

fn emit_report(out: &Path, stem: &str, report: &MetricReport) -> Result<()> {
    write(&out.join(format!("{stem}_per_sample.csv")), &report.per_sample_csv())?;
    println!("{}", report.summary_row());
    Ok(())
}

fn write_summary(out: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut s = format!("{}\n", MetricReport::SUMMARY_HEADER);
    for r in reports {
        s.push_str(&r.summary_row());
        s.push('\n');
    }
    write(&out.join("summary.csv"), &s)
}

fn test_snrs(cfg: &ExperimentConfig) -> Vec<Option<f64>> {
    cfg.eval.test_snr.iter().map(|s| Some(*s)).collect()
}

fn cmd_bp(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    let test = load_split(&ctx, data, Split::Test)?;
    println!("{}", MetricReport::SUMMARY_HEADER);
    let mut reports = Vec::new();
    for snr in std::iter::once(None).chain(test_snrs(cfg)) {
        let (r, _) = bp_report(&test, ctx.grid(), snr)?;
        emit_report(out, &format!("bp_{}", snr_label(snr)), &r)?;
        reports.push(r);
    }
    write_summary(out, &reports)
}

fn cmd_bim(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    let test = load_split(&ctx, data, Split::Test)?;
    let n = if cfg.eval.bim_samples == 0 { test.len() } else { cfg.eval.bim_samples.min(test.len()) };
    println!("{}", MetricReport::SUMMARY_HEADER);
    let mut reports = Vec::new();
    for snr in test_snrs(cfg) {
        let (r, _) = bim_report(&ctx, &test[..n], snr, &cfg.eval.bim)?;
        emit_report(out, &format!("bim_{}", snr_label(snr)), &r)?;
        reports.push(r);
    }
    write_summary(out, &reports)
}

fn cmd_train(cfg: &ExperimentConfig, data: &Path, resume: Option<&Path>, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    let train = load_split(&ctx, data, Split::Train)?;
    let samples = experiment::training_samples(&train, ctx.grid(), &cfg.train)?;
    let log_path = out.join("train_log.csv");
    let ckpt_path = out.join("checkpoint.isck");
    let (mut trainer, mut log) = match resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            // Extending the epoch budget is the one change a resume may carry.
            let saved = TrainConfig {
                epochs_max: cfg.train.epochs_max,
                ..ck.train
            };
            if saved != cfg.train || ck.state.params.config != cfg.net {
                return Err(Error::Config(format!("{} was written by a different train or net config", p.display())));
            }
            let log = read_log_prefix(&log_path, ck.state.opt.epoch);
            (Trainer::resume(ck.state, cfg.train, &ctx.ops)?, log)
        }
        None => (Trainer::new(&cfg.net, cfg.train, &ctx.ops)?, String::new()),
    };
    if log.is_empty() {
        log = TrainLog::default().to_csv();
    }
    while !trainer.finished() {
        let entry = trainer.run_epoch(&samples, None)?;
        let line = TrainLog { epochs: vec![entry] }.to_csv();
        log.push_str(line.lines().nth(1).unwrap_or_default());
        log.push('\n');
        save_checkpoint(&ckpt_path, cfg, trainer.state())?;
        write(&log_path, &log)?;
        println!("epoch {} lr {:.3e} loss {:.6e}", entry.epoch, entry.lr, entry.train_loss);
    }
    save_checkpoint(&ckpt_path, cfg, trainer.state())?;
    write(&log_path, &log)
}

fn save_checkpoint(path: &Path, cfg: &ExperimentConfig, state: &TrainState) -> Result<()> {
    write_checkpoint(
        path,
        &Checkpoint {
            train: cfg.train,
            state: state.clone(),
        },
    )
}

/// Keeps the header and the rows of epochs already contained in the checkpoint.
fn read_log_prefix(path: &Path, epochs: usize) -> String {
    let Ok(text) = fs::read_to_string(path) else {
        return String::new();
    };
    let mut lines = text.lines();
    let mut s = match lines.next() {
        Some(h) => format!("{h}\n"),
        None => return String::new(),
    };
    for l in lines {
        let epoch = l.split(',').next().and_then(|e| e.parse::<usize>().ok());
        if epoch.is_some_and(|e| e < epochs) {
            s.push_str(l);
            s.push('\n');
        }
    }
    s
}

fn cmd_eval(cfg: &ExperimentConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    let test = load_split(&ctx, data, Split::Test)?;
    let ck = read_checkpoint(checkpoint)?;
    let params = ck.state.params;
    let label = ck.train.variant.label();
    let truths = experiment::truths(&test, ctx.grid())?;
    let n_bim = cfg.eval.bim_samples.min(test.len());
    println!("{}", MetricReport::SUMMARY_HEADER);
    let mut reports = Vec::new();
    for snr in test_snrs(cfg) {
        let tag = snr_label(snr);
        let (bp, bp_maps) = bp_report(&test, ctx.grid(), snr)?;
        let (net, net_maps) = model_report(label, &params, &test, ctx.grid(), snr)?;
        emit_report(out, &format!("bp_{tag}"), &bp)?;
        emit_report(out, &format!("{label}_{tag}"), &net)?;
        let bim_maps = if n_bim > 0 {
            let (bim, maps) = bim_report(&ctx, &test[..n_bim], snr, &cfg.eval.bim)?;
            emit_report(out, &format!("bim_{tag}"), &bim)?;
            reports.push(bim);
            maps
        } else {
            Vec::new()
        };
        for i in 0..cfg.eval.panels.min(test.len()) {
            let mut row = vec![&bp_maps[i]];
            if let Some(b) = bim_maps.get(i) {
                row.push(b);
            }
            row.push(&net_maps[i]);
            experiment::export_row(&out.join("panels").join(format!("sample_{i:05}_{tag}.pgm")), &truths[i], &row)?;
        }
        reports.push(bp);
        reports.push(net);
    }
    write_summary(out, &reports)
}

fn cmd_report(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> Result<()> {
    let ctx = SimContext::new(&cfg.scene)?;
    let (train, test) = match data {
        Some(root) => (load_split(&ctx, root, Split::Train)?, load_split(&ctx, root, Split::Test)?),
        None => (
            experiment::generate_records(&ctx, &cfg.dataset, Split::Train, cfg.dataset.train_count)?,
            experiment::generate_records(&ctx, &cfg.dataset, Split::Test, cfg.dataset.test_count)?,
        ),
    };
    let (rows, models) = experiment::snr_grid_study(&ctx, &train, &test, &cfg.net, &cfg.train, &cfg.report)?;
    write(&out.join("snr_grid.csv"), &grid_csv(&rows))?;
    for m in &models {
        let name = format!(
            "{}_in-{}_target-{}",
            m.config.variant,
            snr_label(m.config.input_snr),
            snr_label(m.config.target_snr)
        );
        write(&out.join("logs").join(format!("{name}.csv")), &m.log.to_csv())?;
    }

    let checks = trend_checks(&rows, &[(LossVariant::Current, 20.0), (LossVariant::Field, 5.0)]);
    let mut trend = String::from("test_snr_db,challenger,challenger_mse,contrast_clean_mse,holds\n");
    for c in &checks {
        trend.push_str(&format!(
            "{},{},{:.6e},{:.6e},{}\n",
            c.test_snr, c.challenger, c.challenger_mse, c.baseline_mse, c.holds
        ));
        if !c.holds {
            println!("trend not reproduced: {} at {} dB", c.challenger, c.test_snr);
        }
    }
    write(&out.join("trend.csv"), &trend)?;

    if cfg.report.austria {
        let snr = cfg.report.austria_snr;
        let mut named = Vec::new();
        for &v in &cfg.report.variants {
            let want = variant_config(&cfg.train, v, snr);
            if let Some(m) = models.iter().find(|m| m.config == want) {
                named.push((v.label().to_string(), &m.params));
            }
        }
        let rows = austria_study(&ctx, &named, &cfg.report.austria_eps, snr, cfg.dataset.seed)?;
        write(&out.join("austria.csv"), &austria_csv(&rows))?;
    }
    print!("{}", grid_csv(&rows));
    Ok(())
}

fn cmd_mie(out: &Path) -> Result<ExitCode> {
    let check = experiment::mie_check(&MieCheckConfig::default())?;
    let mut s = String::from("tx,relative_l2\n");
    for (i, e) in check.per_tx.iter().enumerate() {
        s.push_str(&format!("{i},{e:.6e}\n"));
    }
    write(&out.join("mie_check.csv"), &s)?;
    let ok = check.max_error <= 0.03;
    println!(
        "max relative L2 {:.4e} over {} transmitters ({:.1} cells per medium wavelength, series order {}): {}",
        check.max_error,
        check.per_tx.len(),
        check.cells_per_medium_wavelength,
        check.series_order,
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_selfcheck(out: &Path) -> Result<ExitCode> {
    let results = selfcheck::run_all()?;
    let mut s = String::from("check,value,tolerance,passed\n");
    for r in &results {
        println!(
            "[{}] {} ({:.3e} <= {:.1e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.tolerance
        );
        s.push_str(&format!("{},{:.6e},{:.1e},{}\n", r.name, r.value, r.tolerance, r.passed));
    }
    write(&out.join("selfcheck.csv"), &s)?;
    Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
