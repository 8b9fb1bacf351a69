use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polysync_cli::bundle::{build_report, BundleWriter, Report};
use polysync_cli::config::ExperimentConfig;
use polysync_cli::pipeline::{noise_sweep, run_until, PipelineError, RankRow, Result, Run, Stage, SweepRow};
use polysync_cli::verify::verify_bundle;

#[derive(Parser)]
#[command(name = "polysync", version, about = "Data-driven output synchronization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop experiments and the rank check.
    Collect(RunArgs),
    /// Consistency sets from the collected data.
    Identify(RunArgs),
    /// Data-based regulator fits.
    Regulate(RunArgs),
    /// Feedback gains and the observer gain.
    Synthesize(RunArgs),
    /// Closed-loop simulation.
    Simulate(RunArgs),
    /// Reachable-set error bounds along the simulation.
    Bound(RunArgs),
    /// Every stage, the noise sweep and the report.
    ReproPaper(RunArgs),
    /// Re-check a stored bundle without re-solving.
    Verify {
        /// Bundle directory (defaults to --out).
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration; the bundled six-follower example when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides both the data and the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides every agent's process and measurement noise half-width.
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Decay margin for the feedback and observer certificates.
    #[arg(long)]
    margin: Option<f64>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::paper_example(),
        };
        if let Some(s) = self.seed {
            cfg.data.seed = s;
            cfg.simulation.seed = s;
        }
        if let Some(level) = self.noise_level {
            cfg = cfg.with_noise_level(level);
        }
        if let Some(h) = self.horizon {
            cfg.simulation.horizon = h;
        }
        if let Some(m) = self.margin {
            cfg.synthesis.margin = m;
            cfg.synthesis.observer_margin = m;
        }
        cfg.validate(None)?;
        Ok(cfg)
    }
}

fn print_ranks(rows: &[RankRow]) {
    println!("{:<12} {:>5} {:>5} {:>12} {:>8} {:>4}", "agent", "rows", "cols", "min sv", "restarts", "rank");
    for r in rows {
        let ok = if r.rank_ok { "ok" } else { "FAIL" };
        println!("{:<12} {:>5} {:>5} {:>12.4e} {:>8} {:>4}", r.agent, r.rows, r.cols, r.min_singular_value, r.restarts, ok);
    }
}

fn print_stage(stage: Stage, run: &Run) {
    match stage {
        Stage::Collect => print_ranks(&run.ranks),
        Stage::Identify => {
            for (name, cs) in run.model.names.iter().zip(&run.sets) {
                println!("{name}: {} [B A] vertices, {} C vertices", cs.z_poly.len(), cs.c_poly.len());
            }
        }
        Stage::Regulate => {
            for (name, fit) in run.model.names.iter().zip(&run.fits) {
                println!("{name}: objective {:.3e}, bound1 {:.3e}, bound2 {:.3e}", fit.objective, fit.bound1, fit.bound2);
            }
        }
        Stage::Synthesize => {
            for (name, s) in run.model.names.iter().zip(&run.synthesis) {
                println!(
                    "{name}: {} vertices, worst spectral radius {:.4}, LMI margin {:.3e}",
                    s.vertex_radii.len(),
                    s.worst_vertex_radius,
                    s.lmi_margin
                );
            }
            println!("observer: composite spectral radius {:.3e}", run.observer.composite_radius);
        }
        Stage::Simulate => {
            let h = run.sim.horizon;
            println!("max |e| over the last third: {:.4e}", run.sim.max_abs_error((2 * h) / 3));
            println!("max |e({h})|: {:.4e}", run.sim.max_abs_error(h));
        }
        Stage::Bound => {
            for (name, b) in run.model.names.iter().zip(&run.bounds) {
                println!(
                    "{name}: beta {:.4}, mu {:.3}, asymptotic bound {:.4e}, r(T) {:.4e}",
                    b.contraction.beta,
                    b.contraction.mu,
                    b.series.asymptotic,
                    b.series.r.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
    }
}

fn print_report(report: &Report, sweep: &[SweepRow]) {
    println!("phi1 {:.4e}, phi2 {:.4e}", report.phi1, report.phi2);
    println!("lemma 1 check: {}", if report.lemma1 { "pass" } else { "FAIL" });
    println!("synchronized: {} (tail |e| {:.4e})", report.synchronized, report.max_tail_error);
    println!("containment: {}", if report.containment { "pass" } else { "FAIL" });
    println!("{:>8} {:>12} {:>12}", "level", "phi1 median", "phi2 median");
    for r in sweep {
        println!("{:>8} {:>12.4e} {:>12.4e}", r.level, r.phi1_median, r.phi2_median);
    }
}

fn run_stages(args: &RunArgs, until: Stage, full: bool) -> Result<()> {
    let cfg = args.config()?;
    let mut writer = BundleWriter::create(&args.out, &cfg)?;
    let mut hook = |stage: Stage, run: &Run| {
        writer.write_stage(stage, run)?;
        print_stage(stage, run);
        Ok(())
    };
    let outcome = run_until(&cfg, until, Some(&mut hook)).and_then(|run| {
        if full {
            let sweep = noise_sweep(&cfg, &cfg.sweep.levels, cfg.sweep.seeds)?;
            writer.write_sweep(&sweep)?;
            let report = build_report(&cfg, &run, sweep.clone())?;
            writer.write_report(&report)?;
            print_report(&report, &sweep);
        }
        Ok(())
    });
    if let Err(e) = &outcome {
        writer.mark_failed(e)?;
    }
    outcome
}

fn verify(root: &Path) -> Result<()> {
    let report = verify_bundle(root)?;
    for c in &report.checks {
        let who = c.agent.as_deref().map(|a| format!(" [{a}]")).unwrap_or_default();
        println!("{} {}{who}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<String> = report.failures().map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Verification(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect(a) => run_stages(a, Stage::Collect, false),
        Command::Identify(a) => run_stages(a, Stage::Identify, false),
        Command::Regulate(a) => run_stages(a, Stage::Regulate, false),
        Command::Synthesize(a) => run_stages(a, Stage::Synthesize, false),
        Command::Simulate(a) => run_stages(a, Stage::Simulate, false),
        Command::Bound(a) => run_stages(a, Stage::Bound, false),
        Command::ReproPaper(a) => run_stages(a, Stage::Bound, true),
        Command::Verify { bundle, out } => verify(bundle.as_deref().unwrap_or(out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
