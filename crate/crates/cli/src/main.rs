//! Command-line front end: full closed-loop runs, the pruning Monte Carlo
//! demo, Poisson-Binomial PMF evaluation and attack synthesis inspection.

mod plots;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pruning_observer::config::{ScenarioConfig, Strategy};
use pruning_observer::pruning::poisson_binomial_pmf;
use pruning_observer::scenario::{self, MetricsSummary};
use pruning_observer::{fdia, monitor, robot, Error, Result};

#[derive(Parser)]
#[command(
    name = "pruning-observer",
    about = "Attack-resilient path-tracking simulation for a differential-drive robot",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write run.csv, metrics.json and SVG charts.
    Run {
        /// Scenario configuration (TOML).
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $PRUNING_OBSERVER_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run all three observer strategies and write a comparison table.
        #[arg(long)]
        sweep_strategies: bool,
    },
    /// Monte Carlo validation of the pruning exclusion behavior.
    PruneMc {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the Poisson-Binomial PMF of comma-separated success rates.
    Pmf {
        /// e.g. "0.5,0.5"
        rates: String,
    },
    /// Synthesize the configured attack and report its stealth margins.
    Attack { config: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os("PRUNING_OBSERVER_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out, sweep_strategies } => {
            let mut scenario_config = ScenarioConfig::from_path(&config)?;
            if let Some(seed) = seed {
                scenario_config.seed = seed;
            }
            let out = out_dir(out);
            if sweep_strategies {
                sweep(&scenario_config, &out)
            } else {
                run_once(&scenario_config, &out).map(|_| ())
            }
        }
        Command::PruneMc { config, seed, out } => {
            let scenario_config = ScenarioConfig::from_path(&config)?;
            let seed = seed.unwrap_or(scenario_config.seed);
            prune_mc(&scenario_config, seed, &out_dir(out))
        }
        Command::Pmf { rates } => pmf(&rates),
        Command::Attack { config } => attack_report(&ScenarioConfig::from_path(&config)?),
    }
}

fn run_once(config: &ScenarioConfig, out: &Path) -> Result<MetricsSummary> {
    std::fs::create_dir_all(out)?;
    let result = scenario::run(config)?;
    let csv_path = out.join("run.csv");
    result.log.write_csv(std::fs::File::create(&csv_path)?)?;
    let metrics_json = serde_json::to_string_pretty(&result.metrics)
        .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
    std::fs::write(out.join("metrics.json"), metrics_json)?;
    plots::path_overlay(&result.log, &out.join("path.svg"))?;
    plots::velocity_estimates(&result.log, &out.join("velocity.svg"))?;
    plots::monitor_timeline(&result.log, &out.join("monitor.svg"))?;
    println!(
        "{}: steps={} tracking_rmse={:.4} m, v_rmse={:.5} m/s, detection={:.3}, outputs in {}",
        result.metrics.strategy,
        result.metrics.steps,
        result.metrics.tracking_rmse_pos,
        result.metrics.est_rmse_v,
        result.metrics.monitor_detection_rate,
        out.display()
    );
    Ok(result.metrics)
}

fn sweep(config: &ScenarioConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for strategy in Strategy::all() {
        let mut c = config.clone();
        c.observer = strategy;
        let metrics = run_once(&c, &out.join(strategy.name()))?;
        rows.push(metrics);
    }
    let mut writer = csv::WriterBuilder::new().from_path(out.join("summary.csv"))?;
    writer.write_record([
        "strategy",
        "tracking_rmse_pos",
        "tracking_rmse_pos_post_attack",
        "est_rmse_v_post_attack",
        "est_rmse_omega_post_attack",
        "monitor_detection_rate",
        "mask_exclusion_rate",
    ])?;
    for m in &rows {
        writer.write_record([
            m.strategy.clone(),
            m.tracking_rmse_pos.to_string(),
            m.tracking_rmse_pos_post_attack.to_string(),
            m.est_rmse_v_post_attack.to_string(),
            m.est_rmse_omega_post_attack.to_string(),
            m.monitor_detection_rate.to_string(),
            m.mask_exclusion_rate.to_string(),
        ])?;
    }
    writer.flush()?;
    println!("summary written to {}", out.join("summary.csv").display());
    Ok(())
}

fn prune_mc(config: &ScenarioConfig, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let settings = &config.prune_mc;
    let mut writer = csv::WriterBuilder::new().from_path(out.join("prune_mc.csv"))?;
    writer.write_record([
        "eta",
        "l_eta",
        "trials",
        "exclusion_rate",
        "tail_rate",
        "max_retained_attacked",
        "mean_retained",
    ])?;
    println!(
        "nodes={} attacked={:?} trials={} tpr={} confidence={}",
        settings.nodes, settings.attacked, settings.trials, settings.tpr, settings.confidence
    );
    for &eta in &settings.etas {
        let stats = scenario::prune_monte_carlo(settings, seed, eta)?;
        println!(
            "eta={:.2} l_eta={:2} exclusion={:.4} tail={:.4} max_retained_attacked={} mean_retained={:.2}",
            stats.eta,
            stats.l_eta,
            stats.exclusion_rate,
            stats.tail_rate,
            stats.max_retained_attacked,
            stats.mean_retained
        );
        writer.write_record([
            stats.eta.to_string(),
            stats.l_eta.to_string(),
            stats.trials.to_string(),
            stats.exclusion_rate.to_string(),
            stats.tail_rate.to_string(),
            stats.max_retained_attacked.to_string(),
            stats.mean_retained.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn pmf(rates: &str) -> Result<()> {
    let parsed: std::result::Result<Vec<f64>, _> =
        rates.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let rates = parsed.map_err(|e| Error::Config(format!("invalid rate list: {e}")))?;
    if rates.is_empty() {
        return Err(Error::Config("rate list is empty".into()));
    }
    let pmf = poisson_binomial_pmf(&rates)?;
    let rendered: Vec<String> = pmf.values().iter().map(|v| v.to_string()).collect();
    println!("{}", rendered.join(" "));
    Ok(())
}

fn attack_report(config: &ScenarioConfig) -> Result<()> {
    config.validate()?;
    let process = config.noise.process()?;
    let meas = config.noise.measurement()?;
    let monitor_cfg = monitor::calibrate(
        &process,
        &meas,
        config.dt,
        config.monitor.horizon,
        config.monitor.sigma_gain,
    );
    let alpha = scenario::effective_alpha(config, &monitor_cfg);
    let r0 = config.trajectory.sample(config.attack.start_time);
    let q0 = robot::c_inverse(r0.theta_d, &config.robot) * r0.z_d_dot;
    let x0 = nalgebra::Vector3::new(r0.theta_d, q0[0], q0[1]);
    let (solution, channels) = scenario::solve_attack(config, &x0, alpha)?;
    let base = fdia::first_block(&solution.e);
    println!("operating point: theta={:.4} v={:.4} omega={:.4}", x0[0], x0[1], x0[2]);
    println!(
        "support channels (1-based): {:?}",
        channels.iter().map(|c| c + 1).collect::<Vec<_>>()
    );
    println!("branch: {:?}", solution.branch);
    println!("stacked ||e|| = {:.6}, objective = {:.6}", solution.e.norm(), solution.objective);
    println!("per-step base pattern: {:?}", base.iter().cloned().collect::<Vec<f64>>());
    println!(
        "leakage ||U2' e|| = {:.3e} against budget sqrt(alpha) = {:.3e} (eps_v = {:.4})",
        solution.leak,
        alpha.sqrt(),
        monitor_cfg.eps_v
    );
    let outcome = scenario::stealth_trial(config, config.seed)?;
    println!(
        "linearized-loop trial: monitor {} | v-estimate displacement {:+.5} m/s (target {:.5})",
        if outcome.alarmed { "ALARMED" } else { "quiet" },
        outcome.v_displacement,
        config.attack.target_v_displacement
    );
    Ok(())
}
