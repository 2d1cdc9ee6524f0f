use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use modpulse::harness::{self, Check, ExperimentConfig, Pipeline, SCENARIOS};
use modpulse::io::{self, FieldSidecar};

/// Bloch-wave pulse experiments for periodic cubic NLS.
#[derive(Parser)]
#[command(name = "modpulse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// TOML experiment configuration.
    #[arg(long, short, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario to use as the configuration.
    #[arg(long, short)]
    scenario: Option<String>,
    /// Output directory (default: `output_dir` from the config, else `out/<command>`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Band energies along a path in the Brillouin zone.
    Bands(Source),
    /// Resonance search, resonant quadruples and the closure certificate.
    Resonances(Source),
    /// Coupling constants of all resonant quadruples.
    Couplings(Source),
    /// Integrate the amplitude equations and track conserved quantities.
    Amplitudes(Source),
    /// Integrate the full NLS from the leading-order initial datum.
    Nls {
        #[command(flatten)]
        source: Source,
        /// Inverse scale parameter, ε = 1/q.
        #[arg(long)]
        q: usize,
        /// Keep a field checkpoint every this many steps (0: final only).
        #[arg(long, default_value_t = 0)]
        every: usize,
    },
    /// Error of the two-scale approximation over the configured ε values.
    Convergence(Source),
    /// Run a named scenario end to end.
    Scenario {
        name: String,
        /// Replace the built-in configuration.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print a built-in scenario configuration as TOML.
    Preset { name: String },
}

fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl Source {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        match (&self.config, &self.scenario) {
            (Some(path), _) => load(path),
            (None, Some(name)) => Ok(harness::preset(name)?),
            (None, None) => bail!("pass --config <file> or --scenario <name> (one of {SCENARIOS:?})"),
        }
    }

    fn out_dir(&self, cfg: &ExperimentConfig, command: &str) -> PathBuf {
        self.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| Path::new("out").join(command))
    }
}

fn report(checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {}: {:e} (tolerance {:e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    harness::all_pass(checks)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Bands(src) => {
            let cfg = src.config()?;
            let dir = src.out_dir(&cfg, "bands");
            let r = harness::run_bands(&cfg)?;
            r.write_csv(&dir.join("bands.csv"))?;
            println!("{} k-points, {} bands -> {}", r.rows.len(), cfg.bands.count, dir.display());
            for (i, g) in r.min_gaps.iter().enumerate() {
                println!("min gap E{} -> E{}: {g:e}", i + 1, i + 2);
            }
            if !r.degeneracies.is_empty() {
                println!("{} degenerate (row, band) samples", r.degeneracies.len());
            }
            Ok(true)
        }
        Command::Resonances(src) => {
            let cfg = src.config()?;
            let dir = src.out_dir(&cfg, "resonances");
            let p = Pipeline::build(&cfg)?;
            let r = harness::run_resonances(&p);
            io::write_json(&dir.join("resonances.json"), &r)?;
            if let Some(t) = &r.search {
                println!("search triple k = {:?}, residual {:e}", t.k, t.residual);
            }
            println!("{} resonant quadruples (1-based): {:?}", r.quadruples.len(), r.quadruples);
            println!("closure of order {}: {:?} [{}]", r.certificate.order, r.certificate.verdict, r.certificate_digest);
            Ok(r.certificate.is_closed())
        }
        Command::Couplings(src) => {
            let cfg = src.config()?;
            let dir = src.out_dir(&cfg, "couplings");
            let p = Pipeline::build(&cfg)?;
            harness::write_coupling_csv(&p.table, &dir.join("couplings.csv"))?;
            for (q, v) in &p.table.entries {
                println!("{:?} {:e} {:+e}i", q.map(|x| x + 1), v.re, v.im);
            }
            Ok(true)
        }
        Command::Amplitudes(src) => {
            let cfg = src.config()?;
            let dir = src.out_dir(&cfg, "amplitudes");
            let p = Pipeline::build(&cfg)?;
            let run = harness::run_amplitudes(&p, &p.initial)?;
            run.write_series_csv(&dir.join("conserved.csv"))?;
            run.write_final_state(&p, &dir.join("amplitudes_final"))?;
            let d = &run.drifts;
            let mut checks = vec![
                Check::at_most("mass drift", d.mass, 1e-6),
                Check::at_most("I drift", d.energy_weighted, 1e-6),
                Check::at_most("H_red drift", d.hamiltonian, 1e-6),
            ];
            for (i, w) in d.weighted.iter().enumerate() {
                checks.push(Check::at_most(&format!("Itilde{} drift", i + 1), *w, 1e-6));
            }
            Ok(report(&checks))
        }
        Command::Nls { source, q, every } => {
            let cfg = source.config()?;
            let dir = source.out_dir(&cfg, "nls");
            let p = Pipeline::build(&cfg)?;
            let (summary, out, solver) = harness::run_nls(&p, q, every)?;
            io::write_json(&dir.join("nls_summary.json"), &summary)?;
            for (i, w) in out.iter().enumerate() {
                let side = FieldSidecar {
                    kind: "nls".into(),
                    t: w.t,
                    eps: Some(summary.eps),
                    grid: solver.grid().shape(),
                    components: 1,
                    potential_digest: Some(solver.potential_digest().to_string()),
                    modes: p.system.modes.iter().map(|m| (m.k.clone(), m.band)).collect(),
                };
                io::write_field(&dir.join(format!("field_{i:04}")), &w.u, &side)?;
            }
            println!("ε = {:e}, {} steps of {:e}, {} checkpoints", summary.eps, summary.steps, summary.dt, out.len());
            Ok(report(&[
                Check::at_most("mass drift", summary.mass_drift, 1e-10),
                Check::at_most("energy drift", summary.energy_drift, 1e-3),
            ]))
        }
        Command::Convergence(src) => {
            let cfg = src.config()?;
            let dir = src.out_dir(&cfg, "convergence");
            let p = Pipeline::build(&cfg)?;
            let r = harness::run_convergence(&p)?;
            r.write_csv(&dir.join("convergence.csv"))?;
            io::write_json(&dir.join("convergence.json"), &r)?;
            for row in &r.rows {
                println!(
                    "ε = 1/{:<4} error {:e}  first-order {:e}  residual ratio {:.3}",
                    row.q, row.error, row.error_first_order, row.residual_ratio
                );
            }
            println!(
                "slope {:.4} (window {:?}), fit residual {:e}, solvability {:e}",
                r.slope, r.window, r.fit_residual, r.solvability_defect
            );
            println!("{}", if r.pass { "pass" } else { "FAIL" });
            Ok(r.pass)
        }
        Command::Scenario { name, config, out } => {
            let cfg = match &config {
                Some(path) => load(path)?,
                None => harness::preset(&name)?,
            };
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| Path::new("out").join(&name));
            let r = harness::run_scenario(&name, &cfg, Some(&dir))?;
            println!(
                "{name}: {} modes, {} resonant quadruples -> {}",
                r.resonances.modes.len(),
                r.resonances.quadruples.len(),
                dir.display()
            );
            let ok = report(&r.checks);
            if let Some(c) = &r.convergence {
                println!(
                    "{} convergence slope {:.4}, fit residual {:e}",
                    if c.pass { "ok  " } else { "FAIL" },
                    c.slope,
                    c.fit_residual
                );
            }
            Ok(ok && r.pass())
        }
        Command::Preset { name } => {
            print!("{}", toml::to_string_pretty(&harness::preset(&name)?)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
