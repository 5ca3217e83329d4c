use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fairrel::config::{DatasetSpec, InterventionSpec, OUT_ENV};
use fairrel::layout::{read_config, write_interventions, write_text, INTERVENTIONS_FILE};
use fairrel::render::DEFAULT_BINS;
use fairrel::run::{
    aggregate, intervene_run, load_seeds, prepare_data, run_seed, write_manifest,
};
use fairrel::{
    compare_fairness, render, run_experiment, sweep_imbalance, DatasetKind, ExperimentConfig,
    Preset, RunOptions,
};
use fairrel_core::datagen::{sample_synthetic, Sidecar};
use fairrel_core::dataio::write_libsvm;
use fairrel_core::interventions::{Algorithm, SelectionRule};

#[derive(Parser)]
#[command(name = "fairrel", version, about = "Click-inferred relevance and fair-ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as libsvm plus a JSON sidecar.
    Generate {
        #[command(flatten)]
        exp: ExpArgs,
        /// Output libsvm file.
        #[arg(long)]
        file: PathBuf,
    },
    /// Train one seed into the run directory.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        seed: u64,
    },
    /// Recompute fairness, interventions and desiderata from seed files.
    Audit { run: PathBuf },
    /// Re-rank each seed's top-k and report fairness before and after.
    Intervene {
        run: PathBuf,
        #[arg(long, value_parser = parse_algorithm, num_args = 1.., required = true)]
        algorithm: Vec<Algorithm>,
        #[arg(long, value_parser = parse_rule, default_value = "most-underrepresented")]
        rule: SelectionRule,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Paired and unpaired tests of fairness under true vs predicted relevance.
    Compare { run: PathBuf },
    /// Repeat the protocol on subsamples with growing majority share.
    SweepImbalance {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated majority fractions in [0.5, 0.9].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        n_out: Option<usize>,
    },
    /// SVG figures and summary tables for a run.
    Render {
        run: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Train, aggregate, compare and render in one go.
    RunAll {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
}

/// Config selection: a JSON file or a preset, then flag overrides.
#[derive(Args)]
struct ExpArgs {
    /// JSON config file; takes precedence over --preset/--dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "full", value_parser = parse_preset)]
    preset: Preset,
    #[arg(long, default_value = "synth-normal", value_parser = parse_kind)]
    dataset: DatasetKind,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Number of generated items.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_algorithm)]
    intervention: Vec<Algorithm>,
    #[arg(long)]
    dump_clicks: bool,
    /// Run directory. Defaults to $FAIRREL_OUT/<name>.
    #[arg(long, env = OUT_ENV, hide_env_values = true)]
    out_root: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep seed directories already finished under the same config.
    #[arg(long)]
    resume: bool,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {s:?} (desk, full)"))
}

fn parse_kind(s: &str) -> Result<DatasetKind, String> {
    DatasetKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = DatasetKind::ALL.iter().map(|k| k.as_str()).collect();
        format!("unknown dataset {s:?} ({})", names.join(", "))
    })
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s {
        "detcons" => Ok(Algorithm::DetCons),
        "detconstsort" => Ok(Algorithm::DetConstSort),
        _ => Err(format!("unknown algorithm {s:?} (detcons, detconstsort)")),
    }
}

fn parse_rule(s: &str) -> Result<SelectionRule, String> {
    match s {
        "most-underrepresented" => Ok(SelectionRule::MostUnderrepresented),
        "best-score" => Ok(SelectionRule::BestScore),
        _ => Err(format!("unknown rule {s:?} (most-underrepresented, best-score)")),
    }
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => {
                let mut c = ExperimentConfig::preset(self.preset, self.dataset);
                if let Some(root) = &self.out_root {
                    c.output_dir = root.join(&c.name);
                }
                c
            }
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(i) = self.iterations {
            cfg.train.iterations = i;
        }
        if let Some(n) = self.n {
            match &mut cfg.dataset {
                DatasetSpec::Synthetic { dag, .. } => dag.n = n,
                DatasetSpec::Libsvm { .. } => bail!("--n applies to synthetic datasets only"),
            }
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if !self.intervention.is_empty() {
            cfg.interventions = self
                .intervention
                .iter()
                .map(|&algorithm| InterventionSpec {
                    algorithm,
                    rule: SelectionRule::default(),
                })
                .collect();
        }
        cfg.dump_clicks |= self.dump_clicks;
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            resume: self.resume,
        }
    }
}

fn report_manifest(m: &fairrel::layout::Manifest) -> bool {
    for s in &m.seeds {
        if let Some(e) = &s.error {
            eprintln!("seed {}: {e}", s.seed);
        }
    }
    for (stage, e) in &m.stage_errors {
        eprintln!("{stage}: {e}");
    }
    m.ok()
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { exp, file } => {
            let cfg = exp.config()?;
            let DatasetSpec::Synthetic { dag, data_seed, .. } = &cfg.dataset else {
                bail!("generate needs a synthetic dataset");
            };
            let syn = sample_synthetic(dag, *data_seed)?;
            write_text(&file, &write_libsvm(&syn.dataset))?;
            let sidecar = Sidecar {
                config: dag.clone(),
                seed: *data_seed,
                utility: syn.utility,
            };
            fairrel::layout::write_json(&file.with_extension("json"), &sidecar)?;
            println!("{} items -> {}", syn.dataset.len(), file.display());
            Ok(true)
        }
        Command::Train { exp, seed } => {
            let mut cfg = exp.config()?;
            if !cfg.seeds.contains(&seed) {
                cfg.seeds.push(seed);
            }
            let run = cfg.output_dir.clone();
            if let Ok(existing) = read_config(&run) {
                if existing.hash() != cfg.hash() {
                    bail!("{} holds a run with a different config", run.display());
                }
            }
            fairrel::layout::write_config(&run, &cfg)?;
            let data = prepare_data(&cfg)?;
            let s = run_seed(&cfg, &data, &run, seed);
            if let Some(e) = &s.error {
                eprintln!("seed {seed}: {e}");
            }
            Ok(s.ok())
        }
        Command::Audit { run } => {
            let cfg = read_config(&run)?;
            let errors = aggregate(&run, &cfg);
            let m = write_manifest(&run, &cfg, errors)?;
            if let Ok(t) = std::fs::read_to_string(run.join(fairrel::layout::DESIDERATA_TXT)) {
                print!("{t}");
            }
            Ok(report_manifest(&m))
        }
        Command::Intervene {
            run,
            algorithm,
            rule,
            k,
        } => {
            let cfg = read_config(&run)?;
            let specs: Vec<InterventionSpec> = algorithm
                .into_iter()
                .map(|algorithm| InterventionSpec { algorithm, rule })
                .collect();
            let seeds = load_seeds(&run, &cfg.seeds)?;
            let k = k.unwrap_or(cfg.k);
            let rows = intervene_run(&run, &seeds, &specs, k, cfg.normalize, cfg.score)?;
            write_interventions(&run.join(INTERVENTIONS_FILE), &rows)?;
            println!("{} rows -> {}", rows.len(), run.join(INTERVENTIONS_FILE).display());
            Ok(true)
        }
        Command::Compare { run } => {
            print!("{}", compare_fairness(&run)?.table());
            Ok(true)
        }
        Command::SweepImbalance {
            exp,
            fractions,
            n_out,
        } => {
            let mut cfg = exp.config()?;
            if let Some(f) = fractions {
                cfg.sweep.fractions = f;
            }
            if let Some(n) = n_out {
                cfg.sweep.n_out = n;
            }
            let rep = sweep_imbalance(&cfg, exp.options())?;
            for r in &rep.rows {
                println!(
                    "fraction {:.2} {:<20} delta {:+.4} ± {:.4}",
                    r.fraction, r.metric, r.delta.mean, r.delta.sd
                );
            }
            Ok(true)
        }
        Command::Render { run, bins } => {
            for p in render(&run, bins)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::RunAll { exp, bins } => {
            let cfg = exp.config()?;
            let out = run_experiment(&cfg, exp.options())?;
            let mut ok = report_manifest(&out.manifest);
            match compare_fairness(&out.run_dir) {
                Ok(c) => print!("{}", c.table()),
                Err(e) => {
                    eprintln!("compare: {e}");
                    ok = false;
                }
            }
            if let Ok(t) = std::fs::read_to_string(out.run_dir.join(fairrel::layout::DESIDERATA_TXT)) {
                print!("{t}");
            }
            if let Err(e) = render(&out.run_dir, bins) {
                eprintln!("render: {e}");
                ok = false;
            }
            println!("run directory: {}", out.run_dir.display());
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli).context("fairrel") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
