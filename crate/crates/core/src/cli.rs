//! Command-line front end.
//!
//! Exit codes: 0 on success (including algorithm failures, which are reported
//! as data), 1 on usage errors, 2 on runtime or guard errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::channel::{corrupt, ObservationSet};
use crate::cutmetrics::{cut_metrics_report, COUNT_MAX_N};
use crate::graphs::{degree_stats, edge_expansion, gen_graph, min_cut, Graph, GraphModel};
use crate::group::{GroupSpec, Relation, RelationOp};
use crate::harness::{
    estimate_threshold, linear_grid, predicted_rate, run_algorithm, sweep_to_csv, Algorithm,
    GraphKind, SweepConfig, TrialConfig, DEFAULT_REFINE_ROUNDS,
};
use crate::recover::{success, Assignment, DEFAULT_BUDGET};

pub const THREADS_ENV: &str = "PAIRLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "pairlab",
    version,
    about = "Exact recovery from corrupted pairwise relations on graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Er,
    Geo,
    Sw,
    Ring,
    Complete,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgArg {
    Exhaustive,
    Cycle,
    Spectral,
    Local,
}

#[derive(Debug, clap::Args)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub n: usize,
    /// Edge probability (er) or rewiring probability (sw).
    #[arg(long)]
    pub q: Option<f64>,
    /// Chord radius for the geometric model.
    #[arg(long)]
    pub r: Option<f64>,
    /// Lattice degree for the small-world model.
    #[arg(long = "k-lattice")]
    pub k_lattice: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct AlgFlags {
    #[arg(long, value_enum)]
    pub alg: AlgArg,
    /// Cycle order for `--alg cycle`.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Extra random restarts for `--alg local`.
    #[arg(long, default_value_t = 0)]
    pub restarts: usize,
    /// Coordinate-ascent sweeps after spectral rounding.
    #[arg(long, default_value_t = DEFAULT_REFINE_ROUNDS)]
    pub refine: usize,
    /// State budget (exhaustive) or walk budget (cycle).
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a graph.
    Gen {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        seed: u64,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Sample corrupted observations on a graph.
    Corrupt {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "M")]
        modulus: u64,
        #[arg(long, default_value = "diff")]
        op: RelationOp,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        seed: u64,
        /// Planted assignment to use; drawn from the seed when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Where to write the planted assignment.
        #[arg(long = "truth-out")]
        truth_out: Option<PathBuf>,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Recover an assignment from observations.
    Recover {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[command(flatten)]
        alg: AlgFlags,
        /// Required for `--alg local`.
        #[arg(long)]
        seed: Option<u64>,
        /// Planted assignment; adds a `success` field to the output.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Degree, cut and expansion statistics of a graph.
    Metrics {
        #[arg(long)]
        graph: PathBuf,
        /// Cross-cut parameter K.
        #[arg(long = "K", default_value_t = 4.0)]
        k: f64,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Order-level predicted recovery rate.
    Predict {
        #[arg(long)]
        n: usize,
        #[arg(long = "M")]
        modulus: u64,
        #[arg(long = "d-max")]
        d_max: usize,
        /// Treat the graph as Erdős–Rényi with this edge probability.
        #[arg(long = "p-obs")]
        p_obs: Option<f64>,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Run a grid of trial configurations into a CSV file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Skip cells already present in the output file.
        #[arg(long)]
        resume: bool,
        /// Record mean runtimes (makes the output machine dependent).
        #[arg(long)]
        timing: bool,
    },
    /// Locate the 50% success crossing over a grid of p.
    Threshold {
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long = "M")]
        modulus: u64,
        #[arg(long, default_value = "diff")]
        op: RelationOp,
        #[command(flatten)]
        alg: AlgFlags,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long = "p-min", default_value_t = 0.0)]
        p_min: f64,
        #[arg(long = "p-max", default_value_t = 1.0)]
        p_max: f64,
        #[arg(long = "p-step", default_value_t = 0.02)]
        p_step: f64,
        /// Reuse a single graph across trials.
        #[arg(long = "fixed-graph")]
        fixed_graph: bool,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(runtime)
        }
    }
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
    s.push('\n');
    emit(out, &s)
}

fn graph_model(f: &ModelFlags) -> Result<GraphModel, CliError> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| CliError::Usage(format!("--{flag} is required for this model")))
    };
    Ok(match f.model {
        ModelArg::Er => GraphModel::ErdosRenyi { q: need(f.q, "q")? },
        ModelArg::Geo => GraphModel::Geometric { r: need(f.r, "r")? },
        ModelArg::Sw => GraphModel::SmallWorld {
            k: f.k_lattice
                .ok_or_else(|| CliError::Usage("--k-lattice is required for this model".into()))?,
            q: need(f.q, "q")?,
        },
        ModelArg::Ring => GraphModel::Ring,
        ModelArg::Complete => GraphModel::Complete,
    })
}

fn algorithm(f: &AlgFlags) -> Algorithm {
    match f.alg {
        AlgArg::Exhaustive => Algorithm::Exhaustive,
        AlgArg::Cycle => Algorithm::Cycle { k: f.k },
        AlgArg::Spectral => Algorithm::Spectral {
            refine_rounds: f.refine,
        },
        AlgArg::Local => Algorithm::LocalSearch {
            restarts: f.restarts,
        },
    }
}

fn load_graph(path: &Path) -> Result<Graph, CliError> {
    read(path)?
        .parse::<Graph>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_truth(path: &Path) -> Result<(Assignment, GroupSpec), CliError> {
    Assignment::from_text(&read(path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Builds the global rayon pool from `PAIRLAB_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got '{v}'"
        ))
    })?;
    // a second call in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Gen { model, seed, out } => {
            let g = gen_graph(graph_model(&model)?, model.n, seed).map_err(runtime)?;
            emit(out.as_deref(), &g.to_text())
        }
        Command::Corrupt {
            graph,
            modulus,
            op,
            p,
            seed,
            truth,
            truth_out,
            out,
        } => {
            let g = load_graph(&graph)?;
            let group = GroupSpec::new(modulus).map_err(runtime)?;
            let rel = Relation::new(op, group).map_err(runtime)?;
            let x = match truth {
                Some(path) => {
                    let (x, tg) = load_truth(&path)?;
                    if tg != group {
                        return Err(CliError::Runtime(format!(
                            "truth modulus {} does not match --M {modulus}",
                            tg.modulus()
                        )));
                    }
                    x
                }
                None => {
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                        crate::channel::derive_seed(seed, crate::harness::TRUTH_DOMAIN, 0),
                    );
                    Assignment::random(g.n(), group, &mut rng)
                }
            };
            let obs = corrupt(&x, rel, &g, p, seed).map_err(runtime)?;
            if let Some(path) = truth_out {
                emit(Some(&path), &x.to_text(group))?;
            }
            emit(out.as_deref(), &obs.to_text())
        }
        Command::Recover {
            graph,
            obs,
            alg,
            seed,
            truth,
            out,
        } => {
            let g = load_graph(&graph)?;
            let o: ObservationSet = read(&obs)?
                .parse()
                .map_err(|e| CliError::Runtime(format!("{}: {e}", obs.display())))?;
            let algo = algorithm(&alg);
            let seed = match (algo, seed) {
                (Algorithm::LocalSearch { .. }, None) => {
                    return Err(CliError::Usage("--seed is required for --alg local".into()))
                }
                (_, s) => s.unwrap_or(0),
            };
            let res = run_algorithm(algo, &g, &o, seed, alg.budget).map_err(runtime)?;
            let mut value = serde_json::to_value(&res).map_err(runtime)?;
            value["algorithm"] = json!(algo.to_string());
            if let Some(path) = truth {
                let (x, tg) = load_truth(&path)?;
                if tg != o.group() || x.len() != g.n() {
                    return Err(CliError::Runtime(
                        "truth does not match the observations".into(),
                    ));
                }
                let ok = res
                    .assignment
                    .as_ref()
                    .is_some_and(|xh| success(xh, &x, &o.relation()));
                value["success"] = json!(ok);
            }
            emit_json(out.as_deref(), &value)
        }
        Command::Metrics { graph, k, out } => {
            let g = load_graph(&graph)?;
            let mut value = json!({
                "n": g.n(),
                "m": g.m(),
                "degree": degree_stats(&g),
                "min_cut": min_cut(&g),
            });
            value["edge_expansion"] = match edge_expansion(&g) {
                Ok(e) => json!({ "value": e.value(), "detail": e }),
                Err(e) => json!({ "error": e.to_string() }),
            };
            value["cut_metrics"] = if g.n() <= COUNT_MAX_N {
                match cut_metrics_report(&g, k) {
                    Ok(r) => serde_json::to_value(r).map_err(runtime)?,
                    Err(e) => json!({ "error": e.to_string() }),
                }
            } else {
                Value::Null
            };
            emit_json(out.as_deref(), &value)
        }
        Command::Predict {
            n,
            modulus,
            d_max,
            p_obs,
            out,
        } => {
            let kind = p_obs.map_or(GraphKind::General, |p_obs| GraphKind::ErdosRenyi { p_obs });
            let r = predicted_rate(n, modulus, d_max, kind).map_err(runtime)?;
            emit_json(out.as_deref(), &r)
        }
        Command::Sweep {
            config,
            out,
            resume,
            timing,
        } => {
            let cfg: SweepConfig = serde_json::from_str(&read(&config)?)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", config.display())))?;
            let report = sweep_to_csv(&cfg, &out, resume, timing).map_err(runtime)?;
            eprintln!(
                "{} cells written, {} skipped",
                report.written, report.skipped
            );
            Ok(())
        }
        Command::Threshold {
            model,
            modulus,
            op,
            alg,
            trials,
            seed,
            p_min,
            p_max,
            p_step,
            fixed_graph,
            out,
        } => {
            if p_step.is_nan() || p_step <= 0.0 {
                return Err(CliError::Usage("--p-step must be positive".into()));
            }
            let template = TrialConfig {
                model: graph_model(&model)?,
                n: model.n,
                modulus,
                op,
                p: p_max,
                algorithm: algorithm(&alg),
                master_seed: seed,
                fixed_graph,
                budget: alg.budget,
            };
            let grid = linear_grid(p_min, p_max, p_step);
            let est = estimate_threshold(&template, &grid, trials).map_err(runtime)?;
            emit_json(out.as_deref(), &est)
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("error: {m}"),
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        // parse failures go to stderr (exit 1); help and version do not
        for args in [
            &["pairlab", "gen", "--model", "ring", "--n", "5"][..],
            &["pairlab", "frobnicate"],
        ] {
            assert!(Cli::try_parse_from(args).unwrap_err().use_stderr());
        }
        assert!(!Cli::try_parse_from(["pairlab", "--help"])
            .unwrap_err()
            .use_stderr());
        assert!(!Cli::try_parse_from(["pairlab", "recover", "--help"])
            .unwrap_err()
            .use_stderr());
        assert_eq!(
            run(["pairlab", "gen", "--model", "er", "--n", "5", "--seed", "1"]),
            1
        );
    }

    #[test]
    fn guard_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("g.txt");
        let o = out.to_str().unwrap();
        assert_eq!(
            run(["pairlab", "gen", "--model", "ring", "--n", "2", "--seed", "1", "-o", o]),
            2
        );
        assert_eq!(
            run(["pairlab", "predict", "--n", "10", "--M", "2", "--d-max", "0"]),
            2
        );
    }

    fn path(dir: &tempfile::TempDir, name: &str) -> String {
        dir.path().join(name).to_str().unwrap().to_string()
    }

    fn json_file(p: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
    }

    #[test]
    fn gen_ring_example() {
        let dir = tempfile::tempdir().unwrap();
        let g = path(&dir, "g.txt");
        assert_eq!(
            run(["pairlab", "gen", "--model", "ring", "--n", "5", "--seed", "1", "-o", &g]),
            0
        );
        let text = fs::read_to_string(&g).unwrap();
        assert!(text.starts_with("5 5\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn corrupt_then_recover_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let (g, o, t, r) = (
            path(&dir, "g"),
            path(&dir, "o"),
            path(&dir, "t"),
            path(&dir, "r"),
        );
        assert_eq!(
            run([
                "pairlab", "gen", "--model", "er", "--q", "0.7", "--n", "7", "--seed", "4", "-o",
                &g
            ]),
            0
        );
        for op in ["diff", "sum", "affine:2:3"] {
            let args = [
                "pairlab", "corrupt", "--graph", &g, "--M", "5", "--op", op, "--p", "1", "--seed",
                "9",
            ];
            assert_eq!(
                run(args.iter().copied().chain(["--truth-out", &t, "-o", &o])),
                0
            );
            assert_eq!(
                run([
                    "pairlab",
                    "recover",
                    "--graph",
                    &g,
                    "--obs",
                    &o,
                    "--alg",
                    "exhaustive",
                    "--truth",
                    &t,
                    "-o",
                    &r
                ]),
                0
            );
            let v = json_file(&r);
            assert_eq!(v["success"], true, "{op}");
            assert_eq!(v["status"], "Recovered");
            assert_eq!(
                run([
                    "pairlab", "recover", "--graph", &g, "--obs", &o, "--alg", "local", "--seed",
                    "2", "--truth", &t, "-o", &r
                ]),
                0
            );
            assert_eq!(json_file(&r)["success"], true, "{op}");
        }
        // the truth file can be fed back in
        assert_eq!(
            run([
                "pairlab", "corrupt", "--graph", &g, "--M", "5", "--p", "0.5", "--seed", "1",
                "--truth", &t, "-o", &o
            ]),
            0
        );
        assert_eq!(
            run([
                "pairlab", "corrupt", "--graph", &g, "--M", "6", "--p", "0.5", "--seed", "1",
                "--truth", &t, "-o", &o
            ]),
            2
        );
    }

    #[test]
    fn cycle_failure_is_data() {
        let dir = tempfile::tempdir().unwrap();
        let (g, o, r) = (path(&dir, "g"), path(&dir, "o"), path(&dir, "r"));
        assert_eq!(
            run(["pairlab", "gen", "--model", "ring", "--n", "8", "--seed", "1", "-o", &g]),
            0
        );
        assert_eq!(
            run([
                "pairlab", "corrupt", "--graph", &g, "--M", "7", "--p", "1", "--seed", "1", "-o",
                &o
            ]),
            0
        );
        assert_eq!(
            run([
                "pairlab", "recover", "--graph", &g, "--obs", &o, "--alg", "cycle", "--k", "3",
                "-o", &r
            ]),
            0
        );
        assert_eq!(json_file(&r)["status"], "Failed(Disconnected)");
        // guard violations are not
        assert_eq!(
            run([
                "pairlab", "recover", "--graph", &g, "--obs", &o, "--alg", "cycle", "--k", "2",
                "-o", &r
            ]),
            2
        );
        assert_eq!(
            run(["pairlab", "recover", "--graph", &g, "--obs", &o, "--alg", "local", "-o", &r]),
            1
        );
        assert_eq!(
            run([
                "pairlab", "corrupt", "--graph", &g, "--M", "7", "--op", "sum", "--p", "1",
                "--seed", "1", "-o", &o
            ]),
            0
        );
        assert_eq!(
            run(["pairlab", "recover", "--graph", &g, "--obs", &o, "--alg", "spectral", "-o", &r]),
            2
        );
    }

    #[test]
    fn metrics_predict_threshold_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let (g, m) = (path(&dir, "g"), path(&dir, "m"));
        assert_eq!(
            run(["pairlab", "gen", "--model", "complete", "--n", "5", "--seed", "0", "-o", &g]),
            0
        );
        assert_eq!(run(["pairlab", "metrics", "--graph", &g, "-o", &m]), 0);
        let v = json_file(&m);
        assert_eq!(v["min_cut"]["value"], 4);
        assert_eq!(v["cut_metrics"]["log_base"], "e");

        assert_eq!(
            run([
                "pairlab", "predict", "--n", "1000", "--M", "2", "--d-max", "999", "--p-obs", "1",
                "-o", &m
            ]),
            0
        );
        assert_eq!(json_file(&m)["regime"], "information_limited");

        let args = [
            "pairlab",
            "threshold",
            "--model",
            "complete",
            "--n",
            "6",
            "--M",
            "3",
            "--alg",
            "exhaustive",
        ];
        let rest = [
            "--trials", "10", "--seed", "5", "--p-min", "0.2", "--p-max", "1", "--p-step", "0.2",
            "-o", &m,
        ];
        assert_eq!(run(args.iter().copied().chain(rest)), 0);
        let v = json_file(&m);
        assert!(v["p_hat"].as_f64().unwrap() <= 1.0);
        assert_eq!(v["grid"].as_array().unwrap().len(), 5);

        let cfg = path(&dir, "cfg.json");
        let csv_out = path(&dir, "out.csv");
        fs::write(
            &cfg,
            r#"{"models":[{"model":"ring"}],"n":[6],"M":[3],"p":[1.0],"algorithm":["spectral","cycle(6)"],"trials":4,"master_seed":1}"#,
        )
        .unwrap();
        assert_eq!(
            run(["pairlab", "sweep", "--config", &cfg, "-o", &csv_out]),
            0
        );
        let text = fs::read_to_string(&csv_out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(
            text.lines().skip(1).all(|l| l.contains(",4,4,,1,")),
            "{text}"
        );
        assert_eq!(
            run(["pairlab", "sweep", "--config", &cfg, "-o", &csv_out, "--resume"]),
            0
        );
        assert_eq!(fs::read_to_string(&csv_out).unwrap(), text);
    }
}
