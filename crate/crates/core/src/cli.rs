//! The `fsg` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 input/format/config error or
//! infeasible request, 3 solver non-convergence, 4 scan finished with
//! per-sample errors (reported in the output).

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::audit::{adversarial_flags, ambiguity_scan, audit_report, union_region_stats};
use crate::boundary::{classify, closest_flip_point, margin_profile};
use crate::config::AuditConfig;
use crate::error::{Error, Result};
use crate::hull::{project_to_hull, support_label_stats};
use crate::inverse::{map_to_ball, map_to_point, morph};
use crate::io::{load_dataset, load_head, load_matrix, load_network, load_vector};
use crate::model::{FeatureDataset, LinearHead};
use crate::pathviz::{emit_path, path_csv, path_svg, project_two_point, PathFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fsg", version, about = "Feature-space geometry audits for classifiers")]
#[command(after_help = AuditConfig::keys_help())]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for batch scans (default: all cores).
    #[arg(long, global = true, env = "FSG_THREADS", value_name = "N")]
    threads: Option<usize>,

    /// Output path (default: standard output).
    #[arg(short, long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training features (CSV or FGB1).
    #[arg(long, value_name = "FILE")]
    train_features: PathBuf,
    /// Training labels, one integer per line.
    #[arg(long, value_name = "FILE")]
    train_labels: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closest flip point and per-class margins of each query row.
    Flip {
        #[arg(long, value_name = "FILE")]
        head: PathBuf,
        /// Query feature rows.
        #[arg(long, value_name = "FILE")]
        query: PathBuf,
        /// Solve only the boundary between classes I and J.
        #[arg(long, value_name = "I,J", value_parser = parse_pair)]
        class_pair: Option<(usize, usize)>,
    },
    /// Projection of each query row onto the training hull.
    Hull {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_name = "FILE")]
        query: PathBuf,
        /// Head manifest; needed for the label count and projected classes.
        #[arg(long, value_name = "FILE")]
        head: PathBuf,
        /// Labels of the query rows, for support label statistics.
        #[arg(long, value_name = "FILE")]
        query_labels: Option<PathBuf>,
    },
    /// Ambiguity indicator (boundary minus hull distance) per query.
    Ambiguity(ScanArgs),
    /// Queries within the configured threshold of a decision boundary.
    Adversarial(ScanArgs),
    /// Containment statistics of the training samples' margin balls.
    Union {
        #[arg(long, value_name = "FILE")]
        head: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Probe feature rows for union coverage.
        #[arg(long, value_name = "FILE")]
        probe: Option<PathBuf>,
    },
    /// Input closest to a reference whose features equal a target.
    Invert {
        #[arg(long, value_name = "FILE")]
        network: PathBuf,
        #[arg(long, value_name = "FILE")]
        target: PathBuf,
        #[arg(long, value_name = "FILE")]
        reference: PathBuf,
    },
    /// Input closest to a reference whose features lie in a ball.
    Ball {
        #[arg(long, value_name = "FILE")]
        network: PathBuf,
        #[arg(long, value_name = "FILE")]
        center: PathBuf,
        #[arg(long)]
        radius: f64,
        #[arg(long, value_name = "FILE")]
        reference: PathBuf,
        /// Require the features on the sphere rather than inside the ball.
        #[arg(long)]
        perimeter: bool,
    },
    /// Sequence of inputs whose features approach those of a second input.
    Morph {
        #[arg(long, value_name = "FILE")]
        network: PathBuf,
        #[arg(long, value_name = "FILE")]
        from: PathBuf,
        #[arg(long, value_name = "FILE")]
        to: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Two-point projection of a path to the plane, as CSV or SVG.
    Path {
        #[arg(long, value_name = "FILE")]
        a: PathBuf,
        #[arg(long, value_name = "FILE")]
        b: PathBuf,
        /// Path points, one per row.
        #[arg(long, value_name = "FILE")]
        points: PathBuf,
        /// csv or svg (default: from the output extension, else csv).
        #[arg(long, value_parser = parse_format)]
        format: Option<PathFormat>,
    },
    /// Full report for a test set against the training set.
    Audit {
        #[arg(long, value_name = "FILE")]
        head: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_name = "FILE")]
        test_features: PathBuf,
        #[arg(long, value_name = "FILE")]
        test_labels: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[arg(long, value_name = "FILE")]
    head: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
    /// Query feature rows.
    #[arg(long, value_name = "FILE")]
    queries: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected I,J")?;
    let a = a.trim().parse().map_err(|_| format!("bad class index {a:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad class index {b:?}"))?;
    Ok((a, b))
}

fn parse_format(s: &str) -> std::result::Result<PathFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "csv" => Ok(PathFormat::Csv),
        "svg" => Ok(PathFormat::Svg),
        _ => Err(format!("unknown format {s:?}; expected csv or svg")),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_INPUT,
    }
}

fn load_config(cli: &Cli) -> Result<AuditConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AuditConfig::load(path)?,
        None => AuditConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(out) = &cli.output {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn unlabelled(path: &Path, head: &LinearHead) -> Result<FeatureDataset> {
    let m = load_matrix(path)?;
    let n = m.rows();
    FeatureDataset::new(m, vec![0; n], head.classes())
}

fn train_set(args: &TrainArgs, head: &LinearHead) -> Result<FeatureDataset> {
    load_dataset(&args.train_features, &args.train_labels, head.classes())
}

fn emit_json(value: &impl Serialize, cfg: &AuditConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    match &cfg.output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e)),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when run twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    match &cli.command {
        Command::Flip { head, query, class_pair } => {
            let head = load_head(head)?;
            let queries = load_matrix(query)?;
            let mut results = Vec::new();
            for x in queries.row_iter() {
                let classes = classify(&head, x)?;
                let flip = match class_pair {
                    Some((i, j)) => Some(closest_flip_point(&head, x, *i, *j, &cfg)?),
                    None => None,
                };
                let margins = if classes.len() == 1 { Some(margin_profile(&head, x, &cfg)?) } else { None };
                let closest = margins.as_ref().and_then(|m| m.closest.clone());
                results.push(json!({
                    "query": x,
                    "classes": classes,
                    "flip": flip,
                    "margins": margins,
                    "closest": closest,
                }));
            }
            emit_json(&json!({ "results": results }), &cfg)?;
            Ok(EXIT_OK)
        }
        Command::Hull { train, query, head, query_labels } => {
            let head = load_head(head)?;
            let train = train_set(train, &head)?;
            let queries = load_matrix(query)?;
            let labels = match query_labels {
                Some(p) => Some(crate::io::load_labels(p)?),
                None => None,
            };
            if let Some(l) = &labels {
                if l.len() != queries.rows() {
                    return Err(Error::shape(format!(
                        "{} query labels for {} query rows",
                        l.len(),
                        queries.rows()
                    )));
                }
            }
            let mut results = Vec::new();
            for (r, x) in queries.row_iter().enumerate() {
                let p = project_to_hull(&train, x, &cfg)?;
                let support = match &labels {
                    Some(l) => Some(support_label_stats(&p, train.labels(), l[r])?),
                    None => None,
                };
                results.push(json!({
                    "distance": p.distance,
                    "projected": p.projected,
                    "support": p.support,
                    "support_weights": p.support_weights,
                    "duality_gap": p.duality_gap,
                    "iterations": p.iterations,
                    "classes_original": classify(&head, x)?,
                    "classes_projected": classify(&head, &p.projected)?,
                    "support_labels": support,
                }));
            }
            emit_json(&json!({ "results": results }), &cfg)?;
            Ok(EXIT_OK)
        }
        Command::Ambiguity(args) | Command::Adversarial(args) => {
            let head = load_head(&args.head)?;
            let train = train_set(&args.train, &head)?;
            let queries = unlabelled(&args.queries, &head)?;
            let partial = if matches!(cli.command, Command::Ambiguity(_)) {
                let scan = ambiguity_scan(&train, &queries, &head, &cfg)?;
                emit_json(&scan, &cfg)?;
                !scan.errors.is_empty()
            } else {
                let scan = adversarial_flags(&train, &queries, &head, &cfg)?;
                emit_json(&scan, &cfg)?;
                !scan.errors.is_empty()
            };
            Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
        }
        Command::Union { head, train, probe } => {
            let head = load_head(head)?;
            let train = train_set(train, &head)?;
            let probe = match probe {
                Some(p) => unlabelled(p, &head)?,
                None => FeatureDataset::new(crate::tensor::Matrix::zeros(0, head.features()), vec![], head.classes())?,
            };
            let stats = union_region_stats(&train, &probe, &head, &cfg)?;
            emit_json(&stats, &cfg)?;
            Ok(if stats.errors.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Invert { network, target, reference } => {
            let net = load_network(network)?;
            let res = map_to_point(&net, &load_vector(target)?, &load_vector(reference)?, &cfg)?;
            emit_json(&res, &cfg)?;
            Ok(if res.converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
        }
        Command::Ball { network, center, radius, reference, perimeter } => {
            let net = load_network(network)?;
            let res = map_to_ball(&net, &load_vector(center)?, *radius, &load_vector(reference)?, *perimeter, &cfg)?;
            emit_json(&res, &cfg)?;
            Ok(if res.converged { EXIT_OK } else { EXIT_NONCONVERGENCE })
        }
        Command::Morph { network, from, to, steps } => {
            let net = load_network(network)?;
            let seq = morph(&net, &load_vector(from)?, &load_vector(to)?, *steps, &cfg)?;
            emit_json(&seq, &cfg)?;
            Ok(if seq.all_converged() { EXIT_OK } else { EXIT_NONCONVERGENCE })
        }
        Command::Path { a, b, points, format } => {
            let pts = load_matrix(points)?;
            let rows: Vec<Vec<f64>> = pts.row_iter().map(<[f64]>::to_vec).collect();
            let projected = project_two_point(&load_vector(a)?, &load_vector(b)?, &rows)?;
            let format = format.unwrap_or_else(|| cfg.output.as_deref().map_or(PathFormat::Csv, PathFormat::from_path));
            match &cfg.output {
                Some(path) => emit_path(&projected, format, path)?,
                None => {
                    let text = match format {
                        PathFormat::Csv => path_csv(&projected),
                        PathFormat::Svg => path_svg(&projected),
                    };
                    print!("{text}");
                }
            }
            Ok(EXIT_OK)
        }
        Command::Audit { head, train, test_features, test_labels } => {
            let head = load_head(head)?;
            let train = train_set(train, &head)?;
            let test = load_dataset(test_features, test_labels, head.classes())?;
            let report = audit_report(&train, &test, &head, &cfg)?;
            emit_json(&report, &cfg)?;
            Ok(if report.is_partial() { EXIT_PARTIAL } else { EXIT_OK })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_config_keys() {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let help = cmd.render_long_help().to_string();
        for key in AuditConfig::key_names() {
            assert!(help.contains(key), "{key}");
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["fsg", "flip", "--query", "q.csv"]), EXIT_USAGE);
        assert_eq!(run(["fsg", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["fsg", "--help"]), EXIT_OK);
    }

    #[test]
    fn pair_and_format_parsing() {
        assert_eq!(parse_pair("0, 2"), Ok((0, 2)));
        assert!(parse_pair("1").is_err());
        assert_eq!(parse_format("SVG"), Ok(PathFormat::Svg));
        assert!(parse_format("png").is_err());
    }
}
