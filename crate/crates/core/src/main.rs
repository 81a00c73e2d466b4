use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use hotcold::config::RunConfig;
use hotcold::dataset::{
    generate_synthetic, ingest, ingest_contents, write_contents_jsonl, write_views_jsonl, Catalog,
    ContentRecord, ContentType, DataFormat,
};
use hotcold::eval::{
    evaluate_rolling, run_ablation, run_embedding_ablation, run_optimizer_comparison,
    run_window_sweep, TrainedModel,
};
use hotcold::featurize::split_periods;
use hotcold::hybrid::{train_hybrid, HybridModel, Routing};

#[derive(Parser)]
#[command(name = "hotcold", version, about = "Pre-release hot/cold popularity prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic long-tail catalog.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        contents: usize,
        #[arg(long, default_value_t = 180)]
        days: u32,
        #[arg(long, env = "HOTCOLD_SEED", default_value_t = 42)]
        seed: u64,
        /// Target share of type-A contents.
        #[arg(long, default_value_t = 0.7)]
        type_a_fraction: f64,
    },
    /// Train the two-route model on a catalog.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "HOTCOLD_SEED")]
        seed: Option<u64>,
        /// Train on history before this date; defaults to the end of the data.
        #[arg(long)]
        as_of: Option<NaiveDate>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Score unreleased contents.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Contents to score (JSONL or CSV by extension).
        #[arg(long = "new")]
        new_contents: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Decision date; must not be after any new content's release.
        #[arg(long)]
        at: NaiveDate,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Rolling per-period evaluation of the two-route model.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "HOTCOLD_SEED")]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Comparison experiments.
    Experiment {
        #[arg(long, value_enum)]
        which: Which,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "HOTCOLD_SEED")]
        seed: Option<u64>,
        /// Window lengths for the window sweep.
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30,40")]
        r_values: Vec<u32>,
        /// Routes for the window sweep.
        #[arg(long, value_delimiter = ',', value_enum, default_value = "a,b")]
        routes: Vec<Route>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

impl From<Format> for DataFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => DataFormat::Jsonl,
            Format::Csv => DataFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Ablation,
    Optimizers,
    WindowSweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum Route {
    A,
    B,
}

/// Exit 1: bad input. Exit 2: training or evaluation failed.
enum Failure {
    Invalid(String),
    Runtime(String),
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(invalid)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_catalog(dir: &Path, format: Format) -> Result<Catalog, Failure> {
    let (contents, logs) = ingest(dir, format.into()).map_err(invalid)?;
    Catalog::new(contents, &logs).map_err(invalid)
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate {
            out,
            contents,
            days,
            seed,
            type_a_fraction,
        } => {
            let (records, logs) =
                generate_synthetic(contents, days, seed, type_a_fraction).map_err(invalid)?;
            create_dir(&out)?;
            let open = |name: &str| {
                File::create(out.join(name))
                    .map(BufWriter::new)
                    .map_err(|e| runtime(format!("{name}: {e}")))
            };
            let mut w = open("contents.jsonl")?;
            write_contents_jsonl(&mut w, &records).map_err(runtime)?;
            w.flush().map_err(runtime)?;
            let mut w = open("views.jsonl")?;
            write_views_jsonl(&mut w, &logs).map_err(runtime)?;
            w.flush().map_err(runtime)?;
            let catalog = Catalog::new(records, &logs).map_err(runtime)?;
            print_summary(&catalog, &RunConfig::default())?;
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            seed,
            as_of,
            format,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let catalog = load_catalog(&data, format)?;
            let as_of = match as_of {
                Some(d) => d,
                None => catalog.timeline().map(|t| t.end).ok_or_else(|| invalid("catalog is empty"))?,
            };
            let model = train_hybrid(&catalog, as_of, &cfg).map_err(runtime)?;
            model.save(&out).map_err(runtime)?;
            println!("wrote {} (threshold {:.6})", out.display(), model.threshold);
            Ok(())
        }
        Command::Predict {
            model,
            new_contents,
            catalog,
            at,
            out,
            format,
        } => {
            let model = HybridModel::load(&model).map_err(invalid)?;
            let fmt = DataFormat::from_path(&new_contents).unwrap_or(DataFormat::Jsonl);
            let fresh = ingest_contents(&new_contents, fmt).map_err(invalid)?;
            let (known, logs) = ingest(&catalog, format.into()).map_err(invalid)?;
            let catalog = catalog_with_new(known, &logs, &fresh)?;
            let mut lines = String::new();
            for c in &fresh {
                let c = catalog.get(&c.content_id).expect("inserted");
                let p = model.predict(&catalog, c, at).map_err(invalid)?;
                lines.push_str(&serde_json::to_string(&p).expect("prediction serializes"));
                lines.push('\n');
            }
            match out {
                Some(path) => write_file(&path, &lines),
                None => {
                    print!("{lines}");
                    Ok(())
                }
            }
        }
        Command::Evaluate {
            data,
            config,
            out,
            seed,
            format,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let catalog = load_catalog(&data, format)?;
            let report =
                evaluate_rolling(&catalog, &cfg, &TrainedModel(Routing::Hybrid), None).map_err(runtime)?;
            create_dir(&out)?;
            write_file(&out.join("report.json"), &report.to_json())?;
            let m = report.macro_average;
            println!(
                "periods {} (skipped {}): precision {:.4} recall {:.4} f1 {:.4}",
                report.periods.len(),
                report.skipped.len(),
                m.precision,
                m.recall,
                m.f1
            );
            Ok(())
        }
        Command::Experiment {
            which,
            data,
            config,
            out,
            seed,
            r_values,
            routes,
            format,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let catalog = load_catalog(&data, format)?;
            create_dir(&out)?;
            match which {
                Which::Ablation => {
                    let table = run_ablation(&catalog, &cfg).map_err(runtime)?;
                    write_file(&out.join("ablation.json"), &to_json(&table))?;
                    let emb = run_embedding_ablation(&catalog, &cfg).map_err(runtime)?;
                    write_file(&out.join("embedding_ablation.json"), &to_json(&emb))?;
                    for (name, r) in [
                        ("hybrid", &table.hybrid),
                        ("gbdt_only", &table.gbdt_only),
                        ("net_only", &table.net_only),
                        ("embedding", &emb.embedding),
                        ("one_hot", &emb.one_hot),
                    ] {
                        println!("{name:>10}: f1 {:.4}", r.macro_average.f1);
                    }
                }
                Which::Optimizers => {
                    let cmp = run_optimizer_comparison(&catalog, &cfg).map_err(runtime)?;
                    write_file(&out.join("optimizer_traces.csv"), &cmp.to_csv())?;
                    for (kind, trace) in &cmp.traces {
                        let mut csv = String::from("epoch,loss\n");
                        for (e, v) in trace.iter().enumerate() {
                            csv.push_str(&format!("{e},{v}\n"));
                        }
                        write_file(&out.join(format!("loss_{}.csv", kind.name())), &csv)?;
                        println!("{:>8}: final loss {:.6}", kind.name(), trace.last().copied().unwrap_or(f64::NAN));
                    }
                }
                Which::WindowSweep => {
                    let routes: Vec<ContentType> = routes
                        .iter()
                        .map(|r| match r {
                            Route::A => ContentType::TypeA,
                            Route::B => ContentType::TypeB,
                        })
                        .collect();
                    let sweep = run_window_sweep(&catalog, &cfg, &r_values, &routes).map_err(runtime)?;
                    write_file(&out.join("window_sweep.csv"), &sweep.to_csv())?;
                    print!("{}", sweep.to_csv());
                }
            }
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Catalog of the known contents plus the new ones. Logs of the new
/// contents are dropped so nothing observed after their release can leak in.
fn catalog_with_new(
    known: Vec<ContentRecord>,
    logs: &[hotcold::dataset::ViewLog],
    fresh: &[ContentRecord],
) -> Result<Catalog, Failure> {
    let fresh_ids: std::collections::HashSet<&str> =
        fresh.iter().map(|c| c.content_id.as_str()).collect();
    let mut contents: Vec<ContentRecord> = known
        .into_iter()
        .filter(|c| !fresh_ids.contains(c.content_id.as_str()))
        .collect();
    contents.extend(fresh.iter().cloned());
    let logs: Vec<_> = logs
        .iter()
        .filter(|l| !fresh_ids.contains(l.content_id.as_str()))
        .cloned()
        .collect();
    Catalog::new(contents, &logs).map_err(invalid)
}

fn print_summary(catalog: &Catalog, cfg: &RunConfig) -> Result<(), Failure> {
    let n = catalog.len();
    let type_a = catalog
        .contents()
        .iter()
        .filter(|c| catalog.classify(c, c.release_date) == ContentType::TypeA)
        .count();
    let (_, splits) = split_periods(catalog, cfg.period_days).map_err(runtime)?;
    let (mut hot, mut labeled) = (0usize, 0usize);
    for s in &splits {
        let ids: Vec<&str> = s.test_ids.iter().map(String::as_str).collect();
        if ids.is_empty() {
            continue;
        }
        let labels = catalog
            .label_release_window(&ids, cfg.label_days, cfg.label_quantile)
            .map_err(runtime)?;
        hot += labels.iter().filter(|l| l.label.is_hot()).count();
        labeled += labels.len();
    }
    println!("contents: {n}");
    println!("view logs: {}", catalog.view_logs().len());
    println!("type-A fraction at release: {:.3}", type_a as f64 / n as f64);
    println!(
        "hot base rate: {:.3}",
        if labeled == 0 { 0.0 } else { hot as f64 / labeled as f64 }
    );
    Ok(())
}
