use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use hypada_core::config::RunConfig;
use hypada_core::corpus::{load_corpus, make_split, write_corpus, write_corpus_with, Split};
use hypada_core::drf::{annotate_signature, build_drf_set, read_drf_sets, write_drf_sets};
use hypada_core::eval::campaign::run_campaign;
use hypada_core::eval::metrics::accuracy;
use hypada_core::models::DomainHint;
use hypada_core::synthetic::{generate, SyntheticConfig};
use hypada_core::text::load_embeddings;
use hypada_core::trainer::{label_indices, train};
use hypada_core::{checkpoint, verify, DomainCorpus, Error, ErrorClass, Result, TaskSchema, VariantKind};

#[derive(Parser)]
#[command(name = "hypada", version, about = "Any-domain text classification with example-conditioned hypernetworks")]
struct Cli {
    /// `key = value` config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Extra override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// JSON-lines corpus.
    #[arg(long)]
    data: PathBuf,

    /// Comma-separated label set; inferred from the data when omitted.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Mine DRF sets for every source domain.
    ExtractDrfs {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        target_domain: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        drf_top_l: Option<usize>,
        /// Reports DRFs without a vector.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach a DRF signature to every example of a domain with a DRF set.
    Annotate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        drfs: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant leaving the target domain out.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        target_domain: String,
        #[arg(long)]
        variant: VariantKind,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels with a saved checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Split to predict; `all` predicts every example.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-out evaluation over every domain and variant.
    Campaign {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference check of every variant's loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
    /// Write the synthetic benchmark as a corpus and embedding file.
    Synth {
        #[arg(long, default_value_t = 4)]
        domains: usize,
        #[arg(long)]
        train_per_domain: Option<usize>,
        #[arg(long)]
        test_per_domain: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Sidecar next to a single-file artifact: `<out>.config.txt`.
fn echo_config(out: &Path, header: &str, cfg: &RunConfig) -> Result<()> {
    let mut path = out.as_os_str().to_owned();
    path.push(".config.txt");
    write_file(Path::new(&path), format!("{header}{}", cfg.to_text()).as_bytes())
}

fn resolve(cli: &Cli, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(args: &DataArgs) -> Result<(Vec<DomainCorpus>, Vec<String>)> {
    let mut schema = TaskSchema {
        name: "task".into(),
        labels: args.labels.clone(),
    };
    let corpora = load_corpus(&args.data, &mut schema)?;
    if corpora.is_empty() {
        return Err(Error::Data(format!("{}: no examples", args.data.display())));
    }
    for c in &corpora {
        c.validate()?;
    }
    Ok((corpora, schema.labels))
}

fn header(lines: &[(&str, String)]) -> String {
    lines.iter().map(|(k, v)| format!("# {k}: {v}\n")).collect()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ExtractDrfs {
            data,
            target_domain,
            rho,
            drf_top_l,
            embeddings,
            out,
        } => {
            let cfg = resolve(
                cli,
                &[
                    ("rho", rho.map(|v| v.to_string())),
                    ("drf_top_l", drf_top_l.map(|v| v.to_string())),
                ],
            )?;
            let (corpora, _) = load_data(data)?;
            if !corpora.iter().any(|c| &c.domain == target_domain) {
                return Err(Error::Config(format!("target domain {target_domain} not in corpus")));
            }
            let sources: Vec<DomainCorpus> = corpora.into_iter().filter(|c| &c.domain != target_domain).collect();
            let sets = sources
                .iter()
                .map(|c| build_drf_set(&sources, &c.domain, &cfg.model.drf))
                .collect::<Result<Vec<_>>>()?;
            if let Some(path) = embeddings {
                let table = load_embeddings(path)?;
                for set in &sets {
                    let missing = set.words().filter(|w| !table.contains(w)).count();
                    if missing > 0 {
                        warn!("{}: {missing} of {} DRFs have no vector", set.domain, set.len());
                    }
                }
            }
            for set in &sets {
                info!("{}: {} DRFs", set.domain, set.len());
            }
            let mut w = create(out)?;
            write_drf_sets(&mut w, &sets)?;
            w.flush().map_err(io_err(out))?;
            echo_config(
                out,
                &header(&[
                    ("command", "extract-drfs".into()),
                    ("data", data.data.display().to_string()),
                    ("target_domain", target_domain.clone()),
                ]),
                &cfg,
            )
        }
        Command::Annotate {
            data,
            drfs,
            embeddings,
            k,
            out,
        } => {
            let cfg = resolve(cli, &[("k", k.map(|v| v.to_string()))])?;
            let (corpora, _) = load_data(data)?;
            let sets = read_drf_sets(BufReader::new(File::open(drfs).map_err(io_err(drfs))?))?;
            let table = load_embeddings(embeddings)?;
            let k = cfg.model.drf.k;
            let mut w = create(out)?;
            write_corpus_with(&mut w, &corpora, |e| {
                sets.iter()
                    .find(|s| s.domain == e.domain)
                    .map(|s| annotate_signature(e, s, &table, k).render())
            })?;
            w.flush().map_err(io_err(out))?;
            echo_config(
                out,
                &header(&[
                    ("command", "annotate".into()),
                    ("data", data.data.display().to_string()),
                    ("drfs", drfs.display().to_string()),
                ]),
                &cfg,
            )
        }
        Command::Train {
            data,
            embeddings,
            target_domain,
            variant,
            out,
        } => {
            let cfg = resolve(cli, &[])?;
            let (corpora, labels) = load_data(data)?;
            let table = Arc::new(load_embeddings(embeddings)?);
            let pools = make_split(&corpora, target_domain, 1.0, cfg.train.seed)?;
            let (model, log) = train(*variant, &pools, &labels, table, &cfg.model, &cfg.train)?;
            let text = format!(
                "{}{}",
                header(&[
                    ("command", "train".into()),
                    ("variant", variant.to_string()),
                    ("target_domain", target_domain.clone()),
                ]),
                cfg.to_text()
            );
            checkpoint::save(&model, out, &text)?;
            let mut csv = Vec::new();
            log.write_csv(&mut csv)?;
            write_file(&out.join("train_log.csv"), &csv)?;
            write_file(&out.join("config.txt"), text.as_bytes())?;
            info!("best epoch {} of {}", log.best_epoch, log.epoch_loss.len());
            Ok(())
        }
        Command::Predict {
            checkpoint: dir,
            data,
            split,
            out,
        } => {
            let (model, manifest) = checkpoint::load(dir)?;
            let data = DataArgs {
                data: data.data.clone(),
                labels: model.labels.clone(),
            };
            let (corpora, labels) = load_data(&data)?;
            let splits: &[Split] = match split.as_str() {
                "train" => &[Split::Train],
                "dev" => &[Split::Dev],
                "test" => &[Split::Test],
                "all" => &[Split::Train, Split::Dev, Split::Test],
                other => return Err(Error::Config(format!("unknown split {other:?}"))),
            };
            let mut w = create(out)?;
            let (mut preds, mut golds) = (Vec::new(), Vec::new());
            for c in &corpora {
                for &s in splits {
                    let examples = c.split(s);
                    golds.extend(label_indices(examples, &labels)?);
                    for e in examples {
                        let p = model.predict(e, &DomainHint::Unknown)?;
                        preds.push(p.label);
                        let line = json!({
                            "id": e.id,
                            "domain": e.domain,
                            "gold": e.label,
                            "predicted": labels[p.label],
                            "probs": p.probs,
                            "signature": p.signature.map(|s| s.render()),
                        });
                        serde_json::to_writer(&mut w, &line)?;
                        w.write_all(b"\n").map_err(io_err(out))?;
                    }
                }
            }
            w.flush().map_err(io_err(out))?;
            if !preds.is_empty() {
                info!("accuracy {:.4} on {} examples", accuracy(&preds, &golds), preds.len());
            }
            let mut path = out.as_os_str().to_owned();
            path.push(".config.txt");
            let text = format!(
                "{}{}",
                header(&[("command", "predict".into()), ("checkpoint", dir.display().to_string())]),
                manifest.run_config
            );
            write_file(Path::new(&path), text.as_bytes())
        }
        Command::Campaign {
            data,
            embeddings,
            variants,
            mode,
            jobs,
            out_dir,
        } => {
            let cfg = resolve(
                cli,
                &[
                    ("variants", (!variants.is_empty()).then(|| variants.join(","))),
                    ("mode", mode.clone()),
                    ("jobs", jobs.map(|v| v.to_string())),
                ],
            )?;
            let (corpora, labels) = load_data(data)?;
            let table = Arc::new(load_embeddings(embeddings)?);
            let report = run_campaign(&corpora, &labels, table, &cfg)?;
            report.write_dir(out_dir)?;
            print!("{}", report.markdown());
            let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} of {} cells failed", report.rows.len())));
            }
            Ok(())
        }
        Command::Gradcheck { rounds } => {
            let cfg = resolve(cli, &[])?;
            let suite = verify::run_suite(*rounds, cfg.train.seed)?;
            for c in &suite.cases {
                println!(
                    "{:<5} {:<14} d={} C={} coords={:<4} max_rel_error={:.3e}",
                    if c.passed() { "ok" } else { "FAIL" },
                    c.component,
                    c.dim,
                    c.n_classes,
                    c.coords,
                    c.max_rel_error
                );
            }
            println!("{} cases, worst {:.3e}", suite.cases.len(), suite.worst());
            if suite.passed() {
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "gradient check failed: worst relative error {:.3e} >= {:e}",
                    suite.worst(),
                    verify::TOLERANCE
                )))
            }
        }
        Command::Synth {
            domains,
            train_per_domain,
            test_per_domain,
            out_dir,
        } => {
            let cfg = resolve(cli, &[])?;
            let defaults = SyntheticConfig::default();
            let scfg = SyntheticConfig {
                n_domains: *domains,
                train_per_domain: train_per_domain.unwrap_or(defaults.train_per_domain),
                test_per_domain: test_per_domain.unwrap_or(defaults.test_per_domain),
                ..defaults
            };
            let (corpora, table) = generate(&scfg, cfg.train.seed)?;
            let mut w = create(&out_dir.join("corpus.jsonl"))?;
            write_corpus(&mut w, &corpora)?;
            w.flush().map_err(io_err(out_dir))?;
            let mut w = create(&out_dir.join("embeddings.txt"))?;
            table.write(&mut w)?;
            w.flush().map_err(io_err(out_dir))?;
            write_file(
                &out_dir.join("synth.json"),
                serde_json::to_string_pretty(&json!({ "seed": cfg.train.seed, "config": scfg }))?.as_bytes(),
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            })
        }
    }
}
