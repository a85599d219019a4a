//! `simnet`: batch front end over the diagnostic service.
//!
//! Without `--server` each invocation starts a private in-process service on
//! a loopback port and talks to it over HTTP, so the CLI and a remote service
//! behave identically.

mod output;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use simnet_client::{Client, ClientError};
use simnet_core::api::{EvaluateRequest, NetworkCreated, TransformRequest};
use simnet_core::bundle::{load_bundle, save_bundle};
use simnet_core::decision::EvaluationCase;
use simnet_core::model::tolerance_from_env;
use simnet_core::session::LogEntry;
use simnet_core::synth;
use simnet_service::AppState;
use tokio::net::TcpListener;

#[derive(Parser)]
#[command(name = "simnet", version, about = "Similarity-network diagnostic models")]
struct Cli {
    /// Base URL of a running service; by default a private one is started.
    #[arg(long, global = true, env = "SIMNET_SERVER")]
    server: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bundle; exit 0 only if it is valid and consistent.
    Validate { bundle: PathBuf },
    /// Compile a bundle and print its global map.
    Compile {
        bundle: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the differential given some observations.
    Infer(Observed),
    /// Rank unobserved features by value of information net of cost.
    Recommend {
        #[command(flatten)]
        observed: Observed,
        #[arg(long, default_value_t = simnet_service::DEFAULT_RECOMMENDATIONS)]
        limit: usize,
        /// Also explain this feature against the two leading hypotheses.
        #[arg(long)]
        justify: Option<String>,
    },
    /// Inferential loss of the model against gold-standard distributions.
    Evaluate {
        bundle: PathBuf,
        /// `{"cases": [{name, evidence, gold?}]}`
        #[arg(long)]
        cases: PathBuf,
        /// `{case name: {hypothesis: p}}`, filling in each case's gold distribution.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Rebuild a bundle as independent diseases under a noisy-OR model.
    TransformMulti {
        bundle: PathBuf,
        #[arg(long, default_value = "NORMAL")]
        normal: String,
        /// Disease prior as NAME=P; repeatable.
        #[arg(long, value_parser = parse_prior)]
        prior: Vec<(String, f64)>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Persist networks and session logs here and restore them on start.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write a random consistent bundle.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=5))]
        hypotheses: u8,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=6))]
        features: u8,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Observed {
    bundle: PathBuf,
    /// FEATURE=INSTANCE; repeatable.
    #[arg(long = "observe", value_parser = parse_observation)]
    observations: Vec<(String, String)>,
}

fn parse_observation(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((f, i)) if !f.is_empty() && !i.is_empty() => Ok((f.to_string(), i.to_string())),
        _ => Err(format!("expected FEATURE=INSTANCE, got `{s}`")),
    }
}

fn parse_prior(s: &str) -> Result<(String, f64), String> {
    let (name, p) = s.split_once('=').ok_or_else(|| format!("expected NAME=P, got `{s}`"))?;
    let p: f64 = p.parse().map_err(|e| format!("`{p}`: {e}"))?;
    Ok((name.to_string(), p))
}

/// A message and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

/// Model invalid, inconsistent, or evidence impossible.
const INVALID: u8 = 1;
/// Usage or I/O.
const USAGE: u8 = 2;

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: USAGE,
            message: message.into(),
        }
    }
}

/// Errors about the request rather than the model are usage errors.
const USAGE_CODES: &[&str] = &[
    "unknown_feature",
    "unknown_instance",
    "already_observed",
    "not_observed",
    "not_found",
];

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { error, .. } => {
                let code = if USAGE_CODES.contains(&error.code.as_str()) {
                    USAGE
                } else {
                    INVALID
                };
                let mut message = format!("{}: {}", error.code, error.message);
                if let Some(p) = &error.path {
                    message.push_str(&format!(" (at {p})"));
                }
                Failure { code, message }
            }
            _ => Failure::usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    serde_json::from_slice(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(text: &str, to: Option<&Path>) -> Outcome {
    match to {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Starts a loopback service on this runtime unless a server was given.
async fn connect(server: Option<&str>) -> Result<Client, Failure> {
    if let Some(url) = server {
        return Client::new(url).map_err(Failure::from);
    }
    let listener = TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| Failure::usage(format!("binding a loopback port: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::usage(e.to_string()))?;
    let state = AppState::ephemeral(tolerance_from_env());
    tokio::spawn(simnet_service::serve(listener, state, std::future::pending()));
    Client::new(&format!("http://{addr}")).map_err(Failure::from)
}

/// Uploads `bundle` and refuses to go on if it is inconsistent.
async fn ready_network(c: &Client, bundle: &Path, format: Format) -> Result<NetworkCreated, Failure> {
    let created = c.create_network(read(bundle)?).await?;
    if !created.verdict.is_consistent() {
        if format == Format::Table {
            eprint!("{}", output::verdict(&created.verdict));
        }
        return Err(Failure {
            code: INVALID,
            message: format!("{} is inconsistent", bundle.display()),
        });
    }
    Ok(created)
}

async fn open_session(c: &Client, o: &Observed, format: Format) -> Result<String, Failure> {
    let net = ready_network(c, &o.bundle, format).await?.network_id;
    let log = o
        .observations
        .iter()
        .map(|(feature, instance)| LogEntry::Observe {
            feature: feature.clone(),
            instance: instance.clone(),
        })
        .collect();
    Ok(c.create_session(&net, None, log).await?.session_id)
}

/// Attaches the gold file's distributions to cases by name.
fn merge_gold(mut cases: Value, gold: Option<Value>) -> Result<Vec<EvaluationCase>, Failure> {
    if let Some(gold) = gold {
        let gold: BTreeMap<String, Value> =
            serde_json::from_value(gold).map_err(|e| Failure::usage(format!("gold file: {e}")))?;
        let list = cases
            .get_mut("cases")
            .and_then(Value::as_array_mut)
            .ok_or_else(|| Failure::usage("cases file: expected {\"cases\": [...]}"))?;
        for (i, case) in list.iter_mut().enumerate() {
            let name = case
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| Failure::usage(format!("cases file: case {i} needs a name to match gold")))?;
            let g = gold
                .get(name)
                .ok_or_else(|| Failure::usage(format!("gold file: no distribution for case `{name}`")))?;
            case["gold"] = g.clone();
        }
    }
    let req: EvaluateRequest = serde_json::from_value(cases).map_err(|e| Failure::usage(format!("cases file: {e}")))?;
    Ok(req.cases)
}

async fn run(cli: Cli) -> Outcome {
    let format = cli.format;
    let render = |table: String, json: String| if format == Format::Json { json } else { table };
    match cli.command {
        Command::Serve { addr, data_dir } => {
            let tolerance = tolerance_from_env();
            let state = match data_dir {
                Some(dir) => AppState::persistent(dir, tolerance).await.map_err(|e| Failure {
                    code: INVALID,
                    message: format!("restoring state: {}", e.body.message),
                })?,
                None => AppState::ephemeral(tolerance),
            };
            let listener = TcpListener::bind(addr)
                .await
                .map_err(|e| Failure::usage(format!("{addr}: {e}")))?;
            simnet_service::serve(listener, state, async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .map_err(|e| Failure::usage(e.to_string()))
        }
        Command::Synth {
            seed,
            hypotheses,
            features,
            output,
        } => {
            let b = synth::random_bundle(&mut synth::rng(seed), hypotheses.into(), features.into());
            let text = String::from_utf8(save_bundle(&b)).expect("utf-8");
            emit(&text, output.as_deref())
        }
        command => {
            let c = connect(cli.server.as_deref()).await?;
            match command {
                Command::Validate { bundle } => {
                    let created = match c.create_network(read(&bundle)?).await {
                        Ok(created) => created,
                        Err(e) => {
                            let f = Failure::from(e);
                            if f.code == INVALID {
                                println!("invalid  {}", f.message);
                            }
                            return Err(f);
                        }
                    };
                    emit(&render(output::created(&created), output::json(&created)), None)?;
                    if created.verdict.is_consistent() {
                        Ok(())
                    } else {
                        Err(Failure {
                            code: INVALID,
                            message: format!("{} is inconsistent", bundle.display()),
                        })
                    }
                }
                Command::Compile { bundle, output } => {
                    let created = ready_network(&c, &bundle, format).await?;
                    let graph = c.graph(&created.network_id).await?;
                    let table = format!("{}{}", output::created(&created), output::graph(&graph));
                    let json = output::json(&serde_json::json!({"network": created, "graph": graph}));
                    emit(&render(table, json), output.as_deref())
                }
                Command::Infer(o) => {
                    let id = open_session(&c, &o, format).await?;
                    let d = c.differential(&id).await?;
                    emit(&render(output::differential(&d), output::json(&d)), None)
                }
                Command::Recommend {
                    observed,
                    limit,
                    justify,
                } => {
                    let id = open_session(&c, &observed, format).await?;
                    let recs = c.recommendations(&id, Some(limit)).await?;
                    match justify {
                        None => emit(&render(output::recommendations(&recs), output::json(&recs)), None),
                        Some(f) => {
                            let j = c.justification(&id, &f).await?;
                            let table = format!("{}\n{}", output::recommendations(&recs), output::justification(&j));
                            let json = output::json(&serde_json::json!({"recommendations": recs, "justification": j}));
                            emit(&render(table, json), None)
                        }
                    }
                }
                Command::Evaluate { bundle, cases, gold } => {
                    let cases = merge_gold(read_json(&cases)?, gold.as_deref().map(read_json).transpose()?)?;
                    let net = ready_network(&c, &bundle, format).await?.network_id;
                    let report = c.evaluate(&net, cases).await?;
                    emit(&render(output::evaluation(&report), output::json(&report)), None)
                }
                Command::TransformMulti {
                    bundle,
                    normal,
                    prior,
                    output,
                } => {
                    let parsed = load_bundle(&read(&bundle)?).map_err(|e| Failure {
                        code: INVALID,
                        message: format!("{}: {e}", bundle.display()),
                    })?;
                    let req = TransformRequest {
                        bundle: parsed,
                        normal,
                        priors: prior.into_iter().collect(),
                    };
                    let out = c.transform_multi(&req).await?;
                    // A written bundle is always JSON; the table is a summary.
                    match output {
                        Some(p) => {
                            emit(&output::json(&out), Some(&p))?;
                            if format == Format::Table {
                                print!("{}", output::transformed(&out));
                            }
                            Ok(())
                        }
                        None => emit(&render(output::transformed(&out), output::json(&out)), None),
                    }
                }
                Command::Serve { .. } | Command::Synth { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let default_level = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SIMNET_LOG").unwrap_or_else(|_| default_level.into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(USAGE);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
