use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use caselink_core::ledger::{parse_tags, parse_transactions, TxFormat};
use caselink_core::link::NetworkFormat;
use caselink_core::pipeline::{load_inputs, run_pipeline, Analysis, PipelineConfig, CONFIG_KEYS};
use caselink_core::synth::{generate, ScenarioSpec};
use caselink_core::{CaseCategory, CoinJoinPolicy, GraphConfig, Ledger, LinkConfig, LinkLevel};
use caselink_service::{AppState, CaseStore, ChainContext, SqliteStore};
use clap::{Args, Parser, Subcommand};

fn config_help() -> String {
    let mut text = String::from("Config file keys (flat key=value, paths relative to the file):\n");
    for (key, default) in CONFIG_KEYS {
        text.push_str(&format!("  {key:<24} {default}\n"));
    }
    text
}

#[derive(Debug, Parser)]
#[command(
    name = "caselink",
    version,
    about = "Link cryptoasset-related cases through shared on-chain evidence"
)]
#[command(after_help = config_help())]
struct Cli {
    /// Pipeline config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the config's out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// CoinJoin filter: default, off or custom:<path>.
    #[arg(long, global = true)]
    coinjoin_policy: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage and write all dumps plus manifest.json.
    Run,
    /// Parse inputs and report what was loaded.
    Ingest,
    /// Cluster cases at one level.
    Link(LinkArgs),
    /// Write inflow series, value distributions and victim estimates.
    Stats,
    /// Write coinjoin verdicts, the address partition and the entity graph.
    Export,
    /// Generate a synthetic scenario from a spec file.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the case management API.
    Serve(ServeArgs),
    /// Issue a bearer token for a zone member, or an admin token.
    Token {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, required_unless_present = "admin", conflicts_with = "admin")]
        zone: Option<String>,
        #[arg(long)]
        admin: bool,
        #[arg(long)]
        member: String,
    },
}

#[derive(Debug, Args)]
struct LinkArgs {
    #[arg(long, default_value = "collector")]
    level: LinkLevel,
    #[arg(long)]
    min_collector_sources: Option<usize>,
    /// Also write the case network as dot or json.
    #[arg(long)]
    export: Option<NetworkFormat>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen { spec, out } => gen(spec, out),
        Command::Token {
            db,
            zone,
            admin,
            member,
        } => {
            let store = SqliteStore::open(db)?;
            let zone = if *admin { None } else { zone.as_deref() };
            println!("{}", store.issue_token(zone, member)?);
            Ok(())
        }
        Command::Serve(args) => serve(&cli, args),
        Command::Run => {
            let cfg = pipeline_config(&cli)?;
            let manifest = run_pipeline(&cfg)?;
            println!(
                "wrote {} outputs and manifest.json to {}",
                manifest.outputs.len(),
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Ingest => {
            let cfg = pipeline_config(&cli)?;
            init_threads(cfg.threads)?;
            let inputs = load_inputs(&cfg)?;
            println!("transactions        {}", inputs.ledger.len());
            println!("addresses           {}", inputs.ledger.address_count());
            println!("active cases        {}", inputs.cases.active.len());
            println!("inactive addresses  {}", inputs.cases.inactive_addresses);
            println!("attribution tags    {}", inputs.tags.len());
            Ok(())
        }
        Command::Link(args) => link(&cli, args),
        Command::Stats => stats(&cli),
        Command::Export => {
            let (cfg, analysis) = analyse(&cli)?;
            fs::create_dir_all(&cfg.out_dir)?;
            for (name, body) in [
                ("verdicts.csv", analysis.verdicts.dump_csv()),
                ("partition.csv", analysis.partition.dump_csv()),
                ("graph.csv", analysis.graph.dump_csv()),
            ] {
                write(&cfg.out_dir.join(name), body.as_bytes())?;
            }
            Ok(())
        }
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config is required for this command")?;
    let mut cfg = PipelineConfig::from_file(path)?;
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(policy) = &cli.coinjoin_policy {
        cfg.coinjoin_policy = policy.clone();
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon_global(n)?;
    }
    Ok(())
}

fn rayon_global(n: usize) -> Result<()> {
    caselink_core::pipeline::init_global_threads(n).context("configuring worker threads")
}

fn analyse(cli: &Cli) -> Result<(PipelineConfig, Analysis)> {
    let cfg = pipeline_config(cli)?;
    init_threads(cfg.threads)?;
    let analysis = Analysis::build(load_inputs(&cfg)?, &cfg)?;
    Ok((cfg, analysis))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn link(cli: &Cli, args: &LinkArgs) -> Result<()> {
    let (cfg, mut analysis) = analyse(cli)?;
    if let Some(n) = args.min_collector_sources {
        if n == 0 {
            bail!("--min-collector-sources must be at least 1");
        }
        analysis.link_config = LinkConfig {
            min_collector_sources: n,
        };
    }
    let linker = analysis.linker();
    let clustering = linker.link(args.level);
    println!("level          {}", clustering.level);
    println!("cases          {}", clustering.case_count());
    println!("clusters       {}", clustering.clusters.len());
    println!("singletons     {}", clustering.singleton_count());
    println!("linkage rate   {:.4}", clustering.linkage_rate());
    for (i, cluster) in clustering.clusters.iter().take(10).enumerate() {
        println!(
            "  #{:<3} {:>5} cases  {:>14} sat{}",
            i + 1,
            cluster.size(),
            cluster.inflow_satoshi,
            if cluster.contains_service_evidence {
                "  (service)"
            } else {
                ""
            }
        );
    }
    if let Some(format) = args.export {
        fs::create_dir_all(&cfg.out_dir)?;
        let ext = match format {
            NetworkFormat::Dot => "dot",
            NetworkFormat::Json => "json",
        };
        let path = cfg.out_dir.join(format!("network_{}.{ext}", args.level));
        write(&path, &linker.export_network(&clustering, format))?;
    }
    Ok(())
}

fn stats(cli: &Cli) -> Result<()> {
    let (cfg, analysis) = analyse(cli)?;
    let rates_path = cfg
        .rates
        .as_ref()
        .context("stage flow-stats failed: no rates file configured")?;
    let rates = caselink_core::ledger::parse_rates(fs::File::open(rates_path)?)?;
    fs::create_dir_all(&cfg.out_dir)?;
    for category in [CaseCategory::Sextortion, CaseCategory::Cyberfraud] {
        let cases = analysis.cases_of(category);
        if cases.is_empty() {
            continue;
        }
        let report =
            analysis.flow_stats(&cases, &rates, &cfg.buckets, cfg.exclude_service_inflow)?;
        println!(
            "{category}: {} cases, {} seed / {} expanded addresses, {} victims over {} payments",
            cases.len(),
            report.seed_addresses,
            report.expanded_addresses,
            report.victims.unique_senders,
            report.victims.incoming_transactions
        );
        for (scope, series) in [
            ("seed", &report.seed_series),
            ("expanded", &report.expanded_series),
        ] {
            let last = series
                .points
                .last()
                .map(|p| p.cumulative_eur)
                .unwrap_or(0.0);
            println!(
                "  {scope:<9} {:>16.2} EUR  {:>16} sat",
                last,
                series.total_satoshi()
            );
            write(
                &cfg.out_dir.join(format!("inflow_{category}_{scope}.csv")),
                series.to_csv().as_bytes(),
            )?;
            write(
                &cfg.out_dir.join(format!("inflow_{category}_{scope}.json")),
                serde_json::to_string_pretty(&series.plot_payload())?.as_bytes(),
            )?;
        }
        write(
            &cfg.out_dir.join(format!("distribution_{category}.csv")),
            report.distribution.to_csv().as_bytes(),
        )?;
    }
    Ok(())
}

fn gen(spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let spec = ScenarioSpec::from_kv_text(&text)?;
    let scenario = generate(&spec)?;
    scenario.write_to_dir(out)?;
    println!(
        "{} -> {}",
        caselink_core::synth::summary(&scenario),
        out.display()
    );
    Ok(())
}

fn chain_context(cli: &Cli) -> Result<ChainContext> {
    let Some(path) = &cli.config else {
        return Ok(ChainContext::empty());
    };
    let cfg = pipeline_config(cli)?;
    let format = match cfg.transactions.extension().and_then(|e| e.to_str()) {
        Some("csv") => TxFormat::Csv,
        _ => TxFormat::Jsonl,
    };
    let file = fs::File::open(&cfg.transactions)
        .with_context(|| format!("{}: {}", path.display(), cfg.transactions.display()))?;
    let ledger = Ledger::new(parse_transactions(std::io::BufReader::new(file), format)?)?;
    let tags = match &cfg.tags {
        Some(p) => parse_tags(fs::File::open(p)?)?,
        None => Vec::new(),
    };
    let policy = CoinJoinPolicy::from_flag(&cfg.coinjoin_policy)?;
    Ok(ChainContext::new(
        ledger,
        &tags,
        &policy,
        GraphConfig {
            service_size_threshold: cfg.service_size_threshold,
            include_self_edges: cfg.include_self_edges,
        },
    )?)
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let store: Arc<dyn CaseStore> = Arc::new(SqliteStore::open(&args.db)?);
    let chain = Arc::new(chain_context(cli)?);
    let link_config = match &cli.config {
        Some(_) => LinkConfig {
            min_collector_sources: pipeline_config(cli)?.min_collector_sources,
        },
        None => LinkConfig::default(),
    };
    let state = AppState::new(store, chain, link_config)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .with_context(|| format!("binding {}", args.listen))?;
        println!("listening on {}", listener.local_addr()?);
        caselink_service::serve(listener, state).await?;
        Ok(())
    })
}
