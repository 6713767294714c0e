//! The pipeline subcommands: cost profiling, supernet search, architecture
//! derivation, fine-tuning and evaluation.
//!
//! Every command writes only under the configured output directory. Result
//! files are deterministic for a fixed (config, seed); wall-clock metadata
//! is segregated into `meta.json` so determinism can be checked by byte
//! comparison.

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dnas_core::blocks::{UNet, UNetConfig};
use dnas_core::cost::{
    build_cost_table, candidate_cost, network_cost, CostTable, LatencyTable,
};
use dnas_core::data::{make_dataset, psnr, ssim, Dataset};
use dnas_core::params::{Fwd, ParamStore};
use dnas_core::search::{
    derive_architecture, finetune, inherit_weights, train_supernet, SearchRun, StageAlphas,
    SuperNet,
};
use dnas_core::{Real, Tape};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

fn write_result(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Run)
}

/// Records when and what ran, apart from the deterministic result files.
fn write_meta(cfg: &RunConfig, command: &str) -> CliResult {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_result(
        &cfg.out("meta.json"),
        &format!("{{\"command\":\"{command}\",\"unix_time\":{now}}}\n"),
    )
}

fn prepare(cfg: &RunConfig, command: &str) -> CliResult {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(CliError::Run)?;
    write_meta(cfg, command)
}

fn load_latency(path: &Path) -> CliResult<LatencyTable> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading latency table {}", path.display()))
        .map_err(CliError::Input)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing latency table {}", path.display()))
        .map_err(CliError::Input)
}

fn penalty_table(cfg: &RunConfig, resolution: [usize; 2]) -> CliResult<CostTable> {
    let latency = match &cfg.cost.latency_table {
        Some(p) => Some(load_latency(p)?),
        None => None,
    };
    build_cost_table(
        &cfg.rosters(),
        cfg.network.width,
        (resolution[0], resolution[1]),
        latency.as_ref(),
        cfg.cost.eta,
    )
    .map_err(|e| CliError::Input(e.into()))
}

pub fn cmd_costs(
    cfg: &RunConfig,
    latency_override: Option<&Path>,
    resolution_override: Option<[usize; 2]>,
) -> CliResult {
    let resolution = resolution_override.unwrap_or(cfg.cost.resolution);
    let mut cfg = cfg.clone();
    if let Some(p) = latency_override {
        cfg.cost.latency_table = Some(p.to_path_buf());
    }
    let cfg = &cfg;
    prepare(cfg, "costs")?;
    let table = penalty_table(cfg, resolution)?;

    let mut csv = String::from("stage,kind,count,macs,params,penalty,latency_ms\n");
    for stage in &table.stages {
        let c = cfg.network.width << stage.stage.depth();
        let (h, w) = (
            resolution[0] >> stage.stage.depth(),
            resolution[1] >> stage.stage.depth(),
        );
        for e in &stage.entries {
            let oc = candidate_cost(e.spec, c, h, w);
            let lat = e.latency_ms.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                stage.stage, e.spec.kind, e.spec.count, oc.macs, oc.params, e.penalty, lat
            )
            .expect("string write");
        }
    }
    write_result(&cfg.out("costs.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&table).expect("serializable table");
    write_result(&cfg.out("cost_table.json"), &format!("{json}\n"))?;

    let base = UNetConfig::base(cfg.network.width, cfg.network.input_channels);
    let cost = network_cost(&base, resolution[0], resolution[1]);
    let summary = format!(
        "config,height,width,gmacs,params\nbase,{},{},{},{}\n",
        resolution[0],
        resolution[1],
        cost.gmacs(),
        cost.params
    );
    write_result(&cfg.out("network.csv"), &summary)?;
    println!(
        "wrote {} candidate costs; base network at {}x{}: {:.2} GMACs, {} params",
        table.stages.iter().map(|s| s.entries.len()).sum::<usize>(),
        resolution[0],
        resolution[1],
        cost.gmacs(),
        cost.params
    );
    Ok(())
}

fn dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    make_dataset(&cfg.dataset).map_err(|e| CliError::Run(e.into()))
}

fn build_supernet(cfg: &RunConfig) -> CliResult<(SuperNet, ParamStore)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.search.seed);
    let net = SuperNet::build(
        &mut store,
        &mut rng,
        cfg.network.width,
        cfg.network.input_channels,
        &cfg.rosters(),
    )
    .map_err(|e| CliError::Input(e.into()))?;
    Ok((net, store))
}

fn loss_trace_csv(run: &SearchRun) -> String {
    let mut csv = String::from("epoch,lambda,task,penalty,entropy,total\n");
    for e in &run.epochs {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            e.epoch, e.lambda, e.task, e.penalty, e.entropy, e.total
        )
        .expect("string write");
    }
    csv
}

fn alpha_history_csv(run: &SearchRun) -> String {
    let mut csv = String::from("epoch,stage,kind,count,alpha\n");
    for (epoch, stages) in run.history.iter().enumerate() {
        for sa in stages {
            for (spec, a) in sa.candidates.iter().zip(&sa.alpha) {
                writeln!(csv, "{},{},{},{},{}", epoch, sa.stage, spec.kind, spec.count, a)
                    .expect("string write");
            }
        }
    }
    csv
}

fn print_derived(run: &SearchRun) {
    println!("derived architecture:");
    for sa in &run.alphas {
        let spec = run.derived.stage(sa.stage);
        let max = sa.alpha.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        println!("  {}: {} (alpha {:.3})", sa.stage, spec, max);
    }
}

pub fn cmd_search(cfg: &RunConfig) -> CliResult {
    prepare(cfg, "search")?;
    let patch = cfg.dataset.patch;
    let table = penalty_table(cfg, [patch, patch])?;
    let data = dataset(cfg)?;
    let (net, mut store) = build_supernet(cfg)?;
    let pairs = data.train_pairs();
    let run = train_supernet(&net, &mut store, &pairs, (patch, patch), &cfg.search, &table)
        .map_err(|e| CliError::Run(e.into()))?;

    store
        .save(&cfg.out("supernet.params"))
        .map_err(|e| CliError::Run(e.into()))?;
    let json = serde_json::to_string_pretty(&run).expect("serializable run");
    write_result(&cfg.out("run.json"), &format!("{json}\n"))?;
    write_result(&cfg.out("loss_trace.csv"), &loss_trace_csv(&run))?;
    write_result(&cfg.out("alpha_history.csv"), &alpha_history_csv(&run))?;
    print_derived(&run);
    Ok(())
}

fn run_path(cfg: &RunConfig, run: Option<&Path>) -> PathBuf {
    run.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("run.json"))
}

fn load_run(cfg: &RunConfig, run: Option<&Path>) -> CliResult<SearchRun> {
    let path = run_path(cfg, run);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading run file {}", path.display()))
        .map_err(CliError::Input)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing run file {}", path.display()))
        .map_err(CliError::Input)
}

pub fn cmd_derive(cfg: &RunConfig, alpha: Option<&Path>, run: Option<&Path>) -> CliResult {
    prepare(cfg, "derive")?;
    let alphas: Vec<StageAlphas> = match alpha {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading weight file {}", path.display()))
                .map_err(CliError::Input)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing weight file {}", path.display()))
                .map_err(CliError::Input)?
        }
        None => load_run(cfg, run)?.alphas,
    };
    let table = penalty_table(cfg, cfg.cost.resolution)?;
    let mid = cfg
        .rosters()
        .iter()
        .find(|r| !r.searchable)
        .map(|r| r.candidates[0])
        .expect("roster set always carries a middle stage");
    let derived = derive_architecture(
        cfg.network.width,
        cfg.network.input_channels,
        mid,
        &alphas,
        &table,
    )
    .map_err(|e| CliError::Input(e.into()))?;
    let json = serde_json::to_string_pretty(&derived).expect("serializable config");
    write_result(&cfg.out("derived.json"), &format!("{json}\n"))?;
    for sa in &alphas {
        println!("  {}: {}", sa.stage, derived.stage(sa.stage));
    }
    Ok(())
}

/// Mean PSNR/SSIM of a network over pairs, grouped by noise level.
fn evaluate(
    unet: &UNet,
    store: &ParamStore,
    data: &Dataset,
) -> Result<Vec<(String, Real, Real, Real)>> {
    let (c, p) = (data.channels, data.patch);
    let mut rows = Vec::with_capacity(data.held_out.len());
    for pair in &data.held_out {
        let tape = Tape::new();
        let mut fwd = Fwd::new(&tape, false);
        let x = tape.leaf(pair.noisy.clone(), vec![1, c, p, p])?;
        let out = unet.forward(&mut fwd, store, x)?;
        let restored = tape.data(out);
        rows.push((
            pair.id.clone(),
            pair.sigma_255,
            psnr(&restored, &pair.clean, 1.0)?,
            ssim(&restored, &pair.clean, c, p, p)?,
        ));
    }
    Ok(rows)
}

fn metrics_csv(rows: &[(String, Real, Real, Real)]) -> String {
    let mut csv = String::from("id,sigma,psnr,ssim\n");
    for (id, sigma, p, s) in rows {
        writeln!(csv, "{id},{sigma},{p},{s}").expect("string write");
    }
    csv
}

fn mean_by_sigma(rows: &[(String, Real, Real, Real)]) -> Vec<(Real, Real, Real)> {
    let mut sigmas: Vec<Real> = rows.iter().map(|r| r.1).collect();
    sigmas.sort_by(|a, b| a.partial_cmp(b).expect("finite sigma"));
    sigmas.dedup();
    sigmas
        .into_iter()
        .map(|sigma| {
            let group: Vec<&(String, Real, Real, Real)> =
                rows.iter().filter(|r| r.1 == sigma).collect();
            let n = group.len() as Real;
            (
                sigma,
                group.iter().map(|r| r.2).sum::<Real>() / n,
                group.iter().map(|r| r.3).sum::<Real>() / n,
            )
        })
        .collect()
}

fn load_derived(cfg: &RunConfig, run: Option<&Path>) -> CliResult<UNetConfig> {
    let path = cfg.out("derived.json");
    if path.exists() {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Input)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::Input)
    } else {
        Ok(load_run(cfg, run)?.derived)
    }
}

pub fn cmd_finetune(cfg: &RunConfig, run: Option<&Path>) -> CliResult {
    prepare(cfg, "finetune")?;
    let run_doc = load_run(cfg, run)?;
    let (net, mut super_store) = build_supernet(cfg)?;
    super_store
        .load_into(&cfg.out("supernet.params"))
        .map_err(|e| CliError::Input(e.into()))?;
    let (unet, mut store) =
        inherit_weights(&run_doc.derived, &net, &super_store, cfg.search.seed)
            .map_err(|e| CliError::Run(e.into()))?;
    let data = dataset(cfg)?;
    let ft = cfg.finetune_config();
    let patch = cfg.dataset.patch;
    let losses = finetune(&unet, &mut store, &data.train_pairs(), (patch, patch), &ft)
        .map_err(|e| CliError::Run(e.into()))?;

    store
        .save(&cfg.out("model.params"))
        .map_err(|e| CliError::Run(e.into()))?;
    let mut trace = String::from("epoch,task\n");
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(trace, "{epoch},{loss}").expect("string write");
    }
    write_result(&cfg.out("finetune_trace.csv"), &trace)?;

    let rows = evaluate(&unet, &store, &data).map_err(CliError::Run)?;
    let mut csv = String::from("sigma,mean_psnr,mean_ssim\n");
    for (sigma, p, s) in mean_by_sigma(&rows) {
        writeln!(csv, "{sigma},{p},{s}").expect("string write");
        println!("sigma {sigma}: {p:.2} dB, ssim {s:.4}");
    }
    write_result(&cfg.out("finetune_metrics.csv"), &csv)?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, run: Option<&Path>) -> CliResult {
    prepare(cfg, "eval")?;
    let derived = load_derived(cfg, run)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.search.seed);
    let unet = UNet::build(&mut store, &mut rng, &derived).map_err(|e| CliError::Input(e.into()))?;
    let model = cfg.out("model.params");
    if model.exists() {
        store
            .load_into(&model)
            .map_err(|e| CliError::Input(e.into()))?;
    } else {
        // no trained weights yet: evaluate the identity-initialized net
        unet.identity_init(&mut store);
        eprintln!("note: {} not found, evaluating identity model", model.display());
    }
    let data = dataset(cfg)?;
    let rows = evaluate(&unet, &store, &data).map_err(CliError::Run)?;
    if rows.is_empty() {
        return Err(CliError::Input(anyhow!(
            "held-out split is empty; nothing to evaluate"
        )));
    }
    write_result(&cfg.out("eval.csv"), &metrics_csv(&rows))?;
    for (sigma, p, s) in mean_by_sigma(&rows) {
        println!("sigma {sigma}: {p:.2} dB, ssim {s:.4}");
    }
    Ok(())
}
