use std::fmt::Display;
use std::fs;
use std::path::Path;

use fcnlp_core::checkpoint::{load_checkpoint, save_checkpoint};
use fcnlp_core::datamodel::{load_dataset, save_dataset, Dataset, Split};
use fcnlp_core::eval::{
    ablation, best_cell, edges_monotone, evaluate, grid_lambda_mu, report, run_protocol,
    summary_table, sweep_tau, write_ablation_csv, write_grid_csv, write_runs_csv, write_tau_csv,
    Metrics, MetricsReport,
};
use fcnlp_core::gradcheck::{full_suite, worst_by_name, TOLERANCE};
use fcnlp_core::graph::{build_graph, to_dot, to_json, Channel, CrossModalGraph, ExportFormat};
use fcnlp_core::trainer::{gen_synth, train, write_loss_csv, SynthConfig, TrainConfig};
use serde_json::{json, Value};

use crate::args::{
    Command, DataCmd, EvalCmd, ExportCmd, GradCmd, GraphCmd, GridCmd, SweepCmd, SynthCmd,
    TrainFlags,
};
use crate::manifest::Artifacts;
use crate::CliError;

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

pub fn run(cmd: Command, argv: &[String]) -> Result<(), CliError> {
    match cmd {
        Command::BuildGraph(c) => build_graph_cmd(&c, argv),
        Command::Train(c) => train_cmd(&c, argv),
        Command::Eval(c) => eval_cmd(&c, argv),
        Command::SweepTau(c) => sweep_cmd(&c, argv),
        Command::Grid(c) => grid_cmd(&c, argv),
        Command::Ablation(c) => ablation_cmd(&c, argv),
        Command::GenSynth(c) => synth_cmd(&c, argv),
        Command::ExportGraph(c) => export_cmd(&c, argv),
        Command::Gradcheck(c) => gradcheck_cmd(&c, argv),
    }
}

fn base_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
        cfg.apply_kv(&text).map_err(invalid)?;
    }
    Ok(cfg)
}

fn resolve(flags: &TrainFlags) -> Result<TrainConfig, CliError> {
    let mut cfg = base_config(flags.config.as_deref())?;
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field.clone() {
                cfg.$field = v;
            })*
        };
    }
    take!(tau, lambda, mu, lr, epochs, hidden, gcn_layers, la_layers, seed, runs);
    if let Some(c) = &flags.channels {
        cfg.channels = c.parse().map_err(invalid)?;
    }
    if let Some(v) = &flags.variant {
        cfg.variant = v.parse().map_err(CliError::Validation)?;
    }
    if flags.merge_unseen.is_some() {
        cfg.merge_unseen = flags.merge_unseen;
    }
    cfg.strict_channels |= flags.strict_channels;
    cfg.transductive_train |= flags.transductive_train;
    cfg.shared_self_weight |= flags.shared_self_weight;
    cfg.mean_reduction |= flags.mean_reduction;
    cfg.validate().map_err(invalid)?;
    announce(&cfg);
    Ok(cfg)
}

fn resolve_graph(c: &GraphCmd) -> Result<TrainConfig, CliError> {
    resolve(&TrainFlags {
        config: c.config.clone(),
        tau: c.tau,
        channels: c.channels.clone(),
        strict_channels: c.strict_channels,
        ..TrainFlags::default()
    })
}

fn announce(cfg: &TrainConfig) {
    println!("# resolved config (seed {})", cfg.seed);
    print!("{}", cfg.to_kv());
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    let ds = load_dataset(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    println!(
        "# dataset {}: {} records, d_img={}, d_txt={}",
        path.display(),
        ds.len(),
        ds.d_img,
        ds.d_txt
    );
    Ok(ds)
}

fn graph_for(ds: &Dataset, cfg: &TrainConfig) -> Result<CrossModalGraph, CliError> {
    let g = build_graph(ds, &cfg.similarity()).map_err(runtime)?;
    println!(
        "# graph: {} nodes, {} edges, {:.3} connections per node",
        g.n(),
        g.edge_count(),
        g.avg_connections()
    );
    Ok(g)
}

fn config_value(cfg: &TrainConfig) -> Value {
    Value::String(cfg.to_kv())
}

fn metrics_json(m: &Metrics) -> Value {
    json!({
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
    })
}

fn report_json(r: &MetricsReport) -> Value {
    let stat = |s: fcnlp_core::eval::Stat| json!({"mean": s.mean, "std": s.std});
    json!({
        "n_runs": r.n_runs,
        "accuracy": stat(r.accuracy),
        "precision": stat(r.precision),
        "recall": stat(r.recall),
        "f1": stat(r.f1),
        "per_run": r.per_run.iter().map(metrics_json).collect::<Vec<_>>(),
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serialises") + "\n"
}

fn build_graph_cmd(c: &GraphCmd, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve_graph(c)?;
    let ds = load(&c.data)?;
    let g = graph_for(&ds, &cfg)?;
    let mut per_channel = serde_json::Map::new();
    for ch in Channel::ALL {
        let n = g.edges().iter().filter(|e| e.channels.contains(ch)).count();
        println!("#   {ch}: {n} edges");
        per_channel.insert(ch.to_string(), json!(n));
    }
    let mut out = Artifacts::create(&c.out)?;
    out.write("graph.json", to_json(&g))?;
    let stats = json!({
        "nodes": g.n(),
        "edges": g.edge_count(),
        "avg_connections": g.avg_connections(),
        "edges_per_channel": per_channel,
    });
    out.write("graph_stats.json", pretty(&stats))?;
    out.finish("build-graph", argv, config_value(&cfg))
}

fn export_cmd(c: &ExportCmd, argv: &[String]) -> Result<(), CliError> {
    let format: ExportFormat = c.format.parse().map_err(invalid)?;
    let cfg = resolve_graph(&c.graph)?;
    let ds = load(&c.graph.data)?;
    let g = graph_for(&ds, &cfg)?;
    let mut out = Artifacts::create(&c.graph.out)?;
    match format {
        ExportFormat::Json => out.write("graph.json", to_json(&g))?,
        ExportFormat::Dot => out.write("graph.dot", to_dot(&g))?,
    }
    out.finish("export-graph", argv, config_value(&cfg))
}

fn train_cmd(c: &DataCmd, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve(&c.flags)?;
    let ds = load(&c.data)?;
    let g = graph_for(&ds, &cfg)?;
    let result = train(&ds, &g, &cfg).map_err(runtime)?;
    let mut out = Artifacts::create(&c.out)?;
    out.write("losses.csv", csv_bytes(|b| write_loss_csv(&result.history, b)))?;
    save_checkpoint(&result.model, out.path("model.tfck")).map_err(runtime)?;
    out.add("model.tfck");
    let last = result.history.last().expect("at least one epoch");
    println!(
        "final losses: l_fcn={:.6} l_lpn={:.6} l_mmd={:.6} l_all={:.6}",
        last.l_fcn, last.l_lpn, last.l_mmd, last.l_all
    );
    println!("unseen labels read by cross-entropy: {}", result.unseen_ce_reads);
    if !ds.indices_in(Split::Test).is_empty() {
        let m = evaluate(&result.model, &ds, &g).map_err(runtime)?;
        println!(
            "test: accuracy {:.2} precision {:.2} recall {:.2} f1 {:.2}",
            m.accuracy, m.precision, m.recall, m.f1
        );
        out.write("metrics.json", pretty(&metrics_json(&m)))?;
    }
    out.finish("train", argv, config_value(&cfg))
}

fn eval_cmd(c: &EvalCmd, argv: &[String]) -> Result<(), CliError> {
    let d = &c.data;
    if let Some(ck) = &c.checkpoint {
        let model = load_checkpoint(ck).map_err(|e| runtime(format!("{}: {e}", ck.display())))?;
        announce(&model.config);
        let ds = load(&d.data)?;
        let g = graph_for(&ds, &model.config)?;
        let m = evaluate(&model, &ds, &g).map_err(runtime)?;
        println!(
            "test: accuracy {:.2} precision {:.2} recall {:.2} f1 {:.2}",
            m.accuracy, m.precision, m.recall, m.f1
        );
        let mut out = Artifacts::create(&d.out)?;
        out.write("metrics.json", pretty(&metrics_json(&m)))?;
        return out.finish("eval", argv, config_value(&model.config));
    }
    let cfg = resolve(&d.flags)?;
    let ds = load(&d.data)?;
    let g = graph_for(&ds, &cfg)?;
    let runs = run_protocol(&ds, &g, &cfg).map_err(runtime)?;
    let rep = report(&runs);
    print!("{}", summary_table([(cfg.variant.to_string(), &rep)]));
    let mut out = Artifacts::create(&d.out)?;
    out.write("runs.csv", csv_bytes(|b| write_runs_csv(&runs, b)))?;
    out.write("metrics.json", pretty(&report_json(&rep)))?;
    out.finish("eval", argv, config_value(&cfg))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<f64>())
        .collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(CliError::Validation(format!("{what}: empty list"))),
        Err(e) => Err(CliError::Validation(format!("{what}: {e}"))),
    }
}

fn sweep_cmd(c: &SweepCmd, argv: &[String]) -> Result<(), CliError> {
    let taus = parse_list(&c.taus, "--taus")?;
    if let Some(t) = taus.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(CliError::Validation(format!("--taus: {t} outside (0, 1]")));
    }
    let cfg = resolve(&c.data.flags)?;
    let ds = load(&c.data.data)?;
    let rows = sweep_tau(&ds, &cfg, &taus).map_err(runtime)?;
    println!("{:>6} {:>8} {:>10} {:>16}", "tau", "edges", "avg_conn", "accuracy");
    for r in &rows {
        println!(
            "{:>6} {:>8} {:>10.3} {:>16}",
            r.tau,
            r.edges,
            r.avg_connections,
            r.report.accuracy.to_string()
        );
    }
    println!("edge count non-increasing in tau: {}", edges_monotone(&rows));
    let mut out = Artifacts::create(&c.data.out)?;
    out.write("tau_sweep.csv", csv_bytes(|b| write_tau_csv(&rows, b)))?;
    out.finish("sweep-tau", argv, config_value(&cfg))
}

fn grid_cmd(c: &GridCmd, argv: &[String]) -> Result<(), CliError> {
    let values = parse_list(&c.values, "--values")?;
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(CliError::Validation(format!("--values: {v} must be positive")));
    }
    let cfg = resolve(&c.data.flags)?;
    let ds = load(&c.data.data)?;
    let g = graph_for(&ds, &cfg)?;
    let cells = grid_lambda_mu(&ds, &g, &cfg, &values).map_err(runtime)?;
    print!(
        "{}",
        summary_table(
            cells
                .iter()
                .map(|c| (format!("lambda={} mu={}", c.lambda, c.mu), &c.report))
        )
    );
    if let Some(b) = best_cell(&cells) {
        println!("best: lambda={} mu={} accuracy {}", b.lambda, b.mu, b.report.accuracy);
    }
    let mut out = Artifacts::create(&c.data.out)?;
    out.write("grid.csv", csv_bytes(|b| write_grid_csv(&cells, b)))?;
    out.finish("grid", argv, config_value(&cfg))
}

fn ablation_cmd(c: &DataCmd, argv: &[String]) -> Result<(), CliError> {
    let cfg = resolve(&c.flags)?;
    let ds = load(&c.data)?;
    let g = graph_for(&ds, &cfg)?;
    let rows = ablation(&ds, &g, &cfg).map_err(runtime)?;
    print!(
        "{}",
        summary_table(
            rows.iter()
                .map(|r| (format!("{} {}", r.variant.row(), r.variant), &r.report))
        )
    );
    for r in &rows {
        println!("{} unseen labels read by cross-entropy: {}", r.variant, r.unseen_ce_reads);
    }
    let mut out = Artifacts::create(&c.out)?;
    out.write("ablation.csv", csv_bytes(|b| write_ablation_csv(&rows, b)))?;
    out.finish("ablation", argv, config_value(&cfg))
}

fn synth_cmd(c: &SynthCmd, argv: &[String]) -> Result<(), CliError> {
    let cfg = SynthConfig {
        events: c.events,
        per_event: c.per_event,
        dim: c.dim,
        fake_offset: c.fake_offset,
        noise: c.noise,
        seed: c.seed,
    };
    let echo = json!({
        "events": cfg.events,
        "per_event": cfg.per_event,
        "dim": cfg.dim,
        "fake_offset": cfg.fake_offset,
        "noise": cfg.noise,
        "seed": cfg.seed,
    });
    println!("# synthetic config (seed {})\n{}", cfg.seed, pretty(&echo).trim_end());
    let ds = gen_synth(&cfg).map_err(invalid)?;
    let mut out = Artifacts::create(&c.out)?;
    save_dataset(&ds, out.path("synth.tfre")).map_err(runtime)?;
    out.add("synth.tfre");
    println!("wrote {} records to {}", ds.len(), out.path("synth.tfre").display());
    out.finish("gen-synth", argv, echo)
}

fn gradcheck_cmd(c: &GradCmd, argv: &[String]) -> Result<(), CliError> {
    let seeds: Vec<u64> = (0..c.seeds.max(1)).collect();
    println!("# gradcheck: central differences, seeds {seeds:?}, tolerance {TOLERANCE:e}");
    let reports = full_suite(&seeds).map_err(runtime)?;
    let worst = worst_by_name(&reports);
    for (name, err) in &worst {
        let mark = if *err <= TOLERANCE { "ok" } else { "FAIL" };
        println!("{name:<28} max rel error {err:.3e}  {mark}");
    }
    let mut out = Artifacts::create(&c.out)?;
    let mut csv = String::from("name,seed,entries,max_rel_error\n");
    for r in &reports {
        csv.push_str(&format!("{},{},{},{:e}\n", r.name, r.seed, r.entries, r.max_rel_error));
    }
    out.write("gradcheck.csv", csv)?;
    out.finish("gradcheck", argv, json!({ "seeds": seeds, "tolerance": TOLERANCE }))?;
    if worst.iter().any(|(_, e)| *e > TOLERANCE) {
        return Err(CliError::Runtime("gradient check exceeded tolerance".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parse_and_reject() {
        assert_eq!(parse_list("0.1, 1,10", "x").unwrap(), vec![0.1, 1.0, 10.0]);
        assert!(matches!(parse_list("", "x"), Err(CliError::Validation(_))));
        assert!(matches!(parse_list("1,a", "x"), Err(CliError::Validation(_))));
    }

    #[test]
    fn flags_override_defaults() {
        let flags = TrainFlags {
            tau: Some(0.95),
            variant: Some("iii".into()),
            mean_reduction: true,
            ..TrainFlags::default()
        };
        let cfg = resolve(&flags).unwrap();
        assert_eq!(cfg.tau, 0.95);
        assert_eq!(cfg.variant.as_str(), "fcn-lpn-no-mmd");
        assert!(cfg.mean_reduction);
        let bad = TrainFlags {
            lr: Some(-1.0),
            ..TrainFlags::default()
        };
        assert!(matches!(resolve(&bad), Err(CliError::Validation(_))));
    }
}
