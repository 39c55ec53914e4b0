//! The `decode` and `sweep` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use blockspec::metrics::RunSummary;
use blockspec::rng::{stream_rng, StreamRole};
use blockspec::trace::BlockRecord;
use blockspec::{decode_sequence, DecodeOutput, Sampler, Schedule, StepRecord, TokenId};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, Config};
use crate::error::CliError;

/// Flags shared by `decode` and `sweep`.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config's `seed`.
    pub seed: Option<u64>,
    /// Worker threads; `None` or `0` uses rayon's default.
    pub jobs: Option<usize>,
}

fn load(config_path: &Path, opts: &RunOptions) -> Result<Config, CliError> {
    let mut cfg = Config::load(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Decodes every prompt of one cell. Sequence `i` draws from the stream
/// `(seed, cell_id, i, role)`, so the outcome does not depend on scheduling.
pub fn run_cell(
    cell: &Cell,
    prompts: &[Vec<TokenId>],
    seed: u64,
    cell_id: u64,
    role: StreamRole,
) -> Result<Vec<DecodeOutput<f64>>, CliError> {
    let one = |i: usize, routing: &mut blockspec::RoutingState64| {
        let mut rng = stream_rng(seed, cell_id, i as u64, role);
        let routing = (cell.sampler == Sampler::S2d2).then_some(routing);
        decode_sequence(&cell.model, &prompts[i], &cell.decode, cell.sampler, routing, &mut rng).map_err(CliError::from)
    };
    if cell.sequential() {
        let mut routing = cell.routing.clone();
        (0..prompts.len()).map(|i| one(i, &mut routing)).collect()
    } else {
        (0..prompts.len()).into_par_iter().map(|i| one(i, &mut cell.routing.clone())).collect()
    }
}

/// Block-size-1 diffusion with the cell's model, prompts and token budget.
pub fn ar_baseline(cell: &Cell) -> Cell {
    let mut base = cell.clone();
    base.sampler = Sampler::Bd3;
    base.decode.block_size = 1;
    base.decode.max_steps = 1;
    base.decode.schedule = Schedule::Dynamic;
    base
}

#[derive(Serialize)]
struct StepLine<'a> {
    kind: &'static str,
    sequence: usize,
    #[serde(flatten)]
    step: &'a StepRecord<f64>,
}

/// Everything in a trace except its steps.
#[derive(Serialize)]
struct SequenceLine<'a> {
    kind: &'static str,
    sequence: usize,
    prompt: &'a [TokenId],
    output: &'a [TokenId],
    prompt_len: usize,
    nfe: usize,
    generated: usize,
    decoded_positions: usize,
    blocks: &'a [BlockRecord],
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    kind: &'static str,
    seed: u64,
    sampler: &'static str,
    block_size: usize,
    policy: &'static str,
    estimator: &'static str,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

/// Runs each configured prompt once and writes a JSON-lines stream: one
/// `step` record per trace step, one `sequence` record per prompt, then a
/// single `summary` record.
pub fn cmd_decode(config_path: &Path, out_path: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let cfg = load(config_path, opts)?;
    let cell = cfg.cell()?;
    let prompts = cfg.prompts()?;
    let outputs = pool(opts.jobs)?.install(|| run_cell(&cell, &prompts, cfg.seed, 0, StreamRole::Decode))?;

    let file = File::create(out_path).map_err(|e| CliError::io(out_path, e))?;
    let mut w = BufWriter::new(file);
    for (i, out) in outputs.iter().enumerate() {
        for step in &out.trace.steps {
            write_line(&mut w, &StepLine { kind: "step", sequence: i, step })?;
        }
        write_line(
            &mut w,
            &SequenceLine {
                kind: "sequence",
                sequence: i,
                prompt: &prompts[i],
                output: out.generated(),
                prompt_len: out.trace.prompt_len,
                nfe: out.trace.nfe,
                generated: out.trace.generated,
                decoded_positions: out.trace.decoded_positions,
                blocks: &out.trace.blocks,
            },
        )?;
    }
    let traces: Vec<_> = outputs.into_iter().map(|o| o.trace).collect();
    let summary = RunSummary::from_traces(&traces, cfg.arness_k);
    write_line(
        &mut w,
        &SummaryLine {
            kind: "summary",
            seed: cfg.seed,
            sampler: cell.sampler.name(),
            block_size: cell.decode.block_size,
            policy: cell.routing.policy.name(),
            estimator: cell.routing.estimator.name(),
            summary: &summary,
        },
    )?;
    w.flush().map_err(|e| CliError::io(out_path, e))
}

fn write_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| CliError::Runtime(format!("write failed: {e}")))
}

/// One sweep row: the cell's metrics plus its AR baseline.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub cell_id: usize,
    pub params: Vec<(&'static str, String)>,
    pub summary: RunSummary,
    pub speedup_vs_ar: Option<f64>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-position cost ratio of the baseline over the method.
fn speedup(method: &RunSummary, baseline: &RunSummary) -> Option<f64> {
    if method.nfe == 0 || method.decoded == 0 || baseline.decoded == 0 {
        return None;
    }
    let per_pos = |s: &RunSummary| s.nfe as f64 / s.decoded as f64;
    Some(per_pos(baseline) / per_pos(method))
}

/// Runs every grid cell and returns rows in cell order.
pub fn sweep_rows(cfg: &Config, jobs: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    let cells = cfg.cells()?;
    let prompts = cfg.prompts()?;
    pool(jobs)?.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(id, cell)| {
                let traces = |c: &Cell, role| -> Result<Vec<_>, CliError> {
                    Ok(run_cell(c, &prompts, cfg.seed, id as u64, role)?.into_iter().map(|o| o.trace).collect())
                };
                let summary = RunSummary::from_traces(&traces(cell, StreamRole::Decode)?, cfg.arness_k);
                let base = RunSummary::from_traces(&traces(&ar_baseline(cell), StreamRole::Baseline)?, cfg.arness_k);
                Ok(SweepRow { cell_id: id, params: cell.params(), speedup_vs_ar: speedup(&summary, &base), summary })
            })
            .collect()
    })
}

/// Writes one CSV row per grid cell.
pub fn cmd_sweep(config_path: &Path, out_path: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let cfg = load(config_path, opts)?;
    let rows = sweep_rows(&cfg, opts.jobs)?;
    let mut w = csv::Writer::from_path(out_path)?;
    let k = cfg.arness_k;
    let mut header = vec!["cell_id".to_string()];
    if let Some(first) = rows.first() {
        header.extend(first.params.iter().map(|(name, _)| name.to_string()));
    }
    header.extend(
        [
            "sequences",
            "tokens",
            "decoded",
            "nfe",
            "blocks",
            "steps",
            "verified_steps",
            "tokens_per_nfe",
            "speedup_vs_ar",
            "verify_rate",
            "mean_accepted_prefix",
            "rejection_rate",
            "acceptance_rate",
        ]
        .map(String::from),
    );
    header.push(format!("local_arness@{k}"));
    header.push(format!("global_arness@{k}"));
    w.write_record(&header)?;
    for row in &rows {
        let s = &row.summary;
        let mut rec = vec![row.cell_id.to_string()];
        rec.extend(row.params.iter().map(|(_, v)| v.clone()));
        rec.extend(
            [s.sequences, s.tokens, s.decoded, s.nfe, s.blocks, s.steps, s.verified_steps].map(|n| n.to_string()),
        );
        rec.extend(
            [
                s.tokens_per_nfe,
                row.speedup_vs_ar,
                s.verify_rate,
                s.mean_accepted_prefix,
                s.rejection_rate,
                s.acceptance_rate,
                s.local_arness,
                s.global_arness,
            ]
            .map(fmt_opt),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(out_path, e))
}
