// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use patgen_core::deepsquish::{fold, unfold, TopologyTensor};
use patgen_core::denoiser::checkpoint::Checkpoint;
use patgen_core::denoiser::{train, BayesDenoiser, Denoiser, NetDenoiser};
use patgen_core::diffusion::{sample_batch, NoiseSchedule, ScheduleConfig};
use patgen_core::drc;
use patgen_core::geometry::{decode_squish, encode_squish, pad_to_square, render_svg, Layout, SquishPattern};
use patgen_core::legalize::{legalize_pattern, DesignRules, LegalizeOptions, Outcome};
use patgen_core::patops::{augment_library, topology_stats};
use patgen_core::rng;
use patgen_core::toy;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::{Cli, Command, Invalid};

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("starting worker threads")?;
    let parallel = cli.jobs != 1;
    let out_or = |flag: Option<PathBuf>| -> PathBuf {
        flag.or_else(|| cfg.io.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."))
    };
    match cli.command {
        Command::Encode {
            layout,
            size,
            channels,
            out_dir,
        } => encode(&layout, size, channels, &out_dir),
        Command::Decode { tensor, deltas, out } => decode(&tensor, &deltas, out.as_deref()),
        Command::Toy {
            count,
            channels,
            out_dir,
            seed,
        } => toy_library(count, channels, cfg.seed(seed.seed)?, &out_or(out_dir)),
        Command::Train {
            data,
            out,
            iterations,
            rules,
            losses,
            seed,
        } => {
            let out = out
                .or_else(|| cfg.io.checkpoint.clone())
                .ok_or_else(|| Invalid("train needs --out or io.checkpoint".into()))?;
            let rules = resolve_rules(rules.as_deref(), &cfg).ok();
            let seed = cfg.seed(seed.seed)?;
            pool.install(|| train_cmd(&cfg, &data, &out, iterations, rules, losses.as_deref(), seed))
        }
        Command::Sample {
            checkpoint,
            bayes,
            count,
            m,
            out_dir,
            seed,
        } => {
            let seed = cfg.seed(seed.seed)?;
            let out = out_or(out_dir);
            let checkpoint = checkpoint.or_else(|| cfg.io.checkpoint.clone());
            pool.install(|| sample_cmd(&cfg, checkpoint.as_deref(), bayes.as_deref(), count, m, seed, &out, parallel))
        }
        Command::Legalize {
            tensors,
            rules,
            strategy,
            library,
            blocks,
            out_dir,
            seed,
        } => {
            let rules = resolve_rules(rules.as_deref(), &cfg)?;
            let library = match library.or_else(|| cfg.io.library.clone()) {
                Some(dir) => read_library(&dir)?,
                None => Vec::new(),
            };
            let opts = LegalizeOptions {
                blocks,
                library,
                ..LegalizeOptions::with_strategy(strategy)
            };
            let seed = cfg.seed(seed.seed)?;
            let out = out_or(out_dir);
            pool.install(|| legalize_cmd(&tensors, &rules, &opts, seed, &out, parallel))
        }
        Command::Drc { layouts, rules } => drc_cmd(&layouts, &resolve_rules(rules.as_deref(), &cfg)?),
        Command::Augment {
            input,
            rules,
            rounds,
            out_dir,
            seed,
        } => {
            let rules = resolve_rules(rules.as_deref(), &cfg)?;
            let seed = cfg.seed(seed.seed)?;
            let out = out_or(out_dir);
            pool.install(|| augment_cmd(&cfg, &input, &rules, rounds, seed, &out, parallel))
        }
        Command::Stats { input, histogram } => stats_cmd(&input, histogram.as_deref()),
        Command::Render { layouts, out_dir } => render(&layouts, &out_dir),
    }
}

fn resolve_rules(flag: Option<&Path>, cfg: &RunConfig) -> anyhow::Result<DesignRules> {
    match (flag, cfg.rules) {
        (Some(path), _) => {
            let text = read_text(path)?;
            DesignRules::from_json(&text).map_err(|e| located(path, e))
        }
        (None, Some(r)) => Ok(r),
        (None, None) => Err(Invalid("design rules needed: pass --rules or set `rules` in the config".into()).into()),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

// parse errors carry line and column when the input was JSON
fn located(path: &Path, e: patgen_core::Error) -> anyhow::Error {
    match e {
        patgen_core::Error::Json(j) => Invalid(json_error(path, &j)).into(),
        patgen_core::Error::Io(io) => anyhow::Error::new(io).context(path.display().to_string()),
        other => Invalid(format!("{}: {other}", path.display())).into(),
    }
}

/// `file:line:column: message`
pub fn json_error(path: &Path, e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    let msg = msg.strip_suffix(&suffix).unwrap_or(&msg);
    format!("{}:{}:{}: {msg}", path.display(), e.line(), e.column())
}

fn read_layout(path: &Path) -> anyhow::Result<Layout> {
    Layout::from_json(&read_text(path)?).map_err(|e| located(path, e))
}

fn read_tensor(path: &Path) -> anyhow::Result<TopologyTensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    TopologyTensor::from_bytes(&bytes).map_err(|e| located(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

/// Files in `dir` with the given extension, sorted by name.
fn list(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_tensors(dir: &Path) -> anyhow::Result<Vec<(PathBuf, TopologyTensor)>> {
    list(dir, "dsqt")?
        .into_iter()
        .map(|p| read_tensor(&p).map(|t| (p, t)))
        .collect()
}

fn read_library(dir: &Path) -> anyhow::Result<Vec<(Vec<f64>, Vec<f64>)>> {
    list(dir, "csv")?
        .iter()
        .map(|p| {
            let (dx, dy, _) = SquishPattern::parse_deltas_csv(&read_text(p)?).map_err(|e| located(p, e))?;
            Ok((dx, dy))
        })
        .collect()
}

fn encode(layout: &Path, size: Option<usize>, channels: usize, out_dir: &Path) -> anyhow::Result<ExitCode> {
    let sq = encode_squish(&read_layout(layout)?).map_err(|e| located(layout, e))?;
    let n = size.unwrap_or(sq.topology.rows().max(sq.topology.cols()));
    let sq = pad_to_square(&sq, n).map_err(|e| located(layout, e))?;
    let t = fold(&sq.topology, channels).map_err(|e| Invalid(e.to_string()))?;
    ensure_dir(out_dir)?;
    let name = stem(layout);
    write(&out_dir.join(format!("{name}.dsqt")), t.to_bytes())?;
    write(&out_dir.join(format!("{name}.csv")), sq.deltas_csv())?;
    println!("{name}: {n}x{n} topology, {} channels of {}x{}", t.channels(), t.side(), t.side());
    Ok(ExitCode::SUCCESS)
}

fn decode(tensor: &Path, deltas: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let topo = unfold(&read_tensor(tensor)?);
    let (dx, dy, unit_scale) = SquishPattern::parse_deltas_csv(&read_text(deltas)?).map_err(|e| located(deltas, e))?;
    let sq = SquishPattern::new(topo, dx, dy, unit_scale).map_err(|e| Invalid(e.to_string()))?;
    let json = decode_squish(&sq).map_err(|e| Invalid(e.to_string()))?.to_json();
    match out {
        Some(p) => write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn toy_library(count: usize, channels: usize, seed: u64, out_dir: &Path) -> anyhow::Result<ExitCode> {
    ensure_dir(out_dir)?;
    for (i, (layout, sq)) in toy::toy_library(count, seed)?.into_iter().enumerate() {
        let name = format!("toy_{i:05}");
        let t = fold(&sq.topology, channels).map_err(|e| Invalid(e.to_string()))?;
        write(&out_dir.join(format!("{name}.json")), layout.to_json() + "\n")?;
        write(&out_dir.join(format!("{name}.dsqt")), t.to_bytes())?;
        write(&out_dir.join(format!("{name}.csv")), sq.deltas_csv())?;
    }
    write(&out_dir.join("rules.json"), toy::toy_rules().to_json() + "\n")?;
    println!("wrote {count} toy patterns to {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn train_cmd(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    iterations: Option<usize>,
    rules: Option<DesignRules>,
    losses: Option<&Path>,
    seed: u64,
) -> anyhow::Result<ExitCode> {
    let mut dataset: Vec<TopologyTensor> = read_tensors(data)?.into_iter().map(|(_, t)| t).collect();
    if dataset.is_empty() {
        return Err(Invalid(format!("no .dsqt files in {}", data.display())).into());
    }
    let mut tc = cfg.model.clone();
    tc.augment = cfg.augment;
    tc.seed = seed;
    if let Some(it) = iterations {
        tc.iterations = it;
    }
    if tc.augment_rounds > 0 {
        let rules = rules.ok_or_else(|| Invalid("augmentation during training needs design rules".into()))?;
        let channels = dataset[0].channels();
        let topos: Vec<_> = dataset.iter().map(unfold).collect();
        let grown = augment_library(&topos, &tc.augment, &rules, &LegalizeOptions::default(), tc.augment_rounds, seed, true)?;
        dataset = grown.iter().map(|t| fold(t, channels)).collect::<patgen_core::Result<_>>()?;
        log::info!("augmented training set to {} tensors", dataset.len());
    }
    let sched = cfg.schedule.build()?;
    let report = train(&dataset, &tc, &sched)?;
    Checkpoint {
        schedule: cfg.schedule,
        params: report.params.clone(),
    }
    .save(out)
    .with_context(|| format!("writing {}", out.display()))?;
    if let Some(p) = losses {
        let mut csv = String::from("iteration,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        write(p, csv)?;
    }
    let n = report.losses.len();
    let window = (n / 10).max(1);
    println!(
        "{}",
        json!({
            "dataset": dataset.len(),
            "iterations": n,
            "loss_start": report.mean_loss(0, window.min(n)),
            "loss_end": report.mean_loss(n - window.min(n), n),
        })
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SampleEntry {
    index: usize,
    file: String,
    denoiser_calls: usize,
    wall_us: u64,
}

#[allow(clippy::too_many_arguments)]
fn sample_cmd(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    bayes: Option<&Path>,
    count: usize,
    m: Option<usize>,
    seed: u64,
    out_dir: &Path,
    parallel: bool,
) -> anyhow::Result<ExitCode> {
    let (schedule, denoiser, channels, side): (ScheduleConfig, Box<dyn Denoiser>, usize, usize) = match (checkpoint, bayes) {
        (Some(p), _) => {
            let ck = Checkpoint::load(p).map_err(|e| located(p, e))?;
            let net = ck.params.config;
            (ck.schedule, Box::new(NetDenoiser { params: ck.params }), net.channels, net.side)
        }
        (None, Some(dir)) => {
            let data: Vec<TopologyTensor> = read_tensors(dir)?.into_iter().map(|(_, t)| t).collect();
            let first = data
                .first()
                .ok_or_else(|| Invalid(format!("no .dsqt files in {}", dir.display())))?;
            let (c, s) = (first.channels(), first.side());
            let den = BayesDenoiser::new(data, cfg.schedule.build()?).map_err(|e| Invalid(e.to_string()))?;
            (cfg.schedule, Box::new(den), c, s)
        }
        (None, None) => return Err(Invalid("sample needs --checkpoint or --bayes".into()).into()),
    };
    let m = m.unwrap_or(schedule.m);
    let sched: NoiseSchedule = schedule.build()?;
    let records = sample_batch(denoiser.as_ref(), count, channels, side, &sched, m, seed, parallel)?;
    ensure_dir(out_dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let file = format!("sample_{i:05}.dsqt");
        write(&out_dir.join(&file), r.tensor.to_bytes())?;
        entries.push(SampleEntry {
            index: i,
            file,
            denoiser_calls: r.denoiser_calls,
            wall_us: r.wall_us,
        });
    }
    let walls: Vec<u64> = entries.iter().map(|e| e.wall_us).collect();
    let manifest = json!({
        "count": count,
        "seed": seed,
        "K": schedule.steps,
        "m": m,
        "median_wall_us": median(&walls),
        "mean_wall_us": mean(&walls),
        "samples": entries,
    });
    write(&out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {count} samples to {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn median(v: &[u64]) -> Option<f64> {
    let mut v = v.to_vec();
    v.sort_unstable();
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2] as f64),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2]) as f64),
    }
}

fn mean(v: &[u64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<u64>() as f64 / v.len() as f64)
}

#[derive(Serialize)]
struct LegalizeEntry {
    index: usize,
    input: String,
    outcome: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    solve_us: u64,
    attempts: usize,
    inits: usize,
    iterations: usize,
    drc_clean: Option<bool>,
}

fn legalize_cmd(
    tensors: &Path,
    rules: &DesignRules,
    opts: &LegalizeOptions,
    seed: u64,
    out_dir: &Path,
    parallel: bool,
) -> anyhow::Result<ExitCode> {
    let inputs = read_tensors(tensors)?;
    ensure_dir(out_dir)?;
    let one = |(i, (path, t)): (usize, &(PathBuf, TopologyTensor))| -> anyhow::Result<LegalizeEntry> {
        let topo = unfold(t);
        let name = stem(path);
        let mut entry = LegalizeEntry {
            index: i,
            input: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            outcome: "discarded",
            layout: None,
            reason: None,
            solve_us: 0,
            attempts: 0,
            inits: 0,
            iterations: 0,
            drc_clean: None,
        };
        let start = std::time::Instant::now();
        let result = legalize_pattern(&topo, rules, opts, &mut rng::stream(seed, i as u64));
        entry.solve_us = start.elapsed().as_micros() as u64;
        match result {
            Ok(Outcome::Legal(p)) => {
                let file = format!("{name}.json");
                write(&out_dir.join(&file), p.layout.to_json() + "\n")?;
                write(&out_dir.join(format!("{name}.csv")), p.pattern.deltas_csv())?;
                entry.outcome = "legal";
                entry.layout = Some(file);
                entry.attempts = p.attempts;
                entry.inits = p.inits;
                entry.iterations = p.iterations;
                entry.drc_clean = Some(drc::check(&p.layout, rules).clean);
            }
            Ok(Outcome::Discard(why)) => entry.reason = Some(why),
            Err(patgen_core::Error::Prefilter(why)) => {
                entry.outcome = "rejected";
                entry.reason = Some(why);
            }
            Err(e) => return Err(e.into()),
        }
        Ok(entry)
    };
    let entries: Vec<LegalizeEntry> = if parallel {
        inputs.par_iter().enumerate().map(one).collect::<anyhow::Result<_>>()?
    } else {
        inputs.iter().enumerate().map(one).collect::<anyhow::Result<_>>()?
    };
    let count = |o: &str| entries.iter().filter(|e| e.outcome == o).count();
    let (legal, discarded, rejected) = (count("legal"), count("discarded"), count("rejected"));
    let clean = entries.iter().filter(|e| e.drc_clean == Some(true)).count();
    let times: Vec<u64> = entries.iter().filter(|e| e.outcome != "rejected").map(|e| e.solve_us).collect();
    let report = json!({
        "strategy": format!("{:?}", opts.strategy),
        "seed": seed,
        "summary": {
            "total": entries.len(),
            "legal": legal,
            "discarded": discarded,
            "rejected": rejected,
            "drc_clean": clean,
            "legality_rate": if legal > 0 { Some(clean as f64 / legal as f64) } else { None },
            "median_solve_us": median(&times),
            "mean_solve_us": mean(&times),
        },
        "items": entries,
    });
    write(&out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", report["summary"]);
    Ok(ExitCode::SUCCESS)
}

fn drc_cmd(layouts: &[PathBuf], rules: &DesignRules) -> anyhow::Result<ExitCode> {
    let mut dirty = false;
    for path in layouts {
        let report = drc::check(&read_layout(path)?, rules);
        for v in &report.violations {
            let mut obj = serde_json::to_value(v)?;
            obj["file"] = json!(path.display().to_string());
            println!("{obj}");
        }
        dirty |= !report.clean;
    }
    Ok(if dirty { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn augment_cmd(
    cfg: &RunConfig,
    input: &Path,
    rules: &DesignRules,
    rounds: usize,
    seed: u64,
    out_dir: &Path,
    parallel: bool,
) -> anyhow::Result<ExitCode> {
    let tensors = read_tensors(input)?;
    let Some((_, first)) = tensors.first() else {
        return Err(Invalid(format!("no .dsqt files in {}", input.display())).into());
    };
    let channels = first.channels();
    let topos: Vec<_> = tensors.iter().map(|(_, t)| unfold(t)).collect();
    let grown = augment_library(&topos, &cfg.augment, rules, &LegalizeOptions::default(), rounds, seed, parallel)?;
    ensure_dir(out_dir)?;
    for (i, t) in grown.iter().enumerate() {
        write(&out_dir.join(format!("aug_{i:05}.dsqt")), fold(t, channels)?.to_bytes())?;
    }
    let before = topology_stats(&topos)?;
    let after = topology_stats(&grown)?;
    println!(
        "{}",
        json!({
            "input": topos.len(),
            "output": grown.len(),
            "diversity_bits_before": before.diversity,
            "diversity_bits_after": after.diversity,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn stats_cmd(input: &Path, histogram: Option<&Path>) -> anyhow::Result<ExitCode> {
    let topos: Vec<_> = read_tensors(input)?.iter().map(|(_, t)| unfold(t)).collect();
    let stats = topology_stats(&topos).map_err(|e| Invalid(format!("{}: {e}", input.display())))?;
    if let Some(p) = histogram {
        write(p, stats.histogram_csv())?;
    }
    println!("{}", stats.stats_json());
    Ok(ExitCode::SUCCESS)
}

fn render(layouts: &[PathBuf], out_dir: &Path) -> anyhow::Result<ExitCode> {
    ensure_dir(out_dir)?;
    for path in layouts {
        let svg = render_svg(&read_layout(path)?);
        write(&out_dir.join(format!("{}.svg", stem(path))), svg)?;
    }
    Ok(ExitCode::SUCCESS)
}
