use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use truthprobe::data::read_dataset;
use truthprobe::detect::detector_scores;
use truthprobe::eval::{abs_auc, auc, bootstrap_auc, generalization_matrix};
use truthprobe::probe::{labeled_cell_data, stratified_split, sweep, train_probe};
use truthprobe::select::{accuracy_by_type, reports_csv, SelectionStrategy};
use truthprobe::synth::{generate_pair, generate_planted, write_synth, SynthConfig};
use truthprobe::taxonomy::{coverage, taxonomy_csv, taxonomy_table, type_probe, ErrorType};
use truthprobe::{load_dataset, validate_dataset, Cell, LinearProbe, ProbingDataset, TrainConfig};

use crate::provenance::Tracker;

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not fatal.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}
use crate::{parse_detectors, Cli, Command, EvalRecords, StrategyArg, UsageError};

fn write(path: &Path, text: &str, tracker: &mut Tracker) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    tracker.output(path);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, tracker: &mut Tracker) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"), tracker)
}

/// `grid.csv` + `dispersion` -> `grid.dispersion.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn out_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load(dir: &Path, tracker: &mut Tracker) -> Result<ProbingDataset> {
    let ds = load_dataset(dir).with_context(|| format!("loading {}", dir.display()))?;
    tracker.input_dump(dir);
    Ok(ds)
}

fn load_probe(path: &Path, tracker: &mut Tracker) -> Result<LinearProbe> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    tracker.input_file(path);
    LinearProbe::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn best_cell(ds: &ProbingDataset, config: &TrainConfig) -> Result<Cell> {
    Ok(sweep(ds, config)?.select_best_cell()?)
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut tracker = Tracker::default();
    match cli.command {
        Command::Validate { dir, out } => {
            let ds = read_dataset(&dir).with_context(|| format!("reading {}", dir.display()))?;
            tracker.input_dump(&dir);
            let report = validate_dataset(&ds);
            for v in &report.violations {
                say!("{}: {}", v.record_id, v.invariant);
            }
            say!("{} records, {} violations", ds.len(), report.violations.len());
            if let Some(out) = out {
                let violations: Vec<_> = report
                    .violations
                    .iter()
                    .map(|v| json!({"record_id": v.record_id, "violation": v.invariant.to_string()}))
                    .collect();
                let value = json!({"records": ds.len(), "violations": violations});
                write_json(&out, &value, &mut tracker)?;
                tracker.finish(&out_dir(&out), "validate", seed)?;
            }
            if !report.is_empty() {
                anyhow::bail!("{} violates {} invariant(s)", dir.display(), report.violations.len());
            }
        }
        Command::Sweep { dir, out, svg, train } => {
            let ds = load(&dir, &mut tracker)?;
            let grid = sweep(&ds, &train.config(seed))?;
            write(&out, &grid.to_csv(), &mut tracker)?;
            write(&sibling(&out, "dispersion"), &grid.dispersion_csv(), &mut tracker)?;
            if let Some(svg) = svg {
                write(&svg, &grid.to_svg(&format!("{} validation AUC", ds.name)), &mut tracker)?;
            }
            let best = grid.select_best_cell()?;
            say!("best cell {best} auc {}", grid.auc_at(&best).unwrap_or(f64::NAN));
            tracker.finish(&out_dir(&out), "sweep", seed)?;
        }
        Command::Detect { dir, methods, out } => {
            let detectors = parse_detectors(&methods)?;
            let ds = load(&dir, &mut tracker)?;
            let mut csv = String::from("method,id,label,score\n");
            say!("method,n,skipped,auc,abs_auc");
            for det in detectors {
                let s = detector_scores(&ds, det);
                for ((id, label), score) in s.record_ids.iter().zip(&s.labels).zip(&s.scores) {
                    csv.push_str(&format!("{det},{},{},{score}\n", csv_field(id), u8::from(*label)));
                }
                match auc(&s.scores, &s.labels) {
                    Ok(a) => say!("{det},{},{},{a},{}", s.scores.len(), s.skipped, abs_auc(a)),
                    Err(_) => say!("{det},{},{},,", s.scores.len(), s.skipped),
                }
            }
            write(&out, &csv, &mut tracker)?;
            tracker.finish(&out_dir(&out), "detect", seed)?;
        }
        Command::Train { dir, cell, out, train } => {
            let ds = load(&dir, &mut tracker)?;
            let config = train.config(seed);
            let cell = match cell {
                Some(c) => c,
                None => best_cell(&ds, &config)?,
            };
            let (_, x, y) = labeled_cell_data(&ds, &cell)?;
            let trained = train_probe(x.view(), &y, cell.clone(), &config)?;
            write(&out, &trained.probe.to_json(), &mut tracker)?;
            say!(
                "cell {cell} validation auc {} converged {}",
                trained.validation_auc()?,
                trained.probe.train_meta.converged
            );
            tracker.finish(&out_dir(&out), "train", seed)?;
        }
        Command::Eval {
            dir,
            probe,
            bootstrap,
            records,
            train_fraction,
            out,
        } => {
            let ds = load(&dir, &mut tracker)?;
            let probe = load_probe(&probe, &mut tracker)?;
            let cell = probe.cell();
            let (_, x, y) = labeled_cell_data(&ds, &cell)?;
            let rows: Vec<usize> = match records {
                EvalRecords::All => (0..y.len()).collect(),
                EvalRecords::Validation => {
                    if !(train_fraction > 0.0 && train_fraction < 1.0) {
                        return Err(UsageError("--train-fraction must lie in (0, 1)".into()).into());
                    }
                    stratified_split(&y, train_fraction, probe.train_meta.seed).validation
                }
            };
            let xs = x.select(ndarray::Axis(0), &rows);
            let labels: Vec<bool> = rows.iter().map(|&i| y[i]).collect();
            let scores = probe.decision_function(xs.view())?;
            let a = auc(&scores, &labels)?;
            let spread = bootstrap_auc(&scores, &labels, bootstrap.max(1), seed)?;
            let value = json!({
                "cell": cell.to_string(),
                "records": match records { EvalRecords::All => "all", EvalRecords::Validation => "validation" },
                "n": labels.len(),
                "auc": a,
                "abs_auc": abs_auc(a),
                "bootstrap_seeds": bootstrap.max(1),
                "bootstrap_mean": spread.mean,
                "bootstrap_std": spread.std,
                "seed": seed,
            });
            let text = serde_json::to_string_pretty(&value)? + "\n";
            match out {
                Some(out) => {
                    write(&out, &text, &mut tracker)?;
                    tracker.finish(&out_dir(&out), "eval", seed)?;
                }
                None => say!("{}", text.trim_end()),
            }
        }
        Command::Generalize { dirs, out, svg, train } => {
            let datasets: Vec<ProbingDataset> =
                dirs.iter().map(|d| load(d, &mut tracker)).collect::<Result<_>>()?;
            let mut names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                return Err(UsageError("dump directory names must be distinct".into()).into());
            }
            let m = generalization_matrix(&datasets, &train.config(seed))?;
            write(&out, &m.to_csv(), &mut tracker)?;
            write(&sibling(&out, "adjusted"), &m.adjusted_csv(), &mut tracker)?;
            if let Some(svg) = svg {
                write(&svg, &m.to_svg(true), &mut tracker)?;
            }
            for ((name, cell), base) in m.dataset_names.iter().zip(&m.selected_cells).zip(&m.baseline_abs_auc) {
                say!("{name}: cell {cell}, logits-min-exact abs-auc {base}");
            }
            tracker.finish(&out_dir(&out), "generalize", seed)?;
        }
        Command::Taxonomy { dir, out } => {
            let ds = load(&dir, &mut tracker)?;
            let rows = taxonomy_table(&ds)?;
            write(&out, &taxonomy_csv(&rows), &mut tracker)?;
            for t in ErrorType::ALL {
                let n = rows.iter().filter(|r| r.label.contains(t)).count();
                say!("{t}: {n}");
            }
            if let Some(c) = coverage(&rows) {
                say!("coverage of greedy errors: {c}");
            }
            tracker.finish(&out_dir(&out), "taxonomy", seed)?;
        }
        Command::Typeprobe {
            dir,
            error_type,
            cell,
            bootstrap,
            out,
            train,
        } => {
            let ds = load(&dir, &mut tracker)?;
            let config = train.config(seed);
            let cell = match cell {
                Some(c) => c,
                None => best_cell(&ds, &config)?,
            };
            let report = type_probe(&ds, error_type, &cell, &config, bootstrap)?;
            write_json(&out, &report, &mut tracker)?;
            say!("{} at {}: auc {}", report.error_type, report.cell, report.auc);
            tracker.finish(&out_dir(&out), "typeprobe", seed)?;
        }
        Command::Select {
            dir,
            strategy,
            probe,
            min_count,
            out,
        } => {
            let ds = load(&dir, &mut tracker)?;
            let probe = probe.map(|p| load_probe(&p, &mut tracker)).transpose()?;
            let mut strategies = Vec::new();
            if matches!(strategy, StrategyArg::Greedy | StrategyArg::All) {
                strategies.push(SelectionStrategy::Greedy);
            }
            if matches!(strategy, StrategyArg::Random | StrategyArg::All) {
                strategies.push(SelectionStrategy::Random { seed });
            }
            if matches!(strategy, StrategyArg::Majority | StrategyArg::All) {
                strategies.push(SelectionStrategy::Majority);
            }
            match (strategy, probe) {
                (StrategyArg::Probe | StrategyArg::All, Some(p)) => strategies.push(SelectionStrategy::Probe(p)),
                (StrategyArg::Probe, None) => {
                    return Err(UsageError("--strategy probe needs --probe <probe.json>".into()).into())
                }
                _ => {}
            }
            let reports = strategies
                .iter()
                .map(|s| accuracy_by_type(&ds, s, min_count))
                .collect::<truthprobe::Result<Vec<_>>>()?;
            let csv = reports_csv(&reports);
            write(&out, &csv, &mut tracker)?;
            write_json(&sibling(&out, "summary").with_extension("json"), &reports, &mut tracker)?;
            say!("{}", csv.trim_end());
            tracker.finish(&out_dir(&out), "select", seed)?;
        }
        Command::Synth {
            config,
            out,
            pair_config,
            pair_out,
            orthogonal,
        } => {
            let read_config = |path: &Option<PathBuf>, tracker: &mut Tracker| -> Result<SynthConfig> {
                let mut c = match path {
                    Some(p) => {
                        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        tracker.input_file(p);
                        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                    }
                    None => SynthConfig::default(),
                };
                if let Some(s) = cli.seed {
                    c.seed = s;
                }
                Ok(c)
            };
            let a = read_config(&config, &mut tracker)?;
            match (pair_config, pair_out) {
                (Some(pc), Some(pout)) => {
                    let b = read_config(&Some(pc), &mut tracker)?;
                    let ((da, ta), (db, tb)) = generate_pair(&a, &b, !orthogonal)?;
                    write_synth(&da, &ta, &out)?;
                    write_synth(&db, &tb, &pout)?;
                    track_dump(&out, &mut tracker);
                    track_dump(&pout, &mut tracker);
                    tracker.finish(&out, "synth", a.seed)?;
                    tracker.finish(&pout, "synth", b.seed)?;
                }
                _ => {
                    let (ds, truth) = generate_planted(&a)?;
                    write_synth(&ds, &truth, &out)?;
                    track_dump(&out, &mut tracker);
                    tracker.finish(&out, "synth", a.seed)?;
                }
            }
        }
    }
    Ok(())
}

fn track_dump(dir: &Path, tracker: &mut Tracker) {
    for name in ["manifest.jsonl", "activations.bin", "resamples.jsonl", truthprobe::synth::GROUND_TRUTH_FILE] {
        let p = dir.join(name);
        if p.exists() {
            tracker.output(&p);
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
