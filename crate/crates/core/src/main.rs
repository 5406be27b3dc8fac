//! Command-line entry point: dataset generation, mixture fitting, rate
//! sweeps, gradient self-checks, and run reporting. Every command writes a
//! manifest (also on failure) and is byte-reproducible for a fixed
//! config + seed.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use hqnsim::autoencoder::{
    ae_to_json, gradcheck_architecture, gradcheck_architecture_mutated, GRADCHECK_ARCHITECTURES,
};
use hqnsim::capacity::{sweep_cell, CapacityCurve, CurveCell, Method};
use hqnsim::config::{load_config, RunConfig, RunManifest};
use hqnsim::dagmm::fit_dagmm;
use hqnsim::datagen::gen_cluster3d;
use hqnsim::gmm::{default_floor, e_step, fit_em, gmm_to_json};
use hqnsim::noise::hqn_gmm_1d;
use hqnsim::rng::derive_seed;
use hqnsim::{io, svg, Error, Result};

const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "hqnsim", version, about = "Hybrid-noise channel simulation and model fitting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Suppress timestamps in the manifest and SVG outputs.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the 3-D clustering benchmark dataset.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a mixture model to a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Fitting method.
        #[arg(long, value_parser = ["gmm", "dagmm"])]
        method: String,
        /// Input dataset CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the achievable-rate sweep over the SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize the manifests found under the output directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

struct Run {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    jobs: usize,
    manifest: RunManifest,
    /// Manifest location relative to `out`; fit runs use their method
    /// subdirectory so two methods on the same data keep separate records.
    manifest_rel: String,
    svg_timestamp: Option<String>,
    started: Instant,
}

impl Run {
    fn prepare(common: &Common, command: &str) -> std::result::Result<Run, u8> {
        let cfg = match &common.config {
            Some(path) => load_config(path),
            None => Ok(RunConfig::default()),
        };
        let cfg = match cfg {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                // Still leave a manifest behind if the output dir is known.
                let out = common
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("out"));
                if std::fs::create_dir_all(&out).is_ok() {
                    let mut m = RunManifest::new(command, common.seed.unwrap_or(0), &RunConfig::default());
                    m.status = "error".into();
                    m.error = Some(e.to_string());
                    let _ = m.write(&out.join("manifest.json"));
                }
                return Err(exit_for(&e));
            }
        };
        let (seed, seed_src) = match (common.seed, cfg.seed) {
            (Some(s), _) => (s, "flag"),
            (None, Some(s)) => (s, "file"),
            (None, None) => (0, "default"),
        };
        let (out, out_src) = match (&common.out, &cfg.out) {
            (Some(p), _) => (p.clone(), "flag"),
            (None, Some(p)) => (PathBuf::from(p), "file"),
            (None, None) => (PathBuf::from("out"), "default"),
        };
        if let Err(e) = std::fs::create_dir_all(&out) {
            eprintln!("error: cannot create output directory {}: {e}", out.display());
            return Err(2);
        }
        let mut manifest = RunManifest::new(command, seed, &cfg);
        manifest.precedence.insert("seed".into(), seed_src.into());
        manifest.precedence.insert("out".into(), out_src.into());
        if !common.no_timestamp {
            manifest.timestamp = Some(timestamp());
        }
        Ok(Run {
            cfg,
            seed,
            out,
            jobs: common.jobs.max(1),
            manifest,
            manifest_rel: "manifest.json".into(),
            svg_timestamp: if common.no_timestamp { None } else { Some(timestamp()) },
            started: Instant::now(),
        })
    }

    fn record_output(&mut self, rel: &str) -> Result<()> {
        let digest = io::file_digest(&self.out.join(rel))?;
        self.manifest.outputs.insert(rel.into(), digest);
        Ok(())
    }

    fn write_output(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        self.record_output(rel)
    }

    fn finish(mut self, outcome: Result<u8>) -> u8 {
        self.manifest
            .timings_s
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let code = match &outcome {
            Ok(code) => {
                self.manifest.status = if *code == 0 { "ok".into() } else { "failed".into() };
                *code
            }
            Err(e) => {
                eprintln!("error: {e}");
                self.manifest.status = "error".into();
                self.manifest.error = Some(e.to_string());
                exit_for(e)
            }
        };
        if let Err(e) = self.manifest.write(&self.out.join(&self.manifest_rel)) {
            eprintln!("error: cannot write manifest: {e}");
            return 2;
        }
        code
    }
}

fn cmd_gen(run: &mut Run) -> Result<u8> {
    let resolved = run.cfg.resolve_scenario()?;
    run.manifest.derived = resolved.derivation.clone();
    let g = run.cfg.gen.clone();
    let ds = gen_cluster3d(g.k, g.n, g.warp, &resolved.hqn, derive_seed(run.seed, 0x67656e))?;
    run.write_output("dataset.csv", &io::dataset_to_csv(&ds))?;
    if let Some(labels) = &ds.labels {
        let chart = svg::scatter3_chart(
            "generated clusters",
            &ds.data,
            labels,
            run.svg_timestamp.as_deref(),
        );
        run.write_output("dataset.svg", &chart)?;
    }
    println!(
        "wrote {} samples ({} clusters) to {}",
        g.n,
        g.k,
        run.out.join("dataset.csv").display()
    );
    Ok(0)
}

fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&format!("{l}\n"));
    }
    out
}

fn cmd_fit(run: &mut Run, method: &str, data_path: &Path) -> Result<u8> {
    let ds = io::load_dataset(data_path)?;
    let subdir = method.to_string();
    std::fs::create_dir_all(run.out.join(&subdir))?;
    run.manifest_rel = format!("{subdir}/manifest.json");
    let fit_seed = derive_seed(run.seed, 0x666974);
    let t0 = Instant::now();
    match method {
        "gmm" => {
            let (model, trace) = fit_em(
                &ds.data,
                run.cfg.fit.r,
                &run.cfg.fit.em.options(fit_seed),
            )?;
            run.manifest
                .timings_s
                .insert("fit".into(), t0.elapsed().as_secs_f64());
            let floor = default_floor(&ds.data);
            run.write_output(
                &format!("{subdir}/model.json"),
                &serde_json::to_string_pretty(&gmm_to_json(&model, floor, &trace))?,
            )?;
            run.write_output(
                &format!("{subdir}/trace.csv"),
                &io::trace_to_csv("iter,loglik", &trace.loglik),
            )?;
            let resp = e_step(&model, &ds.data)?;
            let labels: Vec<usize> = (0..resp.gamma.nrows())
                .map(|i| {
                    (0..resp.gamma.ncols())
                        .max_by(|&a, &b| {
                            resp.gamma[(i, a)]
                                .partial_cmp(&resp.gamma[(i, b)])
                                .unwrap_or(std::cmp::Ordering::Equal)
                        })
                        .unwrap_or(0)
                })
                .collect();
            run.write_output(&format!("{subdir}/labels.csv"), &labels_csv(&labels))?;
            if ds.data.ncols() == 3 {
                let chart = svg::scatter3_chart(
                    "gmm cluster assignment",
                    &ds.data,
                    &labels,
                    run.svg_timestamp.as_deref(),
                );
                run.write_output(&format!("{subdir}/scatter.svg"), &chart)?;
            }
            println!(
                "gmm fit converged={} iters={} loglik={}",
                trace.converged,
                trace.iterations,
                trace.loglik.last().copied().unwrap_or(f64::NAN)
            );
            Ok(0)
        }
        "dagmm" => {
            let arch = run.cfg.fit.dagmm.arch();
            let hyper = run.cfg.fit.dagmm.hyper(run.cfg.fit.r, fit_seed);
            let (state, report) = fit_dagmm(&ds.data, &arch, &hyper)?;
            run.manifest
                .timings_s
                .insert("fit".into(), t0.elapsed().as_secs_f64());
            let mut trace = String::from("iter,aug_lagrangian,recon,nll,violation\n");
            for r in &report.rows {
                trace.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.iter, r.aug_lagrangian, r.recon, r.nll, r.violation
                ));
            }
            run.write_output(&format!("{subdir}/trace.csv"), &trace)?;
            run.write_output(&format!("{subdir}/labels.csv"), &labels_csv(&report.labels))?;
            let model = serde_json::json!({
                "autoencoder": ae_to_json(&state.ae),
                "latent_gmm": gmm_json_min(&state.latent_gmm),
                "hyper": {
                    "lambda_tilde": state.hyper.lambda_tilde,
                    "rho_tilde": state.hyper.rho_tilde,
                    "r_count": state.hyper.r_count,
                },
            });
            run.write_output(
                &format!("{subdir}/model.json"),
                &serde_json::to_string_pretty(&model)?,
            )?;
            if ds.data.ncols() == 3 {
                if report.epoch1_labels.len() == ds.data.nrows() {
                    let chart = svg::scatter3_chart(
                        "dagmm cluster assignment (first epoch)",
                        &ds.data,
                        &report.epoch1_labels,
                        run.svg_timestamp.as_deref(),
                    );
                    run.write_output(&format!("{subdir}/scatter_epoch1.svg"), &chart)?;
                }
                if report.labels.len() == ds.data.nrows() {
                    let chart = svg::scatter3_chart(
                        "dagmm cluster assignment (final)",
                        &ds.data,
                        &report.labels,
                        run.svg_timestamp.as_deref(),
                    );
                    run.write_output(&format!("{subdir}/scatter_final.svg"), &chart)?;
                }
            }
            if let Some(reason) = report.aborted {
                // Partial trace is on disk; surface the failure.
                return Err(Error::Numerical(format!("dagmm fit aborted: {reason}")));
            }
            println!(
                "dagmm fit converged={} outer_iters={}",
                report.converged,
                report.rows.len() - 1
            );
            Ok(0)
        }
        other => Err(Error::Config(format!("unknown fit method '{other}'"))),
    }
}

fn gmm_json_min(model: &hqnsim::gmm::GmmModel) -> serde_json::Value {
    serde_json::json!({
        "dim": model.dim,
        "weights": model.components.iter().map(|c| c.weight).collect::<Vec<_>>(),
        "means": model
            .components
            .iter()
            .map(|c| c.mean.iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "covariances": model
            .components
            .iter()
            .map(|c| c.covariance.row_iter()
                .map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    })
}

fn cmd_sweep(run: &mut Run) -> Result<u8> {
    let resolved = run.cfg.resolve_scenario()?;
    run.manifest.derived = resolved.derivation.clone();
    let methods = run.cfg.sweep_methods()?;
    let grid = run.cfg.sweep.grid_db.clone();
    if grid.is_empty() {
        return Err(Error::Config("sweep.grid_db is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep.grid_db must be strictly increasing".into()));
    }
    let scenario = run.cfg.sweep_scenario(run.seed)?;
    // Fail fast on an invalid scenario before spawning workers.
    hqn_gmm_1d(&scenario.hqn)?;
    let n = run.cfg.sweep.mc_samples;
    let seed = run.seed;

    let tasks: Vec<(usize, usize, Method, f64)> = methods
        .iter()
        .enumerate()
        .flat_map(|(mi, &m)| grid.iter().enumerate().map(move |(k, &s)| (mi, k, m, s)))
        .collect();
    let results: Mutex<Vec<Option<CurveCell>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let t0 = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..run.jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                if t >= tasks.len() {
                    break;
                }
                let (_, k, method, snr_db) = tasks[t];
                let cell = sweep_cell(&scenario, snr_db, k, method, n, seed).unwrap_or_else(|e| {
                    CurveCell {
                        rate_bits: None,
                        stderr: None,
                        error: Some(e.to_string()),
                    }
                });
                results.lock().unwrap()[t] = Some(cell);
            });
        }
    });
    run.manifest
        .timings_s
        .insert("sweep".into(), t0.elapsed().as_secs_f64());

    let flat = results.into_inner().unwrap();
    let mut cells: Vec<Vec<CurveCell>> = vec![Vec::new(); methods.len()];
    for (t, cell) in flat.into_iter().enumerate() {
        let (mi, k, method, snr_db) = tasks[t];
        let cell = cell.expect("worker pool left a cell unevaluated");
        if let Some(err) = &cell.error {
            run.manifest.notes.push(format!(
                "{} at {} dB (grid index {k}): {err}",
                method.tag(),
                snr_db
            ));
        }
        debug_assert_eq!(cells[mi].len(), k);
        cells[mi].push(cell);
    }
    let curve = CapacityCurve {
        snr_db: grid.clone(),
        methods: methods.clone(),
        cells,
        mc_samples: n,
        seed,
    };
    run.write_output("curve.csv", &io::curve_to_csv(&curve))?;
    let series: Vec<svg::Series> = methods
        .iter()
        .enumerate()
        .map(|(mi, m)| svg::Series {
            name: m.tag(),
            points: grid
                .iter()
                .zip(&curve.cells[mi])
                .map(|(&s, c)| (s, c.rate_bits.unwrap_or(f64::NAN)))
                .collect(),
        })
        .collect();
    let chart = svg::line_chart(
        "achievable rate vs SNR",
        "SNR (dB)",
        "rate (bits/use)",
        &series,
        run.svg_timestamp.as_deref(),
    );
    run.write_output("curve.svg", &chart)?;

    for (mi, m) in methods.iter().enumerate() {
        if curve.cells[mi].iter().all(|c| c.rate_bits.is_none()) {
            return Err(Error::Numerical(format!(
                "every grid point failed for method {}",
                m.tag()
            )));
        }
    }
    println!(
        "sweep complete: {} methods x {} grid points -> {}",
        methods.len(),
        grid.len(),
        run.out.join("curve.csv").display()
    );
    Ok(0)
}

fn cmd_gradcheck(run: &mut Run) -> Result<u8> {
    // The flip switch exists so tests can prove the check catches a broken
    // gradient; it deliberately corrupts the analytic gradients.
    let flip = std::env::var_os("HQNSIM_GRADCHECK_FLIP").is_some();
    let mut worst: f64 = 0.0;
    for arch in GRADCHECK_ARCHITECTURES {
        let err = if flip {
            gradcheck_architecture_mutated(arch, derive_seed(run.seed, 0x6763))?
        } else {
            gradcheck_architecture(arch, derive_seed(run.seed, 0x6763))?
        };
        println!("architecture {arch:?}: max relative error {err:.3e}");
        run.manifest
            .notes
            .push(format!("gradcheck {arch:?}: {err:.6e}"));
        worst = worst.max(err);
    }
    if worst < GRADCHECK_TOL {
        println!("gradient check passed (worst {worst:.3e} < {GRADCHECK_TOL:.0e})");
        Ok(0)
    } else {
        eprintln!("gradient check FAILED (worst {worst:.3e} >= {GRADCHECK_TOL:.0e})");
        Ok(4)
    }
}

fn cmd_report(run: &mut Run) -> Result<u8> {
    let mut found = 0;
    let mut visit = |path: &Path| {
        if let Ok(value) = io::read_json(path) {
            let get = |k: &str| value.get(k).and_then(|v| v.as_str()).unwrap_or("?").to_string();
            let outputs = value
                .get("outputs")
                .and_then(|v| v.as_object())
                .map(|o| o.len())
                .unwrap_or(0);
            println!(
                "{}: command={} status={} seed={} outputs={}",
                path.display(),
                get("command"),
                get("status"),
                value.get("seed").and_then(|v| v.as_u64()).unwrap_or(0),
                outputs
            );
            found += 1;
        }
    };
    let top = run.out.join("manifest.json");
    if top.exists() {
        visit(&top);
    }
    if let Ok(entries) = std::fs::read_dir(&run.out) {
        let mut dirs: Vec<PathBuf> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let nested = dir.join("manifest.json");
            if nested.exists() {
                visit(&nested);
            }
        }
    }
    if found == 0 {
        return Err(Error::Config(format!(
            "no manifests found under {}",
            run.out.display()
        )));
    }
    run.manifest
        .notes
        .push(format!("summarized {found} manifest(s)"));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, command): (&Common, &str) = match &cli.cmd {
        Cmd::Gen { common } => (common, "gen"),
        Cmd::Fit { common, .. } => (common, "fit"),
        Cmd::Sweep { common } => (common, "sweep"),
        Cmd::Gradcheck { common } => (common, "gradcheck"),
        Cmd::Report { common } => (common, "report"),
    };
    let mut run = match Run::prepare(common, command) {
        Ok(r) => r,
        Err(code) => return ExitCode::from(code),
    };
    let outcome = match &cli.cmd {
        Cmd::Gen { .. } => cmd_gen(&mut run),
        Cmd::Fit { method, data, .. } => {
            // Fit outputs live in a per-method subdirectory but share the
            // parent manifest directory.
            let r = cmd_fit(&mut run, method, data);
            if let Ok(0) = r {
                run.manifest
                    .notes
                    .push(format!("fit outputs under {}/", method));
            }
            r
        }
        Cmd::Sweep { .. } => cmd_sweep(&mut run),
        Cmd::Gradcheck { .. } => cmd_gradcheck(&mut run),
        Cmd::Report { .. } => cmd_report(&mut run),
    };
    ExitCode::from(run.finish(outcome))
}
