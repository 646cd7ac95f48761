//! The five subcommands as library functions.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use cogfuse_model::{install_provider, loss_csv, pretrain_aux, FusionNetwork, Trainer};
use cogfuse_sim::episode::{run_episode, seeded_route, Driver, EpisodeLog};
use cogfuse_sim::metrics::{tsv_row, BenchmarkResult, RouteResult, TSV_HEADER};
use cogfuse_sim::pid::{control_step, PidState};
use cogfuse_tensor::{read_checkpoint, write_checkpoint, ParamStore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DriverKind, RunConfig};
use crate::dataset::{load_samples, manifest_path, read_manifest, read_records, EpisodeEntry, FrameRecord, Manifest};
use crate::error::{CliError, Result};
use crate::policy::{plan, NetworkPolicy, Timing};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(CliError::io(Path::new("<stdout>")))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Runs the expert on `episodes` seeded routes and writes the container.
pub fn gen_data(config: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<Manifest> {
    let cfg = RunConfig::load(config)?;
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let workers = pool(cfg.sim.workers)?;
    let seeds: Vec<u64> = (0..cfg.sim.episodes as u64).map(|i| cfg.sim.seed + i).collect();
    let mut entries = Vec::with_capacity(seeds.len());
    let chunk = 2 * workers.current_num_threads();
    for group in seeds.chunks(chunk) {
        let runs: Vec<Result<(String, Vec<u8>)>> = workers.install(|| {
            group
                .par_iter()
                .map(|&seed| {
                    let context = format!("expert episode on route seed {seed}");
                    let (town, route) = seeded_route(seed, cfg.sim.town_size).map_err(CliError::sim(&context))?;
                    let (log, frames) =
                        run_episode(&town, &route, Driver::Expert, &cfg.data_episode(seed)).map_err(CliError::sim(&context))?;
                    let mut bytes = Vec::with_capacity(frames.len() * crate::dataset::RECORD_LEN);
                    for f in &frames {
                        FrameRecord::from_frame(f).encode(&mut bytes);
                    }
                    Ok((log.to_text(), bytes))
                })
                .collect()
        });
        for (run, &seed) in runs.into_iter().zip(group) {
            let (log, bytes) = run?;
            let entry = EpisodeEntry {
                name: format!("episode_{:04}", entries.len()),
                route_seed: seed,
                frames: bytes.len() / crate::dataset::RECORD_LEN,
            };
            write_file(&out_dir.join(entry.records()), &bytes)?;
            write_file(&out_dir.join(entry.log()), log.as_bytes())?;
            entries.push(entry);
        }
    }
    let manifest = Manifest {
        seed: cfg.sim.seed,
        config_hash: cfg.hash(),
        episodes: entries,
    };
    write_file(&manifest_path(out_dir), manifest.to_text().as_bytes())?;
    say(
        out,
        &format!(
            "wrote {} frames from {} episodes to {}\n",
            manifest.frames(),
            manifest.episodes.len(),
            out_dir.display()
        ),
    )?;
    Ok(manifest)
}

/// Sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub steps: u64,
    pub frames: usize,
    pub config: RunConfig,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    with_extension(checkpoint, "meta")
}

fn save_checkpoint(path: &Path, store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, store).map_err(|e| CliError::data(path, e.to_string()))?;
    write_file(path, &bytes)?;
    let text = toml::to_string(meta).expect("checkpoint metadata always serializes");
    write_file(&meta_path(path), text.as_bytes())
}

/// A trained network loaded from a checkpoint and its sidecar.
pub struct LoadedModel {
    pub net: FusionNetwork,
    pub store: ParamStore<f32>,
    pub meta: CheckpointMeta,
}

pub fn load_model(checkpoint: &Path) -> Result<LoadedModel> {
    let mpath = meta_path(checkpoint);
    let text = std::fs::read_to_string(&mpath).map_err(CliError::io(&mpath))?;
    let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| CliError::config(&mpath, e.to_string()))?;
    let fusion = meta.config.fusion_config(&mpath)?;
    let (net, mut store) =
        FusionNetwork::build::<f32>(&fusion, meta.config.fusion.seed).map_err(CliError::model("building the network"))?;
    let file = std::fs::File::open(checkpoint).map_err(CliError::io(checkpoint))?;
    let saved = read_checkpoint(std::io::BufReader::new(file)).map_err(|e| CliError::data(checkpoint, e.to_string()))?;
    store
        .load_from(&saved)
        .map_err(|e| CliError::data(checkpoint, format!("does not match the [fusion] section of its metadata: {e}")))?;
    Ok(LoadedModel { net, store, meta })
}

/// Trains on a dataset container; writes the checkpoint, its metadata and a
/// loss CSV next to it.
pub fn train(config: &Path, data: &Path, ckpt: &Path, out: &mut dyn Write) -> Result<Trainer> {
    let cfg = RunConfig::load(config)?;
    let fusion = cfg.fusion_config(config)?;
    let train = cfg.train_config(config)?;
    let manifest = read_manifest(data)?;
    if manifest.frames() == 0 {
        return Err(CliError::data(&manifest_path(data), "dataset holds no frames"));
    }
    let samples = load_samples(data, &manifest, &fusion)?;
    for s in &samples {
        s.check_schema(&fusion).map_err(|e| CliError::data(data, e.to_string()))?;
    }
    let (net, mut store) = FusionNetwork::build::<f32>(&fusion, cfg.fusion.seed).map_err(CliError::model("building the network"))?;
    if let Some(provider) = &net.provider {
        let kind = provider.kind;
        let pre = pretrain_aux(&samples, kind, &fusion, &cfg.provider_train_config(config)?)
            .map_err(CliError::model("pre-training the auxiliary provider"))?;
        let acc = pre.accuracy(&samples, &fusion).map_err(CliError::model("scoring the auxiliary provider"))?;
        install_provider(&mut store, &pre.store).map_err(CliError::model("installing the auxiliary provider"))?;
        say(out, &format!("pre-trained {} provider: training accuracy {:.3}\n", kind.name(), acc))?;
    }
    let meta = |steps| CheckpointMeta {
        config_hash: cfg.hash(),
        steps,
        frames: samples.len(),
        config: cfg.clone(),
    };
    let mut trainer = Trainer::new(net, store, train).map_err(CliError::model("configuring the trainer"))?;
    let mut save_error = None;
    let fitted = trainer.fit(&samples, |t| {
        let path = with_extension(ckpt, &format!("step{}", t.steps()));
        save_checkpoint(&path, &t.store, &meta(t.steps())).map_err(|e| {
            let msg = e.to_string();
            save_error = Some(e);
            cogfuse_model::ModelError::Data(msg)
        })
    });
    if let Some(e) = save_error {
        return Err(e);
    }
    fitted.map_err(CliError::model("training"))?;
    save_checkpoint(ckpt, &trainer.store, &meta(trainer.steps()))?;
    write_file(&with_extension(ckpt, "loss.csv"), loss_csv(&trainer.history).as_bytes())?;
    let last = trainer.history.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
    say(
        out,
        &format!(
            "trained {} steps on {} frames; final batch loss {last:.4}; checkpoint {}\n",
            trainer.steps(),
            samples.len(),
            ckpt.display()
        ),
    )?;
    Ok(trainer)
}

/// Closed-loop evaluation summary.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub method: String,
    pub config_hash: String,
    pub result: BenchmarkResult,
    pub logs: Vec<EpisodeLog>,
    pub timing: Timing,
}

impl EvalReport {
    pub fn tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# config_hash {}", self.config_hash).unwrap();
        writeln!(s, "{TSV_HEADER}\tmean_infer_ms").unwrap();
        let ms = self.timing.mean_ms().map_or("-".to_string(), |m| format!("{m:.3}"));
        writeln!(s, "{}\t{ms}", tsv_row(&self.method, &self.result)).unwrap();
        s
    }
}

pub fn logs_dir(tsv: &Path) -> PathBuf {
    with_extension(tsv, "logs")
}

/// Drives `routes` seeded routes starting at `seed`; writes the TSV and one
/// episode log per route into `<out>.logs/`.
pub fn eval(
    config: &Path,
    checkpoint: Option<&Path>,
    routes: Option<usize>,
    seed: Option<u64>,
    tsv: &Path,
    out: &mut dyn Write,
) -> Result<EvalReport> {
    let cfg = RunConfig::load(config)?;
    let driver = cfg.driver(config)?;
    let routes = routes.unwrap_or(cfg.eval.routes);
    let seed = seed.unwrap_or(cfg.eval.seed);
    if routes == 0 {
        return Err(CliError::Usage("--routes must be at least 1".into()));
    }
    let model = match (driver, checkpoint) {
        (DriverKind::Model, None) => return Err(CliError::Usage("eval with the model driver needs --checkpoint".into())),
        (DriverKind::Model, Some(c)) => {
            let m = load_model(c)?;
            let want = cfg.fusion_config(config)?;
            if m.net.config != want {
                return Err(CliError::config(
                    config,
                    format!("[fusion] differs from the configuration {} was trained with", c.display()),
                ));
            }
            Some(m)
        }
        _ => None,
    };
    let pid = cfg.pid_config();
    let workers = pool(cfg.sim.workers)?;
    let seeds: Vec<u64> = (0..routes as u64).map(|i| seed + i).collect();
    let runs: Vec<Result<(EpisodeLog, Timing)>> = workers.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let context = format!("evaluation route seed {s}");
                let (town, route) = seeded_route(s, cfg.sim.town_size).map_err(CliError::sim(&context))?;
                let ec = cfg.eval_episode(s);
                match &model {
                    Some(m) => {
                        let mut policy = NetworkPolicy::new(&m.net, &m.store, &pid);
                        let (log, _) =
                            run_episode(&town, &route, Driver::Policy(&mut policy), &ec).map_err(CliError::sim(&context))?;
                        Ok((log, policy.timing))
                    }
                    None => {
                        let d = if driver == DriverKind::Expert { Driver::Expert } else { Driver::RedRunner };
                        let (log, _) = run_episode(&town, &route, d, &ec).map_err(CliError::sim(&context))?;
                        Ok((log, Timing::default()))
                    }
                }
            })
            .collect()
    });
    let mut logs = Vec::with_capacity(routes);
    let mut timing = Timing::default();
    for r in runs {
        let (log, t) = r?;
        timing.add(t);
        logs.push(log);
    }
    let results = logs
        .iter()
        .map(RouteResult::from_log)
        .collect::<cogfuse_sim::Result<Vec<_>>>()
        .map_err(CliError::sim("scoring evaluation routes"))?;
    let result = BenchmarkResult::from_routes(&results).map_err(CliError::sim("scoring evaluation routes"))?;
    let report = EvalReport {
        method: cfg.method(),
        config_hash: cfg.hash(),
        result,
        logs,
        timing,
    };
    let dir = logs_dir(tsv);
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    for (i, log) in report.logs.iter().enumerate() {
        write_file(&dir.join(format!("route_{i:04}.log")), log.to_text().as_bytes())?;
    }
    let text = report.tsv();
    write_file(tsv, text.as_bytes())?;
    say(out, &text)?;
    Ok(report)
}

/// Runs the network and a fresh controller on every record of `frame`.
pub fn infer(checkpoint: &Path, frame: &Path, out: &mut dyn Write) -> Result<Vec<crate::policy::Plan>> {
    let m = load_model(checkpoint)?;
    let records = read_records(frame)?;
    if records.is_empty() {
        return Err(CliError::data(frame, "file holds no records"));
    }
    let pid = m.meta.config.pid_config();
    let mut plans = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let bad = |e: cogfuse_model::ModelError| CliError::data(frame, format!("record {i}: {e}"));
        let features = rec.features(&m.net.config).map_err(bad)?;
        let p = plan(&m.net, &m.store, &features).map_err(bad)?;
        let cmd = control_step(&p.waypoints, rec.velocity as f64, &mut PidState::new(&pid))
            .map_err(CliError::sim(format!("controlling record {i}")))?;
        let mut line = format!("frame {i}\twaypoints");
        for w in &p.waypoints {
            write!(line, " {:.3},{:.3}", w.x, w.y).unwrap();
        }
        write!(line, "\tsteer {:.3}\tthrottle {:.3}\tbrake {}", cmd.steer, cmd.throttle, cmd.brake).unwrap();
        if let Some(stop) = p.stop_probability {
            write!(line, "\tp_stop {stop:.3}").unwrap();
        }
        line.push('\n');
        say(out, &line)?;
        plans.push(p);
    }
    Ok(plans)
}

/// Recomputes the benchmark row from every `*.log` file in `dir`, in name
/// order.
pub fn score(dir: &Path, out: &mut dyn Write) -> Result<BenchmarkResult> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(dir, "no .log files found"));
    }
    let mut results = Vec::with_capacity(files.len());
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(CliError::io(f))?;
        let log = EpisodeLog::from_text(&text).map_err(|e| CliError::data(f, e.to_string()))?;
        results.push(RouteResult::from_log(&log).map_err(|e| CliError::data(f, e.to_string()))?);
    }
    let r = BenchmarkResult::from_routes(&results).map_err(|e| CliError::data(dir, e.to_string()))?;
    say(out, &format!("{TSV_HEADER}\n{}\n", tsv_row("score", &r)))?;
    Ok(r)
}
