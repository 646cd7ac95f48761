//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a blocking criterion fails. Criterion 7 is informational.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use cogfuse_cli::commands::{eval, gen_data, train, EvalReport};
use cogfuse_model::gradcheck::{self as model_check};
use cogfuse_model::{
    AuxSource, AuxStage, Batch, FusionConfig, FusionNetwork, NetInput, Sample, SsProvider, TrainConfig, Trainer,
    STRATEGIES,
};
use cogfuse_sim::bev::{rasterize_lidar, Point3, GRID};
use cogfuse_sim::episode::{run_episode, seeded_route, Driver, EpisodeConfig, EpisodeLog, Infraction, InfractionKind, Outcome};
use cogfuse_sim::geom::{Pose, Vec2};
use cogfuse_sim::metrics::{driving_score, RouteResult};
use cogfuse_sim::town::{LightState, Town};
use cogfuse_sim::vehicle::HALF_LENGTH;
use cogfuse_tensor::gradcheck::{self as op_check};
use cogfuse_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Verdict = Result<String, String>;

struct Suite {
    only: Vec<u32>,
    failures: Vec<u32>,
}

impl Suite {
    fn run(&mut self, id: u32, title: &str, limit: Option<Duration>, blocking: bool, f: impl FnOnce() -> Verdict) {
        // The timing report reads the closed-loop runs.
        let wanted = |k| self.only.is_empty() || self.only.contains(&k);
        if !wanted(id) && !(id == 7 && wanted(9)) {
            return;
        }
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let (mut pass, mut detail) = match result {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let timing = match limit {
            Some(l) => {
                if elapsed > l {
                    pass = false;
                    detail.push_str("; over the time limit");
                }
                format!("{:.1} s (limit {} s)", elapsed.as_secs_f64(), l.as_secs())
            }
            None => format!("{:.1} s", elapsed.as_secs_f64()),
        };
        let tag = match (pass, blocking) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (informational)",
        };
        // Written straight to stderr so the line survives output capture.
        let _ = writeln!(std::io::stderr(), "criterion {id} [{tag}] {title}: {detail}; {timing}");
        if !pass && blocking {
            self.failures.push(id);
        }
    }
}

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Verdict {
    let mut worst_op = (0.0f64, "");
    let mut bad = Vec::new();
    for c in op_check::op_checks() {
        for (seed, e) in c.sweep(20).into_iter().enumerate() {
            if e >= op_check::TOLERANCE {
                bad.push(format!("{} seed {seed} {e:.2e}", c.name));
            }
            if e > worst_op.0 {
                worst_op = (e, c.name);
            }
        }
    }
    let mut worst_net = 0.0f64;
    for seed in 0..20 {
        let e = model_check::network_error(seed, 40).map_err(|e| e.to_string())?;
        if e >= model_check::TOLERANCE {
            bad.push(format!("network seed {seed} {e:.2e}"));
        }
        worst_net = worst_net.max(e);
    }
    check(
        bad.is_empty(),
        format!(
            "{} op checks × 20 seeds, worst {:.2e} ({}) < 1e-4; end-to-end 20 seeds × 40 coords, worst {worst_net:.2e} < 1e-3{}",
            op_check::op_checks().len(),
            worst_op.0,
            worst_op.1,
            if bad.is_empty() { String::new() } else { format!("; failing: {bad:?}") }
        ),
    )
}

/// Per-point interval scan over every row and column.
fn brute_force(cloud: &[Point3], split: f64) -> (Vec<u16>, usize) {
    let mut counts = vec![0u16; 2 * GRID * GRID];
    let mut dropped = 0;
    for p in cloud {
        let row = (0..GRID).find(|&r| {
            let lo = (GRID - 1 - r) as f64 * 0.125;
            p.x >= lo && p.x < lo + 0.125
        });
        let col = (0..GRID).find(|&c| {
            let lo = -16.0 + c as f64 * 0.125;
            p.y >= lo && p.y < lo + 0.125
        });
        match (row, col) {
            (Some(r), Some(c)) => {
                let i = (usize::from(p.z >= split) * GRID + r) * GRID + c;
                counts[i] = counts[i].saturating_add(1);
            }
            _ => dropped += 1,
        }
    }
    (counts, dropped)
}

fn rasterizer_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut points = 0;
    for trial in 0..1000 {
        let n = rng.random_range(0..400);
        let split = rng.random_range(-0.5..2.0);
        let edges = [0.0, 32.0, -16.0, 16.0, 31.875, 0.125, -0.0, 15.875, split];
        let cloud: Vec<Point3> = (0..n)
            .map(|_| {
                let mut coord = |lo: f64, hi: f64| match rng.random_range(0..8) {
                    0 => edges[rng.random_range(0..edges.len())],
                    1 => rng.random_range(-300..300) as f64 * 0.125,
                    _ => rng.random_range(lo..hi),
                };
                Point3 {
                    x: coord(-4.0, 36.0),
                    y: coord(-20.0, 20.0),
                    z: coord(-0.5, 3.0),
                }
            })
            .collect();
        points += n;
        let (grid, dropped) = rasterize_lidar(&cloud, split);
        let (counts, oracle_dropped) = brute_force(&cloud, split);
        if grid.counts != counts || dropped != oracle_dropped {
            return Err(format!("trial {trial} differs from the oracle"));
        }
    }
    Ok(format!("1000 trials, {points} points, exact count equality"))
}

/// `(length, completed, off_route, [ped, vehicle, static, red], RC, DS)`,
/// with RC and DS worked out by hand.
const METRIC_FIXTURES: [(f64, f64, f64, [usize; 4], f64, f64); 25] = [
    (100.0, 100.0, 0.0, [0, 0, 0, 0], 100.0, 100.0),
    (100.0, 50.0, 0.0, [0, 0, 0, 0], 50.0, 50.0),
    (200.0, 200.0, 0.0, [1, 0, 0, 0], 100.0, 50.0),
    (200.0, 200.0, 0.0, [0, 1, 0, 0], 100.0, 60.0),
    (200.0, 200.0, 0.0, [0, 0, 1, 0], 100.0, 65.0),
    (200.0, 200.0, 0.0, [0, 0, 0, 1], 100.0, 70.0),
    (200.0, 200.0, 0.0, [0, 0, 0, 2], 100.0, 49.0),
    (200.0, 200.0, 0.0, [0, 0, 0, 3], 100.0, 34.3),
    (200.0, 200.0, 0.0, [1, 1, 0, 0], 100.0, 30.0),
    (200.0, 200.0, 0.0, [1, 0, 0, 1], 100.0, 35.0),
    (200.0, 200.0, 0.0, [0, 0, 1, 1], 100.0, 45.5),
    (200.0, 200.0, 0.0, [2, 0, 0, 0], 100.0, 25.0),
    (200.0, 200.0, 0.0, [0, 2, 1, 0], 100.0, 23.4),
    (200.0, 200.0, 0.0, [1, 1, 1, 1], 100.0, 13.65),
    (100.0, 80.0, 0.0, [0, 0, 0, 1], 80.0, 56.0),
    (100.0, 100.0, 10.0, [0, 0, 0, 0], 90.0, 90.0),
    (100.0, 100.0, 10.0, [1, 0, 0, 0], 90.0, 45.0),
    (400.0, 100.0, 0.0, [0, 0, 0, 0], 25.0, 25.0),
    (400.0, 100.0, 40.0, [0, 1, 0, 0], 22.5, 13.5),
    (100.0, 100.0, 150.0, [0, 0, 0, 1], 0.0, 0.0),
    (50.0, 50.0, 50.0, [0, 0, 0, 0], 0.0, 0.0),
    (100.0, 60.0, 20.0, [0, 0, 2, 0], 48.0, 20.28),
    (100.0, 100.0, 0.0, [1, 1, 1, 2], 100.0, 9.555),
    (250.0, 200.0, 25.0, [0, 0, 0, 1], 72.0, 50.4),
    (100.0, 100.0, 0.0, [0, 3, 0, 0], 100.0, 21.6),
];

const KINDS: [InfractionKind; 4] = [
    InfractionKind::Pedestrian,
    InfractionKind::Vehicle,
    InfractionKind::Static,
    InfractionKind::RedLight,
];

fn fixture_log(length: f64, completed: f64, off: f64, counts: [usize; 4]) -> EpisodeLog {
    let mut infractions = Vec::new();
    for (k, &n) in KINDS.iter().zip(&counts) {
        for _ in 0..n {
            infractions.push(Infraction {
                step: 5 * infractions.len() as u64,
                kind: *k,
            });
        }
    }
    EpisodeLog {
        route_length: length,
        completed,
        off_route: off,
        infractions,
        start: Pose::default(),
        trace: Vec::new(),
        outcome: Outcome::Finished,
    }
}

fn metrics_oracle() -> Verdict {
    const EPS: f64 = 1e-9;
    for (i, &(len, done, off, counts, rc, ds)) in METRIC_FIXTURES.iter().enumerate() {
        let r = RouteResult::from_log(&fixture_log(len, done, off, counts)).map_err(|e| e.to_string())?;
        let (got_ds, got_rc) = driving_score(&[r]).map_err(|e| e.to_string())?;
        if (got_rc - rc).abs() > EPS || (got_ds - ds).abs() > EPS {
            return Err(format!("fixture {}: got DS {got_ds} RC {got_rc}, expected DS {ds} RC {rc}", i + 1));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let routes: Vec<RouteResult> = (0..rng.random_range(1..6))
            .map(|_| {
                let len = rng.random_range(1.0..500.0);
                let counts = [0; 4].map(|_: usize| if rng.random_bool(0.3) { rng.random_range(0..4) } else { 0 });
                let log = fixture_log(len, rng.random_range(0.0..=len), rng.random_range(0.0..len), counts);
                RouteResult::from_log(&log).unwrap()
            })
            .collect();
        let (ds, rc) = driving_score(&routes).map_err(|e| e.to_string())?;
        if ds > rc {
            return Err(format!("random log set {trial}: DS {ds} > RC {rc}"));
        }
    }
    Ok(format!("{} fixtures match hand values to 1e-9; DS ≤ RC on 1000 random log sets", METRIC_FIXTURES.len()))
}

/// Red crossings counted from the recorded trace: the front bumper's motion
/// segment crosses a stop line into the intersection while that light is red.
fn replay_red_crossings(town: &Town, log: &EpisodeLog) -> usize {
    let side = |a: Vec2, b: Vec2, p: Vec2| (b - a).cross(p - a);
    let mut count = 0;
    let mut prev = log.start;
    for (k, t) in log.trace.iter().enumerate() {
        let fa = prev.pos + prev.forward() * HALF_LENGTH;
        let fb = t.pose.pos + t.pose.forward() * HALF_LENGTH;
        for l in &town.lights {
            if l.state(k as u64 + 1) != LightState::Red {
                continue;
            }
            let (p, q) = town.stop_line(l.node, l.approach);
            let straddles = side(p, q, fa) * side(p, q, fb) <= 0.0 && side(p, q, fa) != 0.0;
            let within = side(fa, fb, p) * side(fa, fb, q) <= 0.0;
            if straddles && within && (fb - fa).dot(l.approach.direction()) > 0.0 {
                count += 1;
            }
        }
        prev = t.pose;
    }
    count
}

fn expert_soundness() -> Verdict {
    let cfg = |seed| EpisodeConfig {
        seed,
        ..EpisodeConfig::default()
    };
    let mut results = Vec::new();
    for seed in 0..50 {
        let (town, route) = seeded_route(seed, 3).map_err(|e| e.to_string())?;
        let (log, _) = run_episode(&town, &route, Driver::Expert, &cfg(seed)).map_err(|e| e.to_string())?;
        if !log.infractions.is_empty() || log.outcome != Outcome::Finished {
            return Err(format!("expert seed {seed}: {:?}, {:?}", log.outcome, log.infractions));
        }
        results.push(RouteResult::from_log(&log).map_err(|e| e.to_string())?);
    }
    let (ds, rc) = driving_score(&results).map_err(|e| e.to_string())?;
    if (ds, rc) != (100.0, 100.0) {
        return Err(format!("expert DS {ds} RC {rc}"));
    }
    let mut crossings = 0;
    for seed in 0..50 {
        let (town, route) = seeded_route(seed, 3).map_err(|e| e.to_string())?;
        let (log, _) = run_episode(&town, &route, Driver::RedRunner, &cfg(seed)).map_err(|e| e.to_string())?;
        let k = replay_red_crossings(&town, &log);
        let r = RouteResult::from_log(&log).map_err(|e| e.to_string())?;
        let (ds, rc) = driving_score(&[r]).map_err(|e| e.to_string())?;
        if log.count(InfractionKind::RedLight) != k || (ds - 0.7f64.powi(k as i32) * rc).abs() > 1e-9 {
            return Err(format!("red runner seed {seed}: k {k}, logged {:?}, DS {ds}, RC {rc}", log.infractions));
        }
        crossings += k;
    }
    check(
        crossings > 0,
        format!("expert DS = RC = 100 with zero infractions on 50 routes; red runner DS = 0.7^k·RC on 50 routes ({crossings} replayed crossings)"),
    )
}

fn random_input(cfg: &FusionConfig, seed: u64) -> NetInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, s) = (2, cfg.input_size);
    let mut fill = |shape: Vec<usize>, lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_f64(shape, &v).unwrap()
    };
    let aux = (cfg.aux_source == AuxSource::SsFeatures && cfg.ss_provider == SsProvider::GroundTruth)
        .then(|| fill(vec![b, cfg.semantic_classes, cfg.aux_input_size(), cfg.aux_input_size()], 0.0, 1.0));
    NetInput {
        image: fill(vec![b, 3, s, s], 0.0, 1.0),
        lidar: fill(vec![b, 2, s, s], 0.0, 1.0),
        speed: fill(vec![b, 1], 0.0, 6.0),
        goal: fill(vec![b, 2], -30.0, 30.0),
        aux,
    }
}

fn architecture_sweep() -> Verdict {
    let expected = |stage: AuxStage| match stage {
        AuxStage::Early => [true, false, false, false],
        AuxStage::Late => [false, false, false, true],
        AuxStage::All => [true; 4],
        AuxStage::Block2 => [false, true, false, false],
        AuxStage::Block3 => [false, false, true, false],
    };
    for s in &STRATEGIES {
        let cfg = FusionConfig::tiny().with_strategy(s);
        let (net, store) = FusionNetwork::build::<f64>(&cfg, 7).map_err(|e| e.to_string())?;
        let input = random_input(&cfg, 1);
        let mut g = Graph::new();
        let out = net.forward(&mut g, &store, &input).map_err(|e| e.to_string())?;
        let shapes_ok = g.shape(out.waypoints) == [2, 4, 2]
            && g.value(out.waypoints).is_finite()
            && out.has_tl() == s.head_tl
            && out.has_ss() == s.head_ss
            && (!s.head_tl || g.shape(out.tl_logits().unwrap()) == [2, 2])
            && (!s.head_ss || g.shape(out.ss_logits().unwrap()) == [2, cfg.semantic_classes, 64, 64]);
        if !shapes_ok {
            return Err(format!("{}: wrong output shapes", s.name));
        }
        if s.aux_source == AuxSource::None {
            if net.aux_projection(0).is_some() || net.provider.is_some() {
                return Err(format!("{}: auxiliary path present without a source", s.name));
            }
            continue;
        }
        let m = g.mean_all(out.waypoints);
        let grads = g.backward(m).map_err(|e| e.to_string())?;
        let reached: Vec<bool> = (0..4)
            .map(|k| {
                net.aux_projection(k)
                    .and_then(|p| grads.param(p.w))
                    .is_some_and(|d| d.iter().any(|&v| v != 0.0))
            })
            .collect();
        if reached != expected(s.aux_stage) {
            return Err(format!("{}: aux gradient reaches blocks {reached:?}", s.name));
        }
    }
    Ok(format!(
        "{} configurations build with correct shapes; aux gradients reach exactly early→1, late→4, all→1–4, block2→2, block3→3",
        STRATEGIES.len()
    ))
}

/// Expert samples recorded every `every` steps from consecutive seeds.
fn expert_samples(cfg: &FusionConfig, per_class: usize, every: u64, first_seed: u64) -> Vec<Sample> {
    let mut counts = [0usize; 2];
    let mut out = Vec::new();
    let mut seed = first_seed;
    while counts.iter().any(|&c| c < per_class) {
        let (town, route) = seeded_route(seed, 3).unwrap();
        let ec = EpisodeConfig {
            max_steps: 600,
            seed,
            record_every: every,
            ..EpisodeConfig::default()
        };
        let (_, frames) = run_episode(&town, &route, Driver::Expert, &ec).unwrap();
        for f in frames {
            let c = f.obs.tl_state as usize;
            if counts[c] < per_class {
                counts[c] += 1;
                out.push(Sample::from_frame(&f.obs, &f.waypoints, cfg).unwrap());
            }
        }
        seed += 1;
    }
    out
}

fn overfit() -> Verdict {
    let cfg = FusionConfig::tiny().with_strategy(cogfuse_model::strategy_by_name("aux_head_tl_ss").unwrap());
    let data = expert_samples(&cfg, 8, 7, 100);
    let train = TrainConfig {
        lr: 1e-4,
        epochs: 250,
        lambda_wp: 1.0,
        lambda_ss: 0.3,
        lambda_tl: 1.0,
        ..TrainConfig::default()
    };
    let (net, store) = FusionNetwork::build::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(net, store, train).map_err(|e| e.to_string())?;
    let all: Vec<&Sample> = data.iter().collect();
    let batch = Batch::new(&all, &cfg).map_err(|e| e.to_string())?;
    let before = t.loss(&batch).map_err(|e| e.to_string())?.wp;
    t.fit(&data, |_| Ok(())).map_err(|e| e.to_string())?;
    let after = t.loss(&batch).map_err(|e| e.to_string())?.wp;
    let acc = t.tl_accuracy(&data).map_err(|e| e.to_string())?;
    let reduction = 1.0 - after / before;
    check(
        t.steps() == 500 && reduction >= 0.9 && acc == 1.0,
        format!(
            "16 frames (8 stop, 8 proceed), {} steps at lr 1e-4, λ 1:0.3:1: waypoint L1 {before:.4} → {after:.4} ({:.1}% reduction, need ≥ 90%), TL accuracy {:.1}%",
            t.steps(),
            100.0 * reduction,
            100.0 * acc
        ),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

struct ClosedLoop {
    reports: Vec<EvalReport>,
}

const DESK_DATA: &str = "[sim]\nseed = 5000\nepisodes = 40\nrecord_every = 4\nmax_steps = 600\n";

fn closed_loop(timings: &mut Option<ClosedLoop>) -> Verdict {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let sink = &mut std::io::sink();
    let data = tmp.path().join("data");
    let gen_cfg = write(tmp.path(), "gen.toml", DESK_DATA);
    let manifest = gen_data(&gen_cfg, &data, sink).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for strategy in ["baseline", "aux_head_tl"] {
        let text = format!(
            "{DESK_DATA}\n[fusion]\npreset = \"desk\"\nstrategy = \"{strategy}\"\n\n[train]\nepochs = 10\n\n[eval]\nroutes = 20\nseed = 9000\nmax_steps = 1200\n"
        );
        let cfg = write(tmp.path(), &format!("{strategy}.toml"), &text);
        let ckpt = tmp.path().join(format!("{strategy}.ckpt"));
        train(&cfg, &data, &ckpt, sink).map_err(|e| e.to_string())?;
        let tsv = tmp.path().join(format!("{strategy}.tsv"));
        reports.push(eval(&cfg, Some(&ckpt), None, None, &tsv, sink).map_err(|e| e.to_string())?);
    }
    let (base, aux) = (&reports[0].result, &reports[1].result);
    let detail = format!(
        "{} frames, 10 epochs, 20 routes: red/route baseline {:.2} vs aux_head_tl {:.2} (DS {:.1} vs {:.1}, RC {:.1} vs {:.1})",
        manifest.frames(),
        base.red_per_route,
        aux.red_per_route,
        base.ds,
        aux.ds,
        base.rc,
        aux.rc
    );
    let pass = manifest.frames() >= 2000 && aux.red_per_route < base.red_per_route;
    *timings = Some(ClosedLoop { reports });
    check(pass, detail)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn without_timing(tsv: &str) -> Vec<String> {
    tsv.lines().map(|l| l.rsplit_once('\t').map_or(l, |(head, _)| head).to_string()).collect()
}

fn determinism() -> Verdict {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let sink = &mut std::io::sink();
    let base = "[sim]\nseed = 300\nepisodes = 4\nrecord_every = 8\nmax_steps = 300\n\n[fusion]\npreset = \"tiny\"\nstrategy = \"early_ss_aux_head_tl\"\n\n[train]\nepochs = 2\n\n[eval]\nmax_steps = 150\n";
    let one = write(tmp.path(), "one.toml", base);
    let many = write(tmp.path(), "many.toml", &base.replace("max_steps = 300\n", "max_steps = 300\nworkers = 3\n"));
    let (da, db) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&one, &da, sink).map_err(|e| e.to_string())?;
    gen_data(&many, &db, sink).map_err(|e| e.to_string())?;
    if tree(&da) != tree(&db) {
        return Err("gen-data output depends on the worker count".into());
    }
    let ckpts = ["a", "a2", "b"].map(|n| tmp.path().join(format!("{n}.ckpt")));
    let [ca, ca2, cb] = &ckpts;
    train(&one, &da, ca, sink).map_err(|e| e.to_string())?;
    train(&one, &da, ca2, sink).map_err(|e| e.to_string())?;
    train(&many, &db, cb, sink).map_err(|e| e.to_string())?;
    let read = |p: &Path, ext: &str| std::fs::read(format!("{}{ext}", p.display())).unwrap();
    for ext in ["", ".meta", ".loss.csv"] {
        if read(ca, ext) != read(ca2, ext) {
            return Err(format!("training output `{ext}` differs between identical runs"));
        }
    }
    // The metadata embeds the config, which names the worker count.
    for ext in ["", ".loss.csv"] {
        if read(ca, ext) != read(cb, ext) {
            return Err(format!("training output `{ext}` depends on the worker count"));
        }
    }
    let (ta, tb) = (tmp.path().join("a.tsv"), tmp.path().join("b.tsv"));
    let ra = eval(&one, Some(ca), Some(4), Some(77), &ta, sink).map_err(|e| e.to_string())?;
    let rb = eval(&many, Some(ca), Some(4), Some(77), &tb, sink).map_err(|e| e.to_string())?;
    let logs = |p: &Path| tree(&cogfuse_cli::commands::logs_dir(p));
    if ra.logs != rb.logs || logs(&ta) != logs(&tb) {
        return Err("evaluation logs differ between 1 and 3 workers".into());
    }
    if without_timing(&ra.tsv()) != without_timing(&rb.tsv()) {
        return Err("evaluation TSV differs outside the timing column".into());
    }
    Ok(format!(
        "gen-data ({} frames), fit ({} steps) and eval (4 routes) byte-identical across reruns and across 1 vs 3 workers (checkpoint metadata on reruns only, TSV without mean_infer_ms)",
        cogfuse_cli::dataset::read_manifest(&da).unwrap().frames(),
        std::fs::read_to_string(format!("{}.loss.csv", ca.display())).unwrap().lines().count() - 1
    ))
}

fn timing_report(closed: &Option<ClosedLoop>) -> Verdict {
    let Some(c) = closed else {
        return Err("closed-loop runs did not complete, nothing was timed".into());
    };
    let mut parts = Vec::new();
    for r in &c.reports {
        let ms = r.timing.mean_ms().ok_or_else(|| format!("{}: no frames timed", r.method))?;
        parts.push(format!("{} {ms:.2} ms/frame ({:.1} FPS) over {} frames", r.method, 1e3 / ms, r.timing.frames));
    }
    Ok(format!("desk preset, preprocessing + forward + PID: {}", parts.join("; ")))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    // Bare numbers select criteria, e.g. `cargo test --test acceptance -- 3 8`.
    let only = args.iter().filter_map(|a| a.parse().ok()).collect();
    let mut suite = Suite { only, failures: Vec::new() };
    let mins = |m: u64| Some(Duration::from_secs(60 * m));
    suite.run(1, "gradient suite", mins(2), true, gradient_suite);
    suite.run(2, "rasterizer oracle", Some(Duration::from_secs(30)), true, rasterizer_oracle);
    suite.run(3, "metrics oracle", Some(Duration::from_secs(10)), true, metrics_oracle);
    suite.run(4, "expert soundness", mins(5), true, expert_soundness);
    suite.run(5, "architecture shape sweep", mins(1), true, architecture_sweep);
    suite.run(6, "overfit sanity", mins(5), true, overfit);
    let mut closed = None;
    suite.run(7, "directional closed-loop trend", None, false, || closed_loop(&mut closed));
    suite.run(8, "determinism", None, true, determinism);
    suite.run(9, "inference timing report", None, true, || timing_report(&closed));
    if !suite.failures.is_empty() {
        let _ = writeln!(std::io::stderr(), "blocking criteria failed: {:?}", suite.failures);
        std::process::exit(1);
    }
}
