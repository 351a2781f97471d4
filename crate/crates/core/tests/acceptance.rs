//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sorsnn_core::autodiff::custom::{gate_surrogate, qgradgate};
use sorsnn_core::autodiff::{CustomBackward, Tape};
use sorsnn_core::harness::injury::injury_experiment;
use sorsnn_core::harness::metrics::mean_std;
use sorsnn_core::harness::report::{self, write_archive};
use sorsnn_core::harness::sweep::threads_from_env;
use sorsnn_core::harness::{load_sequence, run_sequence, train_task, RunOutcome, TrainPlan};
use sorsnn_core::model::ModelKind;
use sorsnn_core::objective::{
    memory_loss, memory_loss_on_tape, orthogonal_loss, orthogonal_loss_on_tape,
};
use sorsnn_core::pathway::{select_pathway, LayerMask, SelectionParams};
use sorsnn_core::regulator::RegulatorConfig;
use sorsnn_core::spiking::{lif_step, LifState, ResetMode};
use sorsnn_core::{
    Architecture, AvailabilityMap, GeneratedWeights, LayerSpec, LifConfig, LossConfig, Model,
    ModelConfig, RunConfig, SelectionSet, SorModel, Tensor, TrainScope,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict {
        id,
        name,
        pass,
        detail,
    }
}

fn main() {
    let threads = threads_from_env();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .expect("global pool");

    // Optional criterion numbers select a subset, e.g. `-- 1 6`.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| only.is_empty() || only.contains(&id);
    let mut verdicts = Vec::new();
    if wanted(1) {
        verdicts.push(gradient_check());
    }
    if wanted(2) {
        verdicts.push(equation_oracles());
    }
    if wanted(3) || wanted(4) || wanted(5) {
        let (forgetting, sparsity, defaults) = forgetting_and_sparsity();
        verdicts.push(forgetting);
        verdicts.push(sparsity);
        if wanted(5) {
            verdicts.push(directionality(&defaults));
        }
    }
    if wanted(6) {
        verdicts.push(injury_repair());
    }
    if wanted(7) {
        verdicts.push(determinism());
    }
    if wanted(8) {
        verdicts.push(freezing_audit());
    }

    let mut failed = 0;
    for v in &verdicts {
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {}: {status} ({})", v.id, v.name, v.detail);
        failed += !v.pass as usize;
    }
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- criterion 1

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        architecture: Architecture {
            input_shape: vec![6],
            layers: vec![LayerSpec::dense("hidden", 6, 8, 0), LayerSpec::dense("out", 8, 2, 0)],
        },
        regulator: RegulatorConfig {
            task_dim: 4,
            layer_dim: 4,
            hidden: 8,
            ..RegulatorConfig::default()
        },
        ..ModelConfig::default()
    }
}

#[derive(Clone, Copy, Debug)]
enum Coord {
    Regulator(usize, usize),
    Layer(usize, usize),
    Task(usize),
    A(usize, usize),
    ATilde(usize, usize),
}

fn slot(m: &mut SorModel, task: usize, c: Coord) -> &mut f64 {
    match c {
        Coord::Regulator(i, j) => &mut m.regulator.params.tensors_mut()[i].data_mut()[j],
        Coord::Layer(i, j) => &mut m.regulator.layer_embeddings[i].vector.data_mut()[j],
        Coord::Task(j) => &mut m.regulator.task_embeddings.get_mut(&task).unwrap().vector.data_mut()[j],
        Coord::A(l, j) => &mut m.selections.get_mut(task).unwrap().layers[l].a.data_mut()[j],
        Coord::ATilde(l, j) => &mut m.selections.get_mut(task).unwrap().layers[l].a_tilde.data_mut()[j],
    }
}

/// Total loss and the values of every hard node (spikes and gates).
fn evaluate_loss(
    m: &SorModel,
    task: usize,
    x: &Tensor,
    y: &[usize],
    cfg: &LossConfig,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::with_custom_backward(CustomBackward::Exact);
    let g = m.loss_graph(&mut tape, task, x, y, cfg, TrainScope::Full).unwrap();
    let signature = g
        .spikes
        .iter()
        .chain(&g.masks)
        .flat_map(|&v| tape.value(v).data().to_vec())
        .collect();
    (tape.value(g.total).data()[0], signature)
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let cfg = tiny_model_config();
    let h = 1e-5;
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut worst_at = String::new();
    for state in 0..20u64 {
        let mut m = SorModel::new(&cfg, 100 + state).unwrap();
        m.begin_task(0).unwrap();
        m.end_task(0).unwrap();
        m.begin_task(1).unwrap();
        let loss_cfg = LossConfig {
            alpha: 0.5,
            beta: 0.1,
            gamma: 0.3,
            orth_on_masks: state % 2 == 0,
            orth_include_self: state % 4 == 1,
            memory_all_past: state % 3 == 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(state);
        let x = Tensor::from_fn(&[5, 6], |_| rng.gen_range(-0.5..1.5));
        let y: Vec<usize> = (0..5).map(|_| rng.gen_range(0..2)).collect();

        let mut tape = Tape::with_custom_backward(CustomBackward::Exact);
        let g = m.loss_graph(&mut tape, 1, &x, &y, &loss_cfg, TrainScope::Full).unwrap();
        tape.backward(g.total).unwrap();
        let mut analytic: Vec<(Coord, f64)> = Vec::new();
        for (i, &v) in g.regulator.as_ref().unwrap().iter().enumerate() {
            for (j, &d) in tape.grad(v).data().iter().enumerate() {
                analytic.push((Coord::Regulator(i, j), d));
            }
        }
        for (i, &v) in g.layer_embeddings.as_ref().unwrap().iter().enumerate() {
            for (j, &d) in tape.grad(v).data().iter().enumerate() {
                analytic.push((Coord::Layer(i, j), d));
            }
        }
        for (j, &d) in tape.grad(g.task_embedding.unwrap()).data().iter().enumerate() {
            analytic.push((Coord::Task(j), d));
        }
        for (l, &(a, at)) in g.selection.as_ref().unwrap().iter().enumerate() {
            for (j, &d) in tape.grad(a).data().iter().enumerate() {
                analytic.push((Coord::A(l, j), d));
            }
            for (j, &d) in tape.grad(at).data().iter().enumerate() {
                analytic.push((Coord::ATilde(l, j), d));
            }
        }

        let (_, base_sig) = evaluate_loss(&m, 1, &x, &y, &loss_cfg);
        for (c, d) in analytic {
            let orig = *slot(&mut m, 1, c);
            *slot(&mut m, 1, c) = orig + h;
            let (plus, sig_p) = evaluate_loss(&m, 1, &x, &y, &loss_cfg);
            *slot(&mut m, 1, c) = orig - h;
            let (minus, sig_m) = evaluate_loss(&m, 1, &x, &y, &loss_cfg);
            *slot(&mut m, 1, c) = orig;
            if sig_p != base_sig || sig_m != base_sig {
                skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let rel = (d - fd).abs() / d.abs().max(fd.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
                worst_at = format!("state {state} {c:?}: analytic {d:.6e} fd {fd:.6e}");
            }
            checked += 1;
        }
    }
    let closed_form = custom_rules_exact();
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient correctness",
        worst <= 1e-4 && closed_form && checked > 0 && elapsed < Duration::from_secs(60),
        format!(
            "{checked} coordinates over 20 states, {skipped} skipped at spike/gate flips, \
             max rel err {worst:.2e} at {worst_at}, custom rules exact: {closed_form}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Spike and gate backward rules reproduce their closed forms bit for bit.
fn custom_rules_exact() -> bool {
    let rule = LifConfig::default().spike_rule();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200;
    let u = Tensor::from_fn(&[n], |_| rng.gen_range(-0.5..1.5));
    let c = Tensor::from_fn(&[n], |_| rng.gen_range(-2.0..2.0));
    let mut tape = Tape::new();
    let uv = tape.param(u.clone());
    let cv = tape.constant(c.clone());
    let s = tape.spike(uv, rule);
    let prod = tape.mul(s, cv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    let spike_ok = tape
        .grad(uv)
        .data()
        .iter()
        .zip(u.data().iter().zip(c.data()))
        .all(|(&g, (&u, &c))| g == c * qgradgate(u - rule.v_th, rule.lambda));

    let a = Tensor::from_fn(&[n], |_| rng.gen_range(0.3..0.7));
    let at = Tensor::from_fn(&[n], |_| rng.gen_range(0.3..0.7));
    let mut tape = Tape::new();
    let av = tape.param(a.clone());
    let tv = tape.param(at.clone());
    let cv = tape.constant(c.clone());
    let gate = tape.gate(av, tv, 1.0).unwrap();
    let prod = tape.mul(gate, cv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    let ga = tape.grad(av);
    let gt = tape.grad(tv);
    let gate_ok = (0..n).all(|i| {
        let local = gate_surrogate(a.data()[i], at.data()[i], 1.0);
        ga.data()[i] == c.data()[i] * local && gt.data()[i] == -(c.data()[i] * local)
    });
    spike_ok && gate_ok
}

// ---------------------------------------------------------------- criterion 2

fn equation_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);

    // Membrane potential without reset is a geometric sum of past currents.
    let cfg = LifConfig {
        reset_mode: ResetMode::None,
        ..LifConfig::default()
    };
    let steps = 40;
    let currents: Vec<Tensor> = (0..steps)
        .map(|_| Tensor::from_fn(&[16], |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut state = LifState::zeros(&[16]);
    let mut lif_err = 0.0f64;
    let mut spikes_ok = true;
    for t in 0..steps {
        let (next, s) = lif_step(&state, &currents[t], &cfg).unwrap();
        for k in 0..16 {
            let closed: f64 = (0..=t).map(|s| cfg.tau.powi((t - s) as i32) * currents[s].data()[k]).sum();
            lif_err = lif_err.max((next.u.data()[k] - closed).abs());
            spikes_ok &= s.data()[k] == if closed >= cfg.v_th { 1.0 } else { 0.0 };
        }
        state = next;
    }

    // Pathway selection against a per-synapse loop on 10^4 synapses.
    let arch = Architecture {
        input_shape: vec![100],
        layers: vec![LayerSpec::dense("w", 100, 100, 0)],
    };
    let n = 10_000;
    let sel = SelectionSet {
        task: 0,
        layers: vec![SelectionParams {
            a: Tensor::from_fn(&[100, 100], |_| 0.5 + rng.gen_range(-0.05..0.05)),
            a_tilde: Tensor::from_fn(&[100, 100], |_| 0.5 + rng.gen_range(-0.05..0.05)),
        }],
        frozen: false,
    };
    let avail = AvailabilityMap {
        layers: vec![LayerMask::new(vec![100, 100], (0..n).map(|_| rng.gen_bool(0.8)).collect()).unwrap()],
    };
    let w = GeneratedWeights {
        task: 0,
        layers: vec![Tensor::from_fn(&[100, 100], |_| rng.gen_range(-1.0..1.0))],
    };
    let p = select_pathway(&w, &sel, &avail).unwrap();
    let (a, at, wv) = (sel.layers[0].a.data(), sel.layers[0].a_tilde.data(), w.layers[0].data());
    let selection_ok = arch.synapse_count() == n
        && (0..n).all(|i| {
            let on = avail.layers[0].bits()[i] && a[i] >= at[i];
            p.mask.layers[0].bits()[i] == on && p.weights[0].data()[i] == if on { wv[i] } else { 0.0 }
        });

    // Memory and orthogonality losses against direct sums.
    let shapes: [&[usize]; 3] = [&[4, 3], &[2, 5, 2], &[7]];
    let gen = |rng: &mut ChaCha8Rng| GeneratedWeights {
        task: 0,
        layers: shapes.iter().map(|s| Tensor::from_fn(s, |_| rng.gen_range(-1.0..1.0))).collect(),
    };
    let cur = gen(&mut rng);
    let prev = gen(&mut rng);
    let direct_mem = cur
        .layers
        .iter()
        .zip(&prev.layers)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt();
    let mut tape = Tape::new();
    let vars: Vec<_> = cur.layers.iter().map(|t| tape.param(t.clone())).collect();
    let mem_tape = memory_loss_on_tape(&mut tape, &vars, &[&prev]).unwrap().unwrap();
    let mem_err = (memory_loss(&cur, Some(&prev)).unwrap() - direct_mem)
        .abs()
        .max((tape.value(mem_tape).data()[0] - direct_mem).abs());

    let partners: Vec<Vec<Tensor>> = (0..3).map(|_| gen(&mut rng).layers).collect();
    let mut direct_orth = 0.0;
    for partner in &partners {
        for (c, p) in cur.layers.iter().zip(partner) {
            for i in 0..c.len() {
                direct_orth += c.data()[i] * p.data()[i];
            }
        }
    }
    let orth_tape = orthogonal_loss_on_tape(&mut tape, &vars, &partners, false).unwrap().unwrap();
    let orth_err = (orthogonal_loss(&cur.layers, &partners).unwrap() - direct_orth)
        .abs()
        .max((tape.value(orth_tape).data()[0] - direct_orth).abs());

    verdict(
        2,
        "equation oracles",
        lif_err <= 1e-12 && spikes_ok && selection_ok && mem_err <= 1e-12 && orth_err <= 1e-12,
        format!(
            "LIF err {lif_err:.1e} (spikes match: {spikes_ok}), selection exact on {n} synapses: \
             {selection_ok}, memory err {mem_err:.1e}, orthogonal err {orth_err:.1e}"
        ),
    )
}

// ------------------------------------------------------------ criteria 3 to 5

fn run(cfg: &RunConfig) -> RunOutcome {
    let seq = load_sequence(cfg).unwrap();
    run_sequence(&seq, cfg).unwrap()
}

fn run_many(configs: Vec<RunConfig>) -> Vec<RunOutcome> {
    configs.par_iter().map(run).collect()
}

fn with_seeds(base: &RunConfig) -> Vec<RunConfig> {
    SEEDS
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            c.seed = s;
            c
        })
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    mean_std(&v).0
}

fn forgetting_and_sparsity() -> (Verdict, Verdict, Vec<RunOutcome>) {
    let start = Instant::now();
    let base = RunConfig::default();
    let mut naive_cfg = base.clone();
    naive_cfg.model.kind = ModelKind::Naive;
    naive_cfg.loss.alpha = 0.0;
    naive_cfg.loss.beta = 0.0;
    let mut configs = with_seeds(&base);
    configs.extend(with_seeds(&naive_cfg));
    let mut outs = run_many(configs);
    let naive = outs.split_off(SEEDS.len());
    let elapsed = start.elapsed();

    let sor_acc = mean(outs.iter().map(|o| o.metrics.acc));
    let naive_acc = mean(naive.iter().map(|o| o.metrics.acc));
    let sor_bwt = mean(outs.iter().map(|o| o.metrics.bwt.unwrap()));
    let naive_bwt = mean(naive.iter().map(|o| o.metrics.bwt.unwrap()));
    let forgetting = verdict(
        3,
        "forgetting ordering",
        sor_acc - naive_acc >= 0.10 && sor_bwt > naive_bwt && elapsed < Duration::from_secs(15 * 60),
        format!(
            "ACC {sor_acc:.3} vs naive {naive_acc:.3}, BWT {sor_bwt:.3} vs naive {naive_bwt:.3}, \
             5 seeds, {:.0}s",
            elapsed.as_secs_f64()
        ),
    );

    let tasks = base.data.synthetic.n_tasks;
    let per_task: Vec<f64> = (0..tasks)
        .map(|t| mean(outs.iter().map(|o| o.metrics.pathways.as_ref().unwrap().active_fractions[t])))
        .collect();
    let lowest = outs
        .iter()
        .flat_map(|o| o.metrics.pathways.as_ref().unwrap().active_fractions.clone())
        .fold(f64::INFINITY, f64::min);
    let sparsity = verdict(
        4,
        "sparsity echo",
        per_task.iter().all(|f| (0.30..=0.60).contains(f)),
        format!(
            "per-task active fraction (5-seed mean) {:?}, lowest single run {lowest:.3}",
            per_task.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
        ),
    );
    (forgetting, sparsity, outs)
}

fn directionality(defaults: &[RunOutcome]) -> Verdict {
    let start = Instant::now();
    let base = RunConfig::default();
    let variant = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        with_seeds(&c)
    };
    let mut configs = variant(&|c| c.loss.beta = 0.0);
    configs.extend(variant(&|c| c.loss.beta = 1e-3));
    configs.extend(variant(&|c| c.loss.alpha = 5.0));
    configs.extend(variant(&|c| {
        c.loss.alpha = 0.0;
        c.data.synthetic.n_tasks = 2;
    }));
    configs.extend(variant(&|c| c.data.synthetic.n_tasks = 2));
    let outs = run_many(configs);
    let group = |i: usize| &outs[i * SEEDS.len()..(i + 1) * SEEDS.len()];
    let overlap = |g: &[RunOutcome]| mean(g.iter().map(|o| o.metrics.pathways.as_ref().unwrap().mean_pairwise_dot));
    let drift = |g: &[RunOutcome]| {
        mean(g.iter().map(|o| o.metrics.pathways.as_ref().unwrap().memory_distance[1].unwrap()))
    };
    let acc = |g: &[RunOutcome]| mean(g.iter().map(|o| o.metrics.acc));

    let (dot0, dot3) = (overlap(group(0)), overlap(group(1)));
    let (acc5, acc_half) = (acc(group(2)), acc(defaults));
    let (drift0, drift_half) = (drift(group(3)), drift(group(4)));
    verdict(
        5,
        "stability-plasticity directionality",
        dot3 < dot0 && drift_half < drift0 && acc5 < acc_half,
        format!(
            "overlap beta=0 {dot0:.1} -> beta=1e-3 {dot3:.1}; task-2 drift alpha=0 {drift0:.4} -> \
             alpha=0.5 {drift_half:.4}; ACC alpha=5 {acc5:.3} vs alpha=0.5 {acc_half:.3}; {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn injury_repair() -> Verdict {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.data.synthetic.n_tasks = 4;
    let seq = load_sequence(&cfg).unwrap();
    let mut out = run_sequence(&seq, &cfg).unwrap();
    let report = injury_experiment(&mut out.model, &seq, &cfg, 0.5, cfg.harness.injury.repair_epochs, &mut out.log).unwrap();
    let target_ok = (report.post[0] - report.pre[0]).abs() <= 0.05;
    let others_ok = (1..report.tasks.len()).all(|i| (report.post[i] - report.pre[i]).abs() <= 0.03);
    let elapsed = start.elapsed();
    verdict(
        6,
        "injury self-repair",
        target_ok && others_ok && report.others_unchanged && elapsed < Duration::from_secs(600),
        format!(
            "cleared {} of {} unique synapses; pre {:?} post {:?}; other masks unchanged: {}; {:.0}s",
            report.cleared,
            report.unique,
            report.pre,
            report.post,
            report.others_unchanged,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn archive_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![(
        report::MATRIX_FILE.to_string(),
        fs::read(dir.join(report::MATRIX_FILE)).unwrap(),
    )];
    let mut masks: Vec<_> = fs::read_dir(dir.join(report::MASKS_DIR))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    masks.sort();
    for p in masks {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
    }
    files
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.data.synthetic.n_tasks = 3;
    cfg.optimizer.epochs = 10;
    let mut archives = Vec::new();
    for name in ["first", "second"] {
        let dir = root.path().join(name);
        let out = run(&cfg);
        write_archive(&dir, &cfg, &out).unwrap();
        archives.push(archive_files(&dir));
    }
    let identical = archives[0] == archives[1];
    verdict(
        7,
        "determinism",
        identical && archives[0].len() == 4,
        format!("{} files compared byte for byte, identical: {identical}", archives[0].len()),
    )
}

// ---------------------------------------------------------------- criterion 8

fn freezing_audit() -> Verdict {
    let mut cfg = RunConfig::default();
    cfg.data.synthetic.n_tasks = 3;
    cfg.optimizer.epochs = 5;
    let seq = load_sequence(&cfg).unwrap();
    let mut model = Model::new(&cfg.model, cfg.seed).unwrap();
    let mut log = Vec::new();
    let mut frozen = Vec::new();
    let mut reads = Vec::new();
    for (i, task) in seq.tasks.iter().enumerate() {
        model.begin_task(task.id).unwrap();
        let plan = TrainPlan {
            epochs: cfg.optimizer.epochs,
            scope: TrainScope::Full,
            attempt: 0,
            eval_upto: i + 1,
        };
        train_task(&mut model, &seq, task.id, &cfg, plan, &mut log).unwrap();
        let sor = model.as_sor().unwrap();
        frozen.push((
            sor.regulator.task(task.id).unwrap().clone(),
            sor.selections.get(task.id).unwrap().clone(),
        ));
        reads.push(task.train_reads());
    }
    let sor = model.as_sor().unwrap();
    let mut changed = 0;
    for (task, (emb, sel)) in seq.tasks.iter().zip(&frozen) {
        let emb_now = sor.regulator.task(task.id).unwrap();
        let sel_now = sor.selections.get(task.id).unwrap();
        changed += (emb_now.vector.max_abs_diff(&emb.vector).unwrap() != 0.0) as usize;
        changed += sel_now
            .layers
            .iter()
            .zip(&sel.layers)
            .filter(|(a, b)| {
                a.a.max_abs_diff(&b.a).unwrap() != 0.0 || a.a_tilde.max_abs_diff(&b.a_tilde).unwrap() != 0.0
            })
            .count();
        changed += !(emb_now.frozen && sel_now.frozen) as usize;
    }
    let late_reads: usize = seq.tasks.iter().zip(&reads).map(|(t, &r)| t.train_reads() - r).sum();
    verdict(
        8,
        "freezing audit",
        changed == 0 && late_reads == 0,
        format!("frozen tensors changed: {changed}; training-split reads after each task finished: {late_reads}"),
    )
}
