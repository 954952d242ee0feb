//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::examples::{factored_swap, over_partition, reorderings};
use common::{
    brute_offsets, mesh, oracle, plan_of, random_mesh, random_relabel, random_strong_sequence, random_type,
    random_weak_sequence, soundness_suite, ty,
};
use redistill::collectives::{CollectiveOp, Plan};
use redistill::normalizer::{naive_sequence, normalize, Mode};
use redistill::problem::Problem;
use redistill::search::{shortest_paths, WeakGraph};
use redistill::semantics::{find_permutation, BaseOffsetMap};
use redistill::simulator::execute;
use redistill::{
    count_transfers, decompose_primes, synthesize, verify, OpKind, SynthesisOptions, SynthesisResult,
    VerificationReport,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Solved {
    problem: Problem,
    result: SynthesisResult,
    report: VerificationReport,
    elapsed: Duration,
}

fn solve_suite() -> Result<Vec<Solved>, String> {
    soundness_suite()
        .into_iter()
        .map(|problem| {
            let start = Instant::now();
            let result = synthesize(
                &problem.mesh,
                &problem.source,
                &problem.target,
                &SynthesisOptions::default(),
            )
            .map_err(|e| format!("{}: {e}", problem.to_json_line()))?;
            let elapsed = start.elapsed();
            let report = verify(&result.plan);
            Ok(Solved {
                problem,
                result,
                report,
                elapsed,
            })
        })
        .collect()
}

fn reference_examples() -> Outcome {
    let start = Instant::now();
    let (m, t1, t2, direct, sliced) = over_partition();
    let direct = plan_of(&m, &t1, &direct);
    let sliced = plan_of(&m, &t1, &sliced);
    ensure(direct.target == t2 && sliced.target == t2, || {
        "over-partition programs miss the target".into()
    })?;
    ensure(direct.cost == 512 && sliced.cost == 384, || {
        format!(
            "over-partition costs {} and {}, expected 512 and 384",
            direct.cost, sliced.cost
        )
    })?;
    for pair in reorderings() {
        let left = plan_of(&pair.mesh, &pair.source, &pair.left);
        let right = plan_of(&pair.mesh, &pair.source, &pair.right);
        left.check().map_err(|e| format!("{} (left): {e}", pair.name))?;
        right.check().map_err(|e| format!("{} (right): {e}", pair.name))?;
        ensure(left.target == right.target, || format!("{}: targets differ", pair.name))?;
        let a = execute(&left).map_err(|e| format!("{} (left): {e}", pair.name))?;
        let b = execute(&right).map_err(|e| format!("{} (right): {e}", pair.name))?;
        ensure(a.state == b.state, || {
            format!("{}: final device states differ", pair.name)
        })?;
    }
    let (fm, f1, f2, ops) = factored_swap();
    let composite = mesh("{x:4, y:6}");
    ensure(fm.is_prime() && fm.device_count() == composite.device_count(), || {
        "factored mesh is not a prime split".into()
    })?;
    let swap = plan_of(&fm, &f1, &ops);
    swap.check().map_err(|e| format!("factored swap: {e}"))?;
    ensure(swap.target == f2 && swap.height == 6, || {
        format!("factored swap height {}", swap.height)
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "costs 512/384, 3 reordered pairs agree, factored swap height 6 ({:.0} ms)",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn soundness(suite: &[Solved]) -> Outcome {
    for s in suite {
        let line = s.problem.to_json_line();
        let r = &s.report;
        ensure(r.type_checks && r.correct, || format!("{line}: {:?}", r.failures))?;
        let endpoints = s.problem.source.localsize().max(s.problem.target.localsize());
        ensure(r.measured_height <= endpoints, || {
            format!("{line}: height {} > {endpoints}", r.measured_height)
        })?;
        ensure(s.result.plan.permute_count() <= 1, || {
            format!("{line}: {} permutes", s.result.plan.permute_count())
        })?;
        let naive = naive_sequence(&s.problem.mesh, &s.problem.source, &s.problem.target, Mode::Strong)
            .map_err(|e| format!("{line}: naive: {e}"))?
            .cost()
            .total;
        ensure(s.result.cost() <= naive, || {
            format!("{line}: cost {} > naive {naive}", s.result.cost())
        })?;
    }
    Ok(format!("{} problems verified by simulation", suite.len()))
}

fn optimality(suite: &[Solved]) -> Outcome {
    let mut compared = 0;
    for s in suite {
        let p = &s.problem;
        let d = decompose_primes(&p.mesh, &p.source, &p.target).map_err(|e| e.to_string())?;
        let sizes: Vec<u64> = d.mesh.axes().iter().map(|a| a.size).collect();
        let global = p.source.globaltype();
        let bound = s.result.bound;
        let Some(nodes) = oracle::nodes(&sizes, &global, bound, 5000) else {
            continue;
        };
        let g = oracle::graph(&sizes, &global, nodes);
        let expected = oracle::distance(&g, &d.source.localtype(), &d.target.localtype());
        let graph = WeakGraph::new(&d.mesh, global, bound, None);
        let found = shortest_paths(&graph, &d.source.localtype(), &d.target.localtype(), 1 << 20)
            .map(|sp| sp.cost())
            .ok();
        ensure(
            found == expected && s.result.weak_path.cost == expected.unwrap_or(0),
            || format!("{}: search {found:?}, oracle {expected:?}", p.to_json_line()),
        )?;
        compared += 1;
    }
    let r = synthesize(
        &mesh("{x:4, y:6}"),
        &ty("[3{x}12, 2{y}12]"),
        &ty("[2{y}12, 3{x}12]"),
        &SynthesisOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(r.weak_path.cost == 12, || {
        format!("factored swap minimum {}", r.weak_path.cost)
    })?;
    Ok(format!(
        "{compared} problems match the exhaustive oracle; factored swap minimum 12"
    ))
}

fn normal_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let seq = random_strong_sequence(&mut rng, 8);
        let out = normalize(&seq).map_err(|e| format!("{seq}: {e}"))?;
        let endpoints = seq.source().localsize().max(seq.target().localsize());
        ensure(
            out.is_normal_form()
                && out.source() == seq.source()
                && out.target() == seq.target()
                && out.height() <= endpoints,
            || format!("{seq}\n  => {out}"),
        )?;
    }
    for _ in 0..200 {
        let seq = random_weak_sequence(&mut rng, 8);
        let out = normalize(&seq).map_err(|e| format!("{seq}: {e}"))?;
        ensure(out.is_normal_form() && out.cost().total <= seq.cost().total, || {
            format!("{seq}\n  => {out}")
        })?;
    }
    Ok("200 strong and 200 weak sequences normalized".into())
}

fn semantics() -> Outcome {
    let cases = 1000;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mesh(&mut rng, &[1, 2, 3, 4, 6]);
        let t = random_type(&mut rng, &m);
        let beta = BaseOffsetMap::of(&m, &t).map_err(|e| e.to_string())?;
        let image = beta.image();
        let per_dim: Vec<BTreeSet<u64>> = t
            .dims
            .iter()
            .map(|d| (0..d.global).step_by(d.tile as usize).collect())
            .collect();
        for (i, expected) in per_dim.iter().enumerate() {
            let got: BTreeSet<u64> = image.iter().map(|o| o[i]).collect();
            ensure(&got == expected, || format!("{t}: dim {i} offsets {got:?}"))?;
        }
        let product: usize = per_dim.iter().map(BTreeSet::len).product();
        ensure(image.len() == product, || {
            format!("{t}: image has {} tuples, expected {product}", image.len())
        })?;
        for p in 0..m.device_count() {
            ensure(beta.at(p) == brute_offsets(&m, &t, p), || format!("{t}: point {p}"))?;
        }
        let u = random_relabel(&mut rng, &m, &t);
        let pi = find_permutation(&m, &t, &u).map_err(|e| e.to_string())?;
        for p in 0..m.device_count() {
            ensure(brute_offsets(&m, &u, p) == brute_offsets(&m, &t, pi.apply(p)), || {
                format!("{t} vs {u}")
            })?;
        }
    }
    Ok(format!("{cases} random types"))
}

fn cost_consistency(suite: &[Solved]) -> Outcome {
    let mut steps = 0;
    let mut identities = 0;
    for s in suite {
        let plan = &s.result.plan;
        let delta = plan.mesh.device_count() as u64;
        let line = s.problem.to_json_line();
        for (k, step) in plan.steps.iter().enumerate() {
            let model = count_transfers(step);
            ensure(model == delta * step.cost(), || {
                format!("{line}: step {k} counts {model}")
            })?;
            let moved = s.report.per_step_moved[k];
            ensure(moved <= model, || format!("{line}: step {k} moved {moved} > {model}"))?;
            if step.op.kind() == OpKind::AllToAll {
                let slack = delta * step.before_type.localsize();
                ensure(model - moved <= slack, || {
                    format!("{line}: step {k} slack {} > {slack}", model - moved)
                })?;
            }
            if let CollectiveOp::DevicePermute { pi } = &step.op {
                if pi.is_identity() {
                    identities += 1;
                    ensure(moved == 0, || format!("{line}: identity permute moved {moved}"))?;
                }
            }
            steps += 1;
        }
    }
    // Identity permutes are elided by synthesis, so check one directly.
    let m = mesh("{x:2, y:3}");
    let t = ty("[2{x}4, 1{y}3]");
    let base = plan_of(&m, &t, &[]);
    let step = redistill::apply_low_level(
        &m,
        &base.initial(),
        &t,
        &CollectiveOp::DevicePermute {
            pi: redistill::semantics::Permutation::identity(6),
        },
    )
    .map_err(|e| e.to_string())?;
    let plan = Plan::new(m, t.clone(), t, base.phi0.clone(), vec![step]);
    let r = verify(&plan);
    ensure(r.ok() && r.per_step_moved == [0], || format!("identity permute: {r:?}"))?;
    Ok(format!("{steps} steps checked, {} identity permutes", identities + 1))
}

fn performance(suite: &[Solved]) -> Outcome {
    let mut times: Vec<Duration> = suite.iter().map(|s| s.elapsed).collect();
    times.sort();
    let median = times[times.len() / 2];
    let max = times[times.len() - 1];
    ensure(median < Duration::from_secs(1), || format!("median {median:?}"))?;
    Ok(format!(
        "median {:.3} ms, max {:.3} ms",
        median.as_secs_f64() * 1e3,
        max.as_secs_f64() * 1e3
    ))
}

fn main() {
    let suite = solve_suite();
    let with_suite = |f: fn(&[Solved]) -> Outcome| match &suite {
        Ok(s) => f(s),
        Err(e) => Err(format!("synthesis failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("example fidelity", reference_examples()),
        ("synthesis soundness", with_suite(soundness)),
        ("optimality at desk scale", with_suite(optimality)),
        ("normal-form suite", normal_forms()),
        ("semantics lemmas", semantics()),
        ("cost-model consistency", with_suite(cost_consistency)),
        ("performance", with_suite(performance)),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
