//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full protocol by default. `XDIFF_ACCEPTANCE=1,4` selects
//! criteria; `XDIFF_ACCEPTANCE_SLOTS` shortens the simulator runs for a
//! smoke check and marks the report as reduced. A FAIL line does not change
//! the exit status; only a harness error does.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xdiff_core::agent::{median, run_learner, AgentConfig, CriticPair, XDiffAgent};
use xdiff_core::baselines::{Ddpg, DdpgConfig, ProviderKind};
use xdiff_core::diffusion::{mish_mlp, point_mass_noise, q_sample, ClampGradient, DenoiseSchedule, DiffusionConfig, DiffusionPolicy, LossReduction};
use xdiff_core::env::{Scenario, World};
use xdiff_core::experiment::toy::{grid_oracle, Bandit};
use xdiff_core::experiment::{self, RunOutput, RunSpec, StepChange};
use xdiff_core::nn::gradcheck::{numeric_gradient, relative_error};
use xdiff_core::nn::{Activation, Gradients};
use xdiff_core::{PolicyMode, PreferencePolicy};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SWEEP_SEEDS: [u64; 3] = [1, 2, 3];
const FULL_SLOTS: usize = 3000;
const STEP_FACTOR: f64 = 1.25;
/// Bandit rewards already lie in [0, 1].
const TOY_REWARD_SCALE: f64 = 1.0;
const BANDIT_ITERATIONS: usize = 5000;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Memoized simulator runs; traces are dropped to bound memory.
struct Runs {
    slots: usize,
    cache: BTreeMap<String, RunOutput>,
    conserved: bool,
}

#[derive(Clone, Copy, Default)]
struct Variant {
    step: bool,
    coupled: bool,
    steps: Option<usize>,
    eta: Option<f64>,
}

impl Runs {
    fn get(&mut self, preset: &str, provider: ProviderKind, seed: u64, v: Variant) -> &RunOutput {
        let key = format!("{preset}/{provider}/{seed}/{}/{}/{:?}/{:?}", v.step, v.coupled, v.steps, v.eta);
        if !self.cache.contains_key(&key) {
            let mut spec = RunSpec::new(Scenario::preset(preset).unwrap(), provider, seed, self.slots);
            spec.keep_trace = false;
            spec.latency_coupling = v.coupled;
            if v.step {
                spec.step_change = Some(StepChange { at_slot: (self.slots / 2) as u64, factor: STEP_FACTOR });
            }
            if let Some(k) = v.steps {
                spec.learners.xdiff.diffusion.steps = k;
            }
            if let Some(eta) = v.eta {
                spec.learners.xdiff.eta = eta;
            }
            let t0 = Instant::now();
            let out = experiment::run(&spec).unwrap_or_else(|e| panic!("run {key} failed: {e}"));
            eprintln!("  run {key}: final third {:.3} ({:.0} s)", out.summary.final_third_reward, t0.elapsed().as_secs_f64());
            self.conserved &= out.summary.bytes_conserved;
            self.cache.insert(key.clone(), out);
        }
        &self.cache[&key]
    }

    fn final_third(&mut self, preset: &str, provider: ProviderKind, seed: u64, v: Variant) -> f64 {
        self.get(preset, provider, seed, v).summary.final_third_reward
    }
}

fn fmt(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

fn mlp_seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- C1

fn c1_gradients() -> Verdict {
    let mut worst = [0.0f64; 4];
    for seed in 0..5u64 {
        let mut rng = mlp_seeded(100 + seed);
        let cfg = DiffusionConfig {
            clamp_gradient: ClampGradient::Exact,
            loss_reduction: LossReduction::Mean,
            steps: 3,
            beta_min: 0.1,
            beta_max: 1.0,
            hidden: 8,
            layers: 3,
            embed_dim: 4,
        };
        let mut policy = DiffusionPolicy::<f64>::new(2, 3, &cfg, &mut rng).unwrap();
        policy.net.layers.last_mut().unwrap().w.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
        let s = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let a = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-0.9..0.9));

        // Denoising network.
        let mut g = Gradients::zeros_like(&policy.net);
        policy.diffusion_loss(s.view(), a.view(), &mut mlp_seeded(seed), Some((&mut g, 1.0)));
        let numeric = numeric_gradient(&policy.net.flatten_params(), 1e-6, |theta| {
            let mut p = policy.clone();
            p.net.set_flat_params(theta);
            p.diffusion_loss(s.view(), a.view(), &mut mlp_seeded(seed), None)
        });
        worst[0] = worst[0].max(relative_error(&g.flatten(), &numeric));

        // Both critics.
        let critics = CriticPair::<f64>::new(5, 8, 3, &mut rng);
        let y = ndarray::Array1::from_shape_fn(4, |_| rng.gen_range(-2.0..2.0));
        let mut g1 = Gradients::zeros_like(&critics.q1);
        let mut g2 = Gradients::zeros_like(&critics.q2);
        critics.loss(s.view(), a.view(), &y, Some((&mut g1, &mut g2)));
        for (which, g) in [(1, &g1), (2, &g2)] {
            let net = if which == 1 { &critics.q1 } else { &critics.q2 };
            let numeric = numeric_gradient(&net.flatten_params(), 1e-6, |theta| {
                let mut c = critics.clone();
                if which == 1 { c.q1.set_flat_params(theta) } else { c.q2.set_flat_params(theta) }
                c.loss(s.view(), a.view(), &y, None)
            });
            worst[1] = worst[1].max(relative_error(&g.flatten(), &numeric));
        }

        // DDPG actor.
        let dcfg = DdpgConfig { hidden: 6, layers: 3, ..DdpgConfig::default() };
        let d = Ddpg::<f64>::new(2, 3, 0.9, dcfg.clone(), seed).unwrap();
        let mut g = Gradients::zeros_like(&d.actor);
        d.actor_objective(s.view(), Some((&mut g, 1.0)));
        let numeric = numeric_gradient(&d.actor.flatten_params(), 1e-6, |theta| {
            let mut probe = Ddpg::<f64>::new(2, 3, 0.9, dcfg.clone(), seed).unwrap();
            probe.actor.set_flat_params(theta);
            probe.actor_objective(s.view(), None)
        });
        worst[2] = worst[2].max(relative_error(&g.flatten(), &numeric));

        // Q guidance through the sampler.
        let critic = mish_mlp(5, 8, 3, 1, Activation::Identity, &mut rng);
        let mut g = Gradients::zeros_like(&policy.net);
        policy.q_guidance(&critic, s.view(), a.view(), &mut mlp_seeded(seed), Some((&mut g, 1.0))).unwrap();
        let numeric = numeric_gradient(&policy.net.flatten_params(), 1e-6, |theta| {
            let mut p = policy.clone();
            p.net.set_flat_params(theta);
            p.q_guidance(&critic, s.view(), a.view(), &mut mlp_seeded(seed), None).unwrap()
        });
        worst[3] = worst[3].max(relative_error(&g.flatten(), &numeric));
    }
    let pass = worst[0] < 1e-4 && worst[1] < 1e-4 && worst[2] < 1e-4 && worst[3] < 1e-3;
    Verdict::new(
        pass,
        format!(
            "max relative error: eps-net {:.1e}, critics {:.1e}, actor {:.1e} (< 1e-4); guidance {:.1e} (< 1e-3)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// ---------------------------------------------------------------- C2

fn c2_diffusion() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    let monotone = [1, 2, 5, 10, 20].iter().all(|&k| {
        let s = DenoiseSchedule::new(k, 0.1, 10.0).unwrap();
        (2..=k).all(|i| s.alpha_bar(i) < s.alpha_bar(i - 1)) && s.alpha_bar(1) < 1.0
    });
    pass &= monotone;
    notes.push(format!("alpha_bar monotone {monotone}"));

    let schedule = DenoiseSchedule::new(5, 0.1, 10.0).unwrap();
    let n = 100_000;
    let a0 = Array2::from_elem((n, 1), 0.6);
    let mut rng = mlp_seeded(7);
    let mut worst = 0.0f64;
    for k in 1..=5 {
        let noise = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let x = q_sample(a0.view(), &vec![k; n], noise.view(), &schedule);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_mean = 0.6 * schedule.alpha_bar(k).sqrt();
        let want_var = 1.0 - schedule.alpha_bar(k);
        // The mean is judged on the scale of the spread once it nears zero.
        let mean_err = (mean - want_mean).abs() / want_mean.abs().max(want_var.sqrt());
        let var_err = (var - want_var).abs() / want_var;
        worst = worst.max(mean_err).max(var_err);
    }
    pass &= worst <= 0.03;
    notes.push(format!("q_sample worst relative error {worst:.4}"));

    let mut linf = 0.0f64;
    for (steps, target) in [(5, vec![0.6, -0.4, 0.1]), (5, vec![0.95, -0.95, 0.0]), (20, vec![-0.3, 0.8, -0.7])] {
        let cfg = DiffusionConfig { steps, hidden: 16, ..DiffusionConfig::default() };
        let p = DiffusionPolicy::<f64>::new(2, 3, &cfg, &mut rng).unwrap();
        let s = Array2::from_elem((1000, 2), 0.2);
        let out = p.sample_with(s.view(), &mut rng, |a, _, k| point_mass_noise(a, k, &target, &p.schedule)).unwrap();
        for row in out.rows() {
            for (x, t) in row.iter().zip(&target) {
                linf = linf.max((x - t).abs());
            }
        }
    }
    pass &= linf <= 0.05;
    notes.push(format!("oracle chain L-inf {linf:.2e}"));

    let cfg = DiffusionConfig { hidden: 32, ..DiffusionConfig::default() };
    let mut p = DiffusionPolicy::<f32>::new(4, 8, &cfg, &mut rng).unwrap();
    p.net.layers.last_mut().unwrap().w.mapv_inplace(|_| rng.gen_range(-2.0..2.0));
    let states = Array2::from_shape_fn((20_000, 4), |_| rng.gen_range(-50.0f32..50.0));
    let a = p.sample(states.view(), &mut rng).unwrap();
    let bounded = a.iter().all(|v| (-1.0..=1.0).contains(v));
    pass &= bounded;
    notes.push(format!("{} sampled actions in [-1, 1]: {bounded}", a.len()));
    Verdict::new(pass, notes.join("; "))
}

// ---------------------------------------------------------------- C3

fn c3_bandit() -> Verdict {
    let bandit = Bandit::two_optima();
    let (best, argmax) = grid_oracle(|a| bandit.reward(a), 200, 1e-9);
    let oracle_ok = (best - 1.0).abs() < 1e-9
        && argmax.len() == 2
        && argmax.iter().all(|p| bandit.optima.iter().any(|o| (p[0] - o[0]).abs() < 1e-9 && (p[1] - o[1]).abs() < 1e-9));

    let mut near = Vec::new();
    let mut ddpg_q = Vec::new();
    for &seed in &SEEDS {
        let cfg = AgentConfig { reward_scale: TOY_REWARD_SCALE, critic_hidden: 64, diffusion: DiffusionConfig { hidden: 64, ..DiffusionConfig::default() }, ..AgentConfig::default() };
        let mut agent = XDiffAgent::<f32>::new(1, 2, 0.0, cfg, seed).unwrap();
        let mut env = bandit.clone();
        run_learner(&mut agent, &mut env, BANDIT_ITERATIONS).unwrap();
        let draws = 500;
        let hits = (0..draws).filter(|_| bandit.distance_to_optimum(&agent.act(&[0.0]).unwrap()) < 0.2).count();
        near.push(hits as f64 / draws as f64);

        let mut ddpg = Ddpg::<f32>::new(1, 2, 0.0, DdpgConfig { hidden: 64, reward_scale: TOY_REWARD_SCALE, ..DdpgConfig::default() }, seed).unwrap();
        let mut env = bandit.clone();
        run_learner(&mut ddpg, &mut env, BANDIT_ITERATIONS).unwrap();
        ddpg_q.push(bandit.reward(&ddpg.deterministic(&[0.0])));
    }
    let xdiff_ok = near.iter().all(|&f| f >= 0.8);
    let ddpg_short = ddpg_q.iter().filter(|&&q| q <= 0.8 * best).count();
    Verdict::new(
        oracle_ok && xdiff_ok && ddpg_short >= 3,
        format!(
            "grid oracle optimum {best:.3} at {} points (verified {oracle_ok}); xDiff fraction within 0.2 per seed [{}] (need >= 0.8 each); \
             DDPG deterministic reward [{}], {ddpg_short}/5 seeds >= 20% below optimum (need >= 3)",
            argmax.len(),
            fmt(&near),
            fmt(&ddpg_q)
        ),
    )
}

// ---------------------------------------------------------------- C4

fn c4_two_cell(conserved: &mut bool) -> Verdict {
    let s = Scenario::two_cell_coupled();
    let slots = (30_000 / u64::from(s.network.slot_ms)) as usize;
    let warmup = slots / 10;
    let groups = s.network.num_rb_groups;
    let mut split = PreferencePolicy::zeros(&s.network);
    for g in 0..groups {
        let first_half = g < groups / 2;
        split.set(0, 0, g, if first_half { 1.0 } else { -1.0 });
        split.set(1, 0, g, if first_half { -1.0 } else { 1.0 });
    }
    let neutral = PreferencePolicy::zeros(&s.network);
    let mut worst = |policy: &PreferencePolicy, from: usize| {
        let mut world = World::new(s.clone(), PolicyMode::Soft).unwrap();
        let mut max_delay = [0.0f64; 2];
        for t in 0..slots {
            let out = world.step_slot(policy).unwrap();
            *conserved &= world.bytes_conserved();
            if t >= from {
                for (m, q) in max_delay.iter_mut().zip(&out.qos) {
                    *m = m.max(q.achieved_delay_ms);
                }
            }
        }
        max_delay
    };
    let split_delay = worst(&split, warmup);
    let neutral_delay = worst(&neutral, 0);
    let a = split_delay.iter().all(|&d| d < 50.0);
    let b = neutral_delay.iter().any(|&d| d > 1000.0);
    Verdict::new(
        a && b,
        format!(
            "split max delay after {warmup}-slot warm-up [{}] ms (< 50); neutral max delay within 30 s [{}] ms (one > 1000)",
            fmt(&split_delay),
            fmt(&neutral_delay)
        ),
    )
}

// ---------------------------------------------------------------- C5 to C8

fn c5_soft_vs_hard(runs: &mut Runs) -> Verdict {
    let (mut soft, mut hard) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        soft.push(runs.final_third("lab", ProviderKind::XDiff, seed, Variant::default()));
        hard.push(runs.final_third("lab", ProviderKind::XDiffHard, seed, Variant::default()));
    }
    let wins = soft.iter().zip(&hard).filter(|(s, h)| s > h).count();
    Verdict::new(wins >= 4, format!("final-third reward soft [{}] vs hard [{}]: soft ahead in {wins}/5 (need >= 4)", fmt(&soft), fmt(&hard)))
}

fn recovery_median(runs: &mut Runs, provider: ProviderKind) -> (f64, Vec<Option<u64>>) {
    let per_seed: Vec<Option<u64>> = SEEDS
        .iter()
        .map(|&seed| runs.get("lab", provider, seed, Variant { step: true, ..Variant::default() }).summary.recovery_slots)
        .collect();
    let as_f64: Vec<f64> = per_seed.iter().map(|r| r.map_or(f64::INFINITY, |v| v as f64)).collect();
    (median(&as_f64).unwrap(), per_seed)
}

fn c6_ablations(runs: &mut Runs) -> Verdict {
    let (mut x, mut p, mut q) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &SEEDS {
        x.push(runs.final_third("lab", ProviderKind::XDiff, seed, Variant::default()));
        p.push(runs.final_third("lab", ProviderKind::Ddpg, seed, Variant::default()));
        q.push(runs.final_third("lab", ProviderKind::Ddqn, seed, Variant::default()));
    }
    let over_ddpg = x.iter().zip(&p).filter(|(a, b)| a >= b).count();
    let over_ddqn = x.iter().zip(&q).filter(|(a, b)| a >= b).count();
    let (rx, sx) = recovery_median(runs, ProviderKind::XDiff);
    let (rp, sp) = recovery_median(runs, ProviderKind::Ddpg);
    let (rq, sq) = recovery_median(runs, ProviderKind::Ddqn);
    let faster = rx.is_finite() && rx < rp && rx < rq;
    let show = |v: &[Option<u64>]| v.iter().map(|r| r.map_or("never".to_owned(), |s| s.to_string())).collect::<Vec<_>>().join(", ");
    Verdict::new(
        over_ddpg >= 4 && over_ddqn >= 4 && faster,
        format!(
            "final third xDiff [{}], DDPG [{}], DDQN [{}]: xDiff >= DDPG in {over_ddpg}/5, >= DDQN in {over_ddqn}/5 (need >= 4); \
             slots to 90% after x{STEP_FACTOR} demand step: xDiff [{}] median {rx}, DDPG [{}] median {rp}, DDQN [{}] median {rq}",
            fmt(&x),
            fmt(&p),
            fmt(&q),
            show(&sx),
            show(&sp),
            show(&sq)
        ),
    )
}

fn c7_baselines(runs: &mut Runs) -> Verdict {
    let mut lab_wins = 0;
    let mut lab = Vec::new();
    for &seed in &SEEDS {
        let mean = |runs: &mut Runs, p| runs.get("lab", p, seed, Variant::default()).summary.reward.mean;
        let (x, c, o) = (mean(runs, ProviderKind::XDiff), mean(runs, ProviderKind::Cira), mean(runs, ProviderKind::Otfr));
        lab_wins += usize::from(x > c && x > o);
        lab.push(format!("{x:.2}/{c:.2}/{o:.2}"));
    }
    let mut lowest = 0;
    let mut building = Vec::new();
    for &seed in &SEEDS {
        let delays: Vec<(ProviderKind, f64)> = ProviderKind::ALL
            .iter()
            .map(|&p| (p, runs.get("building", p, seed, Variant::default()).summary.delay_ms.mean))
            .collect();
        let x = delays.iter().find(|(p, _)| *p == ProviderKind::XDiff).unwrap().1;
        let best_other = delays.iter().filter(|(p, _)| *p != ProviderKind::XDiff).map(|d| d.1).fold(f64::INFINITY, f64::min);
        lowest += usize::from(x < best_other);
        building.push(format!("{x:.1} vs {best_other:.1}"));
    }
    Verdict::new(
        lab_wins >= 4 && lowest >= 3,
        format!(
            "lab mean reward xDiff/CIRA/OTFR [{}]: xDiff ahead in {lab_wins}/5 (need >= 4); building mean delay xDiff vs best other ms [{}]: \
             lowest in {lowest}/5 (need >= 3)",
            lab.join(", "),
            building.join(", ")
        ),
    )
}

fn c8_sweep(runs: &mut Runs) -> Verdict {
    let med = |runs: &mut Runs, steps: usize, eta: f64| {
        let v: Vec<f64> = SWEEP_SEEDS
            .iter()
            .map(|&seed| {
                let variant = Variant { coupled: true, steps: Some(steps), eta: Some(eta), ..Variant::default() };
                runs.final_third("lab", ProviderKind::XDiff, seed, variant)
            })
            .collect();
        median(&v).unwrap()
    };
    let k: Vec<f64> = [2, 5, 20].iter().map(|&s| med(runs, s, 1.0)).collect();
    let eta: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&e| med(runs, 5, e)).collect();
    let k_ok = k[1] > k[0] && k[1] >= k[2];
    let eta_ok = eta[1] >= eta[0] && eta[1] >= eta[2];
    Verdict::new(
        k_ok && eta_ok,
        format!(
            "median final-third reward with latency coupling: K=2 {:.3}, K=5 {:.3}, K=20 {:.3}; eta=0.5 {:.3}, eta=1 {:.3}, eta=2 {:.3}",
            k[0], k[1], k[2], eta[0], eta[1], eta[2]
        ),
    )
}

// ---------------------------------------------------------------- C9, C10

fn c9_latency(runs: &mut Runs) -> Verdict {
    let lat = &runs.get("lab", ProviderKind::XDiff, 1, Variant::default()).act_latencies_ms;
    let p50 = median(lat).unwrap_or(f64::INFINITY);
    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = sorted.get(sorted.len() * 95 / 100).copied().unwrap_or(f64::NAN);
    Verdict::new(p50 < 50.0, format!("act() over {} calls on lab, K=5: p50 {p50:.2} ms, p95 {p95:.2} ms (p50 < 50)", lat.len()))
}

fn c10_determinism(runs: &mut Runs, conserved_elsewhere: bool) -> Verdict {
    let mut identical = true;
    for (preset, provider, seed) in [("lab", ProviderKind::XDiff, 2), ("building", ProviderKind::Ddqn, 4), ("lab", ProviderKind::Csrs, 3)] {
        let mut spec = RunSpec::new(Scenario::preset(preset).unwrap(), provider, seed, runs.slots.min(200));
        spec.latency_coupling = true;
        let a = experiment::run(&spec).unwrap();
        let b = experiment::run(&spec).unwrap();
        identical &= a.trace_csv().unwrap() == b.trace_csv().unwrap()
            && a.metrics_csv().unwrap() == b.metrics_csv().unwrap()
            && a.summary_json().unwrap() == b.summary_json().unwrap()
            && a.checkpoint == b.checkpoint;
        runs.conserved &= a.summary.bytes_conserved && b.summary.bytes_conserved;
    }
    let conserved = runs.conserved && conserved_elsewhere;
    Verdict::new(
        identical && conserved,
        format!("repeated runs byte-identical: {identical}; bytes conserved at every slot of all {} runs: {conserved}", runs.cache.len() + 6),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("XDIFF_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().trim_start_matches('C').parse().ok()).collect());
    let slots = std::env::var("XDIFF_ACCEPTANCE_SLOTS").ok().and_then(|v| v.parse().ok()).unwrap_or(FULL_SLOTS);
    if slots != FULL_SLOTS {
        println!("acceptance: REDUCED protocol, {slots} slots per run instead of {FULL_SLOTS}");
    }
    let mut runs = Runs { slots, cache: BTreeMap::new(), conserved: true };
    let mut conserved = true;
    let criteria: [(u32, &str); 10] = [
        (1, "gradient integrity"),
        (2, "diffusion correctness"),
        (3, "toy bandit multimodality"),
        (4, "two-cell coupling"),
        (5, "soft vs hard policy"),
        (6, "ablation ordering"),
        (7, "baseline comparison"),
        (8, "hyperparameter sweep shape"),
        (9, "inference latency"),
        (10, "determinism and conservation"),
    ];
    let mut failed = 0;
    for (id, name) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let verdict = match id {
            1 => c1_gradients(),
            2 => c2_diffusion(),
            3 => c3_bandit(),
            4 => c4_two_cell(&mut conserved),
            5 => c5_soft_vs_hard(&mut runs),
            6 => c6_ablations(&mut runs),
            7 => c7_baselines(&mut runs),
            8 => c8_sweep(&mut runs),
            9 => c9_latency(&mut runs),
            _ => c10_determinism(&mut runs, conserved),
        };
        failed += usize::from(!verdict.pass);
        println!(
            "C{id} {} {name}: {} [{:.0} s]",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
}
