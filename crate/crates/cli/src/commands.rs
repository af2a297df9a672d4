use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use effq_core::chain::{
    build_extended_chain_with, coupling_experiment, epsilon_kappa, lemma2_bound, random_extended_state,
    state_action_marginal, stationarity_residual, stationary_distribution_with, CouplingConfig, CouplingStart,
    ExtendedState, MismatchBound, MainChain, MarginalMode, sample_extended_state,
};
use effq_core::dynamics::{softmax_response, InitialState, RunConfig, RunState, TRAJECTORY_HEADER};
use effq_core::experiment::{run_experiment, seed_range, ConvergenceReport, ExperimentConfig};
use effq_core::game::{random_game, RandomGameParams};
use effq_core::solver::{greedy_profile, solve_q_star};
use effq_core::{Exec, QTable, Schedule, FORMAT_VERSION};
use serde::Serialize;

use crate::args::{ChainArgs, CoupleArgs, GenArgs, MarginalArg, ReportArgs, RunArgs, SolveArgs};
use crate::util::{
    create_dir, create_file, describe_joint, finish, io_error, load_game, load_q, q_file, write_json, CliError, CliResult,
};

pub fn gen(a: GenArgs) -> CliResult {
    let actions_per_agent = a.actions_per_agent.unwrap_or_else(|| vec![a.actions; a.agents]);
    let mut params = RandomGameParams::uniform(actions_per_agent.len(), a.states, 1, a.seed);
    params.actions_per_agent = actions_per_agent;
    params.gamma = a.gamma;
    params.reward_range = (a.reward_low, a.reward_high);
    if let Some(p) = a.min_prob {
        params.min_transition_prob = p;
    }
    let game = random_game(&params)?;
    game.save(&a.out)?;
    println!("wrote {}", a.out.display());
    println!(
        "states {}, agents {}, joint actions {}, gamma {}, min transition prob {}",
        game.num_states(),
        game.num_agents(),
        game.num_joint_actions(),
        game.gamma(),
        game.min_transition_prob()
    );
    println!("validation: {}", game.validate());
    Ok(())
}

pub fn solve(a: SolveArgs) -> CliResult {
    let game = load_game(&a.game)?;
    let res = solve_q_star(&game, a.tol, a.max_iter)?;
    let greedy = greedy_profile(&res.q_star);
    let mut file = q_file(&res.q_star);
    file.iterations = Some(res.iterations);
    file.final_residual = Some(res.final_residual);
    file.greedy = Some(greedy.clone());
    write_json(&a.out, &file)?;
    println!("iterations {}, final residual {:e}", res.iterations, res.final_residual);
    for (s, g) in greedy.iter().enumerate() {
        println!("state {s}: Q* = {:?}, greedy {}", res.q_star.row(s), describe_joint(&game, *g));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn run(a: RunArgs) -> CliResult {
    let game = load_game(&a.game)?;
    let schedule = Schedule::parse(&a.schedule)?;
    let q_star = match (a.no_compare, &a.qstar) {
        (true, _) => None,
        (false, Some(path)) => Some(load_q(path, &game)?),
        (false, None) => {
            return Err(CliError::new(
                "missing_qstar",
                "bound comparison needs --qstar <file> (or pass --no-compare)",
            ))
        }
    };
    let mut run_cfg = RunConfig::new(schedule, a.tau, a.stages, a.seed);
    run_cfg.log_stride = a.stride;
    if let Some(s) = a.initial_state {
        run_cfg.initial_state = InitialState::Fixed(s);
    }
    let mut cfg = ExperimentConfig::new(run_cfg, seed_range(a.seed, a.seeds));
    cfg.tail_frac = a.tail_frac;
    cfg.slack = a.slack;
    let (report, runs) = run_experiment(&game, &cfg, q_star.as_ref(), Exec::default())?;

    create_dir(&a.out)?;
    let merged_path = a.out.join("trajectory.csv");
    let mut merged = create_file(&merged_path)?;
    writeln!(merged, "seed,{TRAJECTORY_HEADER}").map_err(|e| io_error(&merged_path, e))?;
    for (seed, _, traj) in &runs {
        let mut bytes = Vec::new();
        traj.write_csv(&mut bytes).map_err(|e| io_error(&merged_path, e))?;
        let path = a.out.join(format!("trajectory_seed{seed}.csv"));
        fs::write(&path, &bytes).map_err(|e| io_error(&path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        for line in text.lines().skip(1) {
            writeln!(merged, "{seed},{line}").map_err(|e| io_error(&merged_path, e))?;
        }
    }
    finish(&merged_path, merged)?;
    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;

    println!("status {}, bound {:.6}", report.status, report.bound);
    if let (Some(agg), Some(threshold)) = (&report.aggregate, report.threshold()) {
        println!(
            "median tail max error {:.6} (threshold {:.6}), median tail optimal play {:.4}, pass {}",
            agg.tail_max_error.median,
            threshold,
            agg.tail_opt_play_fraction.median,
            report.pass.unwrap_or(false)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct StateMarginal {
    state: usize,
    marginal: Vec<f64>,
    softmax: Vec<f64>,
    l1_gap: f64,
}

#[derive(Serialize)]
struct ChainReport {
    spec_version: &'static str,
    extended_states: usize,
    nonzeros: usize,
    tau: f64,
    marginal: &'static str,
    stationarity_residual: f64,
    states: Vec<StateMarginal>,
    max_l1_gap: f64,
}

pub fn chain(a: ChainArgs) -> CliResult {
    let game = load_game(&a.game)?;
    let q = match &a.q {
        Some(path) => load_q(path, &game)?,
        None => QTable::zeros_like(&game),
    };
    let exec = Exec::default();
    let chain = build_extended_chain_with(&game, &q, a.tau, a.budget, exec)?;
    let pi = stationary_distribution_with(&chain.matrix, a.tol, a.max_iter, exec)?;
    let (mode, mode_name) = match a.marginal {
        MarginalArg::Conditional => (MarginalMode::Conditional, "conditional"),
        MarginalArg::Joint => (MarginalMode::Joint, "joint"),
    };
    let mut states = Vec::with_capacity(game.num_states());
    for s in 0..game.num_states() {
        let marginal = state_action_marginal(&chain.space, &pi, s, mode)?;
        let softmax = softmax_response(q.row(s), a.tau);
        let l1_gap = marginal.iter().zip(&softmax).map(|(x, y)| (x - y).abs()).sum();
        println!("state {s}: L1 gap to softmax {l1_gap:e}");
        states.push(StateMarginal {
            state: s,
            marginal,
            softmax,
            l1_gap,
        });
    }
    let report = ChainReport {
        spec_version: FORMAT_VERSION,
        extended_states: chain.size(),
        nonzeros: chain.matrix.nnz(),
        tau: a.tau,
        marginal: mode_name,
        stationarity_residual: stationarity_residual(&chain.matrix, &pi),
        max_l1_gap: states.iter().map(|s| s.l1_gap).fold(0.0, f64::max),
        states,
    };
    write_json(&a.out, &report)?;
    if let Some(path) = &a.dist_out {
        let mut w = create_file(path)?;
        let mut body = String::from("index,state,profiles,prob\n");
        for (idx, p) in pi.iter().enumerate() {
            let ws = chain.space.decode(idx);
            let profiles: Vec<String> = ws.profiles.iter().map(ToString::to_string).collect();
            body.push_str(&format!("{idx},{},{},{p}\n", ws.state, profiles.join(";")));
        }
        w.write_all(body.as_bytes()).map_err(|e| io_error(path, e))?;
        finish(path, w)?;
    }
    println!("|W| = {}, max L1 gap {:e}, wrote {}", report.extended_states, report.max_l1_gap, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct BlockRow {
    m: usize,
    /// Stage of the block with the largest mismatch rate.
    t: usize,
    empirical: f64,
    three_sigma: f64,
    /// `(1 - eps^kappa lambda^kappa)^m`.
    envelope: f64,
    three_sigma_at_envelope: f64,
    mismatch_bound: MismatchBound,
}

#[derive(Serialize)]
struct CoupleReport {
    spec_version: &'static str,
    mode: &'static str,
    pairs: usize,
    length: usize,
    kappa: usize,
    q_bound: f64,
    epsilon: f64,
    lambda: f64,
    max_step_tv: f64,
    epoch_start: u64,
    blocks: Vec<BlockRow>,
}

pub fn couple(a: CoupleArgs) -> CliResult {
    let game = load_game(&a.game)?;
    if a.blocks == 0 {
        return Err(CliError::new("invalid_argument", "--blocks must be at least 1"));
    }
    let seed = a.seed;
    let mode = if a.freeze_both {
        "freeze-both"
    } else if a.beta_zero {
        "beta-zero"
    } else {
        "live"
    };

    let (frozen_q, main, epoch_start, q_bound, common): (QTable, MainChain, u64, f64, Option<ExtendedState>) = match mode {
        "live" => {
            if a.epoch_length == 0 {
                return Err(CliError::new("invalid_argument", "--epoch-length must be at least 1"));
            }
            let schedule = Schedule::parse(&a.schedule)?;
            let start = a.epoch * a.epoch_length as u64;
            let mut cfg = RunConfig::new(schedule.clone(), a.tau, start, seed);
            cfg.log_stride = u64::MAX;
            let mut st = RunState::initial(&game, &cfg)?;
            for _ in 0..start {
                effq_core::dynamics::step(&mut st, &game, &cfg)?;
            }
            let w = ExtendedState {
                state: st.state,
                profiles: st.profiles.clone(),
            };
            (st.q, MainChain::Live(schedule), start, game.q_bound(), Some(w))
        }
        _ => {
            let q = match &a.q {
                Some(path) => load_q(path, &game)?,
                None => QTable::zeros_like(&game),
            };
            let main = if a.beta_zero {
                MainChain::Live(Schedule::constant(0.0)?)
            } else {
                MainChain::Frozen
            };
            let bound = q.sup_norm();
            (q, main, 0, bound, None)
        }
    };

    let (epsilon, kappa) = epsilon_kappa(&game, q_bound, a.tau)?;
    let cfg = CouplingConfig {
        tau: a.tau,
        epoch_start,
        length: a.blocks * kappa,
        kappa,
        main,
    };
    // Frozen pairs start the fictional chain in its stationary regime.
    let stationary = if a.freeze_both {
        let chain = build_extended_chain_with(&game, &frozen_q, a.tau, effq_core::chain::DEFAULT_BUDGET, Exec::default())?;
        let pi = stationary_distribution_with(&chain.matrix, 1e-13, 10_000_000, Exec::default())?;
        Some((chain.space, pi))
    } else {
        None
    };
    let g = &game;
    let (summary, kept) = coupling_experiment(
        &game,
        &frozen_q,
        &cfg,
        a.pairs,
        seed,
        a.keep,
        |rng| match &common {
            Some(w) => CouplingStart::shared(w.clone()),
            None => match &stationary {
                Some((space, pi)) => CouplingStart {
                    main: random_extended_state(g, rng),
                    fictional: sample_extended_state(space, pi, rng),
                },
                None => CouplingStart::shared(random_extended_state(g, rng)),
            },
        },
        Exec::default(),
    )?;

    let lambda = 1.0 - summary.max_step_tv;
    let n = summary.pairs as f64;
    let blocks: Vec<BlockRow> = summary
        .blocks()
        .into_iter()
        .take(a.blocks)
        .map(|b| {
            let envelope = (1.0 - (epsilon * lambda).powi(kappa as i32)).powi(b.m as i32);
            BlockRow {
                m: b.m,
                t: b.t,
                empirical: b.rate,
                three_sigma: b.three_sigma,
                envelope,
                three_sigma_at_envelope: 3.0 * (envelope * (1.0 - envelope) / n).sqrt(),
                mismatch_bound: lemma2_bound(epsilon, lambda, kappa, b.m as u64),
            }
        })
        .collect();

    create_dir(&a.out)?;
    for (i, r) in kept.iter().enumerate() {
        let path = a.out.join(format!("coupling_pair{i}.csv"));
        let mut body = String::from("t,m_epoch,matched\n");
        for (t, &m) in r.matched.iter().enumerate() {
            body.push_str(&format!("{t},{},{}\n", r.m_epoch(t), u8::from(m)));
        }
        fs::write(&path, body).map_err(|e| io_error(&path, e))?;
    }
    let curve_path = a.out.join("mismatch.csv");
    let mut body = String::from("t,m_epoch,mismatch_rate\n");
    for (t, rate) in summary.mismatch_rate.iter().enumerate() {
        body.push_str(&format!("{t},{},{rate}\n", t / kappa));
    }
    fs::write(&curve_path, body).map_err(|e| io_error(&curve_path, e))?;

    let report = CoupleReport {
        spec_version: FORMAT_VERSION,
        mode,
        pairs: summary.pairs,
        length: cfg.length,
        kappa,
        q_bound,
        epsilon,
        lambda,
        max_step_tv: summary.max_step_tv,
        epoch_start,
        blocks,
    };
    write_json(&a.out.join("summary.json"), &report)?;
    let final_rate = summary.mismatch_rate.last().copied().unwrap_or(0.0);
    println!(
        "mode {mode}, kappa {kappa}, epsilon {epsilon:e}, lambda {lambda}, final mismatch rate {final_rate}, wrote {}",
        a.out.display()
    );
    Ok(())
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_error(dir, err)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn report(a: ReportArgs) -> CliResult {
    let mut reports: Vec<(PathBuf, ConvergenceReport)> = Vec::new();
    for input in &a.inputs {
        if input.is_dir() {
            let mut found = Vec::new();
            collect_json(input, &mut found)?;
            for path in found {
                let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                // Directories may hold other JSON artifacts; only reports count.
                if let Ok(r) = serde_json::from_str::<ConvergenceReport>(&text) {
                    reports.push((path, r));
                }
            }
        } else {
            let text = fs::read_to_string(input).map_err(|e| io_error(input, e))?;
            let r = serde_json::from_str(&text)
                .map_err(|e| CliError::new("parse", format!("{}: not a convergence report: {e}", input.display())))?;
            reports.push((input.clone(), r));
        }
    }
    if reports.is_empty() {
        return Err(CliError::new("no_inputs", "no convergence reports found in the given inputs"));
    }

    let header = "source,tau,gamma,num_joint_actions,stages,seeds,bound,slack,threshold,\
median_tail_max_error,median_final_error,median_tail_opt_play,contraction_ratio,status,pass";
    let mut body = format!("{header}\n");
    for (path, r) in &reports {
        let agg = r.aggregate.as_ref();
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            path.display(),
            r.tau,
            r.gamma,
            r.num_joint_actions,
            r.stages,
            r.per_seed.len(),
            r.bound,
            opt(r.slack),
            opt(r.threshold()),
            opt(agg.map(|g| g.tail_max_error.median)),
            opt(agg.map(|g| g.final_error.median)),
            opt(agg.map(|g| g.tail_opt_play_fraction.median)),
            opt(r.contraction_ratio),
            r.status,
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
        ));
    }
    fs::write(&a.out, &body).map_err(|e| io_error(&a.out, e))?;
    print!("{body}");
    Ok(())
}
