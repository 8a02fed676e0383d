use std::path::Path;

use pdmp_core::average::{
    classify_residual, drift_condition_check, optimality_residual, vanishing_sweep, McOptions,
    SweepOptions,
};
use pdmp_core::discounted::{extract_policy, feedback_policy, fixed_point_residual, value_iteration};
use pdmp_core::grid::{Grid, ValueField};
use pdmp_core::io::{events_csv, policy_csv, read_policy_csv, read_value_csv, value_csv};
use pdmp_core::model::{validate_assumptions, Action, AssumptionCheck, ModelSpec, ValidationReport};
use pdmp_core::operators::apply_bellman;
use pdmp_core::simulate::{
    mc_average_cost, mc_discounted_cost, sample_trajectory, ControlStrategy, McEstimate,
};
use pdmp_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::summary::{read_summary, write_file, Summary};
use crate::{
    AverageArgs, Command, DiscountedArgs, Failure, ModelArgs, SimulateArgs, ValidateArgs,
    VerifyArgs, EXIT_CHECK, EXIT_NUMERIC, EXIT_OK,
};

pub fn dispatch(cmd: &Command) -> Result<u8, Failure> {
    match cmd {
        Command::Validate(a) => validate(a),
        Command::SolveDiscounted(a) => solve_discounted(a),
        Command::SolveAverage(a) => solve_average(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
    }
}

fn read_model_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn parse_model(bytes: &[u8], args: &ModelArgs) -> Result<ModelSpec, Error> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let mut m = ModelSpec::load(text)?;
    if let Some(keep) = &args.actions {
        m = m.restrict_actions(keep)?;
    }
    let mut p = m.params;
    if let Some(d) = args.delta {
        p.delta = d;
    }
    if let Some(d) = args.delta_quad {
        p.delta_quad = d;
    }
    if let Some(e) = args.eps_tail {
        p.eps_tail = e;
    }
    m.with_params(p)
}

fn load_model(args: &ModelArgs) -> Result<(ModelSpec, Vec<u8>), Failure> {
    let bytes = read_model_bytes(&args.model)?;
    Ok((parse_model(&bytes, args)?, bytes))
}

fn model_inputs(args: &ModelArgs) -> Value {
    json!({
        "model": args.model.display().to_string(),
        "actions": args.actions,
        "delta": args.delta,
        "delta_quad": args.delta_quad,
        "eps_tail": args.eps_tail,
    })
}

fn grid_for(m: &ModelSpec, n: usize) -> Result<Grid, Failure> {
    if n == 0 {
        return Err(Failure::input("--grid must be at least 1"));
    }
    Ok(Grid::uniform(&m.domain, n)?)
}

fn validate(a: &ValidateArgs) -> Result<u8, Failure> {
    let bytes = read_model_bytes(&a.model.model)?;
    let summary = Summary::new(
        "validate",
        &bytes,
        json!({ "model": model_inputs(&a.model), "grid": a.grid }),
    );
    let report = match parse_model(&bytes, &a.model) {
        Ok(m) => {
            let grid = grid_for(&m, a.grid)?;
            validate_assumptions(&m, &grid, m.params.t_cert)
        }
        // Well-formed configs whose primitives violate an invariant are
        // reported, not rejected.
        Err(Error::KernelMass { mass }) => load_failure(
            "kernel_mass",
            "post-jump kernel is a probability measure",
            mass,
            format!("kernel mass {mass} differs from 1"),
        ),
        Err(e @ Error::ParameterRange { .. }) => {
            load_failure("parameter_range", "primitive parameters in range", f64::NAN, e.to_string())
        }
        Err(e) => return Err(e.into()),
    };
    for c in &report.checks {
        println!(
            "{} {} measured={} threshold={}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            c.measured,
            c.threshold.map_or("-".to_string(), |t| t.to_string())
        );
    }
    write_file(&a.out, "validation.json", &serde_json::to_string_pretty(&report)?)?;
    summary.write(
        &a.out,
        json!({ "all_pass": report.all_pass(), "failed": report.failed().map(|c| c.id).collect::<Vec<_>>() }),
        &["validation.json"],
    )?;
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_CHECK })
}

fn load_failure(id: &'static str, description: &'static str, measured: f64, detail: String) -> ValidationReport {
    ValidationReport {
        model: String::new(),
        checks: vec![AssumptionCheck {
            id,
            description,
            pass: false,
            measured,
            threshold: None,
            detail,
        }],
    }
}

fn reference_node(grid: &Grid, x0: Option<f64>) -> f64 {
    match x0 {
        Some(x) => x,
        None => grid.nodes()[grid.midpoint_index()],
    }
}

fn solve_discounted(a: &DiscountedArgs) -> Result<u8, Failure> {
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(Failure::input("α must be positive; use solve-average"));
    }
    if !(a.tol > 0.0) {
        return Err(Failure::input("--tol must be positive"));
    }
    let (m, bytes) = load_model(&a.model)?;
    let summary = Summary::new(
        "solve-discounted",
        &bytes,
        json!({
            "model": model_inputs(&a.model),
            "alpha": a.alpha,
            "grid": a.grid,
            "tol": a.tol,
            "max_iter": a.max_iter,
            "x0": a.x0,
        }),
    );
    let grid = grid_for(&m, a.grid)?;
    let sol = value_iteration(&m, &grid, a.alpha, a.tol, a.max_iter)?;
    let x0 = reference_node(&grid, a.x0);
    let value_x0 = sol.value.eval(x0)?;
    write_file(&a.out, "value.csv", &value_csv(&sol.value))?;
    write_file(&a.out, "policy.csv", &policy_csv(&sol.policy))?;
    let min_increment = sol.min_increments.iter().copied().fold(f64::INFINITY, f64::min);
    summary.write(
        &a.out,
        json!({
            "alpha": a.alpha,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "tol": a.tol,
            "min_increment": min_increment,
            "x0": x0,
            "value_x0": value_x0,
        }),
        &["value.csv", "policy.csv"],
    )?;
    println!(
        "alpha={} iterations={} residual={:e} J({x0})={value_x0}",
        a.alpha, sol.iterations, sol.residual
    );
    Ok(EXIT_OK)
}

fn solve_average(a: &AverageArgs) -> Result<u8, Failure> {
    let (m, bytes) = load_model(&a.model)?;
    let mut opts = SweepOptions {
        x0: a.x0,
        tol: a.tol,
        max_iter: a.max_iter,
        mc: (a.reps > 0).then_some(McOptions {
            horizon: a.horizon,
            n_rep: a.reps,
            seed: a.seed,
        }),
        ..SweepOptions::default()
    };
    if let Some(s) = &a.alpha_schedule {
        opts.schedule = s.clone();
    }
    let summary = Summary::new(
        "solve-average",
        &bytes,
        json!({
            "model": model_inputs(&a.model),
            "grid": a.grid,
            "alpha_schedule": opts.schedule,
            "x0": a.x0,
            "tol": a.tol,
            "max_iter": a.max_iter,
            "acoi_tol": a.acoi_tol,
            "seed": a.seed,
            "reps": a.reps,
            "horizon": a.horizon,
        }),
    );
    let grid = grid_for(&m, a.grid)?;
    let sol = match vanishing_sweep(&m, &grid, &opts) {
        Ok(sol) => sol,
        Err(Error::SweepUnbounded { alpha, report }) => {
            eprintln!(
                "error: relative values unbounded along the discount schedule (stopped at alpha = {alpha}); \
                 the model has no bounded bias from the chosen reference state"
            );
            summary.write(
                &a.out,
                json!({
                    "error": "sweep_unbounded",
                    "alpha": alpha,
                    "boundedness": { "c": report.c, "k_h": report.k_h, "blow_up": report.blow_up },
                }),
                &[],
            )?;
            return Ok(EXIT_NUMERIC);
        }
        Err(e) => return Err(e.into()),
    };
    let class = classify_residual(&sol.residual_field, a.acoi_tol);
    write_file(&a.out, "h.csv", &value_csv(&sol.h))?;
    write_file(&a.out, "w.csv", &value_csv(&sol.w))?;
    write_file(&a.out, "residual.csv", &value_csv(&sol.residual_field))?;
    write_file(&a.out, "policy.csv", &policy_csv(&sol.policy))?;
    summary.write(
        &a.out,
        json!({
            "rho": sol.rho,
            "x0": sol.x0,
            "residual_max": class.max,
            "residual_min": class.min,
            "acoi_tol": a.acoi_tol,
            "acoi": class.inequality,
            "spread": sol.spread,
            "boundedness": {
                "c": sol.boundedness.c,
                "k_h": sol.boundedness.k_h,
                "blow_up": sol.boundedness.blow_up,
            },
            "sweep_trace": sol.sweep_trace,
            "mc_check": sol.mc_check,
        }),
        &["h.csv", "w.csv", "residual.csv", "policy.csv"],
    )?;
    println!(
        "rho={} residual_max={:e} residual_min={:e}",
        sol.rho, class.max, class.min
    );
    if let Some(mc) = sol.mc_check {
        println!("simulated average cost {} ± {}", mc.mean, mc.stderr);
    }
    Ok(if class.inequality && !sol.boundedness.blow_up {
        EXIT_OK
    } else {
        EXIT_CHECK
    })
}

fn simulate(a: &SimulateArgs) -> Result<u8, Failure> {
    let (m, bytes) = load_model(&a.model)?;
    let strategy = match (&a.policy, a.action) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            ControlStrategy::Feedback(read_policy_csv(&text)?)
        }
        (None, Some(i)) if i < m.action_count() => ControlStrategy::constant(Action(i)),
        (None, Some(i)) => return Err(Failure::input(format!("no action {i}"))),
        (None, None) => return Err(Failure::input("one of --policy or --action is required")),
    };
    let x0 = a.x0.unwrap_or(0.5 * (m.domain.lower + m.domain.upper));
    let summary = Summary::new(
        "simulate",
        &bytes,
        json!({
            "model": model_inputs(&a.model),
            "policy": a.policy.as_ref().map(|p| p.display().to_string()),
            "action": a.action,
            "x0": x0,
            "horizon": a.horizon,
            "reps": a.reps,
            "seed": a.seed,
            "alpha": a.alpha,
        }),
    );
    let average = mc_average_cost(&m, x0, &strategy, a.horizon, a.reps, a.seed)?;
    let discounted = match a.alpha {
        Some(alpha) => Some(mc_discounted_cost(&m, x0, &strategy, alpha, a.reps, a.horizon, a.seed)?),
        None => None,
    };
    let mut artifacts = Vec::new();
    let trajectory = if a.trajectory {
        let t = sample_trajectory(&m, x0, &strategy, a.horizon, a.seed)?;
        write_file(&a.out, "events.csv", &events_csv(&t.events))?;
        artifacts.push("events.csv");
        Some(json!({
            "jumps": t.events.len(),
            "pstar": t.pstar,
            "running_cost": t.running_cost,
            "boundary_cost": t.boundary_cost,
            "final_state": t.final_state,
        }))
    } else {
        None
    };
    summary.write(
        &a.out,
        json!({ "average": average, "discounted": discounted, "trajectory": trajectory }),
        &artifacts,
    )?;
    println!("average cost {} ± {}", average.mean, average.stderr);
    if let Some(d) = discounted {
        println!("discounted cost {} ± {}", d.mean, d.stderr);
    }
    Ok(EXIT_OK)
}

/// One verification check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

fn check(name: &'static str, pass: bool, measured: f64, threshold: f64) -> Check {
    Check {
        name,
        pass,
        measured,
        threshold,
    }
}

fn read_csv(dir: &Path, name: &str) -> Result<String, Failure> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn number(v: &Value, key: &str) -> Result<f64, Failure> {
    v[key]
        .as_f64()
        .ok_or_else(|| Failure::input(format!("summary lacks numeric `{key}`")))
}

/// Model settings of the solve, overridden by explicit flags.
fn merged_model_args(a: &ModelArgs, recorded: &Value) -> ModelArgs {
    let rec = |k: &str| recorded[k].as_f64();
    ModelArgs {
        model: a.model.clone(),
        actions: a.actions.clone().or_else(|| {
            recorded["actions"]
                .as_array()
                .map(|v| v.iter().filter_map(|i| i.as_u64().map(|i| i as usize)).collect())
        }),
        delta: a.delta.or(rec("delta")),
        delta_quad: a.delta_quad.or(rec("delta_quad")),
        eps_tail: a.eps_tail.or(rec("eps_tail")),
    }
}

fn policy_gap(mc: &McEstimate, target: f64) -> f64 {
    (mc.mean - target).abs() - 3.0 * mc.stderr
}

fn verify(a: &VerifyArgs) -> Result<u8, Failure> {
    let doc = read_summary(&a.solution)?;
    let args = merged_model_args(&a.model, &doc["inputs"]["model"]);
    let (m, _) = load_model(&args)?;
    let results = &doc["results"];
    let checks = match doc["command"].as_str() {
        Some("solve-average") => verify_average(a, &m, results)?,
        Some("solve-discounted") => verify_discounted(a, &m, results)?,
        other => {
            return Err(Failure::input(format!(
                "{} is not a solution directory (command {other:?})",
                a.solution.display()
            )))
        }
    };
    for c in &checks {
        println!(
            "{} {} measured={:e} threshold={:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    let all = checks.iter().all(|c| c.pass);
    if let Some(out) = &a.out {
        write_file(
            out,
            "verify.json",
            &serde_json::to_string_pretty(&json!({ "pass": all, "checks": checks }))?,
        )?;
    }
    Ok(if all { EXIT_OK } else { EXIT_CHECK })
}

fn verify_average(a: &VerifyArgs, m: &ModelSpec, results: &Value) -> Result<Vec<Check>, Failure> {
    let rho = number(results, "rho")?;
    let x0 = number(results, "x0")?;
    let h = read_value_csv(&read_csv(&a.solution, "h.csv")?)?;
    let stored = read_policy_csv(&read_csv(&a.solution, "policy.csv")?)?;
    let grid = h.grid.clone();
    let mut checks = Vec::new();

    let residual = optimality_residual(m, &grid, rho, &h)?;
    let class = classify_residual(&residual, a.acoi_tol);
    checks.push(check("acoi_residual", class.max <= a.acoi_tol, class.max, a.acoi_tol));
    checks.push(check("acoe_residual", class.min >= -a.acoe_tol, class.min, -a.acoe_tol));
    let h0 = h.eval(x0)?;
    checks.push(check("normalization", h0 == 0.0, h0.abs(), 0.0));

    let w = apply_bellman(m, &grid, 0.0, rho, &h)?;
    let agreement = feedback_policy(m, &grid, &w, &h)?.agreement(&stored);
    checks.push(check("policy_selector", agreement >= 0.99, agreement, 0.99));

    let strategy = ControlStrategy::Feedback(stored);
    let mc = mc_average_cost(m, x0, &strategy, a.horizon, a.reps, a.seed)?;
    let gap = policy_gap(&mc, rho);
    checks.push(check("policy_cost", gap <= 1e-2, gap, 1e-2));

    // The Abelian bound holds in the limit; rho_k at large alpha may exceed it.
    let excess = rho - (mc.mean + 3.0 * mc.stderr);
    checks.push(check("abelian_bound", excess <= 1e-3, excess, 1e-3));

    let horizons = [a.horizon / 4.0, a.horizon / 2.0, a.horizon];
    let drift = drift_condition_check(m, &strategy, x0, &h, &horizons, a.reps, a.seed)?;
    let last = drift.rows.last().expect("three horizons");
    checks.push(check(
        "drift_condition",
        drift.vanishing,
        last.mean.abs(),
        drift.scale / last.horizon + 3.0 * last.stderr,
    ));
    Ok(checks)
}

fn verify_discounted(a: &VerifyArgs, m: &ModelSpec, results: &Value) -> Result<Vec<Check>, Failure> {
    let alpha = number(results, "alpha")?;
    let tol = number(results, "tol")?;
    let x0 = number(results, "x0")?;
    let j: ValueField = read_value_csv(&read_csv(&a.solution, "value.csv")?)?;
    let stored = read_policy_csv(&read_csv(&a.solution, "policy.csv")?)?;
    let grid = j.grid.clone();
    let mut checks = Vec::new();

    let r = fixed_point_residual(m, &grid, alpha, &j)?;
    let sup = r.above.max(r.below);
    checks.push(check("fixed_point_residual", sup <= tol, sup, tol));
    let agreement = extract_policy(m, &grid, &j)?.agreement(&stored);
    checks.push(check("policy_selector", agreement >= 0.99, agreement, 0.99));

    let strategy = ControlStrategy::Feedback(stored);
    let horizon = a.horizon.max(-m.params.eps_tail.ln() / alpha);
    let mc = mc_discounted_cost(m, x0, &strategy, alpha, a.reps, horizon, a.seed)?;
    let gap = policy_gap(&mc, j.eval(x0)?);
    checks.push(check("policy_cost", gap <= 1e-2, gap, 1e-2));
    Ok(checks)
}
