use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use fieldsense::applications::{build_problem, optimize_placement};
use fieldsense::estimation::{solve_bound, solve_dual, solve_protocol, unentangled_weights};
use fieldsense::report::{
    write_history_csv, write_samples_csv, write_summary_csv, write_sweep_csv, write_two_step_csv,
};
use fieldsense::sim::{
    loglog_slope, mse_convergence_sweep, simulate_ghz_linear, two_step_protocol, ProtocolResult,
};
use nalgebra::DVector;
use serde_json::json;

use crate::config::RunConfig;

/// Where reports and files go.
pub struct Outputs {
    pub dir: Option<PathBuf>,
    pub quiet: bool,
}

impl Outputs {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    /// Writes `name` into the output directory, if there is one.
    fn file(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(name);
        let file =
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = BufWriter::new(file);
        fill(&mut out)
            .and_then(|_| out.flush())
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.say(format!("wrote {}", path.display()));
        Ok(())
    }

    fn json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        self.file(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)
        })
    }
}

fn vector(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn solve(cfg: &RunConfig, out: &Outputs) -> Result<()> {
    let model = cfg.build_model()?;
    let p = build_problem(&model, &cfg.function, &cfg.theta_true)?;
    let bound = solve_bound(&p)?;
    let protocol = solve_protocol(&p)?;
    let dual = solve_dual(&p)?;
    let (w_unent, coeff_unent) = unentangled_weights(&p)?;
    let coeff_ent = protocol.u_prime * protocol.u_prime;

    out.say(format!(
        "sensors d = {}, parameters k = {}",
        p.sensors(),
        p.params()
    ));
    out.say(format!("u   = {:.12}", bound.u));
    out.say(format!("u'  = {:.12}", protocol.u_prime));
    out.say(format!("u'' = {:.12}", dual.u_dprime));
    out.say(format!("w0    = {}", vector(&protocol.w0)));
    out.say(format!("v0    = {}", vector(&dual.v0)));
    out.say(format!("beta0 = {}", vector(&bound.beta0)));
    out.say(format!("unentangled w = {}", vector(&w_unent)));
    out.say(format!(
        "MSE coefficient, entangled   u'^2  = {coeff_ent:.12}"
    ));
    out.say(format!(
        "MSE coefficient, unentangled |w|^2 = {coeff_unent:.12}"
    ));

    out.json(
        "solve.json",
        &json!({
            "u": bound.u,
            "u_prime": protocol.u_prime,
            "u_dprime": dual.u_dprime,
            "w0": protocol.w0.as_slice(),
            "v0": dual.v0.as_slice(),
            "beta0": bound.beta0.as_slice(),
            "unentangled_w": w_unent.as_slice(),
            "mse_coeff_entangled": coeff_ent,
            "mse_coeff_unentangled": coeff_unent,
        }),
    )
}

fn say_protocol(out: &Outputs, r: &ProtocolResult) {
    out.say(format!("repetitions          = {}", r.repetitions()));
    out.say(format!("truth                = {:.12}", r.truth));
    out.say(format!("mean estimate        = {:.12}", r.q_hat));
    out.say(format!("standard error       = {:.6e}", r.standard_error()));
    out.say(format!(
        "empirical variance   = {:.6e}",
        r.empirical_variance
    ));
    out.say(format!(
        "theoretical variance = {:.6e}",
        r.theoretical_variance
    ));
    out.say(format!("variance ratio       = {:.4}", r.variance_ratio()));
}

pub fn simulate(cfg: &RunConfig, out: &Outputs) -> Result<()> {
    let model = cfg.build_model()?;
    let plan = cfg.plan()?;
    if model.is_linear() {
        // Every supported target is linear in theta here: q = alpha . theta + q(0).
        let zero = vec![0.0; model.param_dim()];
        let p = build_problem(&model, &cfg.function, &cfg.theta_true)?;
        let w = solve_protocol(&p)?.w0;
        let f = model.field_vector(&cfg.theta_true)? - model.field_vector(&zero)?;
        let q0 = cfg.function.value(&model, &zero)?;
        let mut r = simulate_ghz_linear(&f, &w, plan)?;
        r.samples.iter_mut().for_each(|s| *s += q0);
        r.q_hat += q0;
        r.truth += q0;
        out.say("entangled linear protocol");
        say_protocol(out, &r);
        out.file("summary.csv", |o| write_summary_csv(o, &r))?;
        out.file("samples.csv", |o| write_samples_csv(o, &r))
    } else {
        let two = cfg.two_step();
        let r = two_step_protocol(
            &model,
            &cfg.function,
            &cfg.theta_true,
            two.p,
            plan,
            &two.options(),
        )?;
        out.say(format!(
            "two-step protocol, t1 = {:.6e}, t2 = {:.6e}",
            r.t1, r.t2
        ));
        say_protocol(out, &r.protocol);
        out.say(format!("M1 (variance)        = {:.6e}", r.m1));
        out.say(format!("M2 (squared bias)    = {:.6e}", r.m2));
        out.say(format!("MSE                  = {:.6e}", r.mse()));
        out.say(format!(
            "plateau 2u'^2 (even split) vs M mu t2^2 = {:.6e} vs {:.6e}",
            r.plateau(plan),
            r.mse() * plan.shots as f64 * r.t2 * r.t2
        ));
        out.file("summary.csv", |o| write_summary_csv(o, &r.protocol))?;
        out.file("two_step.csv", |o| write_two_step_csv(o, &r))
    }
}

pub fn sweep(cfg: &RunConfig, out: &Outputs) -> Result<()> {
    let model = cfg.build_model()?;
    let plan = cfg.plan()?;
    let two = cfg.two_step();
    if two.times.is_empty() {
        bail!("sweep needs `two_step.times`");
    }
    let rows = mse_convergence_sweep(
        &model,
        &cfg.function,
        &cfg.theta_true,
        &two.times,
        two.p,
        plan,
        &two.options(),
    )?;
    out.say(format!(
        "{:>12} {:>14} {:>14} {:>14} {:>14}",
        "t", "M", "M mu t^2", "M mu t2^2", "plateau"
    ));
    for r in &rows {
        out.say(format!(
            "{:>12.4e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            r.t, r.mse, r.scaled, r.scaled_t2, r.plateau
        ));
    }
    if rows.len() >= 2 {
        let t1: Vec<f64> = rows.iter().map(|r| r.t1).collect();
        let m2: Vec<f64> = rows.iter().map(|r| r.m2).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let m: Vec<f64> = rows.iter().map(|r| r.mse).collect();
        out.say(format!(
            "log-log slope of M vs t:   {:.3}",
            loglog_slope(&t, &m)
        ));
        out.say(format!(
            "log-log slope of M2 vs t1: {:.3}",
            loglog_slope(&t1, &m2)
        ));
    }
    out.file("sweep.csv", |o| write_sweep_csv(o, &rows))
}

pub fn place(cfg: &RunConfig, out: &Outputs) -> Result<()> {
    let model = cfg.build_model()?;
    let placement = cfg
        .placement
        .as_ref()
        .context("config has no `placement` section")?;
    let r = optimize_placement(&model, &cfg.function, &cfg.theta_true, &placement.options())?;
    out.say(format!(
        "best u' = {:.12} (restart {})",
        r.u_prime, r.restart
    ));
    for (i, p) in r.positions.iter().enumerate() {
        let coords: Vec<String> = p.iter().map(|x| format!("{x:.9}")).collect();
        out.say(format!("sensor {i}: ({})", coords.join(", ")));
    }
    if r.budget_exhausted {
        out.say("note: some restarts used their whole budget");
    }
    out.json(
        "placement.json",
        &json!({
            "u_prime": r.u_prime,
            "positions": r.positions,
            "restart": r.restart,
            "budget_exhausted": r.budget_exhausted,
        }),
    )?;
    out.file("history.csv", |o| write_history_csv(o, &r.history))
}
