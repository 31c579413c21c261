//! CSV tables with a fixed header and 17 significant digits per float.

use std::io::{self, Write};

use crate::sim::{ProtocolResult, SweepRow, TwoStepResult};

/// Formats `x` with 17 significant digits in scientific notation.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn row<W: Write + ?Sized>(out: &mut W, cells: &[String]) -> io::Result<()> {
    writeln!(out, "{}", cells.join(","))
}

/// One line per repetition: `repetition,estimate`.
pub fn write_samples_csv<W: Write + ?Sized>(
    out: &mut W,
    result: &ProtocolResult,
) -> io::Result<()> {
    writeln!(out, "repetition,estimate")?;
    for (i, q) in result.samples.iter().enumerate() {
        row(out, &[i.to_string(), float(*q)])?;
    }
    Ok(())
}

/// Summary line of a protocol run, including the empirical/theoretical variance ratio.
pub fn write_summary_csv<W: Write + ?Sized>(
    out: &mut W,
    result: &ProtocolResult,
) -> io::Result<()> {
    writeln!(
        out,
        "repetitions,shots,truth,q_hat,bias_estimate,standard_error,empirical_variance,theoretical_variance,variance_ratio"
    )?;
    row(
        out,
        &[
            result.repetitions().to_string(),
            result.shots_used.to_string(),
            float(result.truth),
            float(result.q_hat),
            float(result.bias_estimate),
            float(result.standard_error()),
            float(result.empirical_variance),
            float(result.theoretical_variance),
            float(result.variance_ratio()),
        ],
    )
}

/// Per-repetition details of a two-step run.
pub fn write_two_step_csv<W: Write + ?Sized>(
    out: &mut W,
    result: &TwoStepResult,
) -> io::Result<()> {
    writeln!(
        out,
        "repetition,q_hat,bias,variance_estimate,theoretical_variance,phase,weight_scale"
    )?;
    for (i, r) in result.runs.iter().enumerate() {
        row(
            out,
            &[
                i.to_string(),
                float(r.q_hat),
                float(r.bias),
                float(r.variance_estimate),
                float(r.theoretical_variance),
                float(r.phase),
                float(r.weights.amax()),
            ],
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv<W: Write + ?Sized>(out: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(
        out,
        "t,t1,t2,mse,mse_raw,m1,m2,mse_mu_t2,mse_mu_t2_stage2,plateau,bias_estimate"
    )?;
    for r in rows {
        row(
            out,
            &[
                float(r.t),
                float(r.t1),
                float(r.t2),
                float(r.mse),
                float(r.mse_raw),
                float(r.m1),
                float(r.m2),
                float(r.scaled),
                float(r.scaled_t2),
                float(r.plateau),
                float(r.bias_estimate),
            ],
        )?;
    }
    Ok(())
}

pub fn write_history_csv<W: Write + ?Sized>(
    out: &mut W,
    history: &[(usize, f64)],
) -> io::Result<()> {
    writeln!(out, "iteration,best_u_prime")?;
    for (i, v) in history {
        row(out, &[i.to_string(), float(*v)])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(float(0.5), "5.0000000000000000e-1");
        assert_eq!(float(1.0 / 3.0), "3.3333333333333331e-1");
        let x = 0.1 + 0.2;
        assert_eq!(float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn history_table() {
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &[(0, 1.0), (1, 0.5)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,best_u_prime\n0,1.0000000000000000e0\n1,5.0000000000000000e-1\n"
        );
    }
}
