//! Text and CSV rendering of fit results.

use std::fmt::Write;

use crate::bootstrap::Inference;
use crate::io::preprocess::PreprocessReport;

/// One block per estimator with Est / ESE / LowerCI95 / UpperCI95 rows and
/// one column per coefficient.
pub fn render_fit(names: &[String], inf: &Inference) -> String {
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(10) + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<14}{:<11}", "", "");
    for n in names {
        let _ = write!(out, "{n:>width$}");
    }
    out.push('\n');
    for rep in inf.reports() {
        let lines: [(&str, Vec<f64>); 4] = [
            ("Est", rep.beta.iter().copied().collect()),
            ("ESE", rep.ese.clone()),
            ("LowerCI95", rep.ci95.iter().map(|c| c.0).collect()),
            ("UpperCI95", rep.ci95.iter().map(|c| c.1).collect()),
        ];
        for (k, (metric, values)) in lines.iter().enumerate() {
            let label = if k == 0 { rep.estimator.label() } else { "" };
            let _ = write!(out, "{label:<14}{metric:<11}");
            for v in values {
                let _ = write!(out, "{v:>width$.3}");
            }
            out.push('\n');
        }
    }
    if let Some(d) = &inf.eff.diagnostics {
        let _ = writeln!(
            out,
            "# efficient-score solver: {} iterations, |score| {:.2e}, {} step halvings",
            d.iterations, d.score_norm, d.damping_steps
        );
    }
    let gap: Vec<String> = inf.combined_ese_gap.iter().map(|g| format!("{g:.2e}")).collect();
    let _ = writeln!(out, "# combined ESE, Gram form minus replicate form: [{}]", gap.join(", "));
    if inf.ridge > 0.0 {
        let _ = writeln!(out, "# ridge {:.3e} added to Var(eff - ls)", inf.ridge);
    }
    out
}

/// `estimator,coef,est,ese,lower95,upper95` at full precision.
pub fn estimates_csv(names: &[String], inf: &Inference) -> String {
    let mut out = String::from("estimator,coef,est,ese,lower95,upper95\n");
    for rep in inf.reports() {
        for (j, name) in names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                rep.estimator.label(),
                name,
                rep.beta[j],
                rep.ese[j],
                rep.ci95[j].0,
                rep.ci95[j].1
            );
        }
    }
    out
}

pub fn render_preprocess(rep: &PreprocessReport) -> String {
    let mut out = format!("# rows read: {}, rows used: {}\n", rep.rows_read, rep.final_rows);
    for (rule, n) in &rep.excluded {
        let _ = writeln!(out, "# excluded ({rule}): {n}");
    }
    for c in &rep.columns {
        let _ = writeln!(
            out,
            "# {}{}: mean {:.4}, sd {:.4}",
            c.name,
            if c.log { " (log)" } else { "" },
            c.mean,
            c.sd
        );
    }
    out
}
