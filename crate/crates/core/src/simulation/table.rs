use serde::{Deserialize, Serialize};

use super::experiment::{EffectSummary, ExperimentResult, McCell};
use crate::error::{GmedError, Result};
use crate::json::format_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            _ => Err(GmedError::InvalidInput(format!("unknown format `{s}`"))),
        }
    }
}

/// Three significant digits, printed fixed or scientific, whichever is
/// shorter (fixed on ties).
pub fn signif3(x: f64) -> String {
    if !x.is_finite() {
        return "NA".to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.2e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let mantissa = trim_zeros(mantissa);
    let sci = format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    let decimals = (2 - exp).max(0) as usize;
    let rounded: f64 = format!("{mantissa}e{exp}").parse().expect("valid float");
    let fixed = trim_zeros(&format!("{rounded:.decimals$}"));
    if fixed.len() <= sci.len() {
        fixed
    } else {
        sci
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// `value(se)` in three significant digits.
pub fn cell(c: &McCell) -> String {
    format!("{}({})", signif3(c.value), signif3(c.se))
}

const CSV_HEADER: &str = "kind,name,alpha,estimand,quantity,value,se";

fn effect_rows(out: &mut Vec<[String; 7]>, name: &str, estimand: &str, e: &EffectSummary) {
    let mut push = |q: &str, c: &McCell| {
        out.push([
            "estimator".into(),
            name.into(),
            String::new(),
            estimand.into(),
            q.into(),
            format_f64(c.value),
            format_f64(c.se),
        ])
    };
    push("truth", &McCell { value: e.truth, se: 0.0 });
    push("bias", &e.bias);
    push("variance", &e.variance);
    push("theory-variance", &e.theory_variance);
    if let Some(b) = &e.bootstrap_variance {
        push("bootstrap-variance", b);
    }
}

fn csv(result: &ExperimentResult) -> String {
    let mut rows: Vec<[String; 7]> = Vec::new();
    for s in &result.estimators {
        effect_rows(&mut rows, s.estimator.label(), "nide", &s.nide);
        effect_rows(&mut rows, s.estimator.label(), "nde", &s.nde);
        rows.push(["estimator".into(), s.estimator.label().into(), String::new(), String::new(), "failures".into(), s.failures.to_string(), String::new()]);
    }
    for t in &result.tests {
        let alpha = format_f64(t.alpha);
        rows.push(["test".into(), t.method.label().into(), alpha.clone(), String::new(), "rejection-rate".into(), format_f64(t.rejection_rate.value), format_f64(t.rejection_rate.se)]);
        rows.push(["test".into(), t.method.label().into(), alpha, String::new(), "failures".into(), t.failures.to_string(), String::new()]);
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn markdown(result: &ExperimentResult) -> String {
    let mut out = String::new();
    out.push_str("| estimator | estimand | truth | bias | variance | theory variance | bootstrap variance | failures |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for s in &result.estimators {
        for (name, e) in [("NIDE", &s.nide), ("NDE", &s.nde)] {
            let boot = e.bootstrap_variance.as_ref().map(cell).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                s.estimator.label(),
                name,
                signif3(e.truth),
                cell(&e.bias),
                cell(&e.variance),
                cell(&e.theory_variance),
                boot,
                s.failures
            ));
        }
    }
    if !result.tests.is_empty() {
        out.push('\n');
        out.push_str(&format!("| test | alpha | rejection rate (level {}) | failures |\n", signif3(result.level)));
        out.push_str("|---|---|---|---|\n");
        for t in &result.tests {
            out.push_str(&format!("| {} | {} | {} | {} |\n", t.method.label(), signif3(t.alpha), cell(&t.rejection_rate), t.failures));
        }
    }
    out
}

/// Serialises every cell of `result` with its Monte Carlo standard error.
pub fn emit_table(result: &ExperimentResult, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => csv(result),
        TableFormat::Markdown => markdown(result),
        TableFormat::Json => {
            let mut value = serde_json::to_value(result).expect("result serialises");
            if let serde_json::Value::Object(map) = &mut value {
                map.insert("schema".into(), serde_json::Value::String(crate::SCHEMA.into()));
            }
            let mut s = crate::json::value_to_string(&value);
            s.push('\n');
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::TargetParams;
    use crate::simulation::{DgpSpec, Process};

    #[test]
    fn supplementary_cell_convention() {
        assert_eq!(cell(&McCell { value: 0.843, se: 0.0104 }), "0.843(0.0104)");
        assert_eq!(cell(&McCell { value: -0.00136, se: 0.00221 }), "-0.00136(0.00221)");
        assert_eq!(cell(&McCell { value: 4.85, se: 0.00996 }), "4.85(0.00996)");
        assert_eq!(signif3(0.000258), "0.000258");
        assert_eq!(signif3(1.234e-5), "1.23e-05");
        assert_eq!(signif3(12345.0), "12300");
        assert_eq!(signif3(0.86949), "0.869");
        assert_eq!(signif3(2.0), "2");
    }

    fn empty() -> ExperimentResult {
        ExperimentResult {
            spec: DgpSpec::new(Process::A, TargetParams::new(0.0, 0.0, 0.0), 100, 1),
            replicates: 100,
            level: 0.05,
            estimators: vec![],
            tests: vec![],
            flags: vec![],
        }
    }

    #[test]
    fn empty_result_is_header_only() {
        let r = empty();
        assert_eq!(emit_table(&r, TableFormat::Csv), format!("{CSV_HEADER}\n"));
        assert_eq!(emit_table(&r, TableFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let text = emit_table(&empty(), TableFormat::Json);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(format!("{}\n", crate::json::value_to_string(&parsed)), text);
    }
}
