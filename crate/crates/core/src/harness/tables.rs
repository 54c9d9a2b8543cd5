//! Markdown renderings of the model, mitigation, ablation and intersectional tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::stats::{CellKey, CellSummary, MeanStd, BASELINE};
use crate::regressors::ModelKind;

fn pm(m: &MeanStd) -> String {
    format!("{:.2} ± {:.2}", m.mean, m.std)
}

/// Model performance per split: MAE and R² as mean ± std.
pub fn model_table(
    models: &[ModelKind],
    splits: &[String],
    perf: &BTreeMap<(ModelKind, String), (MeanStd, MeanStd)>,
) -> String {
    let mut out = String::from("| Model |");
    for s in splits {
        let _ = write!(out, " {s} MAE | {s} R² |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|---:|".repeat(splits.len()));
    out.push('\n');
    for m in models {
        let _ = write!(out, "| {} |", m.short());
        for s in splits {
            match perf.get(&(*m, s.clone())) {
                Some((mae, r2)) => {
                    let _ = write!(out, " {} | {} |", pm(mae), pm(r2));
                }
                None => out.push_str(" n/a | n/a |"),
            }
        }
        out.push('\n');
    }
    out
}

/// ΔMAE per (feature, model) row and (split, mitigation) column; effective
/// mitigations are underlined.
pub fn mitigation_table(
    summaries: &[CellSummary],
    features: &[String],
    models: &[ModelKind],
    splits: &[String],
    mitigations: &[(String, String)],
) -> String {
    let by_key: BTreeMap<&CellKey, &CellSummary> = summaries.iter().map(|s| (&s.key, s)).collect();
    let mut columns = vec![(BASELINE.to_string(), "—".to_string())];
    columns.extend(mitigations.iter().cloned());

    let mut out = String::from("| Feature | Model |");
    for s in splits {
        for (_, label) in &columns {
            let _ = write!(out, " {s} {label} |");
        }
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(splits.len() * columns.len()));
    out.push('\n');
    for f in features {
        for m in models {
            let _ = write!(out, "| {f} | {} |", m.short());
            for s in splits {
                for (name, _) in &columns {
                    let key = CellKey {
                        model: *m,
                        split: s.clone(),
                        feature: f.clone(),
                        mitigation: name.clone(),
                    };
                    match by_key.get(&key) {
                        Some(c) if c.effective => {
                            let _ = write!(out, " <u>{:.2}</u> ± {:.2} |", c.delta_mae.mean, c.delta_mae.std);
                        }
                        Some(c) => {
                            let _ = write!(out, " {} |", pm(&c.delta_mae));
                        }
                        None => out.push_str(" n/a |"),
                    }
                }
            }
            out.push('\n');
        }
    }
    out.push_str("\nUnderlined: ΔMAE improved by more than 25% over the no-mitigation baseline (—).\n");
    out
}
