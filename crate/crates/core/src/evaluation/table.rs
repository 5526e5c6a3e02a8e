use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Agreement,
    HeldoutLoss,
    SurrogateAccuracy,
    MeanSimilarity,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Agreement => "agreement",
            Metric::HeldoutLoss => "held-out loss",
            Metric::SurrogateAccuracy => "surrogate probe accuracy",
            Metric::MeanSimilarity => "mean layer cosine",
        }
    }

    fn value(self, r: &EvalReport) -> f64 {
        match self {
            Metric::Agreement => r.agreement,
            Metric::HeldoutLoss => r.heldout_loss,
            Metric::SurrogateAccuracy => r.surrogate_probe_accuracy,
            Metric::MeanSimilarity => {
                r.layer_similarity.values().sum::<f64>() / r.layer_similarity.len().max(1) as f64
            }
        }
    }
}

/// Method × budget grid of `metric`, averaged over seeds.
pub fn render_table(reports: &[EvalReport], metric: Metric) -> String {
    let budgets: BTreeSet<u64> = reports.iter().map(|r| r.budget_s.to_bits()).collect();
    let mut budgets: Vec<f64> = budgets.into_iter().map(f64::from_bits).collect();
    budgets.sort_by(f64::total_cmp);
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut cells: BTreeMap<(&str, u64), Vec<f64>> = BTreeMap::new();
    for r in reports {
        cells
            .entry((r.method.as_str(), r.budget_s.to_bits()))
            .or_default()
            .push(metric.value(r));
    }
    let header: Vec<String> = budgets.iter().map(|b| format!("H={b}s")).collect();
    let width = 14;
    let mut out = String::new();
    let _ = writeln!(out, "{}", metric.label());
    let _ = write!(out, "{:<16}", "method");
    for h in &header {
        let _ = write!(out, "{h:>width$}");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "{m:<16}");
        for b in &budgets {
            match cells.get(&(m, b.to_bits())) {
                Some(v) => {
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let _ = write!(out, "{:>width$}", format!("{mean:.4}"));
                }
                None => {
                    let _ = write!(out, "{:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
