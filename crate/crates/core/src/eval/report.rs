//! Report serialization and plain-text tables.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::runner::{EvalReport, MetricSummary, QuestionRecord, RetrievalComparison};

const LOCOMO_ORDER: [(&str, &str); 4] = [
    ("single-hop", "S"),
    ("multi-hop", "M"),
    ("open-domain", "O"),
    ("temporal", "T"),
];

/// One JSON object per question.
pub fn write_records_jsonl(mut out: impl Write, records: &[QuestionRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

pub fn load_reports(path: &Path) -> io::Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Writes `run.json`, one `<condition>.jsonl` per report and `summary.txt`.
pub fn save_run(dir: &Path, reports: &[EvalReport]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run.json"), to_json(reports))?;
    for r in reports {
        let name = r.condition.name.replace('/', "_");
        let file = fs::File::create(dir.join(format!("{name}.jsonl")))?;
        let mut w = io::BufWriter::new(file);
        write_records_jsonl(&mut w, &r.records)?;
        w.flush()?;
    }
    fs::write(dir.join("summary.txt"), render_summary(reports))
}

fn category_columns(reports: &[EvalReport]) -> Vec<(String, String)> {
    let mut labels: Vec<&String> = reports.iter().flat_map(|r| r.per_category.keys()).collect();
    labels.sort();
    labels.dedup();
    let is_locomo = !labels.is_empty()
        && labels
            .iter()
            .all(|l| LOCOMO_ORDER.iter().any(|(name, _)| name == l));
    if is_locomo {
        LOCOMO_ORDER
            .iter()
            .filter(|(name, _)| labels.iter().any(|l| l == name))
            .map(|(name, short)| (name.to_string(), short.to_string()))
            .collect()
    } else {
        labels.into_iter().map(|l| (l.clone(), l.clone())).collect()
    }
}

fn pct(x: f64) -> String {
    format!("{x:.1}")
}

fn cell(m: Option<&MetricSummary>, pick: fn(&MetricSummary) -> f64) -> String {
    m.filter(|m| m.count > 0).map(|m| pct(pick(m))).unwrap_or_else(|| "-".into())
}

/// Per-category and overall F1, then BLEU-1, one row per condition.
pub fn render_category_table(reports: &[EvalReport]) -> String {
    let cols = category_columns(reports);
    let width = reports.iter().map(|r| r.condition.name.len()).max().unwrap_or(9).max(9);
    let mut s = String::new();
    for (title, pick) in [
        ("F1", (|m: &MetricSummary| m.f1) as fn(&MetricSummary) -> f64),
        ("BLEU-1", |m: &MetricSummary| m.bleu1),
    ] {
        let _ = write!(s, "{title:<width$}");
        for (_, short) in &cols {
            let _ = write!(s, " {short:>7}");
        }
        let _ = writeln!(s, " {:>7}", "ALL");
        for r in reports {
            let _ = write!(s, "{:<width$}", r.condition.name);
            for (label, _) in &cols {
                let _ = write!(s, " {:>7}", cell(r.per_category.get(label), pick));
            }
            let _ = writeln!(s, " {:>7}", cell(Some(&r.overall), pick));
        }
        s.push('\n');
    }
    s
}

fn compact(x: f64) -> String {
    if x >= 1e6 {
        format!("{:.1}M", x / 1e6)
    } else if x >= 1e3 {
        format!("{:.1}K", x / 1e3)
    } else {
        format!("{x:.0}")
    }
}

/// Switches, scores, routing share and cost, one row per condition.
pub fn render_condition_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.condition.name.len()).max().unwrap_or(9).max(9);
    let mut s = format!(
        "{:<width$} {:>6} {:>7} {:>6} {:>7} {:>7} {:>8} {:>8} {:>9}\n",
        "Condition", "Memory", "Routing", "F1", "BLEU-1", "%small", "Input", "Output", "EffCost"
    );
    for r in reports {
        let on = |b: bool| if b { "yes" } else { "no" };
        let share = r.routing.small_model_share.map(pct).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<width$} {:>6} {:>7} {:>6} {:>7} {:>7} {:>8} {:>8} {:>9}{}",
            r.condition.name,
            on(r.condition.memory_enabled || r.condition.full_context),
            on(r.condition.routing_enabled),
            pct(r.overall.f1),
            pct(r.overall.bleu1),
            share,
            compact(r.cost.input_tokens as f64),
            compact(r.cost.output_tokens as f64),
            compact(r.cost.eff_cost),
            if r.incomplete {
                format!("  ({} failed)", r.failed)
            } else {
                String::new()
            }
        );
    }
    s
}

/// Per-type F1 and recall of two runs with their difference.
pub fn render_comparison(cmp: &RetrievalComparison) -> String {
    let width = cmp.rows.iter().map(|r| r.category.len()).max().unwrap_or(4).max(4);
    let opt = |x: Option<f64>| x.map(pct).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{:<width$} {:>4} {:>8} {:>8} {:>7} {:>8} {:>8}\n",
        "Type", "n", "F1 base", "F1 other", "delta", "R base", "R other"
    );
    for row in cmp.rows.iter().chain(std::iter::once(&cmp.overall)) {
        let _ = writeln!(
            s,
            "{:<width$} {:>4} {:>8} {:>8} {:>+7.1} {:>8} {:>8}",
            row.category,
            row.n,
            pct(row.base_f1),
            pct(row.other_f1),
            row.delta_f1,
            opt(row.base_recall),
            opt(row.other_recall)
        );
    }
    let _ = writeln!(s, "base = {}, other = {}", cmp.base.condition.name, cmp.other.condition.name);
    s
}

pub fn render_summary(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(s, "dataset: {} ({} questions)\n", first.dataset, first.questions);
    }
    s.push_str(&render_condition_table(reports));
    s.push('\n');
    s.push_str(&render_category_table(reports));
    s
}
