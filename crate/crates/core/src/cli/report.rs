use crate::evaluation::EvalReport;
use crate::{Error, Result};

/// Pretty JSON with keys sorted at every level.
pub fn to_canonical_json(report: &EvalReport) -> Result<String> {
    // serde_json's default map is ordered by key
    let value = serde_json::to_value(report).map_err(|e| Error::invalid(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&value).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// One summary row: Recall@100 per IoU, mAP@0.5, then AP per class.
/// Values are percentages.
pub fn zsd_csv(report: &EvalReport) -> String {
    let mut header: Vec<String> = report
        .recall_at_100
        .keys()
        .map(|k| format!("recall_at_100.{k}"))
        .collect();
    header.push("map_50".into());
    header.extend(report.per_class_ap.keys().map(|k| csv_field(&format!("ap.{k}"))));
    let mut row: Vec<String> = report.recall_at_100.values().map(|&v| pct(v)).collect();
    row.push(pct(report.map_50));
    row.extend(report.per_class_ap.values().map(|&v| pct(v)));
    format!("{}\n{}\n", header.join(","), row.join(","))
}

/// Seen, unseen and HM rows with mAP and Recall@100 columns.
pub fn gzsd_csv(report: &EvalReport) -> Result<String> {
    let g = report
        .gzsd
        .as_ref()
        .ok_or_else(|| Error::invalid("report has no GZSD section"))?;
    let mut out = String::from("split,map_50");
    for k in g.seen_recall.keys() {
        out.push_str(&format!(",recall_at_100.{k}"));
    }
    out.push('\n');
    for (name, map, rec) in [
        ("seen", g.seen_map, &g.seen_recall),
        ("unseen", g.unseen_map, &g.unseen_recall),
        ("hm", g.hm_map, &g.hm_recall),
    ] {
        out.push_str(name);
        out.push(',');
        out.push_str(&pct(map));
        for v in rec.values() {
            out.push(',');
            out.push_str(&pct(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
