//! Fixed-width tables and canonical JSON for the terminal.

use serde::Serialize;
use simnet_core::api::{DifferentialView, GraphView, JustificationView, NetworkCreated};
use simnet_core::bundle::{canonical_json, MultiDiseaseBundle};
use simnet_core::decision::{EvaluationReport, Recommendation};
use simnet_core::similarity::ConsistencyVerdict;

/// Values this small but nonzero would read as zero at four decimals.
const TRACE: f64 = 5e-5;

pub fn prob(p: f64) -> String {
    if p > 0.0 && p < TRACE {
        "0.00+".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("response types serialize");
    let mut s = String::from_utf8(canonical_json(&v)).expect("utf-8");
    s.push('\n');
    s
}

struct Table {
    header: Vec<String>,
    /// `l` or `r` per column.
    align: &'static str,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str], align: &'static str) -> Self {
        debug_assert_eq!(header.len(), align.len());
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            align,
            rows: Vec::new(),
        }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn render(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&width)
                .zip(self.align.bytes())
                .map(|((c, &w), a)| {
                    if a == b'l' {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let mut s = parts.join("  ").trim_end().to_string();
            s.push('\n');
            s
        };
        let mut out = line(&self.header);
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

pub fn differential(d: &DifferentialView) -> String {
    let mut t = Table::new(&["HYPOTHESIS", "P"], "lr");
    for e in &d.posterior {
        t.row(vec![e.hypothesis.clone(), prob(e.p)]);
    }
    t.render()
}

pub fn recommendations(recs: &[Recommendation]) -> String {
    if recs.is_empty() {
        return "no feature is worth observing\n".to_string();
    }
    let mut t = Table::new(&["FEATURE", "VOC", "COST", "NET"], "lrrr");
    for r in recs {
        t.row(vec![
            r.feature.clone(),
            format!("{:.4}", r.voc),
            format!("{:.4}", r.cost),
            format!("{:.4}", r.net),
        ]);
    }
    t.render()
}

pub fn justification(j: &JustificationView) -> String {
    let mut out = format!("{}: {} versus {}\n", j.feature, j.top_two.0, j.top_two.1);
    let mut t = Table::new(&["INSTANCE", "LOG10 RATIO"], "lr");
    for w in &j.instances {
        t.row(vec![w.label.clone(), w.weight.to_string()]);
    }
    out.push_str(&t.render());
    out
}

pub fn verdict(v: &ConsistencyVerdict) -> String {
    if v.is_consistent() {
        return "verdict  consistent\n".to_string();
    }
    let mut out = String::from("verdict  inconsistent\n");
    if let Some(w) = &v.witness {
        out.push_str(&format!("witness  line {}, edge {}: {}\n", w.line, w.edge, w.message));
    }
    for r in &v.repairs {
        out.push_str(&format!(
            "repair   add {} -> {} in the map for {}\n",
            r.add_arc.0, r.add_arc.1, r.edge
        ));
    }
    out
}

pub fn created(c: &NetworkCreated) -> String {
    let mut out = format!("network  {} ({})\n", c.name, c.network_id);
    out.push_str(&verdict(&c.verdict));
    for w in &c.warnings {
        out.push_str(&format!("warning  {w}\n"));
    }
    for conflict in &c.conflicts {
        out.push_str(&format!("conflict {}\n", json(conflict).trim_end()));
    }
    out
}

pub fn graph(g: &GraphView) -> String {
    let mut out = format!(
        "{} over {} hypotheses, {} features, {} arcs, {} clusters\n",
        g.distinguished,
        g.hypotheses.len(),
        g.variables.len(),
        g.arcs.len(),
        g.clusters.len()
    );
    for (a, b) in &g.arcs {
        out.push_str(&format!("  {a} -> {b}\n"));
    }
    out
}

pub fn evaluation(r: &EvaluationReport) -> String {
    let mut t = Table::new(&["CASE", "GOLD DX", "MODEL DX", "LOSS"], "lllr");
    for (i, c) in r.cases.iter().enumerate() {
        t.row(vec![
            c.name.clone().unwrap_or_else(|| format!("#{}", i + 1)),
            c.loss.gold_diagnosis.clone(),
            c.loss.model_diagnosis.clone(),
            format!("{:.4}", c.loss.loss),
        ]);
    }
    let mut out = t.render();
    out.push_str(&format!("mean {:.4}  sd {:.4}  n {}\n", r.mean, r.sd, r.cases.len()));
    out
}

pub fn transformed(m: &MultiDiseaseBundle) -> String {
    let mut out = format!("{}: {} independent diseases\n", m.name, m.model.diseases.len());
    for d in &m.model.diseases {
        out.push_str(&format!("  {d}\n"));
    }
    out
}
