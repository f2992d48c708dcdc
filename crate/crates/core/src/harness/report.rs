//! Report tables with "x/N (p%)" cells.

use serde::{Deserialize, Serialize};

use super::EvalTable;
use crate::curriculum::TaskKind;

/// Published counts for the reference models, used by `report --fixture`.
pub const REFERENCE_FIXTURE: &str = include_str!("../../fixtures/reference_counts.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: u64,
    pub total: u64,
}

/// `correct/total (p%)` with one decimal, dropping a trailing `.0`.
pub fn format_cell(correct: u64, total: u64) -> String {
    if total == 0 {
        return format!("{correct}/0 (-)");
    }
    // Integer rounding to tenths, half away from zero.
    let tenths = (correct * 1000 + total / 2) / total;
    let pct = if tenths % 10 == 0 { format!("{}", tenths / 10) } else { format!("{}.{}", tenths / 10, tenths % 10) };
    format!("{correct}/{total} ({pct}%)")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: TaskKind,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// One column per table; rows for every task kind present in any table.
    pub fn from_tables(tables: &[EvalTable]) -> Self {
        let rows = TaskKind::ALL
            .into_iter()
            .filter(|k| tables.iter().any(|t| t.rows.contains_key(k)))
            .map(|k| ReportRow { task: k, cells: tables.iter().map(|t| t.rows.get(&k).map(|c| c.cell())).collect() })
            .collect();
        Report { columns: tables.iter().map(|t| t.endpoint.clone()).collect(), rows }
    }

    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_FIXTURE).expect("bundled fixture parses")
    }

    pub fn render_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("Task".to_string()).chain(self.columns.iter().cloned()).collect()];
        for r in &self.rows {
            let mut line = vec![r.task.title().to_string()];
            line.extend(r.cells.iter().map(|c| c.map_or("-".to_string(), |c| format_cell(c.correct, c.total))));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|i| grid.iter().map(|row| row.get(i).map_or(0, |s| s.chars().count())).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, row) in grid.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if n == 0 {
                out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
                out.push('\n');
            }
        }
        out
    }

    /// `task,column,correct,total,percent,cell`, one line per filled cell.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("task,column,correct,total,percent,cell\n");
        for r in &self.rows {
            for (col, cell) in self.columns.iter().zip(&r.cells) {
                let Some(c) = cell else { continue };
                let pct = if c.total == 0 { String::new() } else { format!("{:.1}", 100.0 * c.correct as f64 / c.total as f64) };
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.task.slug(),
                    csv_field(col),
                    c.correct,
                    c.total,
                    pct,
                    csv_field(&format_cell(c.correct, c.total))
                ));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
