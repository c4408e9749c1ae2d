//! Plain-text and CSV renderings of analyses and campaign results.
//!
//! Every numeric cell keeps the unrounded value it was printed from, so a
//! rendered [`Table`] can be checked against its source with
//! [`Table::verify`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::orchestrate::{SweepReport, ToggleReport};
use crate::stats::{Analysis, EffectEstimate, Metric};

/// Marker appended to significant rows.
pub const SIGNIFICANT: &str = "[*]";
/// Placeholder for an empty top-k slot.
pub const ABSENT: &str = "·";

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub text: String,
    /// The value before rounding, in the units printed.
    pub value: Option<f64>,
    /// Place value of the last printed digit.
    pub unit: f64,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell {
            text: s.into(),
            value: None,
            unit: 0.0,
        }
    }

    /// `value` with a fixed number of decimals.
    pub fn fixed(value: f64, decimals: usize) -> Self {
        Cell {
            text: format!("{value:.decimals$}"),
            value: Some(value),
            unit: 10f64.powi(-(decimals as i32)),
        }
    }

    /// `value` rounded to `sig` significant figures.
    pub fn significant(value: f64, sig: u32) -> Self {
        let (text, unit) = format_significant(value, sig);
        Cell {
            text,
            value: Some(value),
            unit,
        }
    }

    /// Probabilities: three significant figures, scientific below 0.001.
    /// Values under 1e-300 are at the floating-point floor and print as a bound.
    pub fn probability(p: f64) -> Self {
        if p >= 1e-3 || p == 0.0 || !p.is_finite() {
            return Cell::significant(p, 3);
        }
        if p < 1e-300 {
            return Cell::text("<1e-300");
        }
        let text = format!("{p:.2e}");
        let exp: i32 = text.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
        Cell {
            text,
            value: Some(p),
            unit: 10f64.powi(exp - 2),
        }
    }

    fn with_suffix(mut self, suffix: &str) -> Self {
        self.text.push_str(suffix);
        self
    }

    fn numeric_text(&self) -> &str {
        self.text.trim_end_matches(SIGNIFICANT).trim()
    }
}

/// Text and last-digit place value of `x` at `sig` significant figures.
/// Integers are printed without a decimal point: 5.78e3 → "5780".
pub fn format_significant(x: f64, sig: u32) -> (String, f64) {
    let sig = sig.max(1) as i32;
    if x == 0.0 || !x.is_finite() {
        let decimals = (sig - 1) as usize;
        return (format!("{x:.decimals$}"), 10f64.powi(-(sig - 1)));
    }
    let mut exp = x.abs().log10().floor() as i32;
    // rounding can carry into the next decade (9.996 → 10.0)
    let scale = 10f64.powi(exp - sig + 1);
    if ((x.abs() / scale).round() * scale) >= 10f64.powi(exp + 1) {
        exp += 1;
    }
    let decimals = sig - 1 - exp;
    if decimals >= 0 {
        let d = decimals as usize;
        (format!("{x:.d$}"), 10f64.powi(-decimals))
    } else {
        let unit = 10f64.powi(-decimals);
        (format!("{:.0}", (x / unit).round() * unit), unit)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Table {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Aligned plain text: text columns left-aligned, numeric ones right-aligned.
    pub fn to_text(&self) -> String {
        let n = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        let mut numeric = vec![true; n];
        for row in &self.rows {
            for (i, c) in row.iter().enumerate().take(n) {
                width[i] = width[i].max(c.text.chars().count());
                if c.value.is_none() && c.text != "-" {
                    numeric[i] = false;
                }
            }
        }
        let pad = |s: &str, i: usize| {
            let fill = " ".repeat(width[i] - s.chars().count());
            if numeric[i] {
                format!("{fill}{s}")
            } else {
                format!("{s}{fill}")
            }
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        let line = |cells: Vec<String>| cells.join("  ").trim_end().to_string() + "\n";
        out.push_str(&line(self.headers.iter().enumerate().map(|(i, h)| pad(h, i)).collect()));
        out.push_str(&line(width.iter().map(|w| "-".repeat(*w)).collect()));
        for row in &self.rows {
            out.push_str(&line(row.iter().enumerate().map(|(i, c)| pad(&c.text, i)).collect()));
        }
        for note in &self.notes {
            out.push_str("note: ");
            out.push_str(note);
            out.push('\n');
        }
        out
    }

    /// Header plus rows as CSV; the significance marker becomes its own text.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.text.as_str())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Checks every numeric cell's text against its unrounded value, to half a
    /// unit in the last printed digit. Returns the offending cells.
    pub fn verify(&self) -> Result<(), Vec<String>> {
        let mut bad = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                let Some(value) = cell.value else { continue };
                let ok = cell
                    .numeric_text()
                    .parse::<f64>()
                    .map(|printed| (printed - value).abs() <= 0.5 * cell.unit * (1.0 + 1e-9) + 1e-12)
                    .unwrap_or(false);
                if !ok {
                    bad.push(format!("row {r} column {}: {:?} vs {value}", self.headers[c], cell.text));
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn pct_cell(x: Option<f64>) -> Cell {
    x.map_or_else(|| Cell::text("-"), |v| Cell::fixed(v, 2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainEffectsReport {
    pub table: Table,
    /// Long-format CSV: `metric,term,percent_effect,p_value,significant`.
    pub plot_data: String,
}

/// Main-effect percentages for one or more metrics of the same design.
///
/// Rows follow the first analysis, largest `|percent_effect|` first; each
/// metric gets a percent column and a p-value column, with [`SIGNIFICANT`]
/// on effects below that analysis's alpha.
pub fn render_main_effects(analyses: &[&Analysis]) -> MainEffectsReport {
    let mut headers = vec!["term".to_string()];
    for a in analyses {
        headers.push(format!("{} %", a.metric));
        headers.push(format!("{} p", a.metric));
    }
    let mut table = Table {
        title: format!(
            "Main effects (percent of grand mean), {SIGNIFICANT} = p < alpha ({})",
            analyses.first().map_or(0.05, |a| a.alpha)
        ),
        headers,
        ..Table::default()
    };
    let Some(lead) = analyses.first() else {
        return MainEffectsReport {
            table,
            plot_data: plot_csv(analyses),
        };
    };
    let mut order: Vec<&EffectEstimate> = lead.estimates.iter().collect();
    order.sort_by(|a, b| {
        b.percent_effect
            .abs()
            .total_cmp(&a.percent_effect.abs())
            .then_with(|| a.label.cmp(&b.label))
    });
    let lookup: Vec<HashMap<&str, &EffectEstimate>> = analyses
        .iter()
        .map(|a| a.estimates.iter().map(|e| (e.label.as_str(), e)).collect())
        .collect();
    for est in order {
        let mut row = vec![Cell::text(&est.label)];
        for map in &lookup {
            match map.get(est.label.as_str()) {
                Some(e) => {
                    let pct = Cell::fixed(e.percent_effect, 2);
                    row.push(if e.significant { pct.with_suffix(&format!(" {SIGNIFICANT}")) } else { pct });
                    row.push(Cell::probability(e.p_value));
                }
                None => {
                    row.push(Cell::text("-"));
                    row.push(Cell::text("-"));
                }
            }
        }
        table.rows.push(row);
    }
    for a in analyses {
        for note in &a.notes {
            table.notes.push(format!("{}: {note}", a.metric));
        }
    }
    MainEffectsReport {
        table,
        plot_data: plot_csv(analyses),
    }
}

fn plot_csv(analyses: &[&Analysis]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "term", "percent_effect", "p_value", "significant"])
        .expect("in-memory write");
    for a in analyses {
        for e in &a.estimates {
            w.write_record([
                a.metric.to_string(),
                e.label.clone(),
                e.percent_effect.to_string(),
                e.p_value.to_string(),
                e.significant.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveReport {
    pub table: Table,
    /// Labels of combinations with no usable measurement.
    pub missing: Vec<String>,
}

/// One row per combination of a full factorial over flags, all-enabled first
/// and the first flag toggling fastest. Energy is shown in mJ to three
/// significant figures; the percent column is computed from the unrounded
/// `means_j` against `base_mean_j` and rounded only for display.
pub fn render_exhaustive(d: &DesignMatrix, means_j: &[Option<f64>], base_mean_j: f64) -> ExhaustiveReport {
    let names = d.names();
    let mut headers: Vec<String> = (1..=names.len()).map(|i| format!("X{i}")).collect();
    headers.push("energy (mJ)".into());
    headers.push("vs base (%)".into());
    let mut table = Table {
        title: format!("Exhaustive combinations, base {:.3} mJ", base_mean_j * 1e3),
        headers,
        ..Table::default()
    };
    let mut missing = Vec::new();
    let n = d.n_runs();
    for i in 0..n {
        // all-enabled first: run index with every bit set comes first
        let run = n - 1 - i;
        let mut row: Vec<Cell> = d
            .row(run)
            .iter()
            .map(|&s| Cell::text(if s > 0 { "✓" } else { "×" }))
            .collect();
        match means_j.get(run).copied().flatten() {
            Some(m) => {
                row.push(Cell::significant(m * 1e3, 3));
                row.push(Cell::fixed(100.0 * (m - base_mean_j) / base_mean_j, 2));
            }
            None => {
                let label = d
                    .row(run)
                    .iter()
                    .zip(names)
                    .map(|(&s, name)| format!("{}{name}", if s > 0 { '+' } else { '-' }))
                    .collect::<Vec<_>>()
                    .join(" ");
                missing.push(label);
                row.push(Cell::text("missing"));
                row.push(Cell::text("missing"));
            }
        }
        table.rows.push(row);
    }
    for (i, name) in names.iter().enumerate() {
        table.notes.push(format!("X{} = {name}", i + 1));
    }
    if !missing.is_empty() {
        table.notes.push(format!("{} combination(s) missing: {}", missing.len(), missing.join("; ")));
    }
    ExhaustiveReport { table, missing }
}

/// Ranked significant flags for one benchmark on one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopFlags {
    pub benchmark: String,
    pub config: String,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegendEntry {
    pub letter: String,
    pub flag: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopFlagsReport {
    pub table: Table,
    pub legend: Vec<LegendEntry>,
}

impl TopFlagsReport {
    pub fn legend_table(&self) -> Table {
        let mut t = Table::new("Legend", &["id", "count", "flag"]);
        for e in &self.legend {
            t.rows.push(vec![
                Cell::text(&e.letter),
                Cell {
                    text: e.count.to_string(),
                    value: Some(e.count as f64),
                    unit: 1.0,
                },
                Cell::text(&e.flag),
            ]);
        }
        t
    }
}

/// Spreadsheet-style letters: A..Z, AA, AB, ...
pub fn letter(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

/// Benchmark × configuration grid of the top `k` flags, one letter per flag.
///
/// Letters go to flags by how often they appear anywhere in the grid (most
/// frequent first), ties by flag name. Benchmarks and configurations keep
/// first-seen order; a missing entry renders as all [`ABSENT`].
pub fn render_top_flags(entries: &[TopFlags], k: usize) -> TopFlagsReport {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entries {
        for f in e.flags.iter().take(k) {
            *counts.entry(f.as_str()).or_default() += 1;
        }
    }
    let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let legend: Vec<LegendEntry> = by_freq
        .iter()
        .enumerate()
        .map(|(i, (flag, count))| LegendEntry {
            letter: letter(i),
            flag: flag.to_string(),
            count: *count,
        })
        .collect();
    let letters: HashMap<&str, &str> = legend.iter().map(|e| (e.flag.as_str(), e.letter.as_str())).collect();

    let mut benchmarks: Vec<&str> = Vec::new();
    let mut configs: Vec<&str> = Vec::new();
    let mut grid: HashMap<(&str, &str), &[String]> = HashMap::new();
    for e in entries {
        if !benchmarks.contains(&e.benchmark.as_str()) {
            benchmarks.push(&e.benchmark);
        }
        if !configs.contains(&e.config.as_str()) {
            configs.push(&e.config);
        }
        grid.insert((&e.benchmark, &e.config), &e.flags);
    }

    let mut headers = vec!["benchmark".to_string()];
    for c in &configs {
        for rank in 1..=k {
            headers.push(format!("{c} {}", ordinal(rank)));
        }
    }
    let mut table = Table {
        title: format!("Top {k} significant flags"),
        headers,
        ..Table::default()
    };
    for b in &benchmarks {
        let mut row = vec![Cell::text(*b)];
        for c in &configs {
            let flags = grid.get(&(*b, *c)).copied().unwrap_or(&[]);
            for rank in 0..k {
                row.push(Cell::text(flags.get(rank).map_or(ABSENT, |f| letters[f.as_str()])));
            }
        }
        table.rows.push(row);
    }
    TopFlagsReport { table, legend }
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn ratio_cell(x: Option<f64>) -> Cell {
    x.map_or_else(|| Cell::text("-"), |v| Cell::fixed(v, 3))
}

/// Energy, time and power of each level relative to the first.
pub fn render_sweep(report: &SweepReport) -> Table {
    let mut t = Table::new(
        format!("Level sweep relative to {}", report.rows.first().map_or("", |r| r.level.as_str())),
        &["level", "energy (J)", "time (s)", "power (W)", "energy ratio", "time ratio", "power ratio"],
    );
    let abs = |x: Option<f64>| x.map_or_else(|| Cell::text("-"), |v| Cell::significant(v, 4));
    for r in &report.rows {
        t.rows.push(vec![
            Cell::text(&r.level),
            abs(r.means.energy_j),
            abs(r.means.time_s),
            abs(r.means.power_w),
            ratio_cell(r.energy_ratio),
            ratio_cell(r.time_ratio),
            ratio_cell(r.power_ratio),
        ]);
        if !r.means.is_available() {
            t.notes.push(format!("{} is unavailable", r.level));
        }
    }
    t
}

/// Percent change from enabling or disabling each flag alone.
pub fn render_toggles(report: &ToggleReport) -> Table {
    let mut t = Table::new(
        format!("Single-flag toggles over {}", report.base_level),
        &["flag", "enabled energy %", "enabled time %", "disabled energy %", "disabled time %"],
    );
    for r in &report.rows {
        t.rows.push(vec![
            Cell::text(&r.flag.name),
            pct_cell(r.enabled_energy_pct),
            pct_cell(r.enabled_time_pct),
            pct_cell(r.disabled_energy_pct),
            pct_cell(r.disabled_time_pct),
        ]);
    }
    t
}

/// Metadata stored next to rendered tables.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ReportMeta {
    pub alpha: Option<f64>,
    pub resolution: Option<String>,
    pub seed: Option<u64>,
    pub metrics: Vec<Metric>,
    pub notes: Vec<String>,
}

/// Named tables and plot files written together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub meta: ReportMeta,
    pub tables: Vec<(String, Table)>,
    pub plots: Vec<(String, String)>,
}

impl ReportBundle {
    pub fn add_table(&mut self, name: impl Into<String>, table: Table) {
        self.tables.push((name.into(), table));
    }

    pub fn add_plot(&mut self, name: impl Into<String>, csv: String) {
        self.plots.push((name.into(), csv));
    }

    /// Runs [`Table::verify`] over every table.
    pub fn verify(&self) -> Result<(), Vec<String>> {
        let bad: Vec<String> = self
            .tables
            .iter()
            .flat_map(|(name, t)| t.verify().err().unwrap_or_default().into_iter().map(move |m| format!("{name}: {m}")))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    /// Writes `<name>.txt` and `<name>.csv` per table, `<name>.csv` per plot,
    /// and `report.json` with the metadata.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, t) in &self.tables {
            fs::write(dir.join(format!("{name}.txt")), t.to_text())?;
            fs::write(dir.join(format!("{name}.csv")), t.to_csv())?;
        }
        for (name, csv) in &self.plots {
            fs::write(dir.join(format!("{name}.csv")), csv)?;
        }
        let json = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        fs::write(dir.join("report.json"), json + "\n")
    }

    pub fn to_text(&self) -> String {
        self.tables.iter().map(|(_, t)| t.to_text()).collect::<Vec<_>>().join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::full_factorial;
    use crate::stats::{analyze_design, ResponseSet, TestConfig};

    #[test]
    fn significant_figures() {
        assert_eq!(format_significant(5.78e3, 3), ("5780".to_string(), 10.0));
        assert_eq!(format_significant(5.64, 3).0, "5.64");
        assert_eq!(format_significant(0.012345, 3).0, "0.0123");
        assert_eq!(format_significant(9.996, 3), ("10.0".to_string(), 0.1));
        assert_eq!(format_significant(-123456.0, 2).0, "-120000");
        assert_eq!(format_significant(0.0, 3).0, "0.00");
    }

    #[test]
    fn probabilities() {
        assert_eq!(Cell::probability(0.0123).text, "0.0123");
        let tiny = Cell::probability(1.7123e-22);
        assert_eq!(tiny.text, "1.71e-22");
        assert_eq!(Cell::probability(f64::MIN_POSITIVE).text, "<1e-300");
        let mut t = Table::new("", &["p"]);
        t.rows.push(vec![tiny]);
        t.verify().unwrap();
    }

    #[test]
    fn letters_continue_past_z() {
        assert_eq!(letter(0), "A");
        assert_eq!(letter(25), "Z");
        assert_eq!(letter(26), "AA");
        assert_eq!(letter(27), "AB");
        assert_eq!(letter(26 + 26 * 26), "AAA");
    }

    fn analysis(effects: &[f64], noise: bool) -> Analysis {
        let d = full_factorial(effects.len()).unwrap().with_names(
            (0..effects.len()).map(|i| format!("flag{i}")).collect(),
        ).unwrap();
        let runs = (0..d.n_runs())
            .map(|r| {
                let base: f64 = 100.0 + d.row(r).iter().zip(effects).map(|(&s, e)| f64::from(s) * e / 2.0).sum::<f64>();
                (0..6).map(|k| base + if noise { (k as f64 - 2.5) * 3.0 } else { 0.0 }).collect()
            })
            .collect();
        analyze_design(&d, &ResponseSet::complete(Metric::Energy, runs).unwrap(), &TestConfig::default()).unwrap()
    }

    #[test]
    fn main_effects_order_and_markers() {
        let a = analysis(&[1.0, -6.0, 0.0], true);
        let mut time = a.clone();
        time.metric = Metric::Time;
        let report = render_main_effects(&[&a, &time]);
        let t = &report.table;
        assert_eq!(t.rows[0][0].text, "flag1");
        assert!(t.rows[0][1].text.ends_with(SIGNIFICANT));
        assert_eq!(t.headers, ["term", "energy %", "energy p", "time %", "time p"]);
        for row in &t.rows {
            assert_eq!(row.len(), 5);
        }
        t.verify().unwrap();
        assert_eq!(report.plot_data.lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn main_effects_without_significance() {
        let a = analysis(&[0.0, 0.0], true);
        let t = render_main_effects(&[&a]).table;
        assert!(t.rows.iter().all(|r| !r[1].text.contains(SIGNIFICANT)));
    }

    #[test]
    fn exhaustive_rows_and_missing() {
        let d = full_factorial(2).unwrap().with_names(vec!["x".into(), "y".into()]).unwrap();
        let means = vec![Some(1.0), None, Some(1.1), Some(1.0)];
        let r = render_exhaustive(&d, &means, 1.0);
        assert_eq!(r.table.rows[0][0].text, "✓");
        assert_eq!(r.table.rows[0][3].text, "0.00");
        assert_eq!(r.table.rows[1][0].text, "×");
        assert_eq!(r.table.rows[1][3].text, "10.00");
        assert_eq!(r.missing, vec!["+x -y".to_string()]);
        assert!(r.table.to_text().contains("missing"));
        r.table.verify().unwrap();
    }

    #[test]
    fn verify_catches_drift() {
        let mut t = Table::new("", &["v"]);
        t.rows.push(vec![Cell::fixed(1.234, 2)]);
        t.verify().unwrap();
        t.rows[0][0].text = "1.24".into();
        assert!(t.verify().is_err());
    }

    #[test]
    fn top_flags_grid() {
        let e = |b: &str, c: &str, f: &[&str]| TopFlags {
            benchmark: b.into(),
            config: c.into(),
            flags: f.iter().map(|s| s.to_string()).collect(),
        };
        let entries = vec![
            e("crc32", "m0", &["move-loop-invariants"]),
            e("crc32", "m3", &["move-loop-invariants", "tree-ter"]),
            e("sha", "m0", &["tree-ter", "dce", "gcse"]),
        ];
        let r = render_top_flags(&entries, 3);
        assert_eq!(r.legend[0].flag, "move-loop-invariants");
        assert_eq!(r.legend[1].flag, "tree-ter");
        assert_eq!(r.legend[2].flag, "dce");
        let filled: usize = r.table.rows.iter().flat_map(|row| &row[1..]).filter(|c| c.text != ABSENT).count();
        assert_eq!(r.legend.iter().map(|l| l.count).sum::<usize>(), filled);
        assert_eq!(r.table.rows[0].iter().map(|c| c.text.as_str()).collect::<Vec<_>>(), ["crc32", "A", "·", "·", "A", "B", "·"]);
        assert_eq!(r.table.rows[1][4].text, ABSENT);
        let empty = render_top_flags(&[e("x", "c", &[])], 3);
        assert!(empty.legend.is_empty());
        assert!(empty.table.rows[0][1..].iter().all(|c| c.text == ABSENT));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = analysis(&[2.0, -3.0, 1.0], true);
        assert_eq!(render_main_effects(&[&a]), render_main_effects(&[&a]));
    }
}
