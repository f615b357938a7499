//! Run record and CSV tables written to the output directory.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

/// Scientific notation with 17 significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(name: &str, header: &str) -> Self {
        Table {
            name: name.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Config echo, timings, summary values, tables and invariant checks of one
/// run.
#[derive(Debug)]
pub struct RunRecord {
    pub command: String,
    pub config_ini: String,
    pub seed: u64,
    pub parallel: usize,
    timings: Vec<(String, f64)>,
    summary: Vec<(String, String)>,
    tables: Vec<Table>,
    checks: Vec<Check>,
}

/// Tables longer than this are referenced by file name only.
const INLINE_ROWS: usize = 200;

impl RunRecord {
    pub fn new(command: &str, config_ini: String, seed: u64, parallel: usize) -> Self {
        RunRecord {
            command: command.to_string(),
            config_ini,
            seed,
            parallel,
            timings: Vec::new(),
            summary: Vec::new(),
            tables: Vec::new(),
            checks: Vec::new(),
        }
    }

    /// Runs `f` and records its wall time under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn value(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn table(&mut self, table: Table) {
        self.tables.push(table);
    }

    /// Records `value <= gate`.
    pub fn check_below(&mut self, name: &str, value: f64, gate: f64) {
        self.check(name, value <= gate, format!("{} (gate {})", sci(value), sci(gate)));
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let status = if self.failed_checks().is_empty() { "ok" } else { "invariant failure" };
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "parallel = {}", self.parallel);
        let _ = writeln!(s, "status = {status}");
        s.push_str("\n[config]\n");
        s.push_str(&self.config_ini);
        s.push_str("\n[timings]\n");
        for (phase, secs) in &self.timings {
            let _ = writeln!(s, "{phase} = {secs:.6} s");
        }
        s.push_str("\n[summary]\n");
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[checks]\n");
        for c in &self.checks {
            let _ = writeln!(s, "{} = {} {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
        }
        for t in &self.tables {
            let _ = writeln!(s, "\n[table {}.csv]", t.name);
            if t.rows.len() <= INLINE_ROWS {
                s.push_str(&t.to_csv());
            } else {
                let _ = writeln!(s, "{} rows, see {}.csv", t.rows.len(), t.name);
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        std::fs::write(dir.join("run.record"), self.render())
    }
}

