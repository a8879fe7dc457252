use std::fmt::Display;
use std::fs;
use std::path::Path;

use coop_privacy::Result;

/// A CSV table whose first line records the hash of the producing config.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn render(&self, config_hash: &str) -> String {
        let mut out = format!("# config_hash={config_hash}\n{}\n", self.header.join(","));
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path, name: &str, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), self.render(config_hash))?;
        Ok(())
    }
}

/// Cell formatting shortcut: `cells![a, b, c]`.
#[macro_export]
macro_rules! cells {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::cell(&$x)),*] };
}

pub fn cell<T: Display + ?Sized>(x: &T) -> String {
    x.to_string()
}

/// Epsilon column value; truthful execution is written as `inf`.
pub fn epsilon_cell(epsilon: Option<f64>) -> String {
    epsilon.map_or_else(|| "inf".to_string(), |e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_has_hash_and_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(cells![1, 0.5]);
        t.push(cells!["x", epsilon_cell(None)]);
        assert_eq!(t.render("abc"), "# config_hash=abc\na,b\n1,0.5\nx,inf\n");
    }
}
