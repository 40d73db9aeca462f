//! Golden sweep data and the recipes that regenerate it.
//!
//! A golden directory holds `manifest.toml` and one CSV per recipe. Each
//! recipe names a benchmark case, the CSV it produces, the command that
//! reproduces it, and the tolerances used when comparing a fresh run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisOptions;
use crate::csvio::{read_sweep, write_sweep};
use crate::error::{Error, Result};
use crate::suite::{load_case, map_points, run_sweep, SweepTable};

pub const MANIFEST: &str = "manifest.toml";
pub const FIGURES: std::ops::RangeInclusive<u32> = 2..=11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub sigma: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            sigma: 0.05,
            kappa: 0.05,
            gamma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<u32>,
    pub case: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub file: String,
    pub command: String,
    /// Successful rows must have strictly increasing sigma.
    #[serde(default)]
    pub monotone: bool,
    /// Window for the fitted slope of `log sigma` against `log(1/param)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<[f64; 2]>,
    #[serde(default)]
    pub tolerance: Tolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qualitative {
    pub figure: u32,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub recipe: Vec<Recipe>,
    #[serde(default)]
    pub qualitative: Vec<Qualitative>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        toml::from_str(&text).map_err(|e| Error::Golden(format!("{MANIFEST}: {e}")))
    }

    /// Figures that are not covered exactly once, with their count.
    pub fn coverage_gaps(&self) -> Vec<(u32, usize)> {
        let mut count: BTreeMap<u32, usize> = FIGURES.map(|f| (f, 0)).collect();
        let figs = self
            .recipe
            .iter()
            .filter_map(|r| r.figure)
            .chain(self.qualitative.iter().map(|q| q.figure));
        for f in figs {
            *count.entry(f).or_default() += 1;
        }
        count.into_iter().filter(|&(_, n)| n != 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub recipe: String,
    pub row: Option<usize>,
    pub column: String,
    pub expected: String,
    pub got: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} row {} {}: expected {}, got {}", self.recipe, r, self.column, self.expected, self.got),
            None => write!(f, "{} {}: expected {}, got {}", self.recipe, self.column, self.expected, self.got),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecipeOutcome {
    pub name: String,
    pub figure: Option<u32>,
    pub mismatches: Vec<Mismatch>,
}

impl RecipeOutcome {
    pub fn pass(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GoldenReport {
    pub recipes: Vec<RecipeOutcome>,
    pub coverage_gaps: Vec<(u32, usize)>,
}

impl GoldenReport {
    pub fn pass(&self) -> bool {
        self.coverage_gaps.is_empty() && self.recipes.iter().all(RecipeOutcome::pass)
    }
}

impl fmt::Display for GoldenReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.recipes {
            let fig = r.figure.map_or_else(|| "-".to_string(), |n| format!("fig {n}"));
            writeln!(f, "{:<6} {:<24} {}", if r.pass() { "PASS" } else { "FAIL" }, r.name, fig)?;
            for m in &r.mismatches {
                writeln!(f, "       {m}")?;
            }
        }
        for (fig, n) in &self.coverage_gaps {
            writeln!(f, "FAIL   figure {fig} covered {n} times")?;
        }
        Ok(())
    }
}

/// Runs one recipe's sweep.
pub fn run_recipe(recipe: &Recipe, opts: &AnalysisOptions) -> Result<SweepTable> {
    let case = load_case(&recipe.case)?;
    Ok(run_sweep(&case, recipe.grid.as_deref(), opts))
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Compares a fresh table against the golden one and checks the
/// recipe's shape properties on the fresh table.
pub fn compare(recipe: &Recipe, golden: &SweepTable, fresh: &SweepTable) -> Vec<Mismatch> {
    let mut out = Vec::new();
    let mut miss = |row: Option<usize>, column: &str, expected: String, got: String| {
        out.push(Mismatch {
            recipe: recipe.name.clone(),
            row,
            column: column.to_string(),
            expected,
            got,
        })
    };
    if golden.rows.len() != fresh.rows.len() {
        miss(None, "rows", golden.rows.len().to_string(), fresh.rows.len().to_string());
    }
    for (i, (g, n)) in golden.rows.iter().zip(&fresh.rows).enumerate() {
        if rel_diff(g.param, n.param) > 1e-12 {
            miss(Some(i), "param", g.param.to_string(), n.param.to_string());
            continue;
        }
        if g.ok() != n.ok() {
            miss(Some(i), "status", g.status.clone(), n.status.clone());
            continue;
        }
        if !g.ok() {
            continue;
        }
        let tol = recipe.tolerance;
        for (col, a, b, t) in [
            ("kappa", g.kappa, n.kappa, tol.kappa),
            ("gamma", g.gamma, n.gamma, tol.gamma),
            ("sigma", g.sigma, n.sigma, tol.sigma),
        ] {
            if !(rel_diff(a, b) <= t) {
                miss(Some(i), col, format!("{a:e}"), format!("{b:e}"));
            }
        }
    }
    if recipe.monotone {
        let s: Vec<f64> = fresh.rows.iter().filter(|r| r.ok()).map(|r| r.sigma).collect();
        if let Some(k) = s.windows(2).position(|w| !(w[1] > w[0])) {
            miss(
                Some(k + 1),
                "sigma",
                format!("> {:e}", s[k]),
                format!("{:e} (not increasing)", s[k + 1]),
            );
        }
    }
    if let Some([lo, hi]) = recipe.slope {
        match fresh.scaling_slope() {
            Some(p) if (lo..=hi).contains(&p) => {}
            got => miss(None, "slope", format!("[{lo}, {hi}]"), format!("{got:?}")),
        }
    }
    out
}

fn verify_one(dir: &Path, recipe: &Recipe, opts: &AnalysisOptions) -> RecipeOutcome {
    let mismatches = fs::File::open(dir.join(&recipe.file))
        .map_err(Error::from)
        .and_then(read_sweep)
        .and_then(|golden| Ok(compare(recipe, &golden, &run_recipe(recipe, opts)?)))
        .unwrap_or_else(|e| {
            vec![Mismatch {
                recipe: recipe.name.clone(),
                row: None,
                column: "file".into(),
                expected: recipe.file.clone(),
                got: e.to_string(),
            }]
        });
    RecipeOutcome {
        name: recipe.name.clone(),
        figure: recipe.figure,
        mismatches,
    }
}

/// Re-runs every recipe in `dir` and compares against the stored CSVs.
pub fn verify_goldens(dir: &Path, opts: &AnalysisOptions) -> Result<GoldenReport> {
    let manifest = Manifest::load(dir)?;
    let recipes = map_points(manifest.recipe.len(), |i| verify_one(dir, &manifest.recipe[i], opts));
    Ok(GoldenReport {
        recipes,
        coverage_gaps: manifest.coverage_gaps(),
    })
}

/// Regenerates every CSV named in the manifest of `dir`, writing into
/// `out`. Returns the files written.
pub fn bless(dir: &Path, out: &Path, opts: &AnalysisOptions) -> Result<Vec<String>> {
    let manifest = Manifest::load(dir)?;
    let tables = map_points(manifest.recipe.len(), |i| run_recipe(&manifest.recipe[i], opts));
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (recipe, table) in manifest.recipe.iter().zip(tables) {
        write_sweep(&table?, fs::File::create(out.join(&recipe.file))?)?;
        written.push(recipe.file.clone());
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::SweepRow;

    fn recipe() -> Recipe {
        Recipe {
            name: "t".into(),
            figure: None,
            case: "scalar".into(),
            grid: None,
            file: "t.csv".into(),
            command: String::new(),
            monotone: true,
            slope: None,
            tolerance: Tolerance::default(),
        }
    }

    fn table(sigmas: &[f64]) -> SweepTable {
        SweepTable {
            case: "scalar".into(),
            param: "lambda".into(),
            dim: 1,
            rows: sigmas
                .iter()
                .enumerate()
                .map(|(i, &s)| SweepRow {
                    param: i as f64,
                    kappa: 1.0,
                    gamma: 1.0 / s,
                    sigma: s,
                    eta_star: vec![1.0],
                    status: "ok".into(),
                })
                .collect(),
        }
    }

    #[test]
    fn five_percent_is_the_line() {
        let g = table(&[1.0, 2.0, 4.0]);
        assert!(compare(&recipe(), &g, &table(&[1.0, 2.2, 4.0])).len() == 2);
        let mut near = table(&[1.0, 2.0, 4.0]);
        near.rows[1].sigma = 2.0 * 1.04;
        assert!(compare(&recipe(), &g, &near).is_empty());
    }

    #[test]
    fn monotonicity_and_rows_are_checked() {
        let g = table(&[1.0, 2.0, 4.0]);
        let m = compare(&recipe(), &g, &table(&[1.0, 2.0, 2.0]));
        assert!(m.iter().any(|m| m.column == "sigma" && m.got.contains("not increasing")));
        let m = compare(&recipe(), &g, &table(&[1.0, 2.0]));
        assert_eq!(m[0].column, "rows");
    }

    #[test]
    fn coverage_counts_each_figure_once() {
        let mut m = Manifest::default();
        for f in FIGURES.skip(1) {
            m.qualitative.push(Qualitative { figure: f, note: String::new() });
        }
        assert_eq!(m.coverage_gaps(), vec![(2, 0)]);
        m.recipe.push(Recipe { figure: Some(2), ..recipe() });
        m.recipe.push(Recipe { figure: Some(3), ..recipe() });
        assert_eq!(m.coverage_gaps(), vec![(3, 2)]);
    }
}
