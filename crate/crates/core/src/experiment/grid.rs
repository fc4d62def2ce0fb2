//! Ablation grids: the cross product of per-axis value lists applied on top
//! of a base configuration.
//!
//! A grid file is an experiment config plus a `[grid]` section whose keys
//! name the overridden setting as `section.key` and whose values are
//! comma-separated lists:
//!
//! ```text
//! [grid]
//! partition.classes_per_client = 1, 2, 3
//! balance.supplement_pct = 10, 20, 100
//! ```
//!
//! Each cell writes into its own directory and is skipped when its summary
//! already exists, so an interrupted grid resumes where it stopped.

use super::config::{is_known_key, parse_ini, ConfigError, ExperimentConfig};
use super::run::{run_experiment, write_file, ExperimentError, SUMMARY_FILE};
use crate::par::{self, Parallelism};
use crate::rng::fnv1a;
use ini::Ini;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Axis {
    pub section: String,
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn name(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }
}

#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub base: Ini,
    pub axes: Vec<Axis>,
    /// Run cells concurrently.
    pub parallelism: Parallelism,
}

/// One cell: the chosen value per axis, in axis order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub index: usize,
    pub values: Vec<String>,
}

impl FromStr for AblationGrid {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut ini = parse_ini(text)?;
        let mut axes = Vec::new();
        if let Some(grid) = ini.delete(Some("grid")) {
            for (name, list) in grid.iter() {
                let (section, key) = name
                    .split_once('.')
                    .filter(|(s, k)| is_known_key(s, k))
                    .ok_or_else(|| ConfigError::UnknownKey {
                        section: "grid".into(),
                        key: name.into(),
                    })?;
                let values: Vec<String> = list
                    .split(',')
                    .map(|v| v.trim().to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                if values.is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "grid axis {name} has no values"
                    )));
                }
                axes.push(Axis {
                    section: section.into(),
                    key: key.into(),
                    values,
                });
            }
        }
        let base_cfg = ExperimentConfig::from_ini(&ini)?;
        let grid = AblationGrid {
            base: ini,
            axes,
            parallelism: base_cfg.parallelism,
        };
        for cell in grid.cells() {
            grid.cell_config(&cell)?;
        }
        Ok(grid)
    }
}

impl AblationGrid {
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All cells, last axis varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        (0..self.len())
            .map(|index| {
                let mut rest = index;
                let mut values = vec![String::new(); self.axes.len()];
                for (slot, axis) in values.iter_mut().zip(&self.axes).rev() {
                    *slot = axis.values[rest % axis.values.len()].clone();
                    rest /= axis.values.len();
                }
                Cell { index, values }
            })
            .collect()
    }

    /// `name=value` pairs joined by `;`, which also seeds the cell.
    pub fn cell_key(&self, cell: &Cell) -> String {
        self.axes
            .iter()
            .zip(&cell.values)
            .map(|(a, v)| format!("{}={v}", a.name()))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Directory name for a cell; stable and filesystem-safe.
    pub fn cell_dir_name(&self, cell: &Cell) -> String {
        if self.axes.is_empty() {
            return "base".into();
        }
        self.cell_key(cell)
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '.' | '=' | '-' | '_') {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }

    /// Base config with the cell's overrides. The seed is the (possibly
    /// overridden) base seed plus the FNV-1a hash of the cell key, so adding
    /// an axis never changes the seeds of other axes' cells.
    pub fn cell_config(&self, cell: &Cell) -> Result<ExperimentConfig, ConfigError> {
        let mut ini = self.base.clone();
        for (axis, value) in self.axes.iter().zip(&cell.values) {
            ini.with_section(Some(axis.section.as_str()))
                .set(axis.key.as_str(), value.as_str());
        }
        let mut cfg = ExperimentConfig::from_ini(&ini)?;
        if !self.axes.is_empty() {
            cfg.seed = cfg.seed.wrapping_add(fnv1a(self.cell_key(cell).as_bytes()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub cell: Cell,
    pub seed: u64,
    pub tag: String,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// False when the cell's output already existed.
    pub computed: bool,
}

pub const GRID_SUMMARY_FILE: &str = "grid_summary.csv";

fn read_cell_summary(path: &Path) -> Option<(String, f64, f64)> {
    let text = fs::read_to_string(path).ok()?;
    let row = text.lines().nth(1)?;
    let fields: Vec<&str> = row.split(',').collect();
    let n = fields.len();
    (n >= 7).then(|| {
        Some((
            fields[0].to_string(),
            fields[n - 2].parse().ok()?,
            fields[n - 1].parse().ok()?,
        ))
    })?
}

/// Runs every cell not yet on disk under `out/cells/`, then writes
/// `out/grid_summary.csv` with one row per cell.
pub fn run_grid(grid: &AblationGrid, out: &Path) -> Result<Vec<GridRow>, ExperimentError> {
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir).map_err(|e| ExperimentError::io(&cells_dir, e))?;
    let cells = grid.cells();
    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        configs.push(grid.cell_config(cell)?);
    }
    // cells are independent; within a parallel grid each cell runs sequentially
    let rows = par::map_range(
        grid.parallelism,
        cells.len(),
        |i| -> Result<GridRow, ExperimentError> {
            let cell = &cells[i];
            let dir: PathBuf = cells_dir.join(grid.cell_dir_name(cell));
            let mut cfg = configs[i].clone();
            if grid.parallelism.is_parallel() && cells.len() > 1 {
                cfg.parallelism = Parallelism::Sequential;
            }
            let (tag, final_accuracy, best_accuracy, computed) =
                match read_cell_summary(&dir.join(SUMMARY_FILE)) {
                    Some((tag, f, b)) => (tag, f, b, false),
                    None => {
                        let r = run_experiment(&cfg, &dir)?;
                        (r.tag, r.final_accuracy, r.best_accuracy, true)
                    }
                };
            Ok(GridRow {
                cell: cell.clone(),
                seed: cfg.seed,
                tag,
                final_accuracy,
                best_accuracy,
                computed,
            })
        },
    );
    let rows: Vec<GridRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let path = out.join(GRID_SUMMARY_FILE);
    write_file(&path, |w| {
        let mut header: Vec<String> = grid.axes.iter().map(Axis::name).collect();
        header.extend(["seed", "tag", "final_acc", "best_acc"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &rows {
            let mut fields = r.cell.values.clone();
            fields.push(r.seed.to_string());
            fields.push(r.tag.clone());
            fields.push(format!("{:.6}", r.final_accuracy));
            fields.push(format!("{:.6}", r.best_accuracy));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    })?;
    Ok(rows)
}
