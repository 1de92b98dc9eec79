use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::fem::NodalField;
use crate::models::Diagnostics;

/// Legacy ASCII VTK unstructured grid: leaf corners as points, one quad per
/// leaf, and the fields' values at the corners.
pub fn write_vtk(mut out: impl Write, fields: &[(&str, &NodalField)]) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Ok(());
    };
    let space = first.space();
    let p = space.degree();
    let np = p + 1;
    let corners = [0, p, np * np - 1, p * np];
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "quadtree field snapshot")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    let n_cells = space.n_leaves();
    writeln!(out, "POINTS {} double", 4 * n_cells)?;
    for leaf in space.mesh().leaves() {
        let [x0, y0] = leaf.lower_corner();
        let h = leaf.width();
        for [dx, dy] in [[0.0, 0.0], [h, 0.0], [h, h], [0.0, h]] {
            writeln!(out, "{:e} {:e} 0", x0 + dx, y0 + dy)?;
        }
    }
    writeln!(out, "CELLS {} {}", n_cells, 5 * n_cells)?;
    for e in 0..n_cells {
        writeln!(out, "4 {} {} {} {}", 4 * e, 4 * e + 1, 4 * e + 2, 4 * e + 3)?;
    }
    writeln!(out, "CELL_TYPES {n_cells}")?;
    for _ in 0..n_cells {
        writeln!(out, "9")?;
    }
    writeln!(out, "CELL_DATA {n_cells}")?;
    writeln!(out, "SCALARS level int 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for leaf in space.mesh().leaves() {
        writeln!(out, "{}", leaf.level())?;
    }
    writeln!(out, "POINT_DATA {}", 4 * n_cells)?;
    for (name, field) in fields {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for e in 0..n_cells {
            let u = field.local_values(e);
            for c in corners {
                writeln!(out, "{:e}", u[c])?;
            }
        }
    }
    Ok(())
}

pub fn write_vtk_file(path: &Path, fields: &[(&str, &NodalField)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_vtk(&mut w, fields)?;
    w.flush()?;
    Ok(())
}

/// `key=value` lines.
pub fn format_summary(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parse `key=value` lines back into pairs.
pub fn parse_summary(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Write `diagnostics.csv` (when given) and `summary.txt` into `dir`.
pub fn emit_outputs(dir: &Path, diagnostics: Option<&Diagnostics>, summary: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(d) = diagnostics {
        let mut w = BufWriter::new(fs::File::create(dir.join("diagnostics.csv"))?);
        d.write_csv(&mut w)?;
        w.flush()?;
    }
    fs::write(dir.join("summary.txt"), format_summary(summary))?;
    Ok(())
}
