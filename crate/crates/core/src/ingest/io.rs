use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{DoseBins, OBSERVATION_COLUMNS};
use crate::model::{Dims, Layout, ObservationSet, Variant};
use crate::sampler::PosteriorDraws;
use crate::{Error, Result};

pub const DRAWS_MAGIC: &str = "#dart-draws v1";

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Write replicate-level observations; each bin is written at a
/// representative dose so reading back recovers the same bins.
pub fn write_observations(
    path: &Path,
    data: &ObservationSet,
    chemicals: &[String],
    genes: &[String],
    bins: &DoseBins,
) -> Result<()> {
    if chemicals.len() != data.n_chemicals() || genes.len() != data.n_genes() || bins.centers.len() != data.n_doses() {
        return Err(Error::Dimension("id lists or bins do not match the observation set".into()));
    }
    let mut w = create(path)?;
    w.write_record(OBSERVATION_COLUMNS)?;
    for (&(i, j, d), reps) in data.cells() {
        let dose = bins.representative_dose(d).to_string();
        for (r, y) in reps.iter().enumerate() {
            w.write_record([
                chemicals[i].as_str(),
                genes[j].as_str(),
                &dose,
                &(r + 1).to_string(),
                &y.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labeled_matrix(
    path: &Path,
    id_column: &str,
    ids: &[String],
    columns: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if values.shape() != (ids.len(), columns.len()) {
        return Err(Error::Dimension(format!(
            "matrix is {:?} for {} ids and {} columns",
            values.shape(),
            ids.len(),
            columns.len()
        )));
    }
    let mut w = create(path)?;
    w.write_record(std::iter::once(id_column).chain(columns.iter().map(String::as_str)))?;
    for (id, row) in ids.iter().zip(values.row_iter()) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `index,<name>` table mapping dense indices back to ids.
pub fn write_dictionary(path: &Path, name: &str, ids: &[String]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["index", name])?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([i.to_string(), id.clone()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dictionary(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let index: usize = row.get(0).unwrap_or("").parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: "bad index".into(),
        })?;
        if index != out.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected index {}, found {index}", out.len()),
            });
        }
        out.push(row.get(1).unwrap_or("").to_string());
    }
    Ok(out)
}

/// Write unconstrained draws: a magic line, `#variant=` and `#dims=` lines,
/// then CSV with per-draw bookkeeping followed by one column per coordinate.
pub fn write_draws(path: &Path, layout: &Layout, draws: &PosteriorDraws<Vec<f64>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let Dims { n, m, d, k, p, q } = layout.dims;
    let variant = match layout.variant {
        Variant::Dart => "dart",
        Variant::DartNc => "dart-nc",
    };
    let io = |e| Error::io(path, e);
    writeln!(out, "{DRAWS_MAGIC}").map_err(io)?;
    writeln!(out, "#variant={variant}").map_err(io)?;
    writeln!(out, "#dims={n},{m},{d},{k},{p},{q}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let names = (0..layout.len).map(|c| layout.coordinate_name(c));
    w.write_record(
        ["chain", "iteration", "log_posterior", "divergent"]
            .into_iter()
            .map(String::from)
            .chain(names),
    )?;
    for s in 0..draws.len() {
        if draws.draws[s].len() != layout.len {
            return Err(Error::Dimension(format!(
                "draw {s} has {} coordinates, layout has {}",
                draws.draws[s].len(),
                layout.len
            )));
        }
        w.write_record(
            [
                draws.chain[s].to_string(),
                draws.iteration[s].to_string(),
                draws.log_posterior[s].to_string(),
                u8::from(draws.divergent[s]).to_string(),
            ]
            .into_iter()
            .chain(draws.draws[s].iter().map(|v| v.to_string())),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_draws(path: &Path) -> Result<(Layout, PosteriorDraws<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut meta = Vec::new();
    for line in 1..=3 {
        let mut s = String::new();
        reader.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        meta.push(s.trim_end().to_string());
        if line == 1 && meta[0] != DRAWS_MAGIC {
            return Err(bad(1, format!("not a draws file (expected `{DRAWS_MAGIC}`)")));
        }
    }
    let variant = match meta[1].strip_prefix("#variant=") {
        Some("dart") => Variant::Dart,
        Some("dart-nc") => Variant::DartNc,
        _ => return Err(bad(2, format!("bad variant line `{}`", meta[1]))),
    };
    let dims: Vec<usize> = meta[2]
        .strip_prefix("#dims=")
        .ok_or_else(|| bad(3, "missing dims line".into()))?
        .split(',')
        .map(|v| v.parse().map_err(|_| bad(3, format!("bad dims `{}`", meta[2]))))
        .collect::<Result<_>>()?;
    let [n, m, d, k, p, q] = dims[..] else {
        return Err(bad(3, "dims needs six entries".into()));
    };
    let layout = Layout::new(Dims { n, m, d, k, p, q }, variant);
    let mut csv = csv::Reader::from_reader(reader);
    if csv.headers()?.len() != layout.len + 4 {
        return Err(bad(4, format!("expected {} columns", layout.len + 4)));
    }
    let mut out = PosteriorDraws::default();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line()) + 3;
        let num = |idx: usize| -> Result<f64> {
            row.get(idx)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(line, format!("bad number in column {}", idx + 1)))
        };
        out.chain.push(num(0)? as usize);
        out.iteration.push(num(1)? as usize);
        out.log_posterior.push(num(2)?);
        out.divergent.push(num(3)? != 0.0);
        out.draws.push((4..layout.len + 4).map(num).collect::<Result<_>>()?);
    }
    Ok((layout, out))
}
