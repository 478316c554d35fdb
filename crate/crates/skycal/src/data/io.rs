//! CSV and config-file ingestion with line-addressed errors.
//!
//! Two CSV schemas are supported, each in a lat/lon and a unit-vector
//! variant:
//!
//! - field data: `lat_deg,lon_deg,exposure_s,count,background_rate`
//!   (or `ux,uy,uz,exposure_s,count,background_rate`)
//! - simulator runs: `run_id,u_1,...,u_p,lat_deg,lon_deg,rate`
//!   (or the `ux,uy,uz` variant), rows grouped by `run_id`
//!
//! The parameter domain lives in a small TOML file with one
//! `[[parameter]]` table per axis.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::corpus::SimulatorCorpus;
use crate::data::domain::ParameterDomain;
use crate::data::field::{CoordFormat, FieldDataset};
use crate::data::location::SpatialLocation;
use crate::error::{Error, Result};
use crate::linalg::RowMatrix;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::io(path.display().to_string(), source)
}

fn csv_open_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Format {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

fn cell_err(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line: line as usize,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_num(path: &Path, line: u64, column: &str, text: &str) -> Result<f64> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(cell_err(path, line, column, format!("non-finite value {v}"))),
        Err(_) => Err(cell_err(path, line, column, format!("cannot parse '{text}' as a number"))),
    }
}

/// Reads coordinate columns (2 for lat/lon, 3 for unit vectors) into a
/// direction, reporting conversion failures against the first coordinate
/// column.
fn parse_location(
    path: &Path,
    line: u64,
    format: CoordFormat,
    cells: &[&str],
    columns: &[&str],
) -> Result<SpatialLocation> {
    match format {
        CoordFormat::LatLon => {
            let lat = parse_num(path, line, columns[0], cells[0])?;
            let lon = parse_num(path, line, columns[1], cells[1])?;
            SpatialLocation::from_latlon(lat, lon)
                .map_err(|e| cell_err(path, line, columns[0], e.to_string()))
        }
        CoordFormat::UnitVec => {
            let ux = parse_num(path, line, columns[0], cells[0])?;
            let uy = parse_num(path, line, columns[1], cells[1])?;
            let uz = parse_num(path, line, columns[2], cells[2])?;
            SpatialLocation::from_unit([ux, uy, uz])
                .map_err(|e| cell_err(path, line, columns[0], e.to_string()))
        }
    }
}

const FIELD_LATLON: [&str; 5] = ["lat_deg", "lon_deg", "exposure_s", "count", "background_rate"];
const FIELD_UNIT: [&str; 6] = ["ux", "uy", "uz", "exposure_s", "count", "background_rate"];

/// Loads a field-observation CSV. The dataset label is the file stem.
pub fn load_field_csv(path: impl AsRef<Path>) -> Result<FieldDataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_err(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_open_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();

    let format = if headers == FIELD_LATLON {
        CoordFormat::LatLon
    } else if headers == FIELD_UNIT {
        CoordFormat::UnitVec
    } else {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "unrecognized field header '{}'; expected '{}' or '{}'",
                headers.join(","),
                FIELD_LATLON.join(","),
                FIELD_UNIT.join(",")
            ),
        });
    };
    let n_coord = match format {
        CoordFormat::LatLon => 2,
        CoordFormat::UnitVec => 3,
    };

    let mut locations = Vec::new();
    let mut counts = Vec::new();
    let mut exposures = Vec::new();
    let mut backgrounds = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_open_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(cell_err(
                path,
                line,
                &headers[0],
                format!("row has {} fields, header has {}", record.len(), headers.len()),
            ));
        }
        let cells: Vec<&str> = record.iter().collect();
        let columns: Vec<&str> = headers.iter().map(String::as_str).collect();
        locations.push(parse_location(path, line, format, &cells[..n_coord], &columns[..n_coord])?);

        let exposure = parse_num(path, line, "exposure_s", cells[n_coord])?;
        if exposure <= 0.0 {
            return Err(cell_err(path, line, "exposure_s", format!("exposure {exposure} must be > 0")));
        }
        exposures.push(exposure);

        let count = parse_num(path, line, "count", cells[n_coord + 1])?;
        if count < 0.0 || count.fract() != 0.0 {
            return Err(cell_err(path, line, "count", format!("count {count} must be a nonnegative integer")));
        }
        counts.push(count);

        let background = parse_num(path, line, "background_rate", cells[n_coord + 2])?;
        if background < 0.0 {
            return Err(cell_err(path, line, "background_rate", format!("background rate {background} must be >= 0")));
        }
        backgrounds.push(background);
    }

    let label = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    FieldDataset::new(locations, counts, exposures, backgrounds, label)
}

/// Formats a float with Rust's shortest round-trip representation; integers
/// (counts) print without a fractional part.
fn num_to_csv(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn coord_cells(loc: &SpatialLocation, format: CoordFormat) -> Vec<String> {
    match format {
        CoordFormat::LatLon => {
            let (lat, lon) = loc.latlon();
            vec![format!("{lat}"), format!("{lon}")]
        }
        CoordFormat::UnitVec => loc.direction().iter().map(|c| format!("{c}")).collect(),
    }
}

/// Writes a field dataset back out in the chosen coordinate format.
pub fn write_field_csv(path: impl AsRef<Path>, data: &FieldDataset, format: CoordFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_err(path, e))?;
    let header: &[&str] = match format {
        CoordFormat::LatLon => &FIELD_LATLON,
        CoordFormat::UnitVec => &FIELD_UNIT,
    };
    w.write_record(header).map_err(|e| csv_open_err(path, e))?;
    for i in 0..data.len() {
        let mut row = coord_cells(&data.locations()[i], format);
        row.push(format!("{}", data.exposures()[i]));
        row.push(num_to_csv(data.counts()[i]));
        row.push(format!("{}", data.backgrounds()[i]));
        w.write_record(&row).map_err(|e| csv_open_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Loads a simulator-run CSV against a known parameter domain.
///
/// Rows must be grouped by `run_id` and every run must repeat the same grid
/// in the same order; the grid is stored once and shared.
pub fn load_simulator_csv(path: impl AsRef<Path>, domain: &ParameterDomain) -> Result<SimulatorCorpus> {
    let path = path.as_ref();
    let p = domain.dim();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_open_err(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_open_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();

    let expect_u: Vec<String> = (1..=p).map(|k| format!("u_{k}")).collect();
    let mut latlon_header = vec!["run_id".to_string()];
    latlon_header.extend(expect_u.iter().cloned());
    latlon_header.extend(["lat_deg".into(), "lon_deg".into(), "rate".into()]);
    let mut unit_header = vec!["run_id".to_string()];
    unit_header.extend(expect_u.iter().cloned());
    unit_header.extend(["ux".into(), "uy".into(), "uz".into(), "rate".into()]);

    let format = if headers == latlon_header {
        CoordFormat::LatLon
    } else if headers == unit_header {
        CoordFormat::UnitVec
    } else {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "unrecognized simulator header '{}' for a {p}-parameter domain; expected '{}' or '{}'",
                headers.join(","),
                latlon_header.join(","),
                unit_header.join(",")
            ),
        });
    };
    let n_coord = match format {
        CoordFormat::LatLon => 2,
        CoordFormat::UnitVec => 3,
    };

    let mut run_ids: Vec<String> = Vec::new();
    let mut designs: Vec<f64> = Vec::new();
    let mut grid: Vec<SpatialLocation> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    // Position within the current run's copy of the grid.
    let mut cursor = 0usize;

    for record in rdr.records() {
        let record = record.map_err(|e| csv_open_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(cell_err(
                path,
                line,
                "run_id",
                format!("row has {} fields, header has {}", record.len(), headers.len()),
            ));
        }
        let cells: Vec<&str> = record.iter().collect();
        let run_id = cells[0];
        let mut u = Vec::with_capacity(p);
        for k in 0..p {
            u.push(parse_num(path, line, &expect_u[k], cells[1 + k])?);
        }
        let columns: Vec<&str> = headers.iter().map(String::as_str).collect();
        let loc = parse_location(path, line, format, &cells[1 + p..1 + p + n_coord], &columns[1 + p..1 + p + n_coord])?;
        let rate = parse_num(path, line, "rate", cells[1 + p + n_coord])?;

        let is_new_run = run_ids.last().map(String::as_str) != Some(run_id);
        if is_new_run {
            if !run_ids.is_empty() && cursor != grid.len() {
                return Err(cell_err(
                    path,
                    line,
                    "run_id",
                    format!(
                        "run '{}' has {} rows but the first run defined a {}-point grid",
                        run_ids.last().unwrap(),
                        cursor,
                        grid.len()
                    ),
                ));
            }
            if run_ids.iter().any(|r| r == run_id) {
                return Err(cell_err(
                    path,
                    line,
                    "run_id",
                    format!("rows for run '{run_id}' are not contiguous (run id repeats)"),
                ));
            }
            run_ids.push(run_id.to_string());
            designs.extend_from_slice(&u);
            cursor = 0;
        } else {
            let base = (run_ids.len() - 1) * p;
            if designs[base..base + p] != u[..] {
                return Err(cell_err(
                    path,
                    line,
                    &expect_u[0],
                    format!("parameter values change within run '{run_id}'"),
                ));
            }
        }

        if run_ids.len() == 1 {
            grid.push(loc);
        } else {
            if cursor >= grid.len() {
                return Err(cell_err(
                    path,
                    line,
                    "run_id",
                    format!(
                        "run '{run_id}' has more rows than the {}-point grid of the first run",
                        grid.len()
                    ),
                ));
            }
            if grid[cursor] != loc {
                return Err(cell_err(
                    path,
                    line,
                    columns[1 + p],
                    format!("grid point {cursor} of run '{run_id}' differs from the first run's grid"),
                ));
            }
        }
        cursor += 1;
        rates.push(rate);
    }

    if run_ids.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: "simulator file contains no data rows".into(),
        });
    }
    if cursor != grid.len() {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "run '{}' has {} rows but the first run defined a {}-point grid",
                run_ids.last().unwrap(),
                cursor,
                grid.len()
            ),
        });
    }

    let n_runs = run_ids.len();
    let n_grid = grid.len();
    SimulatorCorpus::new(
        domain.clone(),
        run_ids,
        RowMatrix::new(n_runs, p, designs),
        grid,
        RowMatrix::new(n_runs, n_grid, rates),
    )
}

/// Writes a corpus in the grouped `run_id` layout.
pub fn write_simulator_csv(path: impl AsRef<Path>, corpus: &SimulatorCorpus, format: CoordFormat) -> Result<()> {
    let path = path.as_ref();
    let p = corpus.domain().dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_open_err(path, e))?;
    let mut header = vec!["run_id".to_string()];
    header.extend((1..=p).map(|k| format!("u_{k}")));
    match format {
        CoordFormat::LatLon => header.extend(["lat_deg".into(), "lon_deg".into()]),
        CoordFormat::UnitVec => header.extend(["ux".into(), "uy".into(), "uz".into()]),
    }
    header.push("rate".into());
    w.write_record(&header).map_err(|e| csv_open_err(path, e))?;
    for run in 0..corpus.n_runs() {
        for (j, loc) in corpus.grid().iter().enumerate() {
            let mut row = vec![corpus.run_ids()[run].clone()];
            row.extend(corpus.design(run).iter().map(|v| format!("{v}")));
            row.extend(coord_cells(loc, format));
            row.push(format!("{}", corpus.rates(run)[j]));
            w.write_record(&row).map_err(|e| csv_open_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DomainEntry {
    name: String,
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct DomainFile {
    parameter: Vec<DomainEntry>,
}

/// Loads a parameter domain from a TOML file of `[[parameter]]` tables, each
/// with `name`, `lower`, and `upper` keys.
pub fn load_domain_file(path: impl AsRef<Path>) -> Result<ParameterDomain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: DomainFile = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let names = file.parameter.iter().map(|e| e.name.clone()).collect();
    let lower = file.parameter.iter().map(|e| e.lower).collect();
    let upper = file.parameter.iter().map(|e| e.upper).collect();
    ParameterDomain::new(names, lower, upper)
}

/// Writes a domain in the format [`load_domain_file`] reads.
pub fn write_domain_file(path: impl AsRef<Path>, domain: &ParameterDomain) -> Result<()> {
    let path = path.as_ref();
    let file = DomainFile {
        parameter: (0..domain.dim())
            .map(|k| DomainEntry {
                name: domain.names()[k].clone(),
                lower: domain.lower()[k],
                upper: domain.upper()[k],
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&file).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(())
}
