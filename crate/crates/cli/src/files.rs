//! Small text formats used only by the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use pcrk_core::geom::check_rotation;
use pcrk_core::{Camera, Error, Result};

fn numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("{what}: '{t}' is not a number"))))
        .collect()
}

/// Camera file: `key=value` lines with `fx`, `fy`, `cx`, `cy` and optional
/// `R` (nine row-major numbers) and `t` (three numbers); `#` starts a
/// comment.
pub fn parse_camera(text: &str) -> Result<Camera> {
    let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
    let mut rotation = Matrix3::identity();
    let mut translation = Vector3::zeros();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse(format!("camera line {}: expected key=value", i + 1)))?;
        let vals = numbers(value, &format!("camera key {}", key.trim()))?;
        let scalar = || -> Result<f64> {
            match vals.as_slice() {
                [v] => Ok(*v),
                _ => Err(Error::Parse(format!("camera line {}: expected one number", i + 1))),
            }
        };
        match key.trim() {
            "fx" => fx = Some(scalar()?),
            "fy" => fy = Some(scalar()?),
            "cx" => cx = Some(scalar()?),
            "cy" => cy = Some(scalar()?),
            "R" => {
                if vals.len() != 9 {
                    return Err(Error::Parse("camera R needs 9 numbers".into()));
                }
                rotation = Matrix3::from_row_slice(&vals);
            }
            "t" => {
                if vals.len() != 3 {
                    return Err(Error::Parse("camera t needs 3 numbers".into()));
                }
                translation = Vector3::from_row_slice(&vals);
            }
            other => return Err(Error::Parse(format!("unknown camera key '{other}'"))),
        }
    }
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Error::Parse(format!("camera file lacks '{k}'")));
    Camera::new(need(fx, "fx")?, need(fy, "fy")?, need(cx, "cx")?, need(cy, "cy")?, rotation, translation)
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    parse_camera(&fs::read_to_string(path)?)
}

/// Nine numbers, row-major, forming a rotation matrix.
pub fn parse_rotation(text: &str) -> Result<Matrix3<f64>> {
    let vals = numbers(text, "rotation")?;
    if vals.len() != 9 {
        return Err(Error::Parse(format!("rotation needs 9 numbers, found {}", vals.len())));
    }
    let r = Matrix3::from_row_slice(&vals);
    check_rotation(&r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(r)
}

pub fn read_rotation(path: &Path) -> Result<Matrix3<f64>> {
    parse_rotation(&fs::read_to_string(path)?)
}

/// Splits a listing file into rows of `fields` comma- or
/// whitespace-separated values, resolving relative paths against the
/// listing's directory. Blank lines and `#` comments are skipped; a first
/// row equal to `header` is skipped too.
pub fn read_listing(path: &Path, fields: usize, header: Option<&str>) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if rows.is_empty() && header.is_some_and(|h| line.replace(' ', "") == h) {
            continue;
        }
        let cols: Vec<String> = if line.contains(',') {
            line.split(',').map(|c| c.trim().to_string()).collect()
        } else {
            line.split_whitespace().map(str::to_string).collect()
        };
        if cols.len() != fields || cols.iter().any(String::is_empty) {
            return Err(Error::Parse(format!("{}:{}: expected {fields} fields", path.display(), i + 1)));
        }
        rows.push(cols);
    }
    Ok(rows)
}

pub fn resolve(listing: &Path, entry: &str) -> PathBuf {
    let p = PathBuf::from(entry);
    if p.is_absolute() {
        p
    } else {
        listing.parent().unwrap_or(Path::new(".")).join(p)
    }
}
