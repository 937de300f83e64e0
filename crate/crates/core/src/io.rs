//! File formats: volumes, encoding schemes, momenta, key=value config and
//! metric tables.
//!
//! A volume file is a text header followed by a little-endian f64 payload:
//!
//! ```text
//! QFLOW1
//! dims 16 16 16
//! spacing 2 2 2
//! origin 0 0 0
//! channels bfor 4 6 98.6875
//! table
//! 1 0 0
//! ...
//! background 0.41 0 ...
//! end
//! ```
//!
//! The channel line is one of `scalar`, `vec3`, `bfor L N_b tau` or
//! `dwi K`. Voxels are stored x-fastest with channels innermost. Numbers in
//! the header use the shortest representation that parses back exactly.

use crate::bfor::BforBasisSpec;
use crate::error::{Error, Result};
use crate::field::{CoefficientField, DeformationField, Grid};
use crate::lddmm::MomentumTrajectory;
use crate::phantom::EncodingScheme;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const VOLUME_MAGIC: &str = "QFLOW1";
pub const MOMENTUM_MAGIC: &str = "QFLOW-MOMENTUM1";

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar { grid: Grid, data: Vec<f64> },
    /// Deformations are stored as their point maps.
    Vec3 { grid: Grid, data: Vec<[f64; 3]> },
    Bfor(CoefficientField),
    /// Raw diffusion-weighted samples, `samples` per voxel.
    Dwi { grid: Grid, samples: usize, data: Vec<f64> },
}

impl Volume {
    pub fn grid(&self) -> &Grid {
        match self {
            Volume::Scalar { grid, .. } | Volume::Vec3 { grid, .. } | Volume::Dwi { grid, .. } => grid,
            Volume::Bfor(f) => f.grid(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Volume::Scalar { .. } => "scalar",
            Volume::Vec3 { .. } => "vec3",
            Volume::Bfor(_) => "bfor",
            Volume::Dwi { .. } => "dwi",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Volume::Scalar { .. } => 1,
            Volume::Vec3 { .. } => 3,
            Volume::Bfor(f) => f.channels(),
            Volume::Dwi { samples, .. } => *samples,
        }
    }

    pub fn into_bfor(self) -> Result<CoefficientField> {
        match self {
            Volume::Bfor(f) => Ok(f),
            other => Err(Error::Format(format!("expected a bfor volume, found {}", other.kind()))),
        }
    }

    pub fn into_deformation(self) -> Result<DeformationField> {
        match self {
            Volume::Vec3 { grid, data } => DeformationField::new(grid, data),
            other => Err(Error::Format(format!("expected a vec3 volume, found {}", other.kind()))),
        }
    }

    /// Non-zero scalar voxels.
    pub fn into_mask(self) -> Result<Vec<bool>> {
        match self {
            Volume::Scalar { data, .. } => Ok(data.iter().map(|v| *v != 0.0).collect()),
            other => Err(Error::Format(format!("expected a scalar mask volume, found {}", other.kind()))),
        }
    }
}

impl From<CoefficientField> for Volume {
    fn from(f: CoefficientField) -> Self {
        Volume::Bfor(f)
    }
}

impl From<DeformationField> for Volume {
    fn from(phi: DeformationField) -> Self {
        Volume::Vec3 { grid: *phi.grid(), data: phi.into_map() }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_volume_to(w: &mut impl Write, volume: &Volume) -> Result<()> {
    let g = volume.grid();
    let mut header = format!(
        "{VOLUME_MAGIC}\ndims {} {} {}\nspacing {}\norigin {}\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        join(&g.spacing),
        join(&g.origin)
    );
    match volume {
        Volume::Scalar { .. } => header.push_str("channels scalar\n"),
        Volume::Vec3 { .. } => header.push_str("channels vec3\n"),
        Volume::Dwi { samples, .. } => header.push_str(&format!("channels dwi {samples}\n")),
        Volume::Bfor(f) => {
            let s = f.spec();
            header.push_str(&format!("channels bfor {} {} {}\ntable\n", s.order(), s.radial(), s.tau()));
            for (n, idx) in s.channels() {
                header.push_str(&format!("{} {} {}\n", n, idx.l, idx.m));
            }
            header.push_str(&format!("background {}\n", join(f.background())));
        }
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(g.len() * volume.channels() * 8);
    let mut put = |v: f64| payload.extend_from_slice(&v.to_le_bytes());
    match volume {
        Volume::Scalar { data, .. } | Volume::Dwi { data, .. } => data.iter().for_each(|v| put(*v)),
        Volume::Vec3 { data, .. } => data.iter().flatten().for_each(|v| put(*v)),
        Volume::Bfor(f) => f.data().iter().for_each(|v| put(*v)),
    }
    w.write_all(&payload)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_fields<T: std::str::FromStr>(line: &str, key: &str, count: usize) -> Result<Vec<T>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(bad(format!("expected '{key}' line, found '{line}'")));
    }
    let vals: Vec<T> = parts
        .map(|p| p.parse::<T>().map_err(|_| bad(format!("cannot parse '{p}' in '{line}'"))))
        .collect::<Result<_>>()?;
    if vals.len() != count {
        return Err(bad(format!("'{key}' needs {count} values, found {}", vals.len())));
    }
    Ok(vals)
}

pub fn read_volume_from(r: &mut impl Read) -> Result<Volume> {
    let mut reader = BufReader::new(r);
    let mut next_line = || -> Result<String> {
        let mut s = String::new();
        let n = reader.read_line(&mut s).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => bad("header is not valid text"),
            _ => Error::Io(e),
        })?;
        if n == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(s.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line()? != VOLUME_MAGIC {
        return Err(bad("missing QFLOW1 magic"));
    }
    let dims: Vec<usize> = parse_fields(&next_line()?, "dims", 3)?;
    let spacing: Vec<f64> = parse_fields(&next_line()?, "spacing", 3)?;
    let origin: Vec<f64> = parse_fields(&next_line()?, "origin", 3)?;
    let grid = Grid::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], [origin[0], origin[1], origin[2]])
        .map_err(|e| bad(format!("invalid grid: {e}")))?;
    let channel_line = next_line()?;
    let parts: Vec<&str> = channel_line.split_whitespace().collect();
    enum Kind {
        Scalar,
        Vec3,
        Dwi(usize),
        Bfor(BforBasisSpec, Vec<f64>),
    }
    let kind = match parts.as_slice() {
        ["channels", "scalar"] => Kind::Scalar,
        ["channels", "vec3"] => Kind::Vec3,
        ["channels", "dwi", k] => {
            let k: usize = k.parse().map_err(|_| bad(format!("bad sample count '{k}'")))?;
            if k == 0 {
                return Err(bad("dwi volume needs at least one sample"));
            }
            Kind::Dwi(k)
        }
        ["channels", "bfor", l, nb, tau] => {
            let l: i64 = l.parse().map_err(|_| bad(format!("bad order '{l}'")))?;
            let nb: usize = nb.parse().map_err(|_| bad(format!("bad radial order '{nb}'")))?;
            let tau: f64 = tau.parse().map_err(|_| bad(format!("bad tau '{tau}'")))?;
            let spec = BforBasisSpec::new(l, nb, tau).map_err(|e| bad(format!("invalid basis: {e}")))?;
            if next_line()? != "table" {
                return Err(bad("missing channel table"));
            }
            for (n, idx) in spec.channels() {
                let line = next_line()?;
                let v: Vec<i64> = line
                    .split_whitespace()
                    .map(|p| p.parse().map_err(|_| bad(format!("bad channel row '{line}'"))))
                    .collect::<Result<_>>()?;
                if v != [n as i64, idx.l as i64, idx.m] {
                    return Err(bad(format!("channel row '{line}' does not match expected ({n}, {}, {})", idx.l, idx.m)));
                }
            }
            let background: Vec<f64> = parse_fields(&next_line()?, "background", spec.len())?;
            Kind::Bfor(spec, background)
        }
        _ => return Err(bad(format!("unknown channel descriptor '{channel_line}'"))),
    };
    if next_line()? != "end" {
        return Err(bad("missing 'end' header terminator"));
    }
    let channels = match &kind {
        Kind::Scalar => 1,
        Kind::Vec3 => 3,
        Kind::Dwi(k) => *k,
        Kind::Bfor(s, _) => s.len(),
    };
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = grid.len() * channels * 8;
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let data: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(match kind {
        Kind::Scalar => Volume::Scalar { grid, data },
        Kind::Vec3 => Volume::Vec3 { grid, data: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() },
        Kind::Dwi(samples) => Volume::Dwi { grid, samples, data },
        Kind::Bfor(spec, background) => {
            let mut f = CoefficientField::new(grid, spec, data)?;
            f.set_background(background)?;
            Volume::Bfor(f)
        }
    })
}

/// Write through a temporary sibling file and rename, so a failed write
/// leaves no partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let mut buf = Vec::new();
    write_volume_to(&mut buf, volume)?;
    write_atomic(path.as_ref(), &buf)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let mut f = fs::File::open(path)?;
    read_volume_from(&mut f)
}

/// Scheme rows `qx qy qz b` (mm⁻¹, s/mm²); `#` starts a comment.
pub fn parse_scheme(text: &str) -> Result<EncodingScheme> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|p| p.parse().map_err(|_| bad(format!("scheme line {}: cannot parse '{p}'", i + 1))))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(bad(format!("scheme line {}: expected 4 values, found {}", i + 1, v.len())));
        }
        rows.push(([v[0], v[1], v[2]], v[3]));
    }
    EncodingScheme::from_rows(&rows)
}

pub fn format_scheme(scheme: &EncodingScheme) -> String {
    let mut out = String::from("# qx qy qz b\n");
    for s in scheme.samples() {
        out.push_str(&format!("{} {} {} {}\n", s.q[0], s.q[1], s.q[2], s.b));
    }
    out
}

pub fn read_scheme(path: impl AsRef<Path>) -> Result<EncodingScheme> {
    parse_scheme(&fs::read_to_string(path)?)
}

pub fn write_scheme(path: impl AsRef<Path>, scheme: &EncodingScheme) -> Result<()> {
    write_atomic(path.as_ref(), format_scheme(scheme).as_bytes())
}

/// Text format: magic, grid, kernel width, time samples, control indices
/// and one `ax ay az` row per (step, control point).
pub fn format_momentum(m: &MomentumTrajectory) -> String {
    let g = m.grid();
    let mut out = format!(
        "{MOMENTUM_MAGIC}\ndims {} {} {}\nspacing {}\norigin {}\nsigma {}\ntime_samples {}\ncontrol {}\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        join(&g.spacing),
        join(&g.origin),
        m.sigma(),
        m.time_samples(),
        m.control().len()
    );
    for c in m.control() {
        out.push_str(&format!("{c}\n"));
    }
    for a in m.alpha() {
        out.push_str(&format!("{}\n", join(a)));
    }
    out
}

pub fn parse_momentum(text: &str) -> Result<MomentumTrajectory> {
    let mut lines = text.lines();
    let mut next = || lines.next().ok_or_else(|| bad("unexpected end of momentum file"));
    if next()? != MOMENTUM_MAGIC {
        return Err(bad("missing momentum magic"));
    }
    let dims: Vec<usize> = parse_fields(next()?, "dims", 3)?;
    let spacing: Vec<f64> = parse_fields(next()?, "spacing", 3)?;
    let origin: Vec<f64> = parse_fields(next()?, "origin", 3)?;
    let grid = Grid::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]], [origin[0], origin[1], origin[2]])?;
    let sigma = parse_fields::<f64>(next()?, "sigma", 1)?[0];
    let t = parse_fields::<usize>(next()?, "time_samples", 1)?[0];
    let c = parse_fields::<usize>(next()?, "control", 1)?[0];
    let control = (0..c)
        .map(|_| {
            let l = next()?;
            l.trim().parse().map_err(|_| bad(format!("bad control index '{l}'")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let rows = c * t.saturating_sub(1);
    let alpha = (0..rows)
        .map(|_| {
            let l = next()?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|p| p.parse().map_err(|_| bad(format!("bad momentum row '{l}'"))))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(bad(format!("momentum row '{l}' needs 3 values")));
            }
            Ok([v[0], v[1], v[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    MomentumTrajectory::new(grid, control, sigma, t, alpha)
}

pub fn write_momentum(path: impl AsRef<Path>, m: &MomentumTrajectory) -> Result<()> {
    write_atomic(path.as_ref(), format_momentum(m).as_bytes())
}

pub fn read_momentum(path: impl AsRef<Path>) -> Result<MomentumTrajectory> {
    parse_momentum(&fs::read_to_string(path)?)
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("config line {}: expected key=value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Tab-separated table with one header row.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}
