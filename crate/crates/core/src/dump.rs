//! Trajectory dumps. One file per run: a JSON header record followed by one
//! block per trajectory with rows (t, x, y, z, r). The readout after the last
//! state is NaN.
//!
//! CSV: first line `# ` + header JSON, then the column line
//! `traj,seed,k,t,x,y,z,r`.
//!
//! Binary (little endian): magic `QPTRAJ01`, u64 header length, header JSON,
//! then per trajectory u64 index, u64 seed, u64 row count and rows of five f64.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::UpdateScheme;
use crate::model::BlochState;
use crate::trajectory::Trajectory;

pub const MAGIC: &[u8; 8] = b"QPTRAJ01";
pub const COLUMNS: [&str; 8] = ["traj", "seed", "k", "t", "x", "y", "z", "r"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpFormat {
    Csv,
    Binary,
}

impl DumpFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DumpFormat::Csv => "csv",
            DumpFormat::Binary => "bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub master_seed: u64,
    pub scheme: UpdateScheme,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpedTrajectory {
    pub index: u64,
    pub trajectory: Trajectory,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn rows(tr: &Trajectory) -> impl Iterator<Item = [f64; 5]> + '_ {
    tr.times.iter().zip(&tr.states).enumerate().map(|(k, (&t, s))| {
        let r = tr.readouts.get(k).copied().unwrap_or(f64::NAN);
        [t, s.x, s.y, s.z, r]
    })
}

pub struct DumpWriter<W: Write> {
    format: DumpFormat,
    inner: Option<W>,
    csv: Option<csv::Writer<W>>,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut out: W, format: DumpFormat, header: &DumpHeader) -> Result<Self> {
        let json = serde_json::to_string(header).map_err(io_err)?;
        match format {
            DumpFormat::Csv => {
                writeln!(out, "# {json}")?;
                let mut w = csv::Writer::from_writer(out);
                w.write_record(COLUMNS).map_err(io_err)?;
                Ok(DumpWriter { format, inner: None, csv: Some(w) })
            }
            DumpFormat::Binary => {
                out.write_all(MAGIC)?;
                out.write_all(&(json.len() as u64).to_le_bytes())?;
                out.write_all(json.as_bytes())?;
                Ok(DumpWriter { format, inner: Some(out), csv: None })
            }
        }
    }

    pub fn write(&mut self, index: u64, tr: &Trajectory) -> Result<()> {
        match self.format {
            DumpFormat::Csv => {
                let w = self.csv.as_mut().expect("csv writer");
                for (k, row) in rows(tr).enumerate() {
                    let mut rec = vec![index.to_string(), tr.seed.to_string(), k.to_string()];
                    rec.extend(row.iter().map(|v| v.to_string()));
                    w.write_record(&rec).map_err(io_err)?;
                }
            }
            DumpFormat::Binary => {
                let w = self.inner.as_mut().expect("binary writer");
                w.write_all(&index.to_le_bytes())?;
                w.write_all(&tr.seed.to_le_bytes())?;
                w.write_all(&(tr.states.len() as u64).to_le_bytes())?;
                for row in rows(tr) {
                    for v in row {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        match (self.inner, self.csv) {
            (Some(mut w), _) => {
                w.flush()?;
                Ok(w)
            }
            (None, Some(c)) => c.into_inner().map_err(io_err),
            _ => unreachable!("writer holds one sink"),
        }
    }
}

fn trajectory_from_rows(seed: u64, scheme: UpdateScheme, data: &[[f64; 5]]) -> Result<Trajectory> {
    let mut times = Vec::with_capacity(data.len());
    let mut states = Vec::with_capacity(data.len());
    let mut readouts = Vec::with_capacity(data.len().saturating_sub(1));
    for (k, row) in data.iter().enumerate() {
        times.push(row[0]);
        states.push(BlochState { x: row[1], y: row[2], z: row[3] });
        if k + 1 < data.len() {
            readouts.push(row[4]);
        }
    }
    Ok(Trajectory { times, states, readouts, seed, scheme })
}

pub fn read_csv<R: BufRead>(mut input: R) -> Result<(DumpHeader, Vec<DumpedTrajectory>)> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::Io("missing header record".into()))?;
    let header: DumpHeader = serde_json::from_str(json.trim_end()).map_err(io_err)?;
    let mut reader = csv::Reader::from_reader(input);
    let mut out: Vec<DumpedTrajectory> = Vec::new();
    let mut current: Option<(u64, u64, Vec<[f64; 5]>)> = None;
    for rec in reader.records() {
        let rec = rec.map_err(io_err)?;
        let num = |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(io_err) };
        let index: u64 = rec[0].parse().map_err(io_err)?;
        let seed: u64 = rec[1].parse().map_err(io_err)?;
        let row = [num(3)?, num(4)?, num(5)?, num(6)?, num(7)?];
        match current.as_mut() {
            Some((i, _, data)) if *i == index => data.push(row),
            _ => {
                if let Some((i, s, data)) = current.take() {
                    out.push(DumpedTrajectory { index: i, trajectory: trajectory_from_rows(s, header.scheme, &data)? });
                }
                current = Some((index, seed, vec![row]));
            }
        }
    }
    if let Some((i, s, data)) = current {
        out.push(DumpedTrajectory { index: i, trajectory: trajectory_from_rows(s, header.scheme, &data)? });
    }
    Ok((header, out))
}

fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<(DumpHeader, Vec<DumpedTrajectory>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a trajectory dump".into()));
    }
    let len = read_u64(&mut input)? as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: DumpHeader = serde_json::from_slice(&json).map_err(io_err)?;
    let mut out = Vec::new();
    loop {
        let index = match read_u64(&mut input) {
            Ok(i) => i,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let seed = read_u64(&mut input)?;
        let n = read_u64(&mut input)? as usize;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0; 5];
            for v in row.iter_mut() {
                *v = f64::from_bits(read_u64(&mut input)?);
            }
            data.push(row);
        }
        out.push(DumpedTrajectory { index, trajectory: trajectory_from_rows(seed, header.scheme, &data)? });
    }
    Ok((header, out))
}
