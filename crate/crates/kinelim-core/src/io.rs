//! On-disk artifacts: the compact binary snapshot container and the
//! deterministic CSV series.
//!
//! Floats are written with Rust's shortest-roundtrip formatting and files are
//! laid out in a fixed order, so identical runs produce byte-identical
//! outputs.

use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::moments::MacroFields;
use crate::sim::{Distribution, TrajectorySink};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"KLSN";
const VERSION: u32 = 1;

/// Streaming writer for the binary snapshot container.
pub struct SnapshotWriter {
    out: BufWriter<File>,
    n_cells: usize,
    n_nodes: usize,
    pub count: usize,
}

impl SnapshotWriter {
    pub fn create(path: &Path, n_cells: usize, n_nodes: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(n_cells as u64).to_le_bytes())?;
        out.write_all(&(n_nodes as u64).to_le_bytes())?;
        Ok(SnapshotWriter { out, n_cells, n_nodes, count: 0 })
    }

    pub fn append(&mut self, g: &Distribution) -> Result<()> {
        if g.n_cells != self.n_cells || g.n_nodes != self.n_nodes {
            return Err(Error::shape("snapshot shape does not match container"));
        }
        self.out.write_all(&g.t.to_le_bytes())?;
        self.out.write_all(&g.eps.to_le_bytes())?;
        for v in &g.data {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Streaming reader for the binary snapshot container.
pub struct SnapshotReader {
    input: BufReader<File>,
    pub n_cells: usize,
    pub n_nodes: usize,
}

impl SnapshotReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Usage(format!("{} is not a snapshot container", path.display())));
        }
        let mut buf4 = [0u8; 4];
        input.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(Error::Usage(format!("unsupported container version {version}")));
        }
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf8)?;
        let n_cells = u64::from_le_bytes(buf8) as usize;
        input.read_exact(&mut buf8)?;
        let n_nodes = u64::from_le_bytes(buf8) as usize;
        Ok(SnapshotReader { input, n_cells, n_nodes })
    }

    /// Reads the next snapshot, or None at end of stream.
    pub fn next_snapshot(&mut self) -> Result<Option<Distribution>> {
        let mut buf8 = [0u8; 8];
        match self.input.read_exact(&mut buf8) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let t = f64::from_le_bytes(buf8);
        self.input.read_exact(&mut buf8)?;
        let eps = f64::from_le_bytes(buf8);
        let mut data = vec![0.0; self.n_cells * self.n_nodes];
        let mut raw = vec![0u8; data.len() * 8];
        self.input.read_exact(&mut raw)?;
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Some(Distribution { data, n_cells: self.n_cells, n_nodes: self.n_nodes, t, eps }))
    }

    pub fn read_all(mut self) -> Result<Vec<Distribution>> {
        let mut out = Vec::new();
        while let Some(s) = self.next_snapshot()? {
            out.push(s);
        }
        Ok(out)
    }
}

/// Formats a float with shortest-roundtrip precision (deterministic).
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Disk-backed trajectory sink: `energy.csv`, `moments.csv` and (optionally)
/// `snapshots.bin` under one directory.
pub struct DiskSink {
    energy: BufWriter<File>,
    moments: BufWriter<File>,
    snapshots: Option<SnapshotWriter>,
    probes: Vec<usize>,
    eps: f64,
    prev_t: Option<f64>,
    prev_d_sq: f64,
    prev_c_sq: f64,
    int_d2: f64,
    int_c2: f64,
}

impl DiskSink {
    pub fn create(
        dir: &Path,
        probes: &[usize],
        eps: f64,
        with_snapshots: Option<(usize, usize)>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut energy = BufWriter::new(File::create(dir.join("energy.csv"))?);
        writeln!(energy, "t,E_N,C_N,D_N,E_N_combined,int_D2_over_eps2,int_C2")?;
        let mut moments = BufWriter::new(File::create(dir.join("moments.csv"))?);
        let mut header = String::from("t");
        for p in 0..probes.len() {
            for name in ["rho", "u1", "u2", "u3", "theta3", "theta5"] {
                header.push_str(&format!(",{name}_p{p}"));
            }
        }
        for name in ["rho", "u1", "u2", "u3", "theta3", "theta5"] {
            header.push_str(&format!(",{name}_mean"));
        }
        writeln!(moments, "{header}")?;
        let snapshots = match with_snapshots {
            Some((n_cells, n_nodes)) => {
                Some(SnapshotWriter::create(&dir.join("snapshots.bin"), n_cells, n_nodes)?)
            }
            None => None,
        };
        Ok(DiskSink {
            energy,
            moments,
            snapshots,
            probes: probes.to_vec(),
            eps,
            prev_t: None,
            prev_d_sq: 0.0,
            prev_c_sq: 0.0,
            int_d2: 0.0,
            int_c2: 0.0,
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.energy.flush()?;
        self.moments.flush()?;
        if let Some(w) = self.snapshots.take() {
            w.finish()?;
        }
        Ok(())
    }
}

impl TrajectorySink for DiskSink {
    fn on_report(&mut self, t: f64, fields: &MacroFields, report: &EnergyReport) -> Result<()> {
        let d_sq = report.d_n * report.d_n / (self.eps * self.eps);
        let c_sq = report.c_n * report.c_n;
        if let Some(prev) = self.prev_t {
            let dt = t - prev;
            self.int_d2 += 0.5 * dt * (self.prev_d_sq + d_sq);
            self.int_c2 += 0.5 * dt * (self.prev_c_sq + c_sq);
        }
        self.prev_t = Some(t);
        self.prev_d_sq = d_sq;
        self.prev_c_sq = c_sq;
        writeln!(
            self.energy,
            "{},{},{},{},{},{},{}",
            fmt_f64(t),
            fmt_f64(report.e_n),
            fmt_f64(report.c_n),
            fmt_f64(report.d_n),
            fmt_f64(report.e_n_combined),
            fmt_f64(self.int_d2),
            fmt_f64(self.int_c2)
        )?;

        let mut row = fmt_f64(t);
        let n_cells = fields.rho.len();
        for &probe in &self.probes {
            let p = probe.min(n_cells - 1);
            for series in [
                &fields.rho,
                &fields.u[0],
                &fields.u[1],
                &fields.u[2],
                &fields.theta,
                &fields.theta5,
            ] {
                row.push(',');
                row.push_str(&fmt_f64(series[p]));
            }
        }
        for series in
            [&fields.rho, &fields.u[0], &fields.u[1], &fields.u[2], &fields.theta, &fields.theta5]
        {
            let mean = series.iter().sum::<f64>() / n_cells as f64;
            row.push(',');
            row.push_str(&fmt_f64(mean));
        }
        writeln!(self.moments, "{row}")?;
        Ok(())
    }

    fn on_snapshot(&mut self, g: &Distribution) -> Result<()> {
        if let Some(w) = self.snapshots.as_mut() {
            w.append(g)?;
        }
        Ok(())
    }
}

/// Writes a JSON file with stable formatting.
pub fn write_json_pretty(path: &Path, payload: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(payload.as_bytes())?;
    if !payload.ends_with('\n') {
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Error manifest written when a run aborts partway.
pub fn write_error_manifest(dir: &Path, message: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("error_manifest.json");
    let payload = format!("{{\n  \"status\": \"aborted\",\n  \"error\": {:?}\n}}\n", message);
    std::fs::write(&path, payload)?;
    Ok(path)
}
