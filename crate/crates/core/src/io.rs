//! Line-oriented dataset files.
//!
//! Every file starts with `#format <name> <version> <count> <dims>` and then
//! holds `count` records of `t` followed by `dims` values, separated by
//! single spaces. Floats are written in shortest round-trip form so that
//! reading a file back reproduces the same bits.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pose_graph::{Odometry, Trajectory};
use crate::retrieval::RawDescriptor;
use crate::se2::Pose2;
use crate::simulator::{RevisitRegistry, World};

pub const FORMAT_VERSION: u32 = 1;

pub const ODOMETRY_FILE: &str = "odometry.txt";
pub const DESCRIPTORS_FILE: &str = "descriptors.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const REGISTRY_FILE: &str = "registry.txt";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header: {msg}")]
    Header { file: String, msg: String },
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
    #[error("{file}: header declares {declared} records, found {found}")]
    CountMismatch { file: String, declared: usize, found: usize },
    #[error("dataset frame counts disagree: {0}")]
    FrameMismatch(String),
}

impl IoError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Parsed table: the declared dimensionality and the `(t, values)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dims: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

pub fn write_table<W: Write>(mut w: W, name: &str, dims: usize, rows: &[(usize, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(w, "#format {name} {FORMAT_VERSION} {} {dims}", rows.len())?;
    let mut line = String::new();
    for (t, values) in rows {
        line.clear();
        write!(line, "{t}").expect("string write");
        for v in values {
            write!(line, " {v:?}").expect("string write");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Reads a table named `name`. `file` is only used in error messages.
pub fn read_table<R: Read>(r: R, name: &str, file: &str) -> Result<Table, IoError> {
    let mut lines = BufReader::new(r).lines();
    let header_err = |msg: String| IoError::Header {
        file: file.to_string(),
        msg,
    };
    let header = match lines.next() {
        Some(l) => l.map_err(|e| IoError::io(file, e))?,
        None => return Err(header_err("empty file".into())),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "#format" {
        return Err(header_err(format!("expected `#format <name> <version> <count> <dims>`, got {header:?}")));
    }
    if fields[1] != name {
        return Err(header_err(format!("expected format {name}, got {}", fields[1])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| header_err(format!("bad {what} {s:?}")));
    let version = num(fields[2], "version")?;
    if version != FORMAT_VERSION as usize {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let count = num(fields[3], "count")?;
    let dims = num(fields[4], "dims")?;

    let mut rows = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| IoError::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| IoError::Malformed {
            file: file.to_string(),
            line: line_no,
            msg,
        };
        let mut parts = line.split_whitespace();
        let t_str = parts.next().expect("non-empty line");
        let t = t_str
            .parse::<usize>()
            .map_err(|_| malformed(format!("bad frame index {t_str:?}")))?;
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(format!("bad number {p:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dims {
            return Err(malformed(format!("expected {dims} values, found {}", values.len())));
        }
        rows.push((t, values));
    }
    if rows.len() != count {
        return Err(IoError::CountMismatch {
            file: file.to_string(),
            declared: count,
            found: rows.len(),
        });
    }
    Ok(Table { dims, rows })
}

fn check_sequence(rows: &[(usize, Vec<f64>)], first: usize, file: &str) -> Result<(), IoError> {
    for (k, (t, _)) in rows.iter().enumerate() {
        if *t != first + k {
            return Err(IoError::Malformed {
                file: file.to_string(),
                line: k + 2,
                msg: format!("expected frame {}, found {t}", first + k),
            });
        }
    }
    Ok(())
}

fn pose_row(t: usize, p: &Pose2) -> (usize, Vec<f64>) {
    (t, vec![p.x, p.y, p.theta])
}

pub fn write_odometry<W: Write>(w: W, odometry: &Odometry) -> std::io::Result<()> {
    let rows: Vec<_> = odometry.deltas().iter().enumerate().map(|(k, d)| pose_row(k + 2, d)).collect();
    write_table(w, "odometry", 3, &rows)
}

pub fn read_odometry<R: Read>(r: R, file: &str) -> Result<Odometry, IoError> {
    let table = read_table(r, "odometry", file)?;
    if table.dims != 3 {
        return Err(IoError::Header {
            file: file.into(),
            msg: format!("odometry needs 3 values per record, header says {}", table.dims),
        });
    }
    check_sequence(&table.rows, 2, file)?;
    Ok(Odometry::from_deltas(
        table.rows.iter().map(|(_, v)| Pose2::new(v[0], v[1], v[2])).collect(),
    ))
}

pub fn write_trajectory<W: Write>(w: W, name: &str, traj: &Trajectory) -> std::io::Result<()> {
    let rows: Vec<_> = traj.poses().iter().enumerate().map(|(k, p)| pose_row(k + 1, p)).collect();
    write_table(w, name, 3, &rows)
}

pub fn read_trajectory<R: Read>(r: R, name: &str, file: &str) -> Result<Trajectory, IoError> {
    let table = read_table(r, name, file)?;
    if table.dims != 3 {
        return Err(IoError::Header {
            file: file.into(),
            msg: format!("poses need 3 values per record, header says {}", table.dims),
        });
    }
    check_sequence(&table.rows, 1, file)?;
    // Poses are stored already wrapped; keep the exact bits.
    Ok(Trajectory::from_poses(
        table
            .rows
            .iter()
            .map(|(_, v)| Pose2 {
                x: v[0],
                y: v[1],
                theta: v[2],
            })
            .collect(),
    ))
}

pub fn write_descriptors<W: Write>(w: W, descriptors: &[RawDescriptor]) -> std::io::Result<()> {
    let dims = descriptors.first().map_or(0, |d| d.values.len());
    let rows: Vec<_> = descriptors.iter().map(|d| (d.t, d.values.clone())).collect();
    write_table(w, "descriptors", dims, &rows)
}

pub fn read_descriptors<R: Read>(r: R, file: &str) -> Result<Vec<RawDescriptor>, IoError> {
    let table = read_table(r, "descriptors", file)?;
    check_sequence(&table.rows, 1, file)?;
    Ok(table
        .rows
        .into_iter()
        .map(|(t, values)| RawDescriptor { t, values })
        .collect())
}

pub fn write_registry<W: Write>(mut w: W, registry: &RevisitRegistry) -> std::io::Result<()> {
    writeln!(w, "#format registry {FORMAT_VERSION} {} 1", registry.len())?;
    for (a, b) in registry.pairs() {
        writeln!(w, "{a} {b}")?;
    }
    Ok(())
}

pub fn read_registry<R: Read>(r: R, file: &str) -> Result<RevisitRegistry, IoError> {
    let table = read_table(r, "registry", file)?;
    let mut pairs = Vec::with_capacity(table.rows.len());
    for (k, (t, v)) in table.rows.iter().enumerate() {
        let tp = v[0];
        if tp.fract() != 0.0 || tp < 1.0 || tp as usize == *t {
            return Err(IoError::Malformed {
                file: file.into(),
                line: k + 2,
                msg: format!("bad partner frame {tp}"),
            });
        }
        pairs.push((*t, tp as usize));
    }
    Ok(RevisitRegistry::from_pairs(pairs))
}

/// Dataset directory contents. Ground truth and registry are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub odometry: Odometry,
    pub descriptors: Vec<RawDescriptor>,
    pub ground_truth: Option<Trajectory>,
    pub registry: Option<RevisitRegistry>,
}

impl Dataset {
    pub fn from_world(world: &World) -> Self {
        Self {
            odometry: world.odometry.clone(),
            descriptors: world.descriptors.clone(),
            ground_truth: Some(world.ground_truth.trajectory.clone()),
            registry: Some(world.registry.clone()),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.descriptors.len()
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let t = self.descriptors.len();
        if self.odometry.num_frames() != t {
            return Err(IoError::FrameMismatch(format!(
                "{} descriptors but odometry covers {} frames",
                t,
                self.odometry.num_frames()
            )));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != t {
                return Err(IoError::FrameMismatch(format!("{t} descriptors but {} ground-truth poses", gt.len())));
            }
        }
        if let Some(reg) = &self.registry {
            if let Some(&(a, b)) = reg.pairs().iter().find(|(_, b)| *b > t) {
                return Err(IoError::FrameMismatch(format!("registry pair ({a}, {b}) beyond frame {t}")));
            }
        }
        if let Some(d) = self.descriptors.iter().find(|d| d.values.len() != self.descriptors[0].values.len()) {
            return Err(IoError::FrameMismatch(format!("descriptor {} has a different dimension", d.t)));
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, IoError> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

fn open(path: &Path) -> Result<fs::File, IoError> {
    fs::File::open(path).map_err(|e| IoError::io(path, e))
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<(), IoError> {
        let path = dir.join(name);
        let mut w = create(&path)?;
        f(&mut w).and_then(|_| w.flush()).map_err(|e| IoError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    emit(ODOMETRY_FILE, &|w| write_odometry(w, &data.odometry))?;
    emit(DESCRIPTORS_FILE, &|w| write_descriptors(w, &data.descriptors))?;
    if let Some(gt) = &data.ground_truth {
        emit(GROUND_TRUTH_FILE, &|w| write_trajectory(w, "ground_truth", gt))?;
    }
    if let Some(reg) = &data.registry {
        emit(REGISTRY_FILE, &|w| write_registry(w, reg))?;
    }
    Ok(written)
}

/// Reads a dataset directory. Odometry and descriptors are required.
pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let path_str = |name: &str| dir.join(name).display().to_string();
    let odometry = read_odometry(open(&dir.join(ODOMETRY_FILE))?, &path_str(ODOMETRY_FILE))?;
    let descriptors = read_descriptors(open(&dir.join(DESCRIPTORS_FILE))?, &path_str(DESCRIPTORS_FILE))?;
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let ground_truth = if gt_path.exists() {
        Some(read_trajectory(open(&gt_path)?, "ground_truth", &path_str(GROUND_TRUTH_FILE))?)
    } else {
        None
    };
    let reg_path = dir.join(REGISTRY_FILE);
    let registry = if reg_path.exists() {
        Some(read_registry(open(&reg_path)?, &path_str(REGISTRY_FILE))?)
    } else {
        None
    };
    let data = Dataset {
        odometry,
        descriptors,
        ground_truth,
        registry,
    };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, WorldConfig};

    #[test]
    fn header_and_rows() {
        let mut buf = Vec::new();
        write_table(&mut buf, "odometry", 3, &[(2, vec![0.1, -2.0, 1e-300])]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "#format odometry 1 1 3\n2 0.1 -2.0 1e-300\n");
        let t = read_table(buf.as_slice(), "odometry", "x").unwrap();
        assert_eq!(t.rows, vec![(2, vec![0.1, -2.0, 1e-300])]);
    }

    #[test]
    fn count_mismatch_rejected() {
        let text = "#format odometry 1 3 3\n2 0 0 0\n3 0 0 0\n";
        assert!(matches!(
            read_table(text.as_bytes(), "odometry", "f"),
            Err(IoError::CountMismatch { declared: 3, found: 2, .. })
        ));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "#format odometry 1 2 3\n2 0 0 0\n3 0 zero 0\n";
        match read_odometry(text.as_bytes(), "odo.txt") {
            Err(IoError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let gap = "#format odometry 1 2 3\n2 0 0 0\n4 0 0 0\n";
        assert!(matches!(read_odometry(gap.as_bytes(), "f"), Err(IoError::Malformed { line: 3, .. })));
        let short = "#format odometry 1 1 3\n2 0 0\n";
        assert!(matches!(read_odometry(short.as_bytes(), "f"), Err(IoError::Malformed { line: 2, .. })));
        assert!(read_table("#format registry 1 0 1\n".as_bytes(), "odometry", "f").is_err());
        assert!(read_table("".as_bytes(), "odometry", "f").is_err());
    }

    #[test]
    fn simulated_dataset_round_trips() {
        let world = generate(&WorldConfig {
            frames: 500,
            loop_size: 15.0,
            descriptor_dim: 8,
            rng_seed: 3,
            ..WorldConfig::default()
        })
        .unwrap();
        let data = Dataset::from_world(&world);
        let dir = tempfile::tempdir().unwrap();
        let files = write_dataset(dir.path(), &data).unwrap();
        assert_eq!(files.len(), 4);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);

        // Re-serializing what was read gives identical bytes.
        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &back).unwrap();
        for name in [ODOMETRY_FILE, DESCRIPTORS_FILE, GROUND_TRUTH_FILE, REGISTRY_FILE] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(again.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn inconsistent_frame_counts_rejected() {
        let world = generate(&WorldConfig { frames: 300, loop_size: 10.0, descriptor_dim: 4, ..WorldConfig::default() }).unwrap();
        let mut data = Dataset::from_world(&world);
        data.descriptors.pop();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(IoError::FrameMismatch(_))));
    }
}
