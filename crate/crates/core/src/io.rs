//! On-disk formats.
//!
//! * Sequence files are JSON lines. The first line is a header naming the
//!   format, version and joint order; each following line is either a
//!   `frame` record (one person, one frame) or a `mask` record carrying a
//!   run-length encoded occlusion mask for one person.
//! * Camera files hold a single JSON object with the intrinsics.
//! * Trajectory files are CSV with a `#` version comment.
//!
//! Reals are written with shortest round-trip formatting, so loading a
//! saved file reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, Point2, Point3};
use crate::mask::{confidence_to_mask, decode_runs, encode_runs, OcclusionMask};
use crate::skeleton::{JOINT_NAMES, N_JOINTS, ROOT};

pub const SEQUENCE_FORMAT: &str = "gatedpose-sequence";
pub const CAMERA_FORMAT: &str = "gatedpose-camera";
pub const TRAJECTORY_HEADER: &str = "# gatedpose-trajectory v1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame {frame} of person {person} is not after the previous frame")]
    Order { line: usize, person: u32, frame: u64 },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub person: u32,
    pub frame: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub action: String,
    /// `(u, v, confidence)` per joint, pixels.
    pub joints_2d: Vec<[f64; 3]>,
    /// Root-relative positions in millimeters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_3d_rel: Option<Vec<[f64; 3]>>,
    /// Root position in camera coordinates, millimeters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_3d: Option<[f64; 3]>,
}

/// Occlusion mask of one person; column `t` belongs to the person's `t`-th
/// frame record. Each joint row is a list of alternating run lengths that
/// starts with a visible run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub person: u32,
    pub frames: usize,
    pub runs: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceHeader {
    format: String,
    version: u32,
    n_joints: usize,
    joints: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Frame(SequenceRecord),
    Mask(MaskRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFile {
    pub n_joints: usize,
    pub records: Vec<SequenceRecord>,
    pub masks: Vec<MaskRecord>,
}

impl Default for SequenceFile {
    fn default() -> Self {
        Self {
            n_joints: N_JOINTS,
            records: Vec::new(),
            masks: Vec::new(),
        }
    }
}

fn check_record(rec: &SequenceRecord, n_joints: usize) -> Result<(), String> {
    if rec.joints_2d.len() != n_joints {
        return Err(format!("expected {n_joints} joints, got {}", rec.joints_2d.len()));
    }
    let mut finite = rec.joints_2d.iter().flatten().all(|v| v.is_finite());
    if let Some(j3) = &rec.joints_3d_rel {
        if j3.len() != n_joints {
            return Err(format!("expected {n_joints} 3D joints, got {}", j3.len()));
        }
        if j3[ROOT] != [0.0; 3] {
            return Err(format!("root joint is {:?}, expected the origin", j3[ROOT]));
        }
        finite &= j3.iter().flatten().all(|v| v.is_finite());
    }
    if let Some(r) = &rec.root_3d {
        finite &= r.iter().all(|v| v.is_finite());
    }
    if finite {
        Ok(())
    } else {
        Err("non-finite value".into())
    }
}

/// Parses a sequence file from any reader, validating as it streams.
pub fn read_sequence<R: BufRead>(reader: R) -> Result<SequenceFile, IoError> {
    let mut out = SequenceFile::default();
    let mut seen_header = false;
    let mut last_frame: BTreeMap<u32, u64> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IoError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| IoError::Parse {
            line: lineno,
            message,
        };
        if !seen_header {
            let h: SequenceHeader = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if h.format != SEQUENCE_FORMAT {
                return Err(parse_err(format!("unknown format {:?}", h.format)));
            }
            if h.version != FORMAT_VERSION {
                return Err(parse_err(format!("unsupported version {}", h.version)));
            }
            if h.joints.len() != h.n_joints {
                return Err(parse_err("joint name count differs from n_joints".into()));
            }
            out.n_joints = h.n_joints;
            seen_header = true;
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| parse_err(e.to_string()))? {
            Line::Frame(rec) => {
                check_record(&rec, out.n_joints).map_err(parse_err)?;
                if let Some(&prev) = last_frame.get(&rec.person) {
                    if rec.frame <= prev {
                        return Err(IoError::Order {
                            line: lineno,
                            person: rec.person,
                            frame: rec.frame,
                        });
                    }
                }
                last_frame.insert(rec.person, rec.frame);
                out.records.push(rec);
            }
            Line::Mask(m) => {
                if m.runs.len() != out.n_joints {
                    return Err(parse_err(format!("mask has {} joint rows", m.runs.len())));
                }
                if m.runs.iter().any(|r| r.iter().sum::<usize>() != m.frames) {
                    return Err(parse_err("mask runs do not sum to the frame count".into()));
                }
                out.masks.push(m);
            }
        }
    }
    Ok(out)
}

pub fn load_sequence(path: &Path) -> Result<SequenceFile, IoError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_sequence(BufReader::new(f))
}

pub fn write_sequence<W: Write>(file: &SequenceFile, mut w: W) -> Result<(), IoError> {
    let mut body = Vec::new();
    let header = SequenceHeader {
        format: SEQUENCE_FORMAT.into(),
        version: FORMAT_VERSION,
        n_joints: file.n_joints,
        joints: if file.n_joints == N_JOINTS {
            JOINT_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..file.n_joints).map(|j| format!("joint{j}")).collect()
        },
    };
    body.push(to_json(&header)?);
    for rec in &file.records {
        check_record(rec, file.n_joints).map_err(IoError::Invalid)?;
        body.push(to_json(&LineRef::Frame(rec))?);
    }
    for m in &file.masks {
        body.push(to_json(&LineRef::Mask(m))?);
    }
    for line in body {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(io_err(Path::new("<writer>")))?;
    }
    Ok(())
}

pub fn save_sequence(path: &Path, file: &SequenceFile) -> Result<(), IoError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_sequence(file, &mut w)?;
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LineRef<'a> {
    Frame(&'a SequenceRecord),
    Mask(&'a MaskRecord),
}

fn to_json<T: Serialize>(v: &T) -> Result<String, IoError> {
    serde_json::to_string(v).map_err(|e| IoError::Invalid(e.to_string()))
}

/// One person's frames, in file order, with per-frame arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    pub person: u32,
    pub action: String,
    pub frames: Vec<u64>,
    pub joints_2d: Vec<Vec<Point2>>,
    pub confidence: Vec<Vec<f64>>,
    pub joints_3d_rel: Option<Vec<Vec<Point3>>>,
    pub root: Option<Vec<Point3>>,
    pub mask: Option<OcclusionMask>,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.joints_2d.first().map_or(N_JOINTS, Vec::len)
    }

    /// Occlusion from detector confidence, merged with any stored mask.
    pub fn occlusion(&self, threshold: f64) -> OcclusionMask {
        let n = self.n_joints();
        let conf_rows: Vec<Vec<f64>> = (0..n)
            .map(|j| self.confidence.iter().map(|c| c[j]).collect())
            .collect();
        let from_conf = if self.is_empty() {
            OcclusionMask::visible(n, 0)
        } else {
            confidence_to_mask(&conf_rows, threshold).expect("rectangular")
        };
        match &self.mask {
            Some(m) => from_conf.union(m).expect("mask matches sequence"),
            None => from_conf,
        }
    }

    /// `2 N` rows of pixel coordinates (`u` then `v` per joint), each of length `T`.
    pub fn coordinate_rows(&self) -> Vec<Vec<f64>> {
        let n = self.n_joints();
        let mut rows = vec![Vec::with_capacity(self.len()); 2 * n];
        for frame in &self.joints_2d {
            for (j, p) in frame.iter().enumerate() {
                rows[2 * j].push(p.x);
                rows[2 * j + 1].push(p.y);
            }
        }
        rows
    }
}

/// Groups records by person (ascending id) and decodes masks.
pub fn group_sequences(file: &SequenceFile) -> Result<Vec<PoseSequence>, IoError> {
    let mut by_person: BTreeMap<u32, PoseSequence> = BTreeMap::new();
    for rec in &file.records {
        let seq = by_person.entry(rec.person).or_insert_with(|| PoseSequence {
            person: rec.person,
            action: rec.action.clone(),
            frames: Vec::new(),
            joints_2d: Vec::new(),
            confidence: Vec::new(),
            joints_3d_rel: rec.joints_3d_rel.as_ref().map(|_| Vec::new()),
            root: rec.root_3d.map(|_| Vec::new()),
            mask: None,
        });
        seq.frames.push(rec.frame);
        seq.joints_2d
            .push(rec.joints_2d.iter().map(|p| Point2::new(p[0], p[1])).collect());
        seq.confidence.push(rec.joints_2d.iter().map(|p| p[2]).collect());
        match (&mut seq.joints_3d_rel, &rec.joints_3d_rel) {
            (Some(all), Some(j)) => all.push(j.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect()),
            (None, None) => {}
            _ => {
                return Err(IoError::Invalid(format!(
                    "person {}: 3D joints present on some frames only",
                    rec.person
                )))
            }
        }
        match (&mut seq.root, &rec.root_3d) {
            (Some(all), Some(r)) => all.push(Point3::new(r[0], r[1], r[2])),
            (None, None) => {}
            _ => {
                return Err(IoError::Invalid(format!(
                    "person {}: root present on some frames only",
                    rec.person
                )))
            }
        }
    }
    for m in &file.masks {
        let seq = by_person
            .get_mut(&m.person)
            .ok_or_else(|| IoError::Invalid(format!("mask for unknown person {}", m.person)))?;
        if m.frames != seq.len() {
            return Err(IoError::Invalid(format!(
                "mask of person {} covers {} frames, sequence has {}",
                m.person,
                m.frames,
                seq.len()
            )));
        }
        let rows: Vec<Vec<bool>> = m.runs.iter().map(|r| decode_runs(r)).collect();
        seq.mask = Some(OcclusionMask::from_joint_rows(&rows).map_err(|e| IoError::Invalid(e.to_string()))?);
    }
    Ok(by_person.into_values().collect())
}

/// Flattens sequences back into records; inverse of [`group_sequences`].
pub fn ungroup_sequences(seqs: &[PoseSequence]) -> SequenceFile {
    let mut file = SequenceFile {
        n_joints: seqs.first().map_or(N_JOINTS, PoseSequence::n_joints),
        ..Default::default()
    };
    for s in seqs {
        for t in 0..s.len() {
            file.records.push(SequenceRecord {
                person: s.person,
                frame: s.frames[t],
                action: s.action.clone(),
                joints_2d: s.joints_2d[t]
                    .iter()
                    .zip(&s.confidence[t])
                    .map(|(p, &c)| [p.x, p.y, c])
                    .collect(),
                joints_3d_rel: s
                    .joints_3d_rel
                    .as_ref()
                    .map(|j| j[t].iter().map(|p| [p.x, p.y, p.z]).collect()),
                root_3d: s.root.as_ref().map(|r| [r[t].x, r[t].y, r[t].z]),
            });
        }
        if let Some(m) = &s.mask {
            file.masks.push(MaskRecord {
                person: s.person,
                frames: m.n_frames(),
                runs: (0..m.n_joints()).map(|j| encode_runs(m.joint_row(j))).collect(),
            });
        }
    }
    file
}

pub fn load_sequences(path: &Path) -> Result<Vec<PoseSequence>, IoError> {
    group_sequences(&load_sequence(path)?)
}

pub fn save_sequences(path: &Path, seqs: &[PoseSequence]) -> Result<(), IoError> {
    save_sequence(path, &ungroup_sequences(seqs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub format: String,
    pub version: u32,
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraFile {
    pub fn new(cam: CameraIntrinsics, width: u32, height: u32) -> Self {
        Self {
            format: CAMERA_FORMAT.into(),
            version: FORMAT_VERSION,
            f: cam.f,
            cx: cam.cx,
            cy: cam.cy,
            width,
            height,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, IoError> {
        CameraIntrinsics::new(self.f, self.cx, self.cy).map_err(|e| IoError::Invalid(e.to_string()))
    }
}

pub fn load_camera(path: &Path) -> Result<CameraFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let cam: CameraFile = serde_json::from_str(text.trim()).map_err(|e| IoError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if cam.format != CAMERA_FORMAT || cam.version != FORMAT_VERSION {
        return Err(IoError::Parse {
            line: 1,
            message: format!("unsupported camera format {:?} v{}", cam.format, cam.version),
        });
    }
    cam.intrinsics()?;
    Ok(cam)
}

pub fn save_camera(path: &Path, cam: &CameraFile) -> Result<(), IoError> {
    let text = serde_json::to_string(cam).map_err(|e| IoError::Invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub person: u32,
    pub frame: u64,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    pub visible_count: usize,
    pub converged: bool,
}

pub fn write_trajectory<W: Write>(rows: &[TrajectoryRow], mut w: W) -> Result<(), IoError> {
    writeln!(w, "{TRAJECTORY_HEADER}").map_err(io_err(Path::new("<writer>")))?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush().map_err(io_err(Path::new("<writer>")))
}

pub fn read_trajectory<R: std::io::Read>(r: R) -> Result<Vec<TrajectoryRow>, IoError> {
    let mut reader = BufReader::new(r);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(Path::new("<reader>")))?;
    if first.trim_end() != TRAJECTORY_HEADER {
        return Err(IoError::Parse {
            line: 1,
            message: format!("expected {TRAJECTORY_HEADER:?}"),
        });
    }
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in csv.deserialize().enumerate() {
        rows.push(rec.map_err(|e: csv::Error| IoError::Parse {
            line: i + 3,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn save_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<(), IoError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_trajectory(rows, &mut w)?;
    w.flush().map_err(io_err(path))
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, IoError> {
    read_trajectory(File::open(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_file(n: usize, seed: u64) -> SequenceFile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for i in 0..n {
            let person = (i % 3) as u32;
            let with3d = person != 2;
            let big = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 10f64.powi(rng.random_range(-8..8)) - 0.5;
            let mut j3: Vec<[f64; 3]> = (0..N_JOINTS).map(|_| [big(&mut rng), big(&mut rng), big(&mut rng)]).collect();
            j3[ROOT] = [0.0; 3];
            records.push(SequenceRecord {
                person,
                frame: (i / 3) as u64 * 2 + 1,
                action: if person == 0 { "Walking".into() } else { String::new() },
                joints_2d: (0..N_JOINTS).map(|_| [big(&mut rng), big(&mut rng), rng.random()]).collect(),
                joints_3d_rel: with3d.then_some(j3),
                root_3d: with3d.then(|| [big(&mut rng), big(&mut rng), 4000.0 + big(&mut rng)]),
            });
        }
        SequenceFile {
            n_joints: N_JOINTS,
            records,
            masks: vec![],
        }
    }

    fn round_trip(file: &SequenceFile) -> SequenceFile {
        let mut buf = Vec::new();
        write_sequence(file, &mut buf).unwrap();
        read_sequence(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = read_sequence(&b""[..]).unwrap();
        assert!(f.records.is_empty() && f.masks.is_empty());
    }

    #[test]
    fn thousand_records_round_trip_bitwise() {
        let file = random_file(1000, 4);
        let back = round_trip(&file);
        assert_eq!(back.records.len(), 1000);
        for (a, b) in file.records.iter().zip(&back.records) {
            let bits = |v: &[[f64; 3]]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.joints_2d), bits(&b.joints_2d));
            assert_eq!(a.joints_3d_rel.as_deref().map(bits), b.joints_3d_rel.as_deref().map(bits));
            assert_eq!(a.root_3d.map(|r| r.map(f64::to_bits)), b.root_3d.map(|r| r.map(f64::to_bits)));
            assert_eq!((a.person, a.frame, &a.action), (b.person, b.frame, &b.action));
        }
    }

    fn with_header(lines: &[&str]) -> String {
        let mut buf = Vec::new();
        write_sequence(&SequenceFile::default(), &mut buf).unwrap();
        let mut s = String::from_utf8(buf).unwrap();
        for l in lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    fn frame_line(person: u32, frame: u64) -> String {
        let rec = SequenceRecord {
            person,
            frame,
            action: String::new(),
            joints_2d: vec![[1.0, 2.0, 1.0]; N_JOINTS],
            joints_3d_rel: None,
            root_3d: None,
        };
        serde_json::to_string(&LineRef::Frame(&rec)).unwrap()
    }

    #[test]
    fn duplicated_frame_is_an_ordering_error() {
        let text = with_header(&[&frame_line(0, 5), &frame_line(1, 5), &frame_line(0, 5)]);
        match read_sequence(text.as_bytes()) {
            Err(IoError::Order { line, person, frame }) => {
                assert_eq!((line, person, frame), (4, 0, 5));
                let msg = read_sequence(text.as_bytes()).unwrap_err().to_string();
                assert!(msg.contains("frame 5"), "{msg}");
            }
            other => panic!("expected ordering error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = with_header(&[&frame_line(0, 1), "{\"type\":\"frame\",\"person\":"]);
        match read_sequence(text.as_bytes()) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad_count = with_header(&["{\"type\":\"frame\",\"person\":0,\"frame\":0,\"joints_2d\":[[0,0,1]]}"]);
        assert!(matches!(read_sequence(bad_count.as_bytes()), Err(IoError::Parse { line: 2, .. })));
    }

    #[test]
    fn nonzero_root_is_rejected() {
        let mut file = random_file(3, 1);
        file.records[0].joints_3d_rel.as_mut().unwrap()[ROOT] = [0.0, 1e-9, 0.0];
        let mut buf = Vec::new();
        assert!(write_sequence(&file, &mut buf).is_err());
    }

    #[test]
    fn grouping_round_trips_with_masks() {
        let file = random_file(60, 2);
        let mut seqs = group_sequences(&file).unwrap();
        assert_eq!(seqs.len(), 3);
        assert!(seqs[2].joints_3d_rel.is_none());
        let mut mask = OcclusionMask::visible(N_JOINTS, seqs[0].len());
        mask.set(3, 4, true);
        mask.set(16, 0, true);
        seqs[0].mask = Some(mask);
        let back = group_sequences(&round_trip(&ungroup_sequences(&seqs))).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn occlusion_merges_confidence_and_mask() {
        let mut seqs = group_sequences(&random_file(30, 3)).unwrap();
        let s = &mut seqs[0];
        s.confidence.iter_mut().for_each(|c| c.fill(1.0));
        s.confidence[2][5] = 0.1;
        let mut m = OcclusionMask::visible(N_JOINTS, s.len());
        m.set(7, 1, true);
        s.mask = Some(m);
        let occ = s.occlusion(0.3);
        assert!(occ.is_occluded(5, 2) && occ.is_occluded(7, 1));
        assert_eq!(occ.count_occluded(), 2);
    }

    #[test]
    fn camera_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.json");
        let cam = CameraFile::new(CameraIntrinsics::new(1145.04, 512.54, 515.45).unwrap(), 1000, 1002);
        save_camera(&path, &cam).unwrap();
        assert_eq!(load_camera(&path).unwrap(), cam);
        std::fs::write(&path, "{\"format\":\"gatedpose-camera\",\"version\":1,\"f\":-1,\"cx\":0,\"cy\":0,\"width\":1,\"height\":1}").unwrap();
        assert!(load_camera(&path).is_err());
    }

    proptest! {
        #[test]
        fn trajectory_csv_round_trips(rows in prop::collection::vec(
            (0u32..5, 0u64..100_000, any::<f64>(), any::<f64>(), any::<f64>(), 0usize..18, any::<bool>()), 0..30)) {
            let rows: Vec<TrajectoryRow> = rows.into_iter()
                .filter(|r| r.2.is_finite() && r.3.is_finite() && r.4.is_finite())
                .map(|(person, frame, x, y, z, visible_count, converged)| TrajectoryRow {
                    person, frame, x_mm: x, y_mm: y, z_mm: z, visible_count, converged,
                })
                .collect();
            let mut buf = Vec::new();
            write_trajectory(&rows, &mut buf).unwrap();
            let back = read_trajectory(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                prop_assert_eq!(a.x_mm.to_bits(), b.x_mm.to_bits());
                prop_assert_eq!(a.y_mm.to_bits(), b.y_mm.to_bits());
                prop_assert_eq!(a.z_mm.to_bits(), b.z_mm.to_bits());
                prop_assert_eq!((a.person, a.frame, a.visible_count, a.converged), (b.person, b.frame, b.visible_count, b.converged));
            }
        }

        #[test]
        fn sequence_round_trip_random(seed in 0u64..500, n in 0usize..40) {
            let file = random_file(n, seed);
            prop_assert_eq!(round_trip(&file), file);
        }
    }
}
