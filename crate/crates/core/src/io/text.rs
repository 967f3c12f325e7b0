//! Line-oriented text formats: poses, correspondences, selections and instance predictions.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::Pose;
use crate::error::{Error, Result};
use crate::instance::InstancePrediction;
use crate::labeling::{SelectionResult, Strategy};
use crate::mining::CorrespondenceSet;

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    Ok(BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::from(e).at(path))?,
    ))
}

fn parse<T: std::str::FromStr>(tok: &str, format: &'static str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(format, format!("cannot parse {tok:?}")))
}

/// `key=value` pairs from a `# k1=v1 k2=v2` header line.
fn header_fields<'a>(line: &'a str, format: &'static str) -> Result<Vec<(&'a str, &'a str)>> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| Error::format(format, "missing header line"))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::format(format, format!("bad header field {kv:?}")))
        })
        .collect()
}

fn field<'a>(fields: &[(&str, &'a str)], key: &str, format: &'static str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::format(format, format!("header lacks {key}")))
}

/// Row-major 4×4 matrix, 16 whitespace-separated numbers.
pub fn parse_pose(text: &str) -> Result<Pose> {
    let nums = text
        .split_whitespace()
        .map(|t| parse::<f64>(t, "pose"))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() != 16 {
        return Err(Error::format("pose", format!("expected 16 numbers, got {}", nums.len())));
    }
    let mut m = [[0.0; 4]; 4];
    for (k, v) in nums.into_iter().enumerate() {
        m[k / 4][k % 4] = v;
    }
    Pose::from_matrix(&m)
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    parse_pose(&text).map_err(|e| e.at(path))
}

pub fn write_pose_to(mut w: impl Write, pose: &Pose) -> Result<()> {
    for row in pose.to_matrix() {
        writeln!(w, "{} {} {} {}", row[0], row[1], row[2], row[3])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pose(path: impl AsRef<Path>, pose: &Pose) -> Result<()> {
    let path = path.as_ref();
    write_pose_to(create(path)?, pose).map_err(|e| e.at(path))
}

pub fn write_correspondences_to(mut w: impl Write, set: &CorrespondenceSet, overlap: f64) -> Result<()> {
    writeln!(w, "# match_radius={} overlap={}", set.match_radius, overlap)?;
    for &(i, j) in &set.pairs {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the correspondences and the overlap stored in the header.
pub fn read_correspondences_from(r: impl Read) -> Result<(CorrespondenceSet, f64)> {
    const FMT: &str = "correspondence";
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::format(FMT, "empty file"))??;
    let fields = header_fields(&header, FMT)?;
    let radius: f64 = parse(field(&fields, "match_radius", FMT)?, FMT)?;
    let overlap: f64 = parse(field(&fields, "overlap", FMT)?, FMT)?;
    let mut pairs = Vec::new();
    for line in lines {
        let line = line?;
        let mut tok = line.split_whitespace();
        match (tok.next(), tok.next(), tok.next()) {
            (None, ..) => continue,
            (Some(i), Some(j), None) => pairs.push((parse(i, FMT)?, parse(j, FMT)?)),
            _ => return Err(Error::format(FMT, format!("bad pair line {line:?}"))),
        }
    }
    Ok((CorrespondenceSet::new(pairs, radius), overlap))
}

pub fn write_correspondences(path: impl AsRef<Path>, set: &CorrespondenceSet, overlap: f64) -> Result<()> {
    let path = path.as_ref();
    write_correspondences_to(create(path)?, set, overlap).map_err(|e| e.at(path))
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<(CorrespondenceSet, f64)> {
    let path = path.as_ref();
    read_correspondences_from(open(path)?).map_err(|e| e.at(path))
}

pub fn write_selection_to(mut w: impl Write, sel: &SelectionResult, budget: usize, seed: u64) -> Result<()> {
    writeln!(w, "# strategy={} budget={budget} seed={seed}", sel.strategy)?;
    for i in &sel.selected_indices {
        writeln!(w, "{i}")?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the selection together with the budget and seed from the header.
pub fn read_selection_from(r: impl Read) -> Result<(SelectionResult, usize, u64)> {
    const FMT: &str = "selection";
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::format(FMT, "empty file"))??;
    let fields = header_fields(&header, FMT)?;
    let strategy: Strategy = field(&fields, "strategy", FMT)?.parse()?;
    let budget = parse(field(&fields, "budget", FMT)?, FMT)?;
    let seed = parse(field(&fields, "seed", FMT)?, FMT)?;
    let mut selected_indices = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            selected_indices.push(parse(t, FMT)?);
        }
    }
    Ok((
        SelectionResult {
            selected_indices,
            strategy,
        },
        budget,
        seed,
    ))
}

pub fn write_selection(path: impl AsRef<Path>, sel: &SelectionResult, budget: usize, seed: u64) -> Result<()> {
    let path = path.as_ref();
    write_selection_to(create(path)?, sel, budget, seed).map_err(|e| e.at(path))
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<(SelectionResult, usize, u64)> {
    let path = path.as_ref();
    read_selection_from(open(path)?).map_err(|e| e.at(path))
}

/// Two sections: `# points` with `point_index instance_id` lines (`-1` when unassigned),
/// then `# instances` with `instance_id class confidence` lines.
pub fn write_prediction_to(mut w: impl Write, pred: &InstancePrediction) -> Result<()> {
    writeln!(w, "# points")?;
    for (i, id) in pred.instance_of.iter().enumerate() {
        match id {
            Some(id) => writeln!(w, "{i} {id}")?,
            None => writeln!(w, "{i} -1")?,
        }
    }
    writeln!(w, "# instances")?;
    for (id, inst) in pred.instances.iter().enumerate() {
        writeln!(w, "{id} {} {}", inst.semantic_label, inst.confidence)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prediction_from(r: impl Read) -> Result<InstancePrediction> {
    const FMT: &str = "prediction";
    #[derive(PartialEq)]
    enum Section {
        None,
        Points,
        Instances,
    }
    let mut section = Section::None;
    let mut instance_of = Vec::new();
    let mut labels = Vec::new();
    let mut confidences = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        let t = line.trim();
        match t {
            "" => continue,
            "# points" => section = Section::Points,
            "# instances" => section = Section::Instances,
            _ => {
                let tok: Vec<&str> = t.split_whitespace().collect();
                match (&section, tok.as_slice()) {
                    (Section::Points, [i, id]) => {
                        let i: usize = parse(i, FMT)?;
                        if i != instance_of.len() {
                            return Err(Error::format(FMT, format!("point lines out of order at {i}")));
                        }
                        let id: i64 = parse(id, FMT)?;
                        instance_of.push(if id < 0 { None } else { Some(id as usize) });
                    }
                    (Section::Instances, [id, class, conf]) => {
                        let id: usize = parse(id, FMT)?;
                        if id != labels.len() {
                            return Err(Error::format(FMT, format!("instance lines out of order at {id}")));
                        }
                        labels.push(parse(class, FMT)?);
                        confidences.push(parse(conf, FMT)?);
                    }
                    _ => return Err(Error::format(FMT, format!("unexpected line {t:?}"))),
                }
            }
        }
    }
    InstancePrediction::from_assignment(instance_of, labels, confidences)
}

pub fn write_prediction(path: impl AsRef<Path>, pred: &InstancePrediction) -> Result<()> {
    let path = path.as_ref();
    write_prediction_to(create(path)?, pred).map_err(|e| e.at(path))
}

pub fn read_prediction(path: impl AsRef<Path>) -> Result<InstancePrediction> {
    let path = path.as_ref();
    read_prediction_from(open(path)?).map_err(|e| e.at(path))
}
