//! Pose files, external SfM exports and hand-keypoint files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::{PoseSequence, RigidTransform, Rotation, Vec2, Vec3};
use crate::handcam::{HandKeypoints, NUM_JOINTS};

pub const POSE_CONVENTION: &str = "camera_from_world";
const POSE_MAGIC: &str = "# horecon poses";
const KEYPOINT_MAGIC: &str = "# horecon keypoints";
/// Allowed deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

fn numbers(line: &str, what: &'static str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(what, format!("line {lineno}: bad number `{t}`")))
        })
        .collect()
}

fn unit_quaternion(q: [f64; 4], what: &'static str, lineno: usize) -> Result<Rotation> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(Error::format(what, format!("line {lineno}: quaternion norm {n} is not unit")));
    }
    Rotation::from_wxyz(q[0], q[1], q[2], q[3])
}

/// Writes one line per frame: `index valid qw qx qy qz tx ty tz [residual]`.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_poses(w: &mut impl Write, seq: &PoseSequence) -> Result<()> {
    write!(w, "{POSE_MAGIC} {POSE_CONVENTION}")?;
    if seq.scale_free {
        write!(w, " scale_free")?;
    }
    if seq.residuals.is_some() {
        write!(w, " residuals")?;
    }
    writeln!(w)?;
    for (i, p) in seq.poses.iter().enumerate() {
        let q = p.rotation.wxyz();
        let t = p.translation;
        write!(
            w,
            "{i} {} {} {} {} {} {} {} {}",
            seq.valid[i] as u8, q[0], q[1], q[2], q[3], t.x, t.y, t.z
        )?;
        if let Some(r) = &seq.residuals {
            write!(w, " {}", r[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_poses(r: impl BufRead) -> Result<PoseSequence> {
    const WHAT: &str = "pose file";
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::format(WHAT, "empty file"))??;
    let flags: Vec<&str> = header
        .strip_prefix(POSE_MAGIC)
        .ok_or_else(|| Error::format(WHAT, "missing header"))?
        .split_whitespace()
        .collect();
    if flags.first() != Some(&POSE_CONVENTION) {
        return Err(Error::format(WHAT, format!("unsupported convention {:?}", flags.first())));
    }
    let scale_free = flags.contains(&"scale_free");
    let has_residuals = flags.contains(&"residuals");
    let width = if has_residuals { 10 } else { 9 };
    let mut poses = Vec::new();
    let mut valid = Vec::new();
    let mut residuals = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let v = numbers(&line, WHAT, lineno)?;
        if v.len() != width {
            return Err(Error::format(WHAT, format!("line {lineno}: expected {width} fields, got {}", v.len())));
        }
        if v[0] != poses.len() as f64 {
            return Err(Error::format(WHAT, format!("line {lineno}: frame index {} out of sequence", v[0])));
        }
        let flag = match v[1] {
            0.0 => false,
            1.0 => true,
            _ => return Err(Error::format(WHAT, format!("line {lineno}: valid flag must be 0 or 1"))),
        };
        let rot = unit_quaternion([v[2], v[3], v[4], v[5]], WHAT, lineno)?;
        poses.push(RigidTransform::new(rot, Vec3::new(v[6], v[7], v[8])));
        valid.push(flag);
        if has_residuals {
            residuals.push(v[9]);
        }
    }
    let mut seq = PoseSequence::with_validity(poses, valid)?;
    seq.scale_free = scale_free;
    seq.residuals = has_residuals.then_some(residuals);
    Ok(seq)
}

/// Frame index encoded by the digits of an image file stem, e.g. `0012.ppm` → 12.
pub fn frame_index_of(name: &str) -> Option<usize> {
    let file = name.rsplit(['/', '\\']).next()?;
    let stem = file.split('.').next()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// Parses a text SfM image list (`ID QW QX QY QZ TX TY TZ CAMERA_ID NAME`
/// followed by one line of 2D observations per image). Poses are
/// camera-from-world. Frames are placed by the number in the image name;
/// frames absent from the export are flagged invalid. The result is marked
/// scale-free.
pub fn import_sfm_images(r: impl BufRead, n_frames: Option<usize>) -> Result<PoseSequence> {
    const WHAT: &str = "SfM image list";
    let mut found: BTreeMap<usize, RigidTransform> = BTreeMap::new();
    let mut expect_points = false;
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.starts_with('#') {
            continue;
        }
        if expect_points {
            expect_points = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(Error::format(WHAT, format!("line {lineno}: expected 10 fields")));
        }
        let v = numbers(&tok[1..8].join(" "), WHAT, lineno)?;
        let name = tok[9..].join(" ");
        let idx = frame_index_of(&name)
            .ok_or_else(|| Error::format(WHAT, format!("line {lineno}: no frame number in `{name}`")))?;
        let rot = unit_quaternion([v[0], v[1], v[2], v[3]], WHAT, lineno)?;
        if found.insert(idx, RigidTransform::new(rot, Vec3::new(v[4], v[5], v[6]))).is_some() {
            return Err(Error::format(WHAT, format!("line {lineno}: frame {idx} listed twice")));
        }
        expect_points = true;
    }
    let n = match (n_frames, found.keys().next_back()) {
        (Some(n), Some(&last)) if last >= n => {
            return Err(Error::format(WHAT, format!("frame {last} beyond the {n} frames of the sequence")))
        }
        (Some(n), _) => n,
        (None, Some(&last)) => last + 1,
        (None, None) => 0,
    };
    let mut poses = vec![RigidTransform::identity(); n];
    let mut valid = vec![false; n];
    let mut last = RigidTransform::identity();
    for i in 0..n {
        if let Some(p) = found.get(&i) {
            last = *p;
            valid[i] = true;
        }
        poses[i] = last;
    }
    let mut seq = PoseSequence::with_validity(poses, valid)?;
    seq.scale_free = true;
    Ok(seq)
}

/// One line per frame: `frame valid` then 21 × `u v X Y Z confidence`.
pub fn write_keypoints(w: &mut impl Write, seq: &[HandKeypoints]) -> Result<()> {
    writeln!(w, "{KEYPOINT_MAGIC} {NUM_JOINTS} joints: frame valid (u v X Y Z confidence)...")?;
    for (i, k) in seq.iter().enumerate() {
        write!(w, "{i} {}", k.valid as u8)?;
        for j in 0..NUM_JOINTS {
            let (p, q) = (k.joints2d[j], k.joints3d_wrist[j]);
            write!(w, " {} {} {} {} {} {}", p.x, p.y, q.x, q.y, q.z, k.confidence[j])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_keypoints(r: impl BufRead) -> Result<Vec<HandKeypoints>> {
    const WHAT: &str = "keypoint file";
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let v = numbers(&line, WHAT, lineno)?;
        if v.len() != 2 + 6 * NUM_JOINTS {
            return Err(Error::format(WHAT, format!("line {lineno}: expected {} fields", 2 + 6 * NUM_JOINTS)));
        }
        if v[0] != out.len() as f64 {
            return Err(Error::format(WHAT, format!("line {lineno}: frame index out of sequence")));
        }
        let f = |j: usize, c: usize| v[2 + 6 * j + c];
        let kp = HandKeypoints::new(
            std::array::from_fn(|j| Vec2::new(f(j, 0), f(j, 1))),
            std::array::from_fn(|j| Vec3::new(f(j, 2), f(j, 3), f(j, 4))),
            std::array::from_fn(|j| f(j, 5)),
            v[1] != 0.0,
        )
        .map_err(|e| Error::format(WHAT, format!("line {lineno}: {e}")))?;
        out.push(kp);
    }
    Ok(out)
}
