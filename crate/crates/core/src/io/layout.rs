//! On-disk sequence directories.
//!
//! ```text
//! <seq>/manifest.json      intrinsics, frame count, tags
//! <seq>/frames/NNNN.img    binary PPM
//! <seq>/frames/NNNN.mask   binary PGM
//! <seq>/frames/NNNN.cloud  binary little-endian PLY, organized
//! <seq>/poses/<name>.txt   pose files
//! <seq>/keypoints.txt      hand keypoints
//! <seq>/gt/mesh.ply        object mesh
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ply::{mesh_from_ply, organized_from_ply, read_ply, write_mesh_ply, write_organized_ply, PlyEncoding};
use super::pnm::{read_pgm_mask, read_ppm, write_pgm_mask, write_ppm};
use super::poses::{read_keypoints, read_poses, write_keypoints, write_poses};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Mask, OrganizedCloud, PoseSequence, RgbImage, TriangleMesh};
use crate::handcam::HandKeypoints;

pub const MANIFEST: &str = "manifest.json";
pub const GT_MESH: &str = "gt/mesh.ply";
pub const KEYPOINTS: &str = "keypoints.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Free-form labels such as `size=small` or `texture=low`.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(frames: usize, k: &CameraIntrinsics) -> Self {
        Self {
            frames,
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            tags: BTreeMap::new(),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Attaches the file name to format errors.
fn located<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { what, msg } => Error::Format {
            what,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    located(path, read_ppm(open(path)?))
}

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut w = create(path)?;
    write_ppm(&mut w, img)?;
    Ok(w.flush()?)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    located(path, read_pgm_mask(open(path)?))
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = create(path)?;
    write_pgm_mask(&mut w, mask)?;
    Ok(w.flush()?)
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    located(path, read_ply(open(path)?).and_then(|d| mesh_from_ply(&d)))
}

pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut w = create(path)?;
    write_mesh_ply(&mut w, mesh, PlyEncoding::BinaryLittleEndian)?;
    Ok(w.flush()?)
}

pub fn load_organized(path: &Path) -> Result<OrganizedCloud> {
    located(path, read_ply(open(path)?).and_then(|d| organized_from_ply(&d)))
}

pub fn save_organized(path: &Path, cloud: &OrganizedCloud) -> Result<()> {
    let mut w = create(path)?;
    write_organized_ply(&mut w, cloud, PlyEncoding::BinaryLittleEndian)?;
    Ok(w.flush()?)
}

pub fn load_poses(path: &Path) -> Result<PoseSequence> {
    located(path, read_poses(open(path)?))
}

pub fn save_poses(path: &Path, seq: &PoseSequence) -> Result<()> {
    let mut w = create(path)?;
    write_poses(&mut w, seq)?;
    Ok(w.flush()?)
}

pub fn load_keypoints(path: &Path) -> Result<Vec<HandKeypoints>> {
    located(path, read_keypoints(open(path)?))
}

pub fn save_keypoints(path: &Path, seq: &[HandKeypoints]) -> Result<()> {
    let mut w = create(path)?;
    write_keypoints(&mut w, seq)?;
    Ok(w.flush()?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format("JSON", e.to_string()))?;
    writeln!(w)?;
    Ok(w.flush()?)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format("JSON", format!("{}: {e}", path.display())))
}

/// Paths of one sequence directory.
#[derive(Clone, Debug)]
pub struct SequenceDir {
    pub root: PathBuf,
}

impl SequenceDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn frame_path(&self, i: usize, ext: &str) -> PathBuf {
        self.root.join("frames").join(format!("{i:04}.{ext}"))
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.frame_path(i, "img")
    }

    pub fn mask_path(&self, i: usize) -> PathBuf {
        self.frame_path(i, "mask")
    }

    pub fn cloud_path(&self, i: usize) -> PathBuf {
        self.frame_path(i, "cloud")
    }

    pub fn poses_path(&self, name: &str) -> PathBuf {
        self.root.join("poses").join(format!("{name}.txt"))
    }

    pub fn mesh_path(&self) -> PathBuf {
        self.root.join(GT_MESH)
    }

    pub fn keypoints_path(&self) -> PathBuf {
        self.root.join(KEYPOINTS)
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<()> {
        save_json(&self.manifest_path(), m)
    }

    /// Reads the manifest and checks that the frame files are contiguous
    /// from 0 and match the declared count.
    pub fn manifest(&self) -> Result<Manifest> {
        let m: Manifest = load_json(&self.manifest_path())?;
        m.intrinsics()?;
        let frames_dir = self.root.join("frames");
        if frames_dir.is_dir() {
            let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for entry in fs::read_dir(&frames_dir)? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if let Some((stem, ext)) = name.split_once('.') {
                    if let Ok(i) = stem.parse::<usize>() {
                        counts.entry(ext.to_string()).or_default().push(i);
                    }
                }
            }
            for (ext, mut idx) in counts {
                idx.sort_unstable();
                if idx != (0..m.frames).collect::<Vec<_>>() {
                    return Err(Error::format(
                        "sequence",
                        format!("{}: `.{ext}` files are not frames 0..{}", frames_dir.display(), m.frames),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn images(&self, m: &Manifest) -> Result<Vec<RgbImage>> {
        (0..m.frames).map(|i| load_ppm(&self.image_path(i))).collect()
    }

    pub fn masks(&self, m: &Manifest) -> Result<Vec<Mask>> {
        (0..m.frames).map(|i| load_mask(&self.mask_path(i))).collect()
    }

    pub fn clouds(&self, m: &Manifest) -> Result<Vec<OrganizedCloud>> {
        (0..m.frames).map(|i| load_organized(&self.cloud_path(i))).collect()
    }
}
