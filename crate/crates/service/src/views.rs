//! View directories: `<name>.camera.json` + `<name>.normal.png`, optionally
//! `<name>.mask.png`, one triple per view. `render` writes them, `enhance`
//! rewrites them and `refine` reads them as targets.

use std::fs;
use std::path::{Path, PathBuf};

use normalforge::refine::ViewTarget;
use normalforge::render::{Camera, NormalMap, PixelMask};

const CAMERA_SUFFIX: &str = ".camera.json";
const NORMAL_SUFFIX: &str = ".normal.png";
const MASK_SUFFIX: &str = ".mask.png";

#[derive(Debug, thiserror::Error)]
pub enum ViewDirError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("view {view}: {message}")]
    View { view: String, message: String },
    #[error("{0}: no views found (expected <name>.camera.json with <name>.normal.png)")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewFile {
    pub name: String,
    pub camera: Camera,
    pub normals: NormalMap,
    pub mask: Option<PixelMask>,
}

impl ViewFile {
    pub fn into_target(self) -> ViewTarget {
        let t = ViewTarget::new(self.camera, self.normals);
        match self.mask {
            Some(m) => t.with_mask(m),
            None => t,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ViewDirError + '_ {
    move |source| ViewDirError::Io { path: path.to_owned(), source }
}

/// Reads every view in `dir`, sorted by name. Each view's normal map and mask
/// must match its camera's resolution.
pub fn read_view_dir(dir: &Path) -> Result<Vec<ViewFile>, ViewDirError> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(CAMERA_SUFFIX).map(str::to_owned))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(ViewDirError::Empty(dir.to_owned()));
    }
    names.into_iter().map(|name| read_view(dir, name)).collect()
}

fn read_view(dir: &Path, name: String) -> Result<ViewFile, ViewDirError> {
    let bad = |message: String| ViewDirError::View { view: name.clone(), message };
    let camera_path = dir.join(format!("{name}{CAMERA_SUFFIX}"));
    let camera: Camera = serde_json::from_slice(&fs::read(&camera_path).map_err(io(&camera_path))?)
        .map_err(|e| bad(format!("camera: {e}")))?;
    camera.validate().map_err(|e| bad(e.to_string()))?;

    let normal_path = dir.join(format!("{name}{NORMAL_SUFFIX}"));
    let bytes = fs::read(&normal_path).map_err(|e| bad(format!("{}: {e}", normal_path.display())))?;
    let normals = NormalMap::from_png(&bytes).map_err(|e| bad(format!("normal map: {e}")))?;
    if !normals.same_size(camera.width, camera.height) {
        return Err(bad(format!(
            "normal map is {}x{} but the camera renders {}x{}",
            normals.width, normals.height, camera.width, camera.height
        )));
    }

    let mask_path = dir.join(format!("{name}{MASK_SUFFIX}"));
    let mask = if mask_path.exists() {
        let m = PixelMask::from_png(&fs::read(&mask_path).map_err(io(&mask_path))?)
            .map_err(|e| bad(format!("mask: {e}")))?;
        if m.width != camera.width || m.height != camera.height {
            return Err(bad(format!(
                "mask is {}x{} but the camera renders {}x{}",
                m.width, m.height, camera.width, camera.height
            )));
        }
        Some(m)
    } else {
        None
    };
    Ok(ViewFile { name, camera, normals, mask })
}

pub fn write_view(dir: &Path, view: &ViewFile) -> Result<(), ViewDirError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let bad = |message: String| ViewDirError::View { view: view.name.clone(), message };
    let write = |suffix: &str, bytes: &[u8]| {
        let path = dir.join(format!("{}{suffix}", view.name));
        fs::write(&path, bytes).map_err(io(&path))
    };
    let camera = serde_json::to_vec_pretty(&view.camera).map_err(|e| bad(e.to_string()))?;
    write(CAMERA_SUFFIX, &camera)?;
    write(NORMAL_SUFFIX, &view.normals.to_png().map_err(|e| bad(e.to_string()))?)?;
    if let Some(m) = &view.mask {
        write(MASK_SUFFIX, &m.to_png().map_err(|e| bad(e.to_string()))?)?;
    }
    Ok(())
}
