//! MetaImage (`.mhd` header + uncompressed `.raw` payload) reader and writer.
//!
//! Only 3-D `MET_UCHAR` volumes are supported. The payload is stored
//! x-fastest, which matches the in-memory layout of [`VoxelGrid`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Geometry, VoxelGrid};
use crate::error::{Error, Result};

/// Reads a MetaImage volume.
pub fn load_metaimage(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &text)?;

    let raw_path = resolve_data_file(path, &header.data_file);
    let data = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if data.len() != header.geometry.len() {
        return Err(Error::PayloadSize {
            path: raw_path,
            expected: header.geometry.len(),
            actual: data.len(),
        });
    }
    VoxelGrid::from_data(header.geometry, data)
}

/// Reads a MetaImage volume and checks that it is a {0, 1} mask.
pub fn load_mask(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let grid = load_metaimage(path)?;
    grid.ensure_binary()?;
    Ok(grid)
}

/// Writes `<stem>.mhd` and `<stem>.raw` next to each other. `path` names the
/// header; its extension is replaced by `.mhd` if it differs.
pub fn save_metaimage(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let header_path = path.as_ref().with_extension("mhd");
    let raw_path = header_path.with_extension("raw");
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Header {
            path: header_path.clone(),
            reason: "output file name is not valid UTF-8".into(),
        })?
        .to_owned();

    let g = grid.geometry();
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         Offset = {}\n\
         ElementSpacing = {}\n\
         DimSize = {}\n\
         ElementType = MET_UCHAR\n\
         ElementDataFile = {}\n",
        join(&g.origin),
        join(&g.spacing),
        join(&g.dims),
        raw_name
    );
    if let Some(parent) = header_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(&raw_path, grid.data()).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;
    Ok(())
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

struct Header {
    geometry: Geometry,
    data_file: String,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |reason: String| Error::Header {
        path: path.to_path_buf(),
        reason,
    };

    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {} is not `Key = Value`", lineno + 1)))?;
        let key = key.trim().to_owned();
        let value = value.trim().to_owned();
        if let Some(previous) = fields.get(&key) {
            if previous != &value {
                return Err(bad(format!("{key} given twice with different values")));
            }
        }
        let is_data_file = key == "ElementDataFile";
        fields.insert(key, value);
        // ElementDataFile terminates the header by convention.
        if is_data_file {
            break;
        }
    }

    if let Some(object_type) = fields.get("ObjectType") {
        if object_type != "Image" {
            return Err(bad(format!("ObjectType {object_type} is not Image")));
        }
    }
    let ndims: usize = required(&fields, "NDims", path)?
        .parse()
        .map_err(|_| bad("NDims is not an integer".into()))?;
    if ndims != 3 {
        return Err(bad(format!("NDims = {ndims}, only 3 is supported")));
    }
    let element_type = required(&fields, "ElementType", path)?;
    if element_type != "MET_UCHAR" {
        return Err(bad(format!(
            "ElementType {element_type} unsupported, expected MET_UCHAR"
        )));
    }
    if let Some(compressed) = fields.get("CompressedData") {
        if compressed.eq_ignore_ascii_case("true") {
            return Err(bad("compressed payloads are not supported".into()));
        }
    }
    if let Some(channels) = fields.get("ElementNumberOfChannels") {
        if channels != "1" {
            return Err(bad("multi-channel volumes are not supported".into()));
        }
    }

    let dims: [usize; 3] = parse_triplet(required(&fields, "DimSize", path)?, "DimSize", path)?;
    let spacing: [f64; 3] = match (fields.get("ElementSpacing"), fields.get("ElementSize")) {
        (Some(s), _) => parse_triplet(s, "ElementSpacing", path)?,
        (None, Some(s)) => parse_triplet(s, "ElementSize", path)?,
        (None, None) => [1.0; 3],
    };

    // Offset, Origin and Position are synonyms; they must agree when repeated.
    let mut origin: Option<[f64; 3]> = None;
    for key in ["Offset", "Origin", "Position"] {
        if let Some(value) = fields.get(key) {
            let parsed: [f64; 3] = parse_triplet(value, key, path)?;
            match origin {
                Some(existing) if existing != parsed => {
                    return Err(bad(format!("{key} contradicts another origin field")));
                }
                _ => origin = Some(parsed),
            }
        }
    }

    let data_file = required(&fields, "ElementDataFile", path)?.to_owned();
    if data_file.eq_ignore_ascii_case("LOCAL") || data_file.starts_with("LIST") {
        return Err(bad(format!(
            "ElementDataFile = {data_file} unsupported, expected a raw file name"
        )));
    }

    let geometry = Geometry::new(dims, spacing, origin.unwrap_or([0.0; 3]))
        .map_err(|e| bad(e.to_string()))?;
    Ok(Header {
        geometry,
        data_file,
    })
}

fn required<'a>(fields: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    fields.get(key).map(String::as_str).ok_or_else(|| Error::Header {
        path: path.to_path_buf(),
        reason: format!("missing {key}"),
    })
}

fn parse_triplet<T: std::str::FromStr>(value: &str, key: &str, path: &Path) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    let bad = || Error::Header {
        path: path.to_path_buf(),
        reason: format!("{key} = `{value}` is not three numbers"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let a = parts[0].parse().map_err(|_| bad())?;
    let b = parts[1].parse().map_err(|_| bad())?;
    let c = parts[2].parse().map_err(|_| bad())?;
    Ok([a, b, c])
}

fn resolve_data_file(header: &Path, name: &str) -> PathBuf {
    let candidate = Path::new(name);
    if candidate.is_absolute() {
        candidate.to_path_buf()
    } else {
        header
            .parent()
            .map(|dir| dir.join(candidate))
            .unwrap_or_else(|| candidate.to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_pair(dir: &Path, header: &str, payload: &[u8]) -> PathBuf {
        let mhd = dir.join("vol.mhd");
        fs::write(&mhd, header).unwrap();
        fs::write(dir.join("vol.raw"), payload).unwrap();
        mhd
    }

    #[test]
    fn reads_all_zero_volume() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = write_pair(
            dir.path(),
            "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\n\
             ElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 64],
        );
        let grid = load_metaimage(&mhd).unwrap();
        assert_eq!(grid.dims(), [4, 4, 4]);
        assert_eq!(grid.count_nonzero(), 0);
    }

    #[test]
    fn offset_moves_the_first_voxel() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nOffset = 10 0 0\n\
             ElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 8],
        );
        let grid = load_metaimage(&mhd).unwrap();
        let p = grid.geometry().voxel_center([0, 0, 0]);
        assert_eq!(p, Vec3::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn random_mask_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Geometry::new([16, 16, 16], [0.7, 0.7, 1.25], [-3.5, 1.0, 2.0]).unwrap();
        let data: Vec<u8> = (0..g.len()).map(|_| rng.random_bool(0.3) as u8).collect();
        let grid = VoxelGrid::from_data(g, data).unwrap();
        let path = dir.path().join("mask.mhd");
        save_metaimage(&grid, &path).unwrap();
        let back = load_mask(&path).unwrap();
        assert_eq!(back, grid);

        // Saving what was loaded reproduces the payload byte for byte.
        let again = dir.path().join("again.mhd");
        save_metaimage(&back, &again).unwrap();
        assert_eq!(
            fs::read(dir.path().join("mask.raw")).unwrap(),
            fs::read(dir.path().join("again.raw")).unwrap()
        );
    }

    #[test]
    fn single_voxel_writes_one_byte() {
        let dir = tempfile::tempdir().unwrap();
        let grid = VoxelGrid::zeros(Geometry::cubic([1, 1, 1]));
        save_metaimage(&grid, dir.path().join("one.mhd")).unwrap();
        assert_eq!(fs::read(dir.path().join("one.raw")).unwrap().len(), 1);
    }

    #[test]
    fn anisotropic_spacing_is_written_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([2, 2, 2], [0.5, 0.5, 1.0], [0.0; 3]).unwrap();
        save_metaimage(&VoxelGrid::zeros(g), dir.path().join("a.mhd")).unwrap();
        let text = fs::read_to_string(dir.path().join("a.mhd")).unwrap();
        assert!(text.contains("ElementSpacing = 0.5 0.5 1\n"), "{text}");
        let back = load_metaimage(dir.path().join("a.mhd")).unwrap();
        assert_eq!(back.geometry().spacing, [0.5, 0.5, 1.0]);
    }

    #[test]
    fn payload_size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 4 4 4\nElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 63],
        );
        assert!(matches!(
            load_metaimage(&mhd),
            Err(Error::PayloadSize {
                expected: 64,
                actual: 63,
                ..
            })
        ));
    }

    #[test]
    fn missing_and_contradictory_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let no_dims = write_pair(
            dir.path(),
            "NDims = 3\nElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 8],
        );
        assert!(matches!(load_metaimage(&no_dims), Err(Error::Header { .. })));

        let clash = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 2 2 2\nOffset = 0 0 0\nOrigin = 1 0 0\n\
             ElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 8],
        );
        assert!(matches!(load_metaimage(&clash), Err(Error::Header { .. })));

        let wrong_type = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\nElementDataFile = vol.raw\n",
            &[0u8; 8],
        );
        assert!(matches!(load_metaimage(&wrong_type), Err(Error::Header { .. })));

        let two_d = write_pair(
            dir.path(),
            "NDims = 2\nDimSize = 2 4\nElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &[0u8; 8],
        );
        assert!(matches!(load_metaimage(&two_d), Err(Error::Header { .. })));
    }

    #[test]
    fn mask_loading_rejects_non_binary_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut payload = [0u8; 8];
        payload[5] = 3;
        let mhd = write_pair(
            dir.path(),
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = vol.raw\n",
            &payload,
        );
        assert!(load_metaimage(&mhd).is_ok());
        assert!(matches!(
            load_mask(&mhd),
            Err(Error::NotBinary { index: 5, value: 3 })
        ));
    }

    #[test]
    fn missing_raw_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let mhd = dir.path().join("x.mhd");
        fs::write(
            &mhd,
            "NDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = nope.raw\n",
        )
        .unwrap();
        assert!(load_metaimage(&mhd).unwrap_err().is_io());
    }
}
