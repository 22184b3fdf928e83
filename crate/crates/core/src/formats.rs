//! On-disk formats: binary PPM images, text depth rasters and the dataset
//! manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::{DepthMap, Raster, RgbImage};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub const MANIFEST_HEADER: &str = "MANIFEST v1";
pub const MANIFEST_FILE: &str = "manifest.txt";
const DEPTH_TAG: &str = "DEPTH";

/// P6 with maxval 255. Channel values are rounded to the nearest level.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.reserve(image.len() * 3);
    for p in image.as_slice() {
        for v in p {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(format!("expected P6 magic, found {magic:?}"));
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what}: {t:?}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() < start + need {
        return Err(format!(
            "expected {need} sample bytes, found {}",
            bytes.len().saturating_sub(start)
        ));
    }
    let data = &bytes[start..start + need];
    let scale = maxval as f64;
    Ok(Raster::from_fn(height, width, |r, c| {
        let i = (r * width + c) * 3;
        [
            data[i] as f64 / scale,
            data[i + 1] as f64 / scale,
            data[i + 2] as f64 / scale,
        ]
    }))
}

/// `DEPTH rows cols` then one line per row. Values use the shortest decimal
/// form that parses back to the same `f64`.
pub fn encode_depth(depth: &DepthMap) -> String {
    let mut out = format!("{DEPTH_TAG} {} {}\n", depth.height(), depth.width());
    for r in 0..depth.height() {
        for c in 0..depth.width() {
            if c > 0 {
                out.push(' ');
            }
            write!(out, "{}", depth.get(r, c)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_depth(text: &str) -> std::result::Result<DepthMap, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty depth file")?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != DEPTH_TAG {
        return Err(format!("bad depth header {header:?}"));
    }
    let rows: usize = fields[1].parse().map_err(|_| "bad row count")?;
    let cols: usize = fields[2].parse().map_err(|_| "bad column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines.next().ok_or(format!("missing row {r}"))?;
        let before = data.len();
        for t in line.split_whitespace() {
            data.push(
                t.parse::<f64>()
                    .map_err(|_| format!("row {r}: bad value {t:?}"))?,
            );
        }
        if data.len() - before != cols {
            return Err(format!(
                "row {r}: expected {cols} values, found {}",
                data.len() - before
            ));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err("trailing data after last row".into());
    }
    Ok(Raster::from_vec(rows, cols, data))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read_bytes(path)?).map_err(|m| FormatError::parse(path, m))
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(image))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    decode_depth(&text).map_err(|m| FormatError::parse(path, m))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, encode_depth(depth).as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub image: PathBuf,
    pub depth: PathBuf,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn encode(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            writeln!(
                out,
                "{} {} {}",
                e.image.display(),
                e.depth.display(),
                e.seed
            )
            .unwrap();
        }
        out
    }

    pub fn decode(reader: impl Read) -> std::result::Result<Self, String> {
        let mut lines = BufReader::new(reader).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => return Err(format!("missing {MANIFEST_HEADER:?} header")),
        }
        let mut entries = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(format!("line {}: expected image, depth and seed", no + 2));
            }
            let seed = f[2]
                .parse()
                .map_err(|_| format!("line {}: bad seed {:?}", no + 2, f[2]))?;
            entries.push(ManifestEntry {
                image: f[0].into(),
                depth: f[1].into(),
                seed,
            });
        }
        Ok(Self { entries })
    }
}

/// One loaded dataset sample.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub seed: u64,
}

/// Writes `sample_NNNN.ppm` / `sample_NNNN.depth` pairs and the manifest into
/// `dir`, creating it if needed. The manifest is written last.
pub fn write_dataset(dir: &Path, items: &[DatasetItem]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut manifest = Manifest::default();
    for (i, item) in items.iter().enumerate() {
        let image = PathBuf::from(format!("sample_{i:04}.ppm"));
        let depth = PathBuf::from(format!("sample_{i:04}.depth"));
        write_ppm(&dir.join(&image), &item.image)?;
        write_depth(&dir.join(&depth), &item.depth)?;
        manifest.entries.push(ManifestEntry {
            image,
            depth,
            seed: item.seed,
        });
    }
    write_bytes(&dir.join(MANIFEST_FILE), manifest.encode().as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| FormatError::io(&path, e))?;
    Manifest::decode(file).map_err(|m| FormatError::parse(&path, m))
}

pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    let manifest = read_manifest(dir)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = read_ppm(&dir.join(&e.image))?;
            let depth = read_depth(&dir.join(&e.depth))?;
            if !image.same_shape(&depth) {
                return Err(FormatError::parse(
                    dir.join(&e.depth),
                    format!(
                        "depth is {}x{} but image is {}x{}",
                        depth.height(),
                        depth.width(),
                        image.height(),
                        image.width()
                    ),
                ));
            }
            Ok(DatasetItem {
                image,
                depth,
                seed: e.seed,
            })
        })
        .collect()
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| FormatError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| FormatError::io(&tmp, e))?;
    f.sync_all().map_err(|e| FormatError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_on_8bit_levels() {
        let img = Raster::from_fn(3, 5, |r, c| {
            [(r * 40) as f64 / 255.0, (c * 50) as f64 / 255.0, 1.0]
        });
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_header_with_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.as_slice(), &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn ppm_rejects_garbage() {
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n0 2\n255\n").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn depth_round_trip_is_exact() {
        let d = Raster::from_fn(4, 3, |r, c| 1.0 / 3.0 + r as f64 * 1e-7 + c as f64 * 0.1);
        let text = encode_depth(&d);
        assert!(text.starts_with("DEPTH 4 3\n"));
        assert_eq!(decode_depth(&text).unwrap(), d);
    }

    #[test]
    fn depth_rejects_malformed() {
        assert!(decode_depth("DEPTH 1 2\n1.0\n").is_err());
        assert!(decode_depth("DEPTH 2 1\n1.0\n").is_err());
        assert!(decode_depth("DEPT 1 1\n1.0\n").is_err());
        assert!(decode_depth("DEPTH 1 1\nx\n").is_err());
        assert!(decode_depth("DEPTH 1 1\n1\n2\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![ManifestEntry {
                image: "a.ppm".into(),
                depth: "a.depth".into(),
                seed: 42,
            }],
        };
        let text = m.encode();
        assert_eq!(text, "MANIFEST v1\na.ppm a.depth 42\n");
        assert_eq!(Manifest::decode(text.as_bytes()).unwrap(), m);
        assert!(Manifest::decode("MANIFEST v2\n".as_bytes()).is_err());
        assert!(Manifest::decode("MANIFEST v1\na b\n".as_bytes()).is_err());
    }
}
