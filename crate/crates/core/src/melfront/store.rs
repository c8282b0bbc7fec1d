use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use half::f16;

use super::MelSpectrogram;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MAESTSPC";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 2 + 4 + 2;
const INDEX_FILE: &str = "index.tsv";

/// Rounds to the nearest half-precision value (ties to even).
pub fn quantize_f16(x: f32) -> f32 {
    f16::from_f32(x).to_f32()
}

/// Serializes one spectrogram record.
pub fn encode_record(spec: &MelSpectrogram) -> Result<Vec<u8>> {
    let bands = u16::try_from(spec.band_count)
        .map_err(|_| Error::Format(format!("{} bands do not fit u16", spec.band_count)))?;
    let frames = u32::try_from(spec.frame_count)
        .map_err(|_| Error::Format(format!("{} frames do not fit u32", spec.frame_count)))?;
    if let Some(v) = spec.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerics(format!(
            "cannot store non-finite value {v}"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + spec.data.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&bands.to_le_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&spec.hop_ms.to_le_bytes());
    for &v in &spec.data {
        out.extend_from_slice(&f16::from_f32(v).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_record(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("missing spectrogram record magic".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let version = u16_at(8);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported record version {version}"
        )));
    }
    let bands = u16_at(10) as usize;
    let frames = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let hop_ms = u16_at(16);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != bands * frames * 2 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header implies {}",
            payload.len(),
            bands * frames * 2
        )));
    }
    let data = payload
        .chunks_exact(2)
        .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
        .collect();
    MelSpectrogram::new(data, bands, frames, hop_ms)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub track_id: String,
    pub path: String,
    pub labels: Vec<u32>,
}

impl IndexEntry {
    fn to_line(&self) -> String {
        let labels: Vec<String> = self.labels.iter().map(u32::to_string).collect();
        format!("{}\t{}\t{}", self.track_id, self.path, labels.join(","))
    }

    fn parse(line: &str) -> Result<Self> {
        let mut parts = line.split('\t');
        let (Some(id), Some(path), labels, None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Format(format!("bad index line {line:?}")));
        };
        let labels = match labels.unwrap_or("") {
            "" => Vec::new(),
            s => s
                .split(',')
                .map(|l| {
                    l.trim()
                        .parse()
                        .map_err(|_| Error::Format(format!("bad label id {l:?}")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            track_id: id.to_string(),
            path: path.to_string(),
            labels,
        })
    }
}

/// Directory of per-track f16 records plus a tab-separated index.
#[derive(Debug)]
pub struct SpectrogramStore {
    root: PathBuf,
    entries: BTreeMap<String, IndexEntry>,
    order: Vec<String>,
}

impl SpectrogramStore {
    /// Opens `root`, creating it (and an empty index) when absent.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("records"))?;
        let mut store = Self {
            root,
            entries: BTreeMap::new(),
            order: Vec::new(),
        };
        let index = store.root.join(INDEX_FILE);
        if index.exists() {
            for line in BufReader::new(File::open(&index)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e = IndexEntry::parse(&line)?;
                if store
                    .entries
                    .insert(e.track_id.clone(), e.clone())
                    .is_none()
                {
                    store.order.push(e.track_id);
                }
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Track ids in insertion order.
    pub fn track_ids(&self) -> &[String] {
        &self.order
    }

    pub fn entry(&self, track_id: &str) -> Result<&IndexEntry> {
        self.entries
            .get(track_id)
            .ok_or_else(|| Error::NotFound(format!("track {track_id:?}")))
    }

    pub fn labels(&self, track_id: &str) -> Result<&[u32]> {
        Ok(&self.entry(track_id)?.labels)
    }

    pub fn write(&mut self, spec: &MelSpectrogram, track_id: &str, labels: &[u32]) -> Result<()> {
        if track_id.is_empty() || track_id.contains(['\t', '\n', '\r']) {
            return Err(Error::Format(format!("invalid track id {track_id:?}")));
        }
        let file_name: String = track_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let rel = format!("records/{file_name}.spc");
        fs::write(self.root.join(&rel), encode_record(spec)?)?;
        let entry = IndexEntry {
            track_id: track_id.to_string(),
            path: rel,
            labels: labels.to_vec(),
        };
        if self.entries.contains_key(track_id) {
            // rewriting an existing track replaces its index line
            self.entries.insert(track_id.to_string(), entry);
            let mut text = String::new();
            for id in &self.order {
                text.push_str(&self.entries[id].to_line());
                text.push('\n');
            }
            fs::write(self.root.join(INDEX_FILE), text)?;
            return Ok(());
        }
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(INDEX_FILE))?;
        writeln!(index, "{}", entry.to_line())?;
        self.entries.insert(track_id.to_string(), entry);
        self.order.push(track_id.to_string());
        Ok(())
    }

    pub fn read(&self, track_id: &str) -> Result<MelSpectrogram> {
        let entry = self.entry(track_id)?;
        let bytes = fs::read(self.root.join(&entry.path)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(entry.path.clone()),
            _ => Error::Io(e),
        })?;
        decode_record(&bytes)
    }

    /// Largest label id referenced by the index, plus one.
    pub fn label_count(&self) -> usize {
        self.entries
            .values()
            .flat_map(|e| e.labels.iter())
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_to_nearest_even_table() {
        // (input, expected f16 value) checked by hand against the binary16 grid.
        let ulp1 = 2f32.powi(-10);
        let table: [(f32, f32); 20] = [
            (0.0, 0.0),
            (-0.0, -0.0),
            (1.0, 1.0),
            (-2.5, -2.5),
            (65504.0, 65504.0),
            (65520.0, f32::INFINITY),
            (65519.0, 65504.0),
            (1.0 + ulp1 / 2.0, 1.0),
            (1.0 + 1.5 * ulp1, 1.0 + 2.0 * ulp1),
            (1.0 + 2.5 * ulp1, 1.0 + 2.0 * ulp1),
            (1.0 + 0.75 * ulp1, 1.0 + ulp1),
            (1.0 + 0.25 * ulp1, 1.0),
            (2048.0 + 1.0, 2048.0),
            (2048.0 + 3.0, 2052.0),
            (0.1, 0.099975586),
            (1.0 / 3.0, 0.33325195),
            (2f32.powi(-24), 2f32.powi(-24)),
            (2f32.powi(-25), 0.0),
            (1.5 * 2f32.powi(-24), 2.0 * 2f32.powi(-24)),
            (3.14159, 3.140625),
        ];
        for (x, want) in table {
            let got = quantize_f16(x);
            assert!(
                got == want && got.is_sign_negative() == want.is_sign_negative(),
                "{x} -> {got}, expected {want}"
            );
        }
    }

    #[test]
    fn header_errors() {
        let spec = MelSpectrogram::new(vec![0.5; 6], 2, 3, 16).unwrap();
        let bytes = encode_record(&spec).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 12);
        assert!(matches!(
            decode_record(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_record(&bad), Err(Error::Format(_))));
        assert_eq!(decode_record(&bytes).unwrap(), spec);
    }

    #[test]
    fn index_line_round_trip() {
        let e = IndexEntry {
            track_id: "t-1".into(),
            path: "records/t-1.spc".into(),
            labels: vec![3, 0, 17],
        };
        assert_eq!(IndexEntry::parse(&e.to_line()).unwrap(), e);
        let no_labels = IndexEntry::parse("x\trecords/x.spc\t").unwrap();
        assert!(no_labels.labels.is_empty());
        assert!(IndexEntry::parse("only-one-field").is_err());
    }
}
