//! On-disk embedding formats.
//!
//! EMB1 layout (little-endian):
//!
//! ```text
//! "EMB1" | u32 version=1 | u32 N | u32 D | u32 C | u8 has_labels | u8 has_groups | 0u8 0u8
//! N*D f32 row-major features
//! N i32 labels       (if has_labels)
//! N i32 group ids    (if has_groups)
//! ```
//!
//! CSV layout: header `[group,]label,f_0,...,f_{D-1}`, one sample per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB1_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Emb1,
    Csv,
}

impl FileFormat {
    /// `.csv` files are CSV; everything else is EMB1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Emb1,
        }
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, format: FileFormat) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    match format {
        FileFormat::Emb1 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_emb1(&bytes)
        }
        FileFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_csv(&text)
        }
    }
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FileFormat::Emb1 => encode_emb1(set),
        FileFormat::Csv => encode_csv(set)?,
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Loads with the format inferred from the extension.
pub fn load_auto(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    load_embeddings(path, FileFormat::from_path(path))
}

pub fn save_auto(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_embeddings(set, path, FileFormat::from_path(path))
}

pub fn encode_emb1(set: &EmbeddingSet) -> Vec<u8> {
    let n = set.rows();
    let has_groups = set.has_groups();
    let mut out = Vec::with_capacity(HEADER_LEN + n * set.dim() * 4 + n * 8);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(set.class_count() as u32).to_le_bytes());
    out.push(u8::from(set.is_labeled()));
    out.push(u8::from(has_groups));
    out.extend_from_slice(&[0, 0]);
    for v in set.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if set.is_labeled() {
        for &l in set.labels() {
            out.extend_from_slice(&(l as i32).to_le_bytes());
        }
    }
    if has_groups {
        for &g in set.group_ids().unwrap_or_default() {
            out.extend_from_slice(&(g as i32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated EMB1 file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        raw.chunks_exact(4)
            .map(|c| {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                u32::try_from(v).map_err(|_| Error::Format(format!("negative {what} value {v}")))
            })
            .collect()
    }
}

pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != EMB1_MAGIC {
        return Err(Error::Format("bad magic, expected \"EMB1\"".into()));
    }
    let version = r.u32("version")?;
    if version != EMB1_VERSION {
        return Err(Error::Format(format!("unsupported EMB1 version {version}")));
    }
    let n = r.u32("N")? as usize;
    let d = r.u32("D")? as usize;
    let c = r.u32("C")? as usize;
    let flags = r.take(4, "flags")?;
    let (has_labels, has_groups) = (flags[0], flags[1]);
    if has_labels > 1 || has_groups > 1 || flags[2] != 0 || flags[3] != 0 {
        return Err(Error::Format("malformed flag bytes".into()));
    }
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("empty set (N={n}, D={d})")));
    }
    let count = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let features: Vec<f32> = r
        .take(count, "features")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut set = if has_labels == 1 {
        let labels = r.i32s(n, "label")?;
        EmbeddingSet::new(features, d, labels, c)?
    } else {
        let mut s = EmbeddingSet::new(features, d, vec![0; n], c.max(1))?;
        s.set_labeled_flag(false);
        s
    };
    if has_groups == 1 {
        set = set.with_groups(r.i32s(n, "group id")?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(set)
}

pub fn encode_csv(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let groups = set.group_ids().map(<[u32]>::to_vec);
    let mut header = Vec::with_capacity(set.dim() + 2);
    if groups.is_some() {
        header.push("group".to_string());
    }
    header.push("label".to_string());
    header.extend((0..set.dim()).map(|j| format!("f_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in set.iter_rows().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(g) = &groups {
            rec.push(g[i].to_string());
        }
        rec.push(set.labels()[i].to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Parses CSV embeddings. `C` is taken as `max(label) + 1`.
pub fn decode_csv(text: &str) -> Result<EmbeddingSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let has_groups = header.get(0) == Some("group");
    let label_col = usize::from(has_groups);
    if header.get(label_col) != Some("label") {
        return Err(Error::Format("CSV header must start with [group,]label".into()));
    }
    let d = header.len() - label_col - 1;
    if d == 0 {
        return Err(Error::Format("CSV has no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        if has_groups {
            groups.push(parse_int(field(0), line, "group")?);
        }
        labels.push(parse_int(field(label_col), line, "label")?);
        for j in 0..d {
            let s = field(label_col + 1 + j);
            let v: f32 = s
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad float {s:?}", line + 2)))?;
            features.push(v);
        }
    }
    let c = labels.iter().max().map_or(1, |&m| m as usize + 1);
    let set = EmbeddingSet::new(features, d, labels, c)?;
    if has_groups {
        set.with_groups(groups)
    } else {
        Ok(set)
    }
}

fn parse_int(s: &str, line: usize, what: &str) -> Result<u32> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {}: bad {what} {s:?}", line + 2)))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
