//! Embedding matrix (`EMB1`) and JSON-lines metadata files.
//!
//! Embedding layout, little-endian, no padding:
//! `"EMB1" | u32 version=1 | u64 rows | u32 dim | rows*dim f32, row-major`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{validate_embedding, Catalog, MoodLabel, Track, TrackMeta};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;

pub fn write_embeddings<'a, I>(path: &Path, dim: usize, rows: I) -> Result<()>
where
    I: ExactSizeIterator<Item = &'a [f32]>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&(rows.len() as u64).to_le_bytes())?;
    put(&(dim as u32).to_le_bytes())?;
    for (r, row) in rows.enumerate() {
        if row.len() != dim {
            return Err(Error::Shape(format!("row {r}: {} values, expected {dim}", row.len())));
        }
        for v in row {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an embedding file into `(dim, rows)`.
pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&bytes, &path.display().to_string())
}

pub(crate) fn parse_embeddings(bytes: &[u8], name: &str) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(name, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(name, "bad magic, expected \"EMB1\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(name, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::format(name, "dimension is zero"));
    }
    let payload = &bytes[HEADER_LEN..];
    let row_bytes = dim * 4;
    let mut out = Vec::with_capacity(rows.min(payload.len() / row_bytes + 1));
    for r in 0..rows {
        let start = r * row_bytes;
        let Some(chunk) = payload.get(start..start + row_bytes) else {
            return Err(Error::format(name, format!("truncated payload at row {r}")));
        };
        out.push(
            chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if payload.len() != rows * row_bytes {
        return Err(Error::format(
            name,
            format!("{} trailing bytes after {rows} rows", payload.len() - rows * row_bytes),
        ));
    }
    Ok((dim, out))
}

pub fn write_metadata(path: &Path, metas: impl Iterator<Item = TrackMeta>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in metas {
        serde_json::to_writer(&mut w, &m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<Vec<TrackMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: TrackMeta = serde_json::from_str(&line).map_err(|e| Error::Metadata {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(meta);
    }
    Ok(out)
}

/// Writes `catalog` as an embedding file plus a metadata file.
pub fn save_catalog(catalog: &Catalog, embeddings_path: &Path, metadata_path: &Path) -> Result<()> {
    write_embeddings(
        embeddings_path,
        catalog.dim(),
        catalog.tracks().iter().map(|t| t.embedding.as_slice()),
    )?;
    write_metadata(metadata_path, catalog.tracks().iter().map(Track::meta))
}

/// Loads and validates a catalog. Row `i` of the embedding file binds to
/// metadata line `i + 1`.
pub fn load_catalog(embeddings_path: &Path, metadata_path: &Path, mood_count: usize) -> Result<Catalog> {
    let (_, rows) = read_embeddings(embeddings_path)?;
    let metas = read_metadata(metadata_path)?;
    if rows.len() != metas.len() {
        return Err(Error::InvalidInput(format!(
            "{} embedding rows but {} metadata lines",
            rows.len(),
            metas.len()
        )));
    }
    let mut seen = HashSet::with_capacity(metas.len());
    let mut tracks = Vec::with_capacity(rows.len());
    for (row, (embedding, meta)) in rows.into_iter().zip(metas).enumerate() {
        let line = row + 1;
        if meta.mood as usize >= mood_count {
            return Err(Error::Metadata {
                line,
                message: format!("mood out of range, line {line}: {} >= {mood_count}", meta.mood),
            });
        }
        if !seen.insert(meta.id.clone()) {
            return Err(Error::Metadata {
                line,
                message: format!("duplicate id {:?}", meta.id),
            });
        }
        validate_embedding(&embedding, row)?;
        tracks.push(Track {
            id: meta.id,
            artist_id: meta.artist,
            embedding,
            mood: MoodLabel(meta.mood),
            genre: meta.genre,
            instruments: meta.instruments,
        });
    }
    Catalog::new(tracks, mood_count)
}
