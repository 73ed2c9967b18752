//! Binary feature-file codecs.
//!
//! Embedding file: `SGEMB1`, u32 LE count, u32 LE dim, then `count * dim`
//! little-endian `f32`.
//!
//! Keypoint file: `SGKPT1`, u32 LE frame_count, u32 LE point_count, then
//! `frame_count * point_count * 3` little-endian `f32`, then a presence track
//! of `frame_count * 2` bytes (left, right per frame), each 0 or 1.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::embedding::Embedding;
use super::error::{DataError, DataResult};

pub const EMBEDDING_MAGIC: &[u8; 6] = b"SGEMB1";
pub const KEYPOINT_MAGIC: &[u8; 6] = b"SGKPT1";

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> DataResult<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DataError::TruncatedFile(what.to_string())
        } else {
            DataError::Io { path: Default::default(), source: e }
        }
    })
}

fn read_magic<R: Read>(r: &mut R, magic: &'static [u8; 6], name: &'static str) -> DataResult<()> {
    let mut buf = [0u8; 6];
    read_exact_or_truncated(r, &mut buf, "header")?;
    if &buf != magic {
        return Err(DataError::BadMagic { expected: name });
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> DataResult<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_truncated(r, &mut buf, "header")?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32_payload<R: Read>(r: &mut R, len: usize) -> DataResult<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    read_exact_or_truncated(r, &mut bytes, "payload")?;
    let mut out = Vec::with_capacity(len);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        if !v.is_finite() {
            return Err(DataError::NonFiniteValue(i));
        }
        out.push(v);
    }
    Ok(out)
}

fn with_path<T>(path: &Path, res: DataResult<T>) -> DataResult<T> {
    res.map_err(|e| match e {
        DataError::Io { source, .. } => DataError::io(path, source),
        other => other,
    })
}

fn open(path: &Path) -> DataResult<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(DataError::MissingFeatureFile(path.to_path_buf())),
        Err(e) => Err(DataError::io(path, e)),
    }
}

pub fn read_embeddings<R: Read>(r: &mut R) -> DataResult<Vec<Embedding>> {
    read_magic(r, EMBEDDING_MAGIC, "SGEMB1")?;
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    if count > 0 && dim == 0 {
        return Err(DataError::InvalidEmbedding("dim is zero".into()));
    }
    let payload = read_f32_payload(r, count * dim)?;
    payload
        .chunks_exact(dim.max(1))
        .take(count)
        .map(|c| Embedding::new(c.to_vec()).map_err(|e| DataError::InvalidEmbedding(e.to_string())))
        .collect()
}

pub fn write_embeddings<W: Write>(w: &mut W, embeddings: &[Embedding]) -> DataResult<()> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    if embeddings.iter().any(|e| e.dim() != dim) {
        return Err(DataError::InvalidEmbedding("all embeddings in a file must share one dimension".into()));
    }
    let mut io = || -> io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(embeddings.len() as u32).to_le_bytes())?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        for e in embeddings {
            for v in e.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    };
    io().map_err(|e| DataError::io("", e))
}

pub fn load_embedding_file(path: &Path) -> DataResult<Vec<Embedding>> {
    let mut r = open(path)?;
    with_path(path, read_embeddings(&mut r))
}

pub fn write_embedding_file(path: &Path, embeddings: &[Embedding]) -> DataResult<()> {
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(f);
    with_path(path, write_embeddings(&mut w, embeddings))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Reads only the `(count, dim)` header of an embedding file.
pub fn peek_embedding_header(path: &Path) -> DataResult<(usize, usize)> {
    let mut r = open(path)?;
    with_path(
        path,
        (|| {
            read_magic(&mut r, EMBEDDING_MAGIC, "SGEMB1")?;
            Ok((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize))
        })(),
    )
}

/// Raw contents of a keypoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTrack {
    pub frame_count: usize,
    pub point_count: usize,
    /// `frame_count * point_count * 3` coordinates, frame-major.
    pub coords: Vec<f32>,
    /// Per frame: (left present, right present).
    pub presence: Vec<[bool; 2]>,
}

impl KeypointTrack {
    pub fn point(&self, frame: usize, point: usize) -> [f32; 3] {
        let base = (frame * self.point_count + point) * 3;
        [self.coords[base], self.coords[base + 1], self.coords[base + 2]]
    }
}

pub fn read_keypoints<R: Read>(r: &mut R) -> DataResult<KeypointTrack> {
    read_magic(r, KEYPOINT_MAGIC, "SGKPT1")?;
    let frame_count = read_u32(r)? as usize;
    let point_count = read_u32(r)? as usize;
    let coords = read_f32_payload(r, frame_count * point_count * 3)?;
    let mut bytes = vec![0u8; frame_count * 2];
    read_exact_or_truncated(r, &mut bytes, "presence track")?;
    let mut presence = Vec::with_capacity(frame_count);
    for (frame, pair) in bytes.chunks_exact(2).enumerate() {
        let mut flags = [false; 2];
        for (slot, &b) in flags.iter_mut().zip(pair) {
            *slot = match b {
                0 => false,
                1 => true,
                value => return Err(DataError::InvalidPresenceByte { frame, value }),
            };
        }
        presence.push(flags);
    }
    Ok(KeypointTrack { frame_count, point_count, coords, presence })
}

pub fn write_keypoints<W: Write>(w: &mut W, track: &KeypointTrack) -> DataResult<()> {
    if track.coords.len() != track.frame_count * track.point_count * 3 || track.presence.len() != track.frame_count {
        return Err(DataError::TruncatedFile("keypoint track arrays disagree with header counts".into()));
    }
    if let Some(i) = track.coords.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteValue(i));
    }
    let mut io = || -> io::Result<()> {
        w.write_all(KEYPOINT_MAGIC)?;
        w.write_all(&(track.frame_count as u32).to_le_bytes())?;
        w.write_all(&(track.point_count as u32).to_le_bytes())?;
        for v in &track.coords {
            w.write_all(&v.to_le_bytes())?;
        }
        for flags in &track.presence {
            w.write_all(&[flags[0] as u8, flags[1] as u8])?;
        }
        Ok(())
    };
    io().map_err(|e| DataError::io("", e))
}

pub fn load_keypoint_file(path: &Path) -> DataResult<KeypointTrack> {
    let mut r = open(path)?;
    with_path(path, read_keypoints(&mut r))
}

pub fn write_keypoint_file(path: &Path, track: &KeypointTrack) -> DataResult<()> {
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(f);
    with_path(path, write_keypoints(&mut w, track))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Reads only the `(frame_count, point_count)` header of a keypoint file.
pub fn peek_keypoint_header(path: &Path) -> DataResult<(usize, usize)> {
    let mut r = open(path)?;
    with_path(
        path,
        (|| {
            read_magic(&mut r, KEYPOINT_MAGIC, "SGKPT1")?;
            Ok((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize))
        })(),
    )
}
