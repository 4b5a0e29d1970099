//! Binary and text file formats.
//!
//! All binary formats are little-endian with a four-byte magic and a `u32`
//! version:
//!
//! * `CSTS` spectra: dims `(n_src, n_det, n_bins, n_levels)` as `u32`, energy
//!   edges, ballistic channel `[level][src][det]`, counts `[src][det][bin]`,
//!   then metadata as a length-prefixed UTF-8 TOML table.
//! * `CSTM` operators: `n_rows`, `n_cols`, `nnz` as `u64`, row pointers
//!   (`u64`), column indices (`u32`), values (`f64`), then fingerprints as
//!   length-prefixed TOML.
//! * `CSTI` images: side `u32`, field of view `f64`, row-major `f64` values.
//!
//! Images are additionally exported as 16-bit binary PGM for viewing, and
//! spectra as CSV for plotting; those two are write-only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{EnergyGrid, Spectrum};
use crate::image::DensityImage;
use crate::sparse::{Fingerprints, SparseOperator};

const SPECTRUM_MAGIC: &[u8; 4] = b"CSTS";
const SPECTRUM_VERSION: u32 = 2;
const OPERATOR_MAGIC: &[u8; 4] = b"CSTM";
const OPERATOR_VERSION: u32 = 1;
const IMAGE_MAGIC: &[u8; 4] = b"CSTI";
const IMAGE_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Writer::default();
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn text(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(data: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        if data.len() < 8 || &data[..4] != magic {
            return Err(Error::Format(format!(
                "expected magic {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { data, pos: 4 };
        let v = r.u32()?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.len()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(())
    }
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

pub fn spectrum_to_bytes(s: &Spectrum) -> Result<Vec<u8>> {
    let mut w = Writer::header(SPECTRUM_MAGIC, SPECTRUM_VERSION);
    for d in [s.n_sources, s.n_detectors, s.n_bins(), s.n_levels] {
        w.u32(u32::try_from(d).map_err(|_| Error::shape("dimension exceeds u32"))?);
    }
    w.f64s(&s.grid.edges);
    w.f64s(&s.ballistic);
    w.f64s(&s.counts);
    w.text(&toml::to_string(&s.metadata).map_err(toml_err)?);
    Ok(w.buf)
}

pub fn spectrum_from_bytes(data: &[u8]) -> Result<Spectrum> {
    let mut r = Reader::open(data, SPECTRUM_MAGIC, SPECTRUM_VERSION)?;
    let (ns, nd, nb, nl) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let grid = EnergyGrid::from_edges(r.f64s(nb + 1)?)?;
    let ballistic = r.f64s(nl * ns * nd)?;
    let counts = r.f64s(ns * nd * nb)?;
    let metadata: BTreeMap<String, String> = toml::from_str(r.text()?).map_err(toml_err)?;
    r.finish()?;
    Ok(Spectrum {
        n_sources: ns,
        n_detectors: nd,
        grid,
        n_levels: nl,
        ballistic,
        counts,
        metadata,
    })
}

pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    Ok(fs::write(path, spectrum_to_bytes(s)?)?)
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    spectrum_from_bytes(&fs::read(path)?)
}

/// One line per (source, detector, bin) followed by one line per ballistic
/// entry with an empty bin column.
pub fn spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::from("source,detector,level,bin,e_low_mev,e_high_mev,counts\n");
    for i in 0..s.n_sources {
        for j in 0..s.n_detectors {
            for b in 0..s.n_bins() {
                out.push_str(&format!(
                    "{i},{j},,{b},{},{},{}\n",
                    s.grid.edges[b],
                    s.grid.edges[b + 1],
                    s.get(i, j, b)
                ));
            }
        }
    }
    for l in 0..s.n_levels {
        for (idx, v) in s.ballistic_level(l).iter().enumerate() {
            let (i, j) = (idx / s.n_detectors, idx % s.n_detectors);
            out.push_str(&format!("{i},{j},{l},,,,{v}\n"));
        }
    }
    out
}

pub fn write_spectrum_csv(path: &Path, s: &Spectrum) -> Result<()> {
    Ok(fs::write(path, spectrum_csv(s))?)
}

pub fn operator_to_bytes(op: &SparseOperator) -> Result<Vec<u8>> {
    let mut w = Writer::header(OPERATOR_MAGIC, OPERATOR_VERSION);
    w.u64(op.n_rows() as u64);
    w.u64(op.n_cols() as u64);
    w.u64(op.nnz() as u64);
    for &p in op.row_ptr() {
        w.u64(p as u64);
    }
    for &c in op.col_indices() {
        w.u32(c);
    }
    w.f64s(op.values());
    w.text(&toml::to_string(&op.fingerprints).map_err(toml_err)?);
    Ok(w.buf)
}

pub fn operator_from_bytes(data: &[u8]) -> Result<SparseOperator> {
    let mut r = Reader::open(data, OPERATOR_MAGIC, OPERATOR_VERSION)?;
    let (n_rows, n_cols, nnz) = (r.len()?, r.len()?, r.len()?);
    if n_rows >= data.len() || nnz > data.len() {
        return Err(Error::Format("operator dimensions exceed the file size".into()));
    }
    let row_ptr = (0..=n_rows).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let col_idx = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let values = r.f64s(nnz)?;
    let fingerprints: Fingerprints = toml::from_str(r.text()?).map_err(toml_err)?;
    r.finish()?;
    SparseOperator::from_csr(n_rows, n_cols, row_ptr, col_idx, values, fingerprints)
}

pub fn write_operator(path: &Path, op: &SparseOperator) -> Result<()> {
    Ok(fs::write(path, operator_to_bytes(op)?)?)
}

pub fn read_operator(path: &Path) -> Result<SparseOperator> {
    operator_from_bytes(&fs::read(path)?)
}

pub fn image_to_bytes(img: &DensityImage) -> Vec<u8> {
    let mut w = Writer::header(IMAGE_MAGIC, IMAGE_VERSION);
    w.u32(img.n as u32);
    w.f64s(&[img.fov]);
    w.f64s(&img.values);
    w.buf
}

pub fn image_from_bytes(data: &[u8]) -> Result<DensityImage> {
    let mut r = Reader::open(data, IMAGE_MAGIC, IMAGE_VERSION)?;
    let n = r.u32()? as usize;
    let fov = r.f64s(1)?[0];
    let values = r.f64s(n * n)?;
    r.finish()?;
    DensityImage::from_values(n, fov, values)
}

pub fn write_image(path: &Path, img: &DensityImage) -> Result<()> {
    Ok(fs::write(path, image_to_bytes(img))?)
}

pub fn read_image(path: &Path) -> Result<DensityImage> {
    image_from_bytes(&fs::read(path)?)
}

/// 16-bit binary PGM with values clamped to `[0, max]` and mapped linearly
/// onto `0..=65535`; `max = None` uses the image maximum.
pub fn image_pgm16(img: &DensityImage, max: Option<f64>) -> Vec<u8> {
    let top = max.unwrap_or_else(|| img.max()).max(f64::MIN_POSITIVE);
    let mut out = format!("P5\n{} {}\n65535\n", img.n, img.n).into_bytes();
    for &v in &img.values {
        let q = ((v / top).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: &Path, img: &DensityImage, max: Option<f64>) -> Result<()> {
    Ok(fs::write(path, image_pgm16(img, max))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum() -> Spectrum {
        let mut s = Spectrum::zeros_levels(2, 3, EnergyGrid::default_mono(4), 2);
        s.counts.iter_mut().enumerate().for_each(|(k, v)| *v = k as f64 * 0.1);
        s.ballistic
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = 1.0 / (k + 1) as f64);
        s.metadata.insert("seed".into(), "42".into());
        s.metadata
            .insert("scaling".into(), "intensity=1 \"quoted\"\nnext".into());
        s
    }

    #[test]
    fn spectrum_roundtrip_is_byte_identical() {
        let s = spectrum();
        let bytes = spectrum_to_bytes(&s).unwrap();
        let back = spectrum_from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(spectrum_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupted_files_rejected() {
        let bytes = spectrum_to_bytes(&spectrum()).unwrap();
        assert!(matches!(
            spectrum_from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(spectrum_from_bytes(&wrong).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(spectrum_from_bytes(&extra).is_err());
    }

    #[test]
    fn operator_roundtrip() {
        let fp = Fingerprints {
            geometry: "abc".into(),
            grid: "def".into(),
            image: "4x4@2cm".into(),
            sampling: "subsampling=2".into(),
        };
        let op = SparseOperator::from_triplets(3, 16, &[(0, 3, 1.5), (2, 15, 0.25), (2, 0, 2.0)], fp).unwrap();
        let bytes = operator_to_bytes(&op).unwrap();
        let back = operator_from_bytes(&bytes).unwrap();
        assert_eq!(back, op);
        assert_eq!(operator_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn image_roundtrip_and_pgm() {
        let img = DensityImage::from_values(2, 3.0, vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        let bytes = image_to_bytes(&img);
        assert_eq!(image_from_bytes(&bytes).unwrap(), img);
        let pgm = image_pgm16(&img, Some(1.0));
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px: Vec<u16> = pgm[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535, 65535]);
    }

    #[test]
    fn csv_has_one_line_per_entry() {
        let s = spectrum();
        let csv = spectrum_csv(&s);
        assert_eq!(csv.lines().count(), 1 + s.counts.len() + s.ballistic.len());
    }
}
