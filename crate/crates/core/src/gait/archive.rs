//! Dataset container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GRFD" | version u32 | frames u32 | channels u32 | model shape 3×u32
//! | class count u32 | class names (u16 len + utf8)
//! | has split u8 | split warning count u32 | warnings (u16 len + utf8)
//! | sample count u32 | per sample:
//!     label u32 | severity f32 (NaN if absent) | recording, group (u16 len + utf8)
//!     | window u32 | split u8 (0 train, 1 validation, 2 test, 255 none)
//!     | heel strike count u32 | heel strikes u32… | data f32…
//! | has stats u8 | per channel: mean f64, std f64, degenerate u8
//! | checksum u64 (first 8 bytes of SHA-256 over everything before it)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::{ChannelStats, Dataset, Provenance, Sample};
use crate::binio::{check_magic, check_trailer, checksum, Cursor};
use crate::error::{Error, Result};
use crate::train::{Split, SplitAssignment};

pub const DATASET_MAGIC: [u8; 4] = *b"GRFD";
pub const DATASET_VERSION: u32 = 1;
const NO_SPLIT: u8 = 255;

fn split_code(s: Split) -> u8 {
    match s {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

fn split_from(code: u8) -> Result<Split> {
    match code {
        0 => Ok(Split::Train),
        1 => Ok(Split::Validation),
        2 => Ok(Split::Test),
        other => Err(Error::invalid(format!("unknown split code {other}"))),
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit the dataset format")))?;
        self.0.write_u32::<LittleEndian>(v).expect("vec write");
        Ok(())
    }

    fn f32(&mut self, v: f32) {
        self.0.write_f32::<LittleEndian>(v).expect("vec write");
    }

    fn f64(&mut self, v: f64) {
        self.0.write_f64::<LittleEndian>(v).expect("vec write");
    }

    fn str(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::invalid("string too long for the dataset format"))?;
        self.0.write_u16::<LittleEndian>(len).expect("vec write");
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

pub fn write_dataset(ds: &Dataset, mut out: impl Write) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&DATASET_MAGIC);
    w.u32(DATASET_VERSION as usize)?;
    w.u32(ds.frames)?;
    w.u32(ds.channels)?;
    for &e in &ds.model_shape {
        w.u32(e)?;
    }
    w.u32(ds.class_names.len())?;
    for name in &ds.class_names {
        w.str(name)?;
    }
    w.u8(u8::from(ds.split.is_some()));
    let warnings = ds.split.as_ref().map(|a| a.warnings.as_slice()).unwrap_or_default();
    w.u32(warnings.len())?;
    for msg in warnings {
        w.str(msg)?;
    }
    w.u32(ds.samples.len())?;
    for (i, s) in ds.samples.iter().enumerate() {
        w.u32(s.label)?;
        w.f32(s.severity.unwrap_or(f32::NAN));
        w.str(&s.provenance.recording)?;
        w.str(&s.provenance.group)?;
        w.u32(s.provenance.window)?;
        w.u8(ds.split.as_ref().map_or(NO_SPLIT, |a| split_code(a.splits[i])));
        w.u32(s.heel_strikes.len())?;
        for &h in &s.heel_strikes {
            w.u32(h)?;
        }
        for &v in &s.data {
            w.f32(v);
        }
    }
    w.u8(u8::from(ds.stats.is_some()));
    if let Some(st) = &ds.stats {
        for c in 0..ds.channels {
            w.f64(st.mean[c]);
            w.f64(st.std[c]);
            w.u8(u8::from(st.degenerate[c]));
        }
    }
    let sum = checksum(&w.0);
    w.0.write_u64::<LittleEndian>(sum).expect("vec write");
    out.write_all(&w.0).map_err(|e| Error::io("<dataset output>", e))
}

pub fn read_dataset(mut input: impl Read) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<dataset input>", e))?;
    check_magic(&bytes, DATASET_MAGIC)?;
    let mut cur = Cursor::new(&bytes, 4);
    let version = cur.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let frames = cur.u32("frames")? as usize;
    let channels = cur.u32("channels")? as usize;
    let mut shape = [0usize; 3];
    for e in &mut shape {
        *e = cur.u32("model shape")? as usize;
    }
    let n_classes = cur.u32("class count")? as usize;
    let mut names = Vec::with_capacity(n_classes.min(4096));
    for _ in 0..n_classes {
        names.push(cur.str("class name")?.to_string());
    }
    let mut ds = Dataset::new(frames, channels, shape, names)?;
    let has_split = cur.u8("split flag")? != 0;
    let n_warnings = cur.u32("warning count")? as usize;
    let mut warnings = Vec::new();
    for _ in 0..n_warnings {
        warnings.push(cur.str("warning")?.to_string());
    }
    let n = cur.u32("sample count")? as usize;
    let mut splits = Vec::new();
    for _ in 0..n {
        let label = cur.u32("label")? as usize;
        let severity = Some(cur.f32("severity")?).filter(|v| !v.is_nan());
        let recording = cur.str("recording")?.to_string();
        let group = cur.str("group")?.to_string();
        let window = cur.u32("window")? as usize;
        let code = cur.u8("split")?;
        if has_split {
            splits.push(split_from(code)?);
        } else if code != NO_SPLIT {
            return Err(Error::invalid("split code present without a split"));
        }
        let n_hs = cur.u32("heel strikes")? as usize;
        let mut heel_strikes = Vec::with_capacity(n_hs.min(frames));
        for _ in 0..n_hs {
            heel_strikes.push(cur.u32("heel strikes")? as usize);
        }
        let mut data = Vec::with_capacity(frames * channels);
        for _ in 0..frames * channels {
            data.push(cur.f32("sample data")?);
        }
        ds.push(Sample {
            data,
            label,
            provenance: Provenance { recording, group, window },
            severity,
            heel_strikes,
        })?;
    }
    if has_split {
        ds.split = Some(SplitAssignment { splits, warnings });
    }
    if cur.u8("stats flag")? != 0 {
        let mut st = ChannelStats {
            mean: Vec::with_capacity(channels),
            std: Vec::with_capacity(channels),
            degenerate: Vec::with_capacity(channels),
        };
        for _ in 0..channels {
            st.mean.push(cur.f64("channel stats")?);
            st.std.push(cur.f64("channel stats")?);
            st.degenerate.push(cur.u8("channel stats")? != 0);
        }
        ds.stats = Some(st);
    }
    check_trailer(&mut cur)?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file))
}
