//! Event stream and ground-truth trace I/O.
//!
//! Binary event files are a 24-byte header followed by fixed 16-byte
//! little-endian records:
//!
//! ```text
//! header: magic "HLXEVT01" | width u16 | height u16 | count u64 | reserved [u8; 4]
//! record: t u64 (µs)       | x u16     | y u16      | p i8      | pad [u8; 3]
//! ```
//!
//! A line-oriented text form `t,x,y,p` is accepted as well (fixtures). It may
//! carry a `# width=W height=H` comment line; without it the sensor size is
//! taken from the largest coordinates seen.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"HLXEVT01";
pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("timestamp regression at record {0}")]
    TimestampRegression(usize),
    #[error("truncated record (payload {payload} bytes, expected {expected})")]
    TruncatedRecord { payload: usize, expected: usize },
    #[error("invalid polarity {value} at record {index}")]
    InvalidPolarity { index: usize, value: i64 },
    #[error("pixel ({x},{y}) outside {width}x{height} sensor at record {index}")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid stride: must be >= 1")]
    InvalidStride,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EventIoError>;

/// Event polarity. Encoded as +1 / -1 on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_i64(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Microseconds since stream start.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorSize {
    pub width: u16,
    pub height: u16,
}

impl SensorSize {
    pub fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub sensor: SensorSize,
    pub events: Vec<Event>,
}

impl EventStream {
    /// Duration covered by the stream in seconds (first to last timestamp).
    pub fn duration_s(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (b.t - a.t) as f64 * 1e-6,
            _ => 0.0,
        }
    }
}

/// One line of a ground-truth RPM trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSample {
    pub t: u64,
    pub rpm_shaft: f64,
}

fn validate(events: &[Event], sensor: Option<SensorSize>) -> Result<()> {
    let mut last = 0u64;
    for (i, e) in events.iter().enumerate() {
        if i > 0 && e.t < last {
            return Err(EventIoError::TimestampRegression(i));
        }
        last = e.t;
        if let Some(s) = sensor {
            if !s.contains(e.x, e.y) {
                return Err(EventIoError::OutOfBounds {
                    index: i,
                    x: e.x,
                    y: e.y,
                    width: s.width,
                    height: s.height,
                });
            }
        }
    }
    Ok(())
}

/// Encodes a stream into its binary representation.
pub fn encode_events(sensor: SensorSize, events: &[Event]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + events.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&sensor.width.to_le_bytes());
    buf.extend_from_slice(&sensor.height.to_le_bytes());
    buf.extend_from_slice(&(events.len() as u64).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    for e in events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
        buf.extend_from_slice(&[0u8; 3]);
    }
    buf
}

/// Decodes a binary stream. The buffer must start with the magic.
pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(EventIoError::MalformedHeader(format!(
            "{} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(EventIoError::MalformedHeader("bad magic".into()));
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]);
    let height = u16::from_le_bytes([bytes[10], bytes[11]]);
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let count = usize::try_from(count)
        .map_err(|_| EventIoError::MalformedHeader(format!("count {count} too large")))?;
    let payload = bytes.len() - HEADER_LEN;
    let expected = count
        .checked_mul(RECORD_LEN)
        .ok_or_else(|| EventIoError::MalformedHeader(format!("count {count} too large")))?;
    if payload != expected {
        return Err(EventIoError::TruncatedRecord { payload, expected });
    }
    let sensor = SensorSize::new(width, height);
    let mut events = Vec::with_capacity(count);
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let raw = rec[12] as i8;
        let p = Polarity::from_i64(raw as i64).ok_or(EventIoError::InvalidPolarity {
            index: i,
            value: raw as i64,
        })?;
        events.push(Event { t, x, y, p });
    }
    validate(&events, Some(sensor))?;
    Ok(EventStream { sensor, events })
}

fn parse_size_comment(line: &str) -> Option<SensorSize> {
    let mut w = None;
    let mut h = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("width=") {
            w = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("height=") {
            h = v.parse().ok();
        }
    }
    Some(SensorSize::new(w?, h?))
}

/// Parses the `t,x,y,p` text form.
pub fn parse_events_text<R: BufRead>(reader: R) -> Result<EventStream> {
    let mut sensor = None;
    let mut events = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if sensor.is_none() {
                sensor = parse_size_comment(line);
            }
            continue;
        }
        let err = |msg: &str| EventIoError::Parse {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err("expected 4 comma-separated fields"));
        }
        let t = fields[0].parse().map_err(|_| err("bad timestamp"))?;
        let x = fields[1].parse().map_err(|_| err("bad x"))?;
        let y = fields[2].parse().map_err(|_| err("bad y"))?;
        let raw: i64 = fields[3]
            .trim_start_matches('+')
            .parse()
            .map_err(|_| err("bad polarity"))?;
        let p = Polarity::from_i64(raw).ok_or(EventIoError::InvalidPolarity {
            index: events.len(),
            value: raw,
        })?;
        events.push(Event { t, x, y, p });
    }
    let sensor = sensor.unwrap_or_else(|| {
        let w = events
            .iter()
            .map(|e| e.x)
            .max()
            .map_or(0, |m| m.saturating_add(1));
        let h = events
            .iter()
            .map(|e| e.y)
            .max()
            .map_or(0, |m| m.saturating_add(1));
        SensorSize::new(w, h)
    });
    validate(&events, Some(sensor))?;
    Ok(EventStream { sensor, events })
}

/// Reads an event file, binary or text (detected by the magic).
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    if bytes.starts_with(MAGIC) {
        decode_events(&bytes)
    } else if bytes.starts_with(&MAGIC[..3]) {
        Err(EventIoError::MalformedHeader("bad magic".into()))
    } else {
        parse_events_text(io::Cursor::new(bytes))
    }
}

/// Writes a binary event file.
pub fn write_events(path: impl AsRef<Path>, sensor: SensorSize, events: &[Event]) -> Result<()> {
    validate(events, Some(sensor))?;
    let mut f = BufWriter::new(File::create(path.as_ref())?);
    f.write_all(&encode_events(sensor, events))?;
    f.flush()?;
    Ok(())
}

/// Writes the text fixture form, including the sensor-size comment.
pub fn write_events_text(
    path: impl AsRef<Path>,
    sensor: SensorSize,
    events: &[Event],
) -> Result<()> {
    validate(events, Some(sensor))?;
    let mut f = BufWriter::new(File::create(path.as_ref())?);
    writeln!(f, "# width={} height={}", sensor.width, sensor.height)?;
    for e in events {
        writeln!(f, "{},{},{},{}", e.t, e.x, e.y, e.p.as_i8())?;
    }
    f.flush()?;
    Ok(())
}

/// Keeps events at indices `0, k, 2k, ...`.
pub fn stride_filter(events: &[Event], k: usize) -> Result<Vec<Event>> {
    if k == 0 {
        return Err(EventIoError::InvalidStride);
    }
    Ok(events.iter().step_by(k).copied().collect())
}

pub fn parse_ground_truth<R: BufRead>(reader: R) -> Result<Vec<GroundTruthSample>> {
    let mut out: Vec<GroundTruthSample> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| EventIoError::Parse {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let (t, rpm) = line
            .split_once(',')
            .ok_or_else(|| err("expected t_us,rpm_shaft"))?;
        let t: u64 = t.trim().parse().map_err(|_| err("bad timestamp"))?;
        let rpm_shaft: f64 = rpm.trim().parse().map_err(|_| err("bad rpm"))?;
        if !(rpm_shaft >= 0.0) {
            return Err(err("rpm must be non-negative"));
        }
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(EventIoError::TimestampRegression(out.len()));
            }
        }
        out.push(GroundTruthSample { t, rpm_shaft });
    }
    Ok(out)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthSample>> {
    parse_ground_truth(BufReader::new(File::open(path.as_ref())?))
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &[GroundTruthSample]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path.as_ref())?);
    writeln!(f, "# t_us,rpm_shaft")?;
    for s in gt {
        writeln!(f, "{},{}", s.t, s.rpm_shaft)?;
    }
    f.flush()?;
    Ok(())
}
