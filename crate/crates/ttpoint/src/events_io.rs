//! Event stream files.
//!
//! Text: a header line `evt-text v1 <width> <height>` followed by one
//! `t_us,x,y,p` record per line, `p` being 0 or 1.
//!
//! Binary (little-endian): `EVT1`, `u16` width, `u16` height, `u64` count, then
//! `count` records of `u64 t_us, u16 x, u16 y, u8 p, u8 pad`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ttpoint_core::events::{Event, EventStream};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVT1";
pub const TEXT_HEADER: &str = "evt-text v1";
const RECORD_BYTES: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl EventFormat {
    /// `.txt` and `.csv` are text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("csv") => EventFormat::Text,
            _ => EventFormat::Binary,
        }
    }
}

fn finish(events: Vec<Event>, width: u16, height: u16) -> Result<EventStream> {
    if events.is_empty() {
        return Err(ttpoint_core::Error::EmptyStream.into());
    }
    let mut stream = EventStream::new(events, width, height, None)?;
    if stream.sort_stable() {
        log::warn!("events were not in time order; sorted");
    }
    Ok(stream)
}

pub fn read_text<R: BufRead>(reader: R) -> Result<EventStream> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty event file"))?
        .map_err(|e| Error::format(format!("unreadable header: {e}")))?;
    let rest = header
        .trim_end()
        .strip_prefix(TEXT_HEADER)
        .ok_or_else(|| Error::format(format!("bad header {header:?}")))?;
    let dims: Vec<&str> = rest.split_whitespace().collect();
    let (width, height) = match dims[..] {
        [w, h] => (
            w.parse::<u16>().map_err(|_| Error::format(format!("bad width {w:?}")))?,
            h.parse::<u16>().map_err(|_| Error::format(format!("bad height {h:?}")))?,
        ),
        _ => return Err(Error::format(format!("bad header {header:?}"))),
    };
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::format(format!("line {}: {e}", i + 2)))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(format!("line {}: bad record {line:?}", i + 2));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [t, x, y, p] = fields[..] else {
            return Err(bad());
        };
        let polarity = match p {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        events.push(Event {
            t_us: t.parse().map_err(|_| bad())?,
            x: x.parse().map_err(|_| bad())?,
            y: y.parse().map_err(|_| bad())?,
            polarity,
        });
    }
    finish(events, width, height)
}

pub fn write_text<W: Write>(stream: &EventStream, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TEXT_HEADER} {} {}", stream.sensor_width, stream.sensor_height)?;
    for e in &stream.events {
        writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, u8::from(e.polarity))?;
    }
    w.flush()
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<EventStream> {
    let mut head = [0u8; 16];
    reader.read_exact(&mut head).map_err(|_| Error::format("truncated binary event header"))?;
    if &head[..4] != BINARY_MAGIC {
        return Err(Error::format("missing EVT1 magic"));
    }
    let width = u16::from_le_bytes([head[4], head[5]]);
    let height = u16::from_le_bytes([head[6], head[7]]);
    let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
    if count == 0 {
        return Err(ttpoint_core::Error::EmptyStream.into());
    }
    let count = usize::try_from(count).map_err(|_| Error::format("event count overflows"))?;
    let mut events = Vec::with_capacity(count.min(1 << 24));
    let mut rec = [0u8; RECORD_BYTES];
    for i in 0..count {
        reader
            .read_exact(&mut rec)
            .map_err(|_| Error::format(format!("truncated after {i} of {count} records")))?;
        let p = rec[12];
        if p > 1 {
            return Err(Error::format(format!("record {i}: polarity byte {p}")));
        }
        events.push(Event {
            t_us: u64::from_le_bytes(rec[..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([rec[8], rec[9]]),
            y: u16::from_le_bytes([rec[10], rec[11]]),
            polarity: p == 1,
        });
    }
    finish(events, width, height)
}

pub fn write_binary<W: Write>(stream: &EventStream, mut w: W) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&stream.sensor_width.to_le_bytes())?;
    w.write_all(&stream.sensor_height.to_le_bytes())?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())?;
    for e in &stream.events {
        let mut rec = [0u8; RECORD_BYTES];
        rec[..8].copy_from_slice(&e.t_us.to_le_bytes());
        rec[8..10].copy_from_slice(&e.x.to_le_bytes());
        rec[10..12].copy_from_slice(&e.y.to_le_bytes());
        rec[12] = u8::from(e.polarity);
        w.write_all(&rec)?;
    }
    w.flush()
}

pub fn load_events(path: &Path, format: EventFormat) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let r = match format {
        EventFormat::Text => read_text(reader),
        EventFormat::Binary => read_binary(reader),
    };
    r.map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_events(path: &Path, stream: &EventStream, format: EventFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    match format {
        EventFormat::Text => write_text(stream, w),
        EventFormat::Binary => write_binary(stream, w),
    }
    .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_is_sorted_on_load() {
        let text = "evt-text v1 8 8\n100,3,4,1\n50,1,2,0\n";
        let s = read_text(text.as_bytes()).unwrap();
        assert_eq!(s.events.iter().map(|e| e.t_us).collect::<Vec<_>>(), [50, 100]);
        assert_eq!((s.sensor_width, s.sensor_height), (8, 8));
    }

    #[test]
    fn empty_binary_is_rejected() {
        let mut bytes = BINARY_MAGIC.to_vec();
        bytes.extend_from_slice(&[8, 0, 8, 0]);
        bytes.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_binary(&bytes[..]), Err(Error::Core(ttpoint_core::Error::EmptyStream))));
    }

    #[test]
    fn out_of_bounds_record_is_rejected() {
        let text = "evt-text v1 4 4\n1,4,0,1\n";
        assert!(matches!(read_text(text.as_bytes()), Err(Error::Core(ttpoint_core::Error::OutOfBounds { .. }))));
    }

    #[test]
    fn malformed_header() {
        assert!(read_text("evt v1 4 4\n".as_bytes()).is_err());
        assert!(read_text("evt-text v1 4\n".as_bytes()).is_err());
    }

    #[test]
    fn binary_layout_is_exact() {
        let s = EventStream::new(vec![Event { t_us: 0x0102, x: 3, y: 4, polarity: true }], 5, 6, None).unwrap();
        let mut out = Vec::new();
        write_binary(&s, &mut out).unwrap();
        assert_eq!(
            out,
            [b'E', b'V', b'T', b'1', 5, 0, 6, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2, 1, 0, 0, 0, 0, 0, 0, 3, 0, 4, 0, 1, 0]
        );
    }
}
