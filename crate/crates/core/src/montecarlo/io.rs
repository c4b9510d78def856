//! Time-tag files. The binary form is a stream of 10-byte little-endian
//! records: channel (u8), timestamp in ps (i64), tag (u8). The text form is
//! CSV with a `channel,timestamp_ps,tag` header.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EventStream, EventTag};
use crate::error::{Error, Result};

const RECORD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagFormat {
    Binary,
    Csv,
}

impl TagFormat {
    /// `.csv` selects text, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TagFormat::Csv,
            _ => TagFormat::Binary,
        }
    }
}

/// Interleaves several streams into one time-ordered record sequence.
fn merged(streams: &[&EventStream]) -> Vec<(i64, u8, EventTag)> {
    let mut all: Vec<(i64, u8, EventTag)> = streams
        .iter()
        .flat_map(|s| {
            s.timestamps_ps
                .iter()
                .zip(&s.tags)
                .map(move |(&t, &g)| (t, s.channel, g))
        })
        .collect();
    all.sort_by_key(|r| (r.0, r.1));
    all
}

pub fn write_binary<W: Write>(w: W, streams: &[&EventStream]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for (t, ch, tag) in merged(streams) {
        let mut rec = [0u8; RECORD];
        rec[0] = ch;
        rec[1..9].copy_from_slice(&t.to_le_bytes());
        rec[9] = tag as u8;
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(w: W, streams: &[&EventStream]) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "channel,timestamp_ps,tag")?;
    for (t, ch, tag) in merged(streams) {
        writeln!(w, "{ch},{t},{}", tag.name())?;
    }
    w.flush()?;
    Ok(())
}

/// Splits records into per-channel streams sorted by channel number.
/// Timestamps of each channel must be strictly increasing.
fn collect(records: impl Iterator<Item = Result<(u8, i64, EventTag)>>) -> Result<Vec<EventStream>> {
    let mut out: Vec<EventStream> = Vec::new();
    for rec in records {
        let (ch, t, tag) = rec?;
        let idx = match out.iter().position(|s| s.channel == ch) {
            Some(i) => i,
            None => {
                out.push(EventStream::new(ch));
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        if let Some(&prev) = s.timestamps_ps.last() {
            if t <= prev {
                return Err(Error::Parse(format!(
                    "channel {ch}: timestamp {t} ps does not follow {prev} ps"
                )));
            }
        }
        s.push(t, tag);
    }
    out.sort_by_key(|s| s.channel);
    Ok(out)
}

pub fn read_binary<R: Read>(r: R) -> Result<Vec<EventStream>> {
    let mut bytes = Vec::new();
    BufReader::new(r).read_to_end(&mut bytes)?;
    if bytes.len() % RECORD != 0 {
        return Err(Error::Parse(format!(
            "binary time-tag file has {} bytes, not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    collect(bytes.chunks_exact(RECORD).enumerate().map(|(i, rec)| {
        let t = i64::from_le_bytes(rec[1..9].try_into().expect("8 bytes"));
        let tag = EventTag::from_u8(rec[9])
            .ok_or_else(|| Error::Parse(format!("record {i}: unknown tag byte {}", rec[9])))?;
        Ok((rec[0], t, tag))
    }))
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<EventStream>> {
    let lines = BufReader::new(r).lines();
    let mut header_seen = false;
    let records = lines.enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e.into())),
        };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("channel") {
                return None;
            }
        }
        Some(parse_csv_line(i + 1, line))
    });
    collect(records)
}

fn parse_csv_line(lineno: usize, line: &str) -> Result<(u8, i64, EventTag)> {
    let bad = |what: &str| Error::Parse(format!("line {lineno}: {what} in `{line}`"));
    let mut f = line.split(',').map(str::trim);
    let (Some(ch), Some(t), Some(tag), None) = (f.next(), f.next(), f.next(), f.next()) else {
        return Err(bad("expected 3 fields"));
    };
    let ch = ch.parse::<u8>().map_err(|_| bad("bad channel"))?;
    let t = t.parse::<i64>().map_err(|_| bad("bad timestamp"))?;
    let tag = EventTag::from_name(tag)
        .or_else(|| tag.parse::<u8>().ok().and_then(EventTag::from_u8))
        .ok_or_else(|| bad("unknown tag"))?;
    Ok((ch, t, tag))
}

pub fn write_file(path: &Path, streams: &[&EventStream]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    match TagFormat::from_path(path) {
        TagFormat::Binary => write_binary(f, streams),
        TagFormat::Csv => write_csv(f, streams),
    }
}

pub fn read_file(path: &Path) -> Result<Vec<EventStream>> {
    let f = std::fs::File::open(path)?;
    match TagFormat::from_path(path) {
        TagFormat::Binary => read_binary(f),
        TagFormat::Csv => read_csv(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (EventStream, EventStream) {
        let a = EventStream {
            channel: 1,
            timestamps_ps: vec![5, 100, 1_000_000_000_000],
            tags: vec![EventTag::Photon, EventTag::Dark, EventTag::AfterPulse],
        };
        let b = EventStream {
            channel: 2,
            timestamps_ps: vec![-7, 100],
            tags: vec![EventTag::Photon, EventTag::Photon],
        };
        (a, b)
    }

    #[test]
    fn binary_round_trip() {
        let (a, b) = sample();
        let mut buf = Vec::new();
        write_binary(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(buf.len(), 5 * RECORD);
        assert_eq!(read_binary(&buf[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn csv_round_trip() {
        let (a, b) = sample();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[&a, &b]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("channel,timestamp_ps,tag\n2,-7,photon\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn malformed_input_rejected() {
        assert!(read_binary(&[0u8; 11][..]).is_err());
        let mut rec = [0u8; RECORD];
        rec[9] = 9;
        assert!(read_binary(&rec[..]).is_err());
        assert!(read_csv("channel,timestamp_ps,tag\n1,abc,photon\n".as_bytes()).is_err());
        assert!(read_csv("1,5,photon\n1,5,photon\n".as_bytes()).is_err());
        assert!(read_csv("1,5\n".as_bytes()).is_err());
        assert!(read_csv("1,5,laser\n".as_bytes()).is_err());
    }
}
