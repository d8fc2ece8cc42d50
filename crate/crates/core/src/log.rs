//! Append-only JSON Lines event log.
//!
//! Each line is one [`Event`] serialized as a JSON object whose last field
//! is `"crc32"`: the CRC-32 (hex) of the same object without that field.
//!
//! ```text
//! {"seq":7,"timestamp":1200,"type":"ChainCompleted","payload":{"chain_id":3},"crc32":"5b1c0e2a"}
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event::Event;
use crate::experiment::ExperimentState;

const FOOTER_PREFIX: &str = ",\"crc32\":\"";
/// `,"crc32":"` + 8 hex digits + `"}`
const FOOTER_LEN: usize = FOOTER_PREFIX.len() + 8 + 2;

pub fn encode_line(event: &Event) -> Result<String> {
    let body = serde_json::to_string(event)?;
    let crc = crc32fast::hash(body.as_bytes());
    let mut line = String::with_capacity(body.len() + FOOTER_LEN);
    line.push_str(&body[..body.len() - 1]);
    line.push_str(FOOTER_PREFIX);
    line.push_str(&format!("{crc:08x}\"}}"));
    Ok(line)
}

/// Decode and verify one line. `seq` is the sequence number the line is
/// expected to carry and is used to name the line in errors.
pub fn decode_line(line: &str, seq: u64) -> Result<Event> {
    let corrupt = |reason: &str| CoreError::CorruptLog {
        seq,
        reason: reason.to_string(),
    };
    let line = line.trim_end_matches(['\n', '\r']);
    if line.len() < FOOTER_LEN + 2 || !line.is_char_boundary(line.len() - FOOTER_LEN) {
        return Err(corrupt("truncated record"));
    }
    let (head, footer) = line.split_at(line.len() - FOOTER_LEN);
    let hex_crc = footer
        .strip_prefix(FOOTER_PREFIX)
        .and_then(|f| f.strip_suffix("\"}"))
        .ok_or_else(|| corrupt("missing crc32 footer"))?;
    let expected = u32::from_str_radix(hex_crc, 16).map_err(|_| corrupt("malformed crc32"))?;
    let body = format!("{head}}}");
    if crc32fast::hash(body.as_bytes()) != expected {
        return Err(corrupt("checksum mismatch"));
    }
    let event: Event =
        serde_json::from_str(&body).map_err(|e| corrupt(&format!("undecodable record: {e}")))?;
    if event.seq != seq {
        return Err(corrupt(&format!("gap: record carries seq {}", event.seq)));
    }
    Ok(event)
}

/// Parse a whole log, requiring seq to run 1, 2, 3, ... without gaps.
pub fn parse_log(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .enumerate()
        .map(|(i, (_, line))| decode_line(line, i as u64 + 1))
        .collect()
}

pub fn encode_log(events: &[Event]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&encode_line(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    parse_log(&std::fs::read_to_string(path)?)
}

/// Read a log that may end in a torn write: a final line without its
/// newline terminator is dropped. Returns the events and the byte length of
/// the intact prefix.
pub fn read_log_recovering(path: &Path) -> Result<(Vec<Event>, u64)> {
    let text = std::fs::read_to_string(path)?;
    let intact = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    Ok((parse_log(intact)?, intact.len() as u64))
}

pub fn write_log(path: &Path, events: &[Event]) -> Result<()> {
    std::fs::write(path, encode_log(events)?)?;
    Ok(())
}

/// Single-writer appender.
pub struct LogWriter {
    out: BufWriter<File>,
    next_seq: u64,
}

impl LogWriter {
    /// Open for appending; `next_seq` is the seq the next event must carry.
    /// The file is truncated to `valid_len` first to drop a torn tail.
    pub fn open(path: &Path, valid_len: u64, next_seq: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)?;
        file.set_len(valid_len)?;
        let mut out = BufWriter::new(file);
        use std::io::Seek;
        out.seek(std::io::SeekFrom::End(0))?;
        Ok(LogWriter { out, next_seq })
    }

    pub fn append(&mut self, events: &[Event]) -> Result<()> {
        for e in events {
            if e.seq != self.next_seq {
                return Err(CoreError::CorruptLog {
                    seq: e.seq,
                    reason: format!("appending out of order, expected {}", self.next_seq),
                });
            }
            self.out.write_all(encode_line(e)?.as_bytes())?;
            self.out.write_all(b"\n")?;
            self.next_seq += 1;
        }
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

/// Serialized state at a known log position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state: ExperimentState,
}

pub fn snapshot_path(log_path: &Path) -> PathBuf {
    let mut p = log_path.as_os_str().to_owned();
    p.push(".snapshot");
    PathBuf::from(p)
}

pub fn write_snapshot(path: &Path, state: &ExperimentState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let snap = Snapshot {
        seq: state.last_seq,
        state: state.clone(),
    };
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut f, &snap)?;
        f.flush()?;
        f.get_ref().sync_data()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Option<Snapshot>> {
    match File::open(path) {
        Ok(f) => Ok(Some(serde_json::from_reader(BufReader::new(f))?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Count lines without decoding, e.g. for progress reporting.
pub fn count_records(path: &Path) -> Result<usize> {
    let f = File::open(path)?;
    Ok(BufReader::new(f).lines().count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::EventKind;
    use crate::types::{ParticipantId, Timestamp};
    use proptest::prelude::*;

    fn session(seq: u64, who: &str) -> Event {
        Event {
            seq,
            timestamp: Timestamp(seq as i64 * 10),
            kind: EventKind::SessionStarted {
                participant_id: ParticipantId::new(who),
                prescreened: true,
            },
        }
    }

    #[test]
    fn line_layout() {
        let line = encode_line(&session(1, "p")).unwrap();
        assert!(line.starts_with(r#"{"seq":1,"timestamp":10,"type":"SessionStarted","payload":{"#));
        assert!(line.contains(r#","crc32":""#));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["crc32"].as_str().unwrap().len(), 8);
    }

    #[test]
    fn flipped_byte_detected() {
        let line = encode_line(&session(1, "alice")).unwrap();
        let bad = line.replace("alice", "alicf");
        assert!(matches!(
            decode_line(&bad, 1),
            Err(CoreError::CorruptLog { seq: 1, .. })
        ));
    }

    #[test]
    fn gap_names_first_bad_seq() {
        let text = encode_log(&[session(1, "a"), session(2, "b"), session(4, "c")]).unwrap();
        match parse_log(&text) {
            Err(CoreError::CorruptLog { seq, .. }) => assert_eq!(seq, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn torn_tail_dropped_on_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut text = encode_log(&[session(1, "a"), session(2, "b")]).unwrap();
        let third = encode_line(&session(3, "c")).unwrap();
        text.push_str(&third[..third.len() / 2]);
        std::fs::write(&path, &text).unwrap();
        assert!(read_log(&path).is_err());
        let (events, len) = read_log_recovering(&path).unwrap();
        assert_eq!(events.len(), 2);
        let mut w = LogWriter::open(&path, len, 3).unwrap();
        w.append(&[session(3, "c")]).unwrap();
        assert_eq!(read_log(&path).unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(who in "\\PC{0,24}", seq in 1u64..1_000_000, ts in any::<i64>()) {
            let e = Event { timestamp: Timestamp(ts), ..session(seq, &who) };
            let line = encode_line(&e).unwrap();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(decode_line(&line, seq).unwrap(), e);
        }
    }
}
