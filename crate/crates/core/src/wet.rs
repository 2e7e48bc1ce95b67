//! Streaming WET (WARC conversion) record parsing and serialization.
//!
//! A WET shard is a concatenation of `WARC/1.0` records: a version line,
//! `Name: value` headers, a blank line, `Content-Length` payload bytes and a
//! blank-line terminator. [`WetReader`] walks that grammar one record at a
//! time so memory stays bounded by the largest single record regardless of
//! shard size. Whole-file gzip is detected by magic bytes and decompressed
//! transparently.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::bufread::MultiGzDecoder;
use thiserror::Error;

/// Version line every record must start with.
pub const WARC_VERSION: &str = "WARC/1.0";

#[derive(Debug, Error)]
pub enum WetError {
    #[error("record {record}: expected `WARC/1.0` version line, got `{got}`")]
    NotWarc { record: usize, got: String },
    #[error("record {record}: malformed header: {reason}")]
    MalformedHeader { record: usize, reason: String },
    #[error("record {record}: bad Content-Length: {reason}")]
    BadContentLength { record: usize, reason: String },
    #[error("record invariant violated: {0}")]
    InvariantViolation(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// One parsed WARC record: ordered headers plus the raw payload bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    headers: Vec<(String, String)>,
    payload: Vec<u8>,
}

impl RawRecord {
    /// Build a record, enforcing the invariants the parser guarantees:
    /// header names are unique after ASCII case-folding and header-safe,
    /// values carry no line breaks, and `Content-Length` (added when
    /// missing) equals the payload length.
    pub fn new(
        mut headers: Vec<(String, String)>,
        payload: Vec<u8>,
    ) -> Result<Self, WetError> {
        for (name, value) in &headers {
            if name.is_empty()
                || name.contains(':')
                || name.chars().any(|c| c.is_whitespace() || c.is_control())
            {
                return Err(WetError::InvariantViolation(format!(
                    "header name `{name}` is not header-safe"
                )));
            }
            if value.contains('\r') || value.contains('\n') {
                return Err(WetError::InvariantViolation(format!(
                    "header `{name}` value contains a line break"
                )));
            }
            let trimmed = value.trim();
            if trimmed != value {
                return Err(WetError::InvariantViolation(format!(
                    "header `{name}` value has leading/trailing whitespace"
                )));
            }
        }
        for (i, (name, _)) in headers.iter().enumerate() {
            if headers[..i]
                .iter()
                .any(|(other, _)| other.eq_ignore_ascii_case(name))
            {
                return Err(WetError::InvariantViolation(format!(
                    "duplicate header `{name}` after case-folding"
                )));
            }
        }
        match headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case("Content-Length"))
        {
            Some((_, v)) => {
                let stated: usize = v.parse().map_err(|_| {
                    WetError::InvariantViolation(format!("Content-Length `{v}` is not an integer"))
                })?;
                if stated != payload.len() {
                    return Err(WetError::InvariantViolation(format!(
                        "Content-Length {stated} does not match payload length {}",
                        payload.len()
                    )));
                }
            }
            None => headers.push(("Content-Length".to_string(), payload.len().to_string())),
        }
        Ok(RawRecord { headers, payload })
    }

    /// Convenience constructor for a `conversion` record carrying `text`.
    pub fn conversion(record_id: &str, url: &str, text: &str) -> Self {
        RawRecord::new(
            vec![
                ("WARC-Type".to_string(), "conversion".to_string()),
                ("WARC-Target-URI".to_string(), url.to_string()),
                ("WARC-Record-ID".to_string(), record_id.to_string()),
            ],
            text.as_bytes().to_vec(),
        )
        .expect("conversion record fields are header-safe")
    }

    pub fn headers(&self) -> &[(String, String)] {
        &self.headers
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Header lookup, case-insensitive on the name.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// One web page extracted from a `conversion` record.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub record_id: String,
    pub url: String,
    pub text: String,
    /// Length of the source payload in bytes.
    pub byte_len: usize,
    /// Number of invalid UTF-8 sequences replaced with U+FFFD while decoding.
    pub replacements: usize,
}

/// Outcome of [`record_to_document`]: non-conversion records are skipped,
/// which is bookkeeping, not an error.
#[derive(Debug, Clone, PartialEq)]
pub enum Converted {
    Doc(Document),
    Skip,
}

/// Decode a conversion record into a [`Document`]; anything else is `Skip`.
/// Invalid UTF-8 is replaced (and counted), never dropped silently.
pub fn record_to_document(record: &RawRecord) -> Converted {
    if record.header("WARC-Type") != Some("conversion") {
        return Converted::Skip;
    }
    let (text, replacements) = decode_utf8_lossy_counted(record.payload());
    Converted::Doc(Document {
        record_id: record.header("WARC-Record-ID").unwrap_or("").to_string(),
        url: record.header("WARC-Target-URI").unwrap_or("").to_string(),
        text,
        byte_len: record.payload().len(),
        replacements,
    })
}

/// Lossy UTF-8 decode that also reports how many invalid sequences were
/// replaced with U+FFFD.
pub fn decode_utf8_lossy_counted(bytes: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(bytes.len());
    let mut replacements = 0;
    let mut rest = bytes;
    loop {
        match std::str::from_utf8(rest) {
            Ok(s) => {
                out.push_str(s);
                return (out, replacements);
            }
            Err(e) => {
                let valid = e.valid_up_to();
                // SAFETY bound: from_utf8 just told us this prefix is valid.
                out.push_str(std::str::from_utf8(&rest[..valid]).unwrap());
                out.push('\u{FFFD}');
                replacements += 1;
                let skip = e.error_len().unwrap_or(rest.len() - valid);
                rest = &rest[valid + skip..];
            }
        }
    }
}

/// Streaming record iterator over a WET byte stream.
///
/// Yields records in file order; a malformed region yields an error and the
/// iterator fuses (nothing is skipped silently). Holds one payload at a time.
pub struct WetReader<R> {
    input: R,
    fused: bool,
    record_index: usize,
    line: Vec<u8>,
}

impl<R: BufRead> WetReader<R> {
    pub fn new(input: R) -> Self {
        WetReader {
            input,
            fused: false,
            record_index: 0,
            line: Vec::with_capacity(256),
        }
    }

    /// Index of the record the reader is currently positioned at.
    pub fn record_index(&self) -> usize {
        self.record_index
    }

    /// Next line with the trailing `\n` / `\r\n` stripped; `None` at EOF.
    fn read_line(&mut self) -> io::Result<Option<&[u8]>> {
        self.line.clear();
        let n = self.input.read_until(b'\n', &mut self.line)?;
        if n == 0 {
            return Ok(None);
        }
        if self.line.last() == Some(&b'\n') {
            self.line.pop();
            if self.line.last() == Some(&b'\r') {
                self.line.pop();
            }
        }
        Ok(Some(&self.line))
    }

    fn next_record(&mut self) -> Result<Option<RawRecord>, WetError> {
        // Skip blank separator lines between records.
        let version = loop {
            match self.read_line()? {
                None => return Ok(None),
                Some(line) if line.is_empty() => continue,
                Some(line) => break line.to_vec(),
            }
        };
        let record = self.record_index;
        if version != WARC_VERSION.as_bytes() {
            return Err(WetError::NotWarc {
                record,
                got: String::from_utf8_lossy(&version).into_owned(),
            });
        }

        let mut headers: Vec<(String, String)> = Vec::with_capacity(8);
        loop {
            let line = match self.read_line()? {
                None => {
                    return Err(WetError::MalformedHeader {
                        record,
                        reason: "EOF inside header block".to_string(),
                    })
                }
                Some(line) => line,
            };
            if line.is_empty() {
                break;
            }
            let line = std::str::from_utf8(line).map_err(|_| WetError::MalformedHeader {
                record,
                reason: "header line is not valid UTF-8".to_string(),
            })?;
            let (name, value) = line.split_once(':').ok_or_else(|| {
                WetError::MalformedHeader {
                    record,
                    reason: format!("missing `:` in `{line}`"),
                }
            })?;
            let name = name.trim();
            if name.is_empty() {
                return Err(WetError::MalformedHeader {
                    record,
                    reason: format!("empty header name in `{line}`"),
                });
            }
            if headers.iter().any(|(n, _)| n.eq_ignore_ascii_case(name)) {
                return Err(WetError::MalformedHeader {
                    record,
                    reason: format!("duplicate header `{name}`"),
                });
            }
            headers.push((name.to_string(), value.trim().to_string()));
        }

        let length_value = headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case("Content-Length"))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| WetError::BadContentLength {
                record,
                reason: "header missing".to_string(),
            })?;
        let length: usize =
            length_value
                .parse()
                .map_err(|_| WetError::BadContentLength {
                    record,
                    reason: format!("`{length_value}` is not a non-negative integer"),
                })?;

        let mut payload = vec![0u8; length];
        self.input
            .read_exact(&mut payload)
            .map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => WetError::BadContentLength {
                    record,
                    reason: format!("payload truncated before {length} bytes"),
                },
                _ => WetError::Io(e),
            })?;

        // The grammar requires two blank lines after the payload; tolerate
        // EOF at a record boundary.
        for _ in 0..2 {
            match self.read_line()? {
                None => break,
                Some(line) if line.is_empty() => continue,
                Some(_) => {
                    return Err(WetError::BadContentLength {
                        record,
                        reason: "payload not followed by blank-line terminator".to_string(),
                    })
                }
            }
        }

        self.record_index += 1;
        Ok(Some(RawRecord { headers, payload }))
    }
}

impl<R: BufRead> Iterator for WetReader<R> {
    type Item = Result<RawRecord, WetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        match self.next_record() {
            Ok(Some(record)) => Some(Ok(record)),
            Ok(None) => {
                self.fused = true;
                None
            }
            Err(e) => {
                self.fused = true;
                Some(Err(e))
            }
        }
    }
}

impl<R> fmt::Debug for WetReader<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WetReader")
            .field("record_index", &self.record_index)
            .field("fused", &self.fused)
            .finish()
    }
}

/// Wrap a buffered stream, transparently decompressing when it starts with
/// the gzip magic bytes `1F 8B`.
pub fn sniff_gzip<'a, R: BufRead + Send + 'a>(
    mut input: R,
) -> io::Result<Box<dyn BufRead + Send + 'a>> {
    let head = input.fill_buf()?;
    if head.len() >= 2 && head[0] == 0x1F && head[1] == 0x8B {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(input))))
    } else {
        Ok(Box::new(input))
    }
}

/// Open a WET shard file, gzip or plain, as a record iterator.
pub fn open_wet(path: &Path) -> io::Result<WetReader<Box<dyn BufRead + Send>>> {
    let file = BufReader::new(File::open(path)?);
    Ok(WetReader::new(sniff_gzip(file)?))
}

/// Parse an in-memory stream, gzip or plain.
pub fn parse_wet_stream<'a, R: BufRead + Send + 'a>(
    input: R,
) -> io::Result<WetReader<Box<dyn BufRead + Send + 'a>>> {
    Ok(WetReader::new(sniff_gzip(input)?))
}

/// Serialize records in the exact wire format [`WetReader`] parses.
/// Round-trip identity: `parse(serialize(records)) == records`.
pub fn serialize_wet<W: Write>(records: &[RawRecord], out: &mut W) -> Result<(), WetError> {
    for record in records {
        // Re-validate: a hand-built struct could have drifted.
        let checked = RawRecord::new(record.headers.clone(), record.payload.clone())?;
        out.write_all(WARC_VERSION.as_bytes())?;
        out.write_all(b"\r\n")?;
        for (name, value) in &checked.headers {
            write!(out, "{name}: {value}\r\n")?;
        }
        out.write_all(b"\r\n")?;
        out.write_all(&checked.payload)?;
        out.write_all(b"\r\n\r\n")?;
    }
    Ok(())
}

/// Serialize records to a gzip stream (whole-file compression, as WET
/// shards ship).
pub fn serialize_wet_gz<W: Write>(records: &[RawRecord], out: W) -> Result<(), WetError> {
    let mut encoder = flate2::write::GzEncoder::new(out, flate2::Compression::fast());
    serialize_wet(records, &mut encoder)?;
    encoder.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_all(bytes: &[u8]) -> Vec<RawRecord> {
        WetReader::new(bytes)
            .collect::<Result<Vec<_>, _>>()
            .expect("stream parses")
    }

    #[test]
    fn minimal_record() {
        let data = b"WARC/1.0\r\n\
            WARC-Type: conversion\r\n\
            WARC-Target-URI: http://example.com/\r\n\
            WARC-Record-ID: <urn:uuid:1>\r\n\
            Content-Length: 11\r\n\
            \r\n\
            Hello world\r\n\
            \r\n";
        let records = parse_all(data);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].payload(), b"Hello world");
        assert_eq!(records[0].payload().len(), 11);
        assert_eq!(records[0].header("warc-type"), Some("conversion"));
    }

    #[test]
    fn empty_input() {
        assert!(parse_all(b"").is_empty());
    }

    #[test]
    fn tolerates_lf_only() {
        let data = b"WARC/1.0\nWARC-Type: conversion\nContent-Length: 3\n\nabc\n\n";
        let records = parse_all(data);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].payload(), b"abc");
    }

    #[test]
    fn not_warc() {
        let mut reader = WetReader::new(&b"HTTP/1.1 200 OK\r\n"[..]);
        match reader.next() {
            Some(Err(WetError::NotWarc { got, .. })) => assert_eq!(got, "HTTP/1.1 200 OK"),
            other => panic!("expected NotWarc, got {other:?}"),
        }
        assert!(reader.next().is_none(), "reader fuses after an error");
    }

    #[test]
    fn malformed_header() {
        let data = b"WARC/1.0\r\nthis line has no colon\r\n\r\n";
        let mut reader = WetReader::new(&data[..]);
        assert!(matches!(
            reader.next(),
            Some(Err(WetError::MalformedHeader { .. }))
        ));
    }

    #[test]
    fn bad_content_length() {
        let data = b"WARC/1.0\r\nContent-Length: eleven\r\n\r\n";
        let mut reader = WetReader::new(&data[..]);
        assert!(matches!(
            reader.next(),
            Some(Err(WetError::BadContentLength { .. }))
        ));

        let truncated = b"WARC/1.0\r\nContent-Length: 100\r\n\r\nshort";
        let mut reader = WetReader::new(&truncated[..]);
        assert!(matches!(
            reader.next(),
            Some(Err(WetError::BadContentLength { .. }))
        ));
    }

    #[test]
    fn round_trip_three_records() {
        let records = vec![
            RawRecord::conversion("<urn:uuid:1>", "http://a.example/", "first page"),
            RawRecord::conversion("<urn:uuid:2>", "http://b.example/", "second\npage"),
            RawRecord::new(
                vec![("WARC-Type".into(), "warcinfo".into())],
                b"software: test".to_vec(),
            )
            .unwrap(),
        ];
        let mut buf = Vec::new();
        serialize_wet(&records, &mut buf).unwrap();
        assert_eq!(parse_all(&buf), records);
    }

    #[test]
    fn gzip_transparency() {
        let records = vec![RawRecord::conversion("<urn:uuid:1>", "", "payload text")];
        let mut plain = Vec::new();
        serialize_wet(&records, &mut plain).unwrap();
        let mut gz = Vec::new();
        serialize_wet_gz(&records, &mut gz).unwrap();
        assert_eq!(&gz[..2], &[0x1F, 0x8B]);

        let from_plain: Vec<_> = parse_wet_stream(&plain[..])
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        let from_gz: Vec<_> = parse_wet_stream(&gz[..])
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(from_plain, from_gz);
        assert_eq!(from_plain, records);
    }

    #[test]
    fn serialize_rejects_mismatched_length() {
        let record = RawRecord {
            headers: vec![("Content-Length".into(), "5".into())],
            payload: b"abc".to_vec(),
        };
        let mut buf = Vec::new();
        assert!(matches!(
            serialize_wet(&[record], &mut buf),
            Err(WetError::InvariantViolation(_))
        ));
    }

    #[test]
    fn skip_non_conversion() {
        let record = RawRecord::new(
            vec![("WARC-Type".into(), "warcinfo".into())],
            b"x".to_vec(),
        )
        .unwrap();
        assert_eq!(record_to_document(&record), Converted::Skip);
    }

    #[test]
    fn conversion_record_decodes() {
        let record = RawRecord::conversion("<urn:uuid:9>", "http://e/", "Hello world");
        match record_to_document(&record) {
            Converted::Doc(doc) => {
                assert_eq!(doc.text, "Hello world");
                assert_eq!(doc.byte_len, 11);
                assert_eq!(doc.record_id, "<urn:uuid:9>");
                assert_eq!(doc.url, "http://e/");
                assert_eq!(doc.replacements, 0);
            }
            Converted::Skip => panic!("conversion record skipped"),
        }
    }

    #[test]
    fn invalid_utf8_replaced_at_position() {
        let mut payload = b"ab".to_vec();
        payload.push(0xFF);
        payload.extend_from_slice(b"cd");
        let record = RawRecord::new(
            vec![
                ("WARC-Type".into(), "conversion".into()),
                ("WARC-Record-ID".into(), "<urn:uuid:3>".into()),
            ],
            payload,
        )
        .unwrap();
        match record_to_document(&record) {
            Converted::Doc(doc) => {
                // Independent oracle: std's own replacement decoding.
                assert_eq!(doc.text, String::from_utf8_lossy(record.payload()));
                assert_eq!(doc.text, "ab\u{FFFD}cd");
                assert_eq!(doc.replacements, 1);
                assert_eq!(doc.byte_len, 5);
            }
            Converted::Skip => panic!("conversion record skipped"),
        }
    }

    #[test]
    fn duplicate_header_rejected() {
        let err = RawRecord::new(
            vec![
                ("WARC-Type".into(), "conversion".into()),
                ("warc-type".into(), "conversion".into()),
            ],
            Vec::new(),
        );
        assert!(matches!(err, Err(WetError::InvariantViolation(_))));
    }
}
