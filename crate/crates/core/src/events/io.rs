use std::io::{BufRead, Read, Write};

use super::{Event, EventError, Polarity, SensorGeometry};

pub const BINARY_MAGIC: &[u8; 4] = b"EVNT";
pub const BINARY_VERSION: u32 = 1;
const RECORD_BYTES: usize = 13;

/// Reads `t_us,x,y,p` rows. A header row and blank lines are skipped.
pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<Event>, EventError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let parse_err = |msg: String| EventError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", fields.len())));
        }
        let t = fields[0].parse::<u64>().map_err(|e| parse_err(format!("t_us: {e}")))?;
        let x = fields[1].parse::<u16>().map_err(|e| parse_err(format!("x: {e}")))?;
        let y = fields[2].parse::<u16>().map_err(|e| parse_err(format!("y: {e}")))?;
        let p = fields[3].parse::<i64>().map_err(|e| parse_err(format!("p: {e}")))?;
        let p = Polarity::from_sign(p).map_err(|e| parse_err(e.to_string()))?;
        events.push(Event::new(x, y, p, t));
    }
    Ok(events)
}

pub fn write_csv<W: Write>(mut writer: W, events: &[Event]) -> Result<(), EventError> {
    writeln!(writer, "t_us,x,y,p")?;
    for e in events {
        writeln!(writer, "{},{},{},{}", e.t, e.x, e.y, e.p.sign())?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the 16-byte header (`EVNT`, version, width, height as u32 LE)
/// followed by packed 13-byte records `(u64 t, u16 x, u16 y, i8 p)`.
pub fn write_binary<W: Write>(mut writer: W, geometry: SensorGeometry, events: &[Event]) -> Result<(), EventError> {
    writer.write_all(BINARY_MAGIC)?;
    writer.write_all(&BINARY_VERSION.to_le_bytes())?;
    writer.write_all(&(geometry.width as u32).to_le_bytes())?;
    writer.write_all(&(geometry.height as u32).to_le_bytes())?;
    let mut rec = [0u8; RECORD_BYTES];
    for e in events {
        rec[0..8].copy_from_slice(&e.t.to_le_bytes());
        rec[8..10].copy_from_slice(&e.x.to_le_bytes());
        rec[10..12].copy_from_slice(&e.y.to_le_bytes());
        rec[12] = e.p.sign() as u8;
        writer.write_all(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<(SensorGeometry, Vec<Event>), EventError> {
    let mut header = [0u8; 16];
    reader.read_exact(&mut header)?;
    if &header[0..4] != BINARY_MAGIC {
        return Err(EventError::BadHeader("missing EVNT magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != BINARY_VERSION {
        return Err(EventError::BadHeader(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(header[12..16].try_into().unwrap());
    if width > u16::MAX as u32 || height > u16::MAX as u32 {
        return Err(EventError::BadHeader(format!("geometry {width}x{height} too large")));
    }
    let geometry = SensorGeometry::new(width as u16, height as u16)?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    if body.len() % RECORD_BYTES != 0 {
        return Err(EventError::BadHeader(format!(
            "trailing {} bytes after last record",
            body.len() % RECORD_BYTES
        )));
    }
    let mut events = Vec::with_capacity(body.len() / RECORD_BYTES);
    for (i, rec) in body.chunks_exact(RECORD_BYTES).enumerate() {
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let p = Polarity::from_sign(rec[12] as i8 as i64).map_err(|e| EventError::Parse {
            line: i,
            msg: e.to_string(),
        })?;
        let e = Event::new(x, y, p, t);
        geometry.check(&e)?;
        events.push(e);
    }
    Ok((geometry, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Event> {
        vec![
            Event::new(1, 2, Polarity::Positive, 10),
            Event::new(239, 179, Polarity::Negative, u32::MAX as u64 + 5),
        ]
    }

    #[test]
    fn csv_round_trip_with_header() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample()).unwrap();
        assert!(buf.starts_with(b"t_us,x,y,p\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn csv_rejects_zero_polarity() {
        let err = read_csv(&b"5,1,1,0\n"[..]).unwrap_err();
        assert!(matches!(err, EventError::Parse { line: 1, .. }));
    }

    #[test]
    fn binary_layout_is_fixed() {
        let mut buf = Vec::new();
        write_binary(&mut buf, SensorGeometry::davis240(), &sample()).unwrap();
        assert_eq!(buf.len(), 16 + 2 * 13);
        assert_eq!(&buf[0..4], b"EVNT");
        assert_eq!(&buf[8..12], &240u32.to_le_bytes());
        assert_eq!(buf[16 + 12], 1);
        assert_eq!(buf[16 + 13 + 12], 0xff);
        let (g, ev) = read_binary(&buf[..]).unwrap();
        assert_eq!(g, SensorGeometry::davis240());
        assert_eq!(ev, sample());
    }

    #[test]
    fn binary_rejects_truncated_body() {
        let mut buf = Vec::new();
        write_binary(&mut buf, SensorGeometry::davis240(), &sample()).unwrap();
        buf.pop();
        assert!(read_binary(&buf[..]).is_err());
    }
}
