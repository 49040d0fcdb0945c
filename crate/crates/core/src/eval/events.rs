use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub clip_id: String,
    pub label: String,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn new(clip_id: impl Into<String>, label: impl Into<String>, onset: f64, offset: f64) -> Result<Self> {
        if !(onset >= 0.0 && offset > onset && offset.is_finite()) {
            return Err(Error::invalid(
                "event",
                format!("need 0 <= onset < offset, got [{onset}, {offset}]"),
            ));
        }
        Ok(Event {
            clip_id: clip_id.into(),
            label: label.into(),
            onset,
            offset,
        })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn overlap(&self, other: &Event) -> f64 {
        (self.offset.min(other.offset) - self.onset.max(other.onset)).max(0.0)
    }
}

pub const TSV_HEADER: &str = "filename\tonset\toffset\tevent_label";

pub fn format_events_tsv(events: &[Event]) -> String {
    let mut s = String::from(TSV_HEADER);
    s.push('\n');
    for e in events {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", e.clip_id, e.onset, e.offset, e.label);
    }
    s
}

pub fn write_events_tsv(events: &[Event], path: &Path) -> Result<()> {
    fs::write(path, format_events_tsv(events))?;
    Ok(())
}

pub fn parse_events_tsv(text: &str) -> Result<Vec<Event>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split_whitespace().eq(TSV_HEADER.split('\t')) => {}
        Some((_, h)) => return Err(Error::Format(format!("event list header {h:?}, expected {TSV_HEADER:?}"))),
        None => return Ok(Vec::new()),
    }
    lines
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            let bad = |d: &str| Error::Format(format!("event list line {}: {d}", i + 1));
            if cols.len() != 4 {
                return Err(bad("expected 4 tab-separated columns"));
            }
            let onset: f64 = cols[1].trim().parse().map_err(|_| bad("onset is not a number"))?;
            let offset: f64 = cols[2].trim().parse().map_err(|_| bad("offset is not a number"))?;
            Event::new(cols[0].trim(), cols[3].trim(), onset, offset).map_err(|e| bad(&e.to_string()))
        })
        .collect()
}

pub fn read_events_tsv(path: &Path) -> Result<Vec<Event>> {
    parse_events_tsv(&fs::read_to_string(path)?)
}
