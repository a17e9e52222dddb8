//! Reading and writing the XES subset used for event logs.
//!
//! Recognized event attributes: `concept:name`, `time:timestamp`,
//! `efp:instance`, `org:resource`, `efp:visibility`, `efp:kind` and
//! `lifecycle:transition`. Any other attribute becomes a payload field
//! (`int`/`float` as numeric, everything else as categorical). Traces may carry
//! `concept:name`, `efp:outcome`, `efp:fault` and `efp:error_time`.
//!
//! The writer emits one canonical layout, so `write(read(write(x)))` is
//! byte-identical to `write(x)`.

use std::io::{self, BufRead, Write};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use quick_xml::events::{BytesStart, Event as XmlEvent};
use quick_xml::Reader;
use thiserror::Error;

use super::{Event, EventCatalog, EventKind, EventTrace, FaultRecord, FaultType, Field, Outcome, Value, Visibility};

#[derive(Debug, Error)]
pub enum XesError {
    #[error("XES parse error: {0}")]
    Parse(String),
    #[error("XES schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<quick_xml::Error> for XesError {
    fn from(e: quick_xml::Error) -> Self {
        XesError::Parse(e.to_string())
    }
}

/// Traces read from a log, plus the number of empty traces dropped.
#[derive(Debug, Default)]
pub struct XesLog {
    pub traces: Vec<EventTrace>,
    pub dropped_empty: usize,
}

pub fn format_timestamp(ms: i64) -> String {
    Utc.timestamp_millis_opt(ms).single().unwrap_or_default().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn parse_timestamp(s: &str) -> Result<i64, XesError> {
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp_millis())
        .map_err(|e| XesError::Parse(format!("bad timestamp {s:?}: {e}")))
}

pub fn read_xes<R: BufRead>(source: R) -> Result<XesLog, XesError> {
    read_xes_with_catalog(source, None)
}

pub fn read_xes_file(path: &std::path::Path) -> Result<XesLog, XesError> {
    let file = std::fs::File::open(path)?;
    read_xes(io::BufReader::new(file))
}

#[derive(Default)]
struct RawEvent {
    name: Option<String>,
    timestamp: i64,
    instance: Option<String>,
    partner: String,
    visibility: Option<Visibility>,
    kind: Option<EventKind>,
    lifecycle: Option<String>,
    payload: Vec<Field>,
}

#[derive(Default)]
struct RawTrace {
    name: Option<String>,
    outcome: Option<Outcome>,
    fault: Option<FaultType>,
    error_time: Option<i64>,
    events: Vec<RawEvent>,
}

enum Scope {
    Outside,
    Log,
    Trace(RawTrace),
    Event(RawTrace, RawEvent),
}

/// Reads a log. When `catalog` is given, event kinds come from the catalog
/// and payloads are checked against its schemas.
pub fn read_xes_with_catalog<R: BufRead>(source: R, catalog: Option<&EventCatalog>) -> Result<XesLog, XesError> {
    let mut reader = Reader::from_reader(source);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut scope = Scope::Outside;
    let mut log = XesLog::default();
    let mut trace_index = 0usize;

    loop {
        let event = reader.read_event_into(&mut buf)?;
        match event {
            XmlEvent::Eof => break,
            XmlEvent::Start(ref e) | XmlEvent::Empty(ref e) => {
                let is_start = matches!(event, XmlEvent::Start(_));
                let tag = e.name().as_ref().to_vec();
                scope = match (scope, tag.as_slice()) {
                    (Scope::Outside, b"log") if is_start => Scope::Log,
                    (Scope::Log, b"trace") if is_start => Scope::Trace(RawTrace::default()),
                    (Scope::Log, b"trace") => Scope::Log,
                    (Scope::Trace(t), b"event") if is_start => Scope::Event(t, RawEvent::default()),
                    (Scope::Trace(t), b"event") => Scope::Trace(t),
                    (Scope::Trace(mut t), _) if is_attribute(&tag) => {
                        apply_trace_attribute(&mut t, &tag, e)?;
                        Scope::Trace(t)
                    }
                    (Scope::Event(t, mut ev), _) if is_attribute(&tag) => {
                        apply_event_attribute(&mut ev, &tag, e)?;
                        Scope::Event(t, ev)
                    }
                    (s, _) => s,
                };
                if is_start && !is_structural(&tag) {
                    // Nested attributes, globals, extensions and classifiers
                    // are outside the subset.
                    let end = e.to_end().into_owned();
                    reader.read_to_end_into(end.name(), &mut Vec::new())?;
                }
            }
            XmlEvent::End(ref e) => {
                scope = match (scope, e.name().as_ref()) {
                    (Scope::Event(mut t, ev), b"event") => {
                        t.events.push(ev);
                        Scope::Trace(t)
                    }
                    (Scope::Trace(t), b"trace") => {
                        let index = trace_index;
                        trace_index += 1;
                        match finish_trace(t, index, catalog)? {
                            Some(trace) => log.traces.push(trace),
                            None => log.dropped_empty += 1,
                        }
                        Scope::Log
                    }
                    (Scope::Log, b"log") => Scope::Outside,
                    (s, _) => s,
                };
            }
            _ => {}
        }
        buf.clear();
    }
    match scope {
        Scope::Outside => Ok(log),
        _ => Err(XesError::Parse("unexpected end of document".into())),
    }
}

fn is_structural(tag: &[u8]) -> bool {
    matches!(tag, b"log" | b"trace" | b"event")
}

fn is_attribute(tag: &[u8]) -> bool {
    matches!(tag, b"string" | b"date" | b"int" | b"float" | b"boolean" | b"id")
}

fn key_value(e: &BytesStart<'_>) -> Result<(String, String), XesError> {
    let mut key = None;
    let mut value = None;
    for attr in e.attributes() {
        let attr = attr.map_err(|err| XesError::Parse(err.to_string()))?;
        let text = attr.unescape_value()?.into_owned();
        match attr.key.as_ref() {
            b"key" => key = Some(text),
            b"value" => value = Some(text),
            _ => {}
        }
    }
    let key = key.ok_or_else(|| XesError::Parse("attribute element without key".into()))?;
    let value = value.ok_or_else(|| XesError::Parse(format!("attribute {key:?} without value")))?;
    Ok((key, value))
}

fn parse_with<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, XesError> {
    r.map_err(|e| XesError::Parse(e.to_string()))
}

fn apply_trace_attribute(t: &mut RawTrace, tag: &[u8], e: &BytesStart<'_>) -> Result<(), XesError> {
    let (key, value) = key_value(e)?;
    match key.as_str() {
        "concept:name" => t.name = Some(value),
        "efp:outcome" => t.outcome = Some(parse_with(value.parse())?),
        "efp:fault" => t.fault = Some(parse_with(value.parse())?),
        "efp:error_time" if tag == b"date" => t.error_time = Some(parse_timestamp(&value)?),
        _ => {}
    }
    Ok(())
}

fn apply_event_attribute(ev: &mut RawEvent, tag: &[u8], e: &BytesStart<'_>) -> Result<(), XesError> {
    let (key, value) = key_value(e)?;
    match key.as_str() {
        "concept:name" => ev.name = Some(value),
        "time:timestamp" => ev.timestamp = parse_timestamp(&value)?,
        "efp:instance" => ev.instance = Some(value),
        "org:resource" => ev.partner = value,
        "efp:visibility" => ev.visibility = Some(parse_with(value.parse())?),
        "efp:kind" => ev.kind = Some(parse_with(value.parse())?),
        "lifecycle:transition" => ev.lifecycle = Some(value),
        _ => {
            let value = match tag {
                b"int" | b"float" => Value::Numeric(parse_with(value.parse::<f64>())?),
                _ => Value::Categorical(value),
            };
            ev.payload.push(Field { key, value });
        }
    }
    Ok(())
}

fn finish_trace(raw: RawTrace, index: usize, catalog: Option<&EventCatalog>) -> Result<Option<EventTrace>, XesError> {
    if raw.events.is_empty() {
        return Ok(None);
    }
    let instance_id = raw
        .name
        .clone()
        .or_else(|| raw.events.iter().find_map(|e| e.instance.clone()))
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("trace-{index}"));
    let mut events = Vec::with_capacity(raw.events.len());
    for ev in raw.events {
        let name =
            ev.name.ok_or_else(|| XesError::Parse(format!("event without concept:name in trace {instance_id:?}")))?;
        let kind = match catalog {
            Some(cat) => cat
                .get(&name)
                .map(|t| t.kind)
                .ok_or_else(|| XesError::Schema(format!("event type {name:?} not in catalog")))?,
            None => ev.kind.unwrap_or(EventKind::IntrinsicStep),
        };
        let instance = ev.instance.filter(|s| !s.is_empty()).unwrap_or_else(|| instance_id.clone());
        events.push(Event {
            name,
            kind,
            timestamp: ev.timestamp,
            instance,
            partner: ev.partner,
            visibility: ev.visibility.unwrap_or(Visibility::Private),
            lifecycle: ev.lifecycle,
            payload: ev.payload,
        });
    }
    let mut trace = EventTrace::new(instance_id, events);
    trace.outcome = raw.outcome;
    trace.fault = match (raw.fault, raw.error_time) {
        (Some(fault_type), Some(error_time)) => Some(FaultRecord { fault_type, error_time }),
        (None, None) => None,
        _ => return Err(XesError::Parse("efp:fault and efp:error_time must appear together".into())),
    };
    if let Some(cat) = catalog {
        cat.check_trace(&trace).map_err(XesError::Schema)?;
    }
    Ok(Some(trace))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn attr<W: Write>(w: &mut W, indent: &str, tag: &str, key: &str, value: &str) -> io::Result<()> {
    writeln!(w, "{indent}<{tag} key=\"{}\" value=\"{}\"/>", escape(key), escape(value))
}

pub fn write_xes<W: Write>(traces: &[EventTrace], mut w: W) -> io::Result<()> {
    writeln!(w, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>")?;
    writeln!(w, "<log xes.version=\"1.0\" xmlns=\"http://www.xes-standard.org/\">")?;
    for trace in traces {
        writeln!(w, "  <trace>")?;
        attr(&mut w, "    ", "string", "concept:name", &trace.instance_id)?;
        if let Some(outcome) = trace.outcome {
            attr(&mut w, "    ", "string", "efp:outcome", outcome.as_str())?;
        }
        if let Some(fault) = &trace.fault {
            attr(&mut w, "    ", "string", "efp:fault", fault.fault_type.as_str())?;
            attr(&mut w, "    ", "date", "efp:error_time", &format_timestamp(fault.error_time))?;
        }
        for e in &trace.events {
            let ind = "      ";
            writeln!(w, "    <event>")?;
            attr(&mut w, ind, "string", "concept:name", &e.name)?;
            attr(&mut w, ind, "date", "time:timestamp", &format_timestamp(e.timestamp))?;
            attr(&mut w, ind, "string", "efp:instance", &e.instance)?;
            attr(&mut w, ind, "string", "org:resource", &e.partner)?;
            attr(&mut w, ind, "string", "efp:visibility", e.visibility.as_str())?;
            attr(&mut w, ind, "string", "efp:kind", e.kind.as_str())?;
            if let Some(l) = &e.lifecycle {
                attr(&mut w, ind, "string", "lifecycle:transition", l)?;
            }
            for f in &e.payload {
                match &f.value {
                    Value::Numeric(v) => attr(&mut w, ind, "float", &f.key, &v.to_string())?,
                    Value::Categorical(s) => attr(&mut w, ind, "string", &f.key, s)?,
                }
            }
            writeln!(w, "    </event>")?;
        }
        writeln!(w, "  </trace>")?;
    }
    writeln!(w, "</log>")
}

pub fn to_xes_bytes(traces: &[EventTrace]) -> Vec<u8> {
    let mut out = Vec::new();
    write_xes(traces, &mut out).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<log xes.version="1.0">
  <extension name="Concept" prefix="concept" uri="http://www.xes-standard.org/concept.xesext"/>
  <global scope="event"><string key="concept:name" value="UNKNOWN"/></global>
  <trace>
    <string key="concept:name" value="ID1"/>
    <event>
      <string key="concept:name" value="order_banana"/>
      <date key="time:timestamp" value="2018-05-04T10:15:00.000+02:00"/>
      <string key="org:resource" value="supermarket"/>
      <string key="efp:visibility" value="interaction"/>
      <int key="tons" value="5"/>
      <list key="items"><string key="x" value="y"/></list>
    </event>
    <event>
      <string key="concept:name" value="ship"/>
      <date key="time:timestamp" value="2018-05-04T10:16:00.000+02:00"/>
    </event>
  </trace>
  <trace><string key="concept:name" value="empty"/></trace>
</log>
"#;

    #[test]
    fn reads_listing_style_event() {
        let log = read_xes(LISTING.as_bytes()).unwrap();
        assert_eq!(log.dropped_empty, 1);
        assert_eq!(log.traces.len(), 1);
        let t = &log.traces[0];
        assert_eq!(t.instance_id, "ID1");
        let e = &t.events[0];
        assert_eq!(e.name, "order_banana");
        assert_eq!(e.partner, "supermarket");
        assert_eq!(e.visibility, Visibility::Interaction);
        assert_eq!(e.instance, "ID1");
        assert_eq!(e.payload, vec![Field::numeric("tons", 5.0)]);
        assert_eq!(e.timestamp, 1_525_421_700_000);
        assert_eq!(t.events[1].kind, EventKind::IntrinsicStep);
    }

    #[test]
    fn two_traces_of_three_events() {
        let mk = |id: &str| EventTrace::new(id, (0..3).map(|i| Event::step(format!("s{i}"), i, id)).collect());
        let bytes = to_xes_bytes(&[mk("a"), mk("b")]);
        let log = read_xes(bytes.as_slice()).unwrap();
        let lens: Vec<_> = log.traces.iter().map(EventTrace::len).collect();
        assert_eq!(lens, [3, 3]);
    }

    #[test]
    fn empty_list_writes_empty_log() {
        let bytes = to_xes_bytes(&[]);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(!text.contains("<trace>"));
        assert!(read_xes(bytes.as_slice()).unwrap().traces.is_empty());
    }

    #[test]
    fn single_event_trace_layout() {
        let t = EventTrace::new("i&1", vec![Event::step("A<b>", 0, "i&1")]);
        let text = String::from_utf8(to_xes_bytes(std::slice::from_ref(&t))).unwrap();
        assert_eq!(text.matches("<trace>").count(), 1);
        assert_eq!(text.matches("<event>").count(), 1);
        assert!(text.contains("value=\"A&lt;b&gt;\""));
        assert!(text.contains("value=\"1970-01-01T00:00:00.000Z\""));
        let back = read_xes(text.as_bytes()).unwrap();
        assert_eq!(back.traces, vec![t]);
    }

    #[test]
    fn missing_concept_name_is_parse_error() {
        let doc =
            r#"<log><trace><event><date key="time:timestamp" value="2020-01-01T00:00:00.000Z"/></event></trace></log>"#;
        assert!(matches!(read_xes(doc.as_bytes()), Err(XesError::Parse(_))));
    }

    #[test]
    fn malformed_xml_is_parse_error() {
        let doc = "<log><trace><event></trace></log>";
        assert!(matches!(read_xes(doc.as_bytes()), Err(XesError::Parse(_))));
        assert!(matches!(read_xes("<log><trace>".as_bytes()), Err(XesError::Parse(_))));
    }

    #[test]
    fn catalog_checks_payload_schema() {
        let cat = EventCatalog::parse("failure f\nstep A\ncontext temp c:numeric\n").unwrap();
        let good = EventTrace::new(
            "i",
            vec![Event::step("A", 0, "i"), Event::context("temp", 1, "i").with_payload(vec![Field::numeric("c", 3.5)])],
        );
        let bytes = to_xes_bytes(std::slice::from_ref(&good));
        let log = read_xes_with_catalog(bytes.as_slice(), Some(&cat)).unwrap();
        assert_eq!(log.traces, vec![good]);

        let bad = EventTrace::new(
            "i",
            vec![Event::context("temp", 1, "i").with_payload(vec![Field::categorical("c", "hot")])],
        );
        let bytes = to_xes_bytes(&[bad]);
        assert!(matches!(read_xes_with_catalog(bytes.as_slice(), Some(&cat)), Err(XesError::Schema(_))));
    }

    #[test]
    fn labels_and_fault_records_round_trip() {
        let mut t = EventTrace::new("x", vec![Event::step("A", 10, "x"), Event::failure("failure", 20, "x")])
            .with_outcome(Outcome::Fail);
        t.fault = Some(FaultRecord { fault_type: FaultType::DataIndicated, error_time: 10 });
        let bytes = to_xes_bytes(std::slice::from_ref(&t));
        let back = read_xes(bytes.as_slice()).unwrap().traces;
        assert_eq!(back, vec![t]);
        assert_eq!(to_xes_bytes(&back), bytes);
    }
}
