//! Single-pass summarizer for event XML documents.
//!
//! Grammar:
//!
//! ```text
//! <heprep>
//!   <event>
//!     <drawable type="track">
//!       <point x="0.1" y="2" z="-3"/>
//!     </drawable>
//!   </event>
//! </heprep>
//! ```
//!
//! Any other element or attribute is an error. Memory use is bounded by the
//! length of the longest tag and the number of distinct drawable types,
//! never by document size.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    fn point(p: [f64; 3]) -> Self {
        BoundingBox { min: p, max: p }
    }

    fn extend(&mut self, p: [f64; 3]) {
        for (i, v) in p.into_iter().enumerate() {
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
        }
    }

    /// Component-wise comparison with absolute tolerance.
    pub fn approx_eq(&self, other: &BoundingBox, tol: f64) -> bool {
        (0..3).all(|i| {
            (self.min[i] - other.min[i]).abs() <= tol && (self.max[i] - other.max[i]).abs() <= tol
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrawableSummary {
    pub events: u64,
    pub drawables_by_type: BTreeMap<String, u64>,
    pub total_points: u64,
    pub bounding_box: Option<BoundingBox>,
}

impl DrawableSummary {
    pub fn total_drawables(&self) -> u64 {
        self.drawables_by_type.values().sum()
    }

    pub(crate) fn add_point(&mut self, p: [f64; 3]) {
        self.total_points += 1;
        match &mut self.bounding_box {
            Some(b) => b.extend(p),
            None => self.bounding_box = Some(BoundingBox::point(p)),
        }
    }

    pub(crate) fn add_drawable(&mut self, ty: &str) {
        match self.drawables_by_type.get_mut(ty) {
            Some(n) => *n += 1,
            None => {
                self.drawables_by_type.insert(ty.to_owned(), 1);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("line {line}: {detail}")]
    XmlSyntax { line: u64, detail: String },
    #[error("line {line}: unknown element <{name}>")]
    UnknownElement { line: u64, name: String },
    #[error("line {line}: unknown attribute {attr:?} on <{element}>")]
    UnknownAttribute {
        line: u64,
        element: String,
        attr: String,
    },
    #[error("line {line}: <{element}> is missing attribute {attr:?}")]
    MissingAttribute {
        line: u64,
        element: String,
        attr: String,
    },
}

/// Counts newlines as bytes are consumed so errors can carry a line number.
struct LineCounter<R> {
    inner: R,
    newlines: u64,
}

impl<R: BufRead> Read for LineCounter<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.newlines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for LineCounter<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let n = amt.min(buf.len());
            self.newlines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        }
        self.inner.consume(amt);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    Document,
    Heprep,
    Event,
    Drawable,
    Point,
    Done,
}

/// Summary plus the work it took, for cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub summary: DrawableSummary,
    pub bytes_read: u64,
}

pub fn parse_event_stream<R: BufRead>(input: R) -> Result<DrawableSummary, XmlError> {
    parse_event_stream_metered(input).map(|o| o.summary)
}

pub fn parse_event_stream_metered<R: BufRead>(input: R) -> Result<ParseOutcome, XmlError> {
    let mut reader = Reader::from_reader(LineCounter {
        inner: input,
        newlines: 0,
    });
    reader.config_mut().trim_text(true);
    let mut buf = Vec::with_capacity(256);
    let mut level = Level::Document;
    let mut summary = DrawableSummary::default();

    loop {
        let line = reader.get_ref().newlines + 1;
        let syntax = |detail: String| XmlError::XmlSyntax { line, detail };
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| syntax(e.to_string()))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                let name = element_name(e, line)?;
                let next = match (level, name.as_str()) {
                    (Level::Document, "heprep") => {
                        no_attributes(e, "heprep", line)?;
                        Level::Heprep
                    }
                    (Level::Heprep, "event") => {
                        no_attributes(e, "event", line)?;
                        summary.events += 1;
                        Level::Event
                    }
                    (Level::Event, "drawable") => {
                        let ty = drawable_type(e, line)?;
                        summary.add_drawable(&ty);
                        Level::Drawable
                    }
                    (Level::Drawable, "point") => {
                        summary.add_point(point_coords(e, line)?);
                        Level::Point
                    }
                    (Level::Done, _) => {
                        return Err(syntax("content after the root element".into()));
                    }
                    (Level::Point, _) => {
                        return Err(syntax("<point> must be empty".into()));
                    }
                    (_, "heprep" | "event" | "drawable" | "point") => {
                        return Err(syntax(format!("<{name}> not allowed here")));
                    }
                    _ => return Err(XmlError::UnknownElement { line, name }),
                };
                level = if empty { parent(next) } else { next };
            }
            Event::End(_) => {
                // quick-xml has already matched the end name against the open tag
                level = parent(level);
            }
            Event::Text(t) => {
                if t.iter().any(|b| !b.is_ascii_whitespace()) {
                    return Err(syntax("unexpected text content".into()));
                }
            }
            Event::Decl(_) | Event::Comment(_) => {}
            Event::CData(_) | Event::PI(_) | Event::DocType(_) => {
                return Err(syntax(
                    "CDATA, processing instructions and DTDs are not supported".into(),
                ));
            }
            Event::Eof => {
                if level != Level::Done {
                    return Err(syntax("unexpected end of document".into()));
                }
                break;
            }
        }
        buf.clear();
    }
    Ok(ParseOutcome {
        summary,
        bytes_read: reader.buffer_position(),
    })
}

fn parent(level: Level) -> Level {
    match level {
        Level::Heprep => Level::Done,
        Level::Event => Level::Heprep,
        Level::Drawable => Level::Event,
        Level::Point => Level::Drawable,
        Level::Document | Level::Done => level,
    }
}

fn element_name(e: &BytesStart<'_>, line: u64) -> Result<String, XmlError> {
    std::str::from_utf8(e.name().as_ref())
        .map(str::to_owned)
        .map_err(|_| XmlError::XmlSyntax {
            line,
            detail: "element name is not UTF-8".into(),
        })
}

fn attrs<'a>(
    e: &'a BytesStart<'a>,
    element: &'static str,
    line: u64,
) -> impl Iterator<Item = Result<(String, String), XmlError>> + 'a {
    e.attributes().map(move |a| {
        let a = a.map_err(|err| XmlError::XmlSyntax {
            line,
            detail: format!("<{element}>: {err}"),
        })?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a
            .unescape_value()
            .map_err(|err| XmlError::XmlSyntax {
                line,
                detail: format!("<{element}> {key}: {err}"),
            })?
            .into_owned();
        Ok((key, value))
    })
}

fn no_attributes(e: &BytesStart<'_>, element: &'static str, line: u64) -> Result<(), XmlError> {
    if let Some(a) = attrs(e, element, line).next() {
        let (attr, _) = a?;
        return Err(XmlError::UnknownAttribute {
            line,
            element: element.into(),
            attr,
        });
    }
    Ok(())
}

fn drawable_type(e: &BytesStart<'_>, line: u64) -> Result<String, XmlError> {
    let mut ty = None;
    for a in attrs(e, "drawable", line) {
        let (key, value) = a?;
        if key != "type" {
            return Err(XmlError::UnknownAttribute {
                line,
                element: "drawable".into(),
                attr: key,
            });
        }
        ty = Some(value);
    }
    ty.ok_or_else(|| XmlError::MissingAttribute {
        line,
        element: "drawable".into(),
        attr: "type".into(),
    })
}

fn point_coords(e: &BytesStart<'_>, line: u64) -> Result<[f64; 3], XmlError> {
    let mut coords: [Option<f64>; 3] = [None; 3];
    for a in attrs(e, "point", line) {
        let (key, value) = a?;
        let slot = match key.as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => {
                return Err(XmlError::UnknownAttribute {
                    line,
                    element: "point".into(),
                    attr: key,
                })
            }
        };
        let v: f64 = value.trim().parse().map_err(|_| XmlError::XmlSyntax {
            line,
            detail: format!("<point> {key}={value:?} is not a number"),
        })?;
        if !v.is_finite() {
            return Err(XmlError::XmlSyntax {
                line,
                detail: format!("<point> {key}={value:?} is not finite"),
            });
        }
        coords[slot] = Some(v);
    }
    let mut out = [0.0; 3];
    for (i, name) in ["x", "y", "z"].iter().enumerate() {
        out[i] = coords[i].ok_or_else(|| XmlError::MissingAttribute {
            line,
            element: "point".into(),
            attr: (*name).into(),
        })?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<DrawableSummary, XmlError> {
        parse_event_stream(s.as_bytes())
    }

    #[test]
    fn empty_root() {
        let s = parse("<heprep></heprep>").unwrap();
        assert_eq!(s.events, 0);
        assert_eq!(s.total_drawables(), 0);
        assert_eq!(s.bounding_box, None);
        assert_eq!(parse("<?xml version=\"1.0\"?>\n<heprep/>").unwrap(), s);
    }

    #[test]
    fn hand_counted_document() {
        let doc = r#"<heprep>
  <event>
    <drawable type="track">
      <point x="0" y="0" z="0"/>
      <point x="1" y="-2" z="3"/>
      <point x="0.5" y="1" z="-1"></point>
    </drawable>
    <drawable type="hit">
      <point x="4" y="0" z="0"/>
      <point x="-1" y="0" z="0"/>
    </drawable>
  </event>
</heprep>"#;
        let s = parse(doc).unwrap();
        assert_eq!(s.events, 1);
        assert_eq!(s.drawables_by_type.get("track"), Some(&1));
        assert_eq!(s.drawables_by_type.get("hit"), Some(&1));
        assert_eq!(s.total_points, 5);
        let bb = s.bounding_box.unwrap();
        assert_eq!(bb.min, [-1.0, -2.0, -1.0]);
        assert_eq!(bb.max, [4.0, 1.0, 3.0]);
    }

    #[test]
    fn unknown_element() {
        let err = parse("<heprep>\n<event><box/></event></heprep>").unwrap_err();
        assert_eq!(
            err,
            XmlError::UnknownElement {
                line: 2,
                name: "box".into()
            }
        );
    }

    #[test]
    fn missing_attributes() {
        assert!(matches!(
            parse("<heprep><event><drawable/></event></heprep>"),
            Err(XmlError::MissingAttribute { attr, .. }) if attr == "type"
        ));
        assert!(matches!(
            parse(r#"<heprep><event><drawable type="t"><point x="1" y="2"/></drawable></event></heprep>"#),
            Err(XmlError::MissingAttribute { attr, .. }) if attr == "z"
        ));
    }

    #[test]
    fn unknown_attribute() {
        assert!(matches!(
            parse(r#"<heprep version="2"/>"#),
            Err(XmlError::UnknownAttribute { attr, .. }) if attr == "version"
        ));
    }

    #[test]
    fn syntax_errors() {
        for doc in [
            "",
            "<heprep>",
            "<heprep></event>",
            "<heprep/><heprep/>",
            "<heprep>text</heprep>",
            "<event/>",
            "<heprep><event><drawable type=\"t\"><point x=\"a\" y=\"0\" z=\"0\"/></drawable></event></heprep>",
            "<heprep><event><drawable type=\"t\"><point x=\"0\" y=\"0\" z=\"0\"><point x=\"0\" y=\"0\" z=\"0\"/></point></drawable></event></heprep>",
        ] {
            assert!(
                matches!(parse(doc), Err(XmlError::XmlSyntax { .. })),
                "{doc:?} -> {:?}",
                parse(doc)
            );
        }
    }

    #[test]
    fn entity_in_type_is_unescaped() {
        let s = parse(r#"<heprep><event><drawable type="a&amp;b"/></event></heprep>"#).unwrap();
        assert_eq!(s.drawables_by_type.get("a&b"), Some(&1));
    }
}
