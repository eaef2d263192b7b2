//! Seeded generators for workload inputs.

use std::io::{self, Read};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::hier::{write_hier_file, Branch};
use super::xml::DrawableSummary;

pub const DRAWABLE_TYPES: [&str; 4] = ["track", "hit", "cluster", "vertex"];

/// `branches` branches named `b0..`, each with `values` normally distributed
/// values around 0.5 (so a `[0, 1)` histogram sees some under/overflow).
pub fn gen_branches(branches: usize, values: usize, seed: u64) -> Vec<Branch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.5, 0.25).expect("valid normal");
    (0..branches)
        .map(|i| {
            Branch::new(
                format!("b{i}"),
                (0..values).map(|_| dist.sample(&mut rng)).collect(),
            )
        })
        .collect()
}

pub fn gen_hier_bytes(branches: usize, values: usize, seed: u64) -> Vec<u8> {
    write_hier_file(&gen_branches(branches, values, seed)).expect("generated names are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XmlGenParams {
    pub events: u64,
    /// Drawables per event.
    pub drawables: u64,
    /// Points per drawable.
    pub points: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Open,
    Event,
    Drawable,
    Point,
    CloseDrawable,
    CloseEvent,
    Close,
    Finished,
}

/// Produces an event document lazily through [`Read`]; the document is never
/// held in memory. [`XmlGenerator::bookkeeping`] reports what was emitted.
pub struct XmlGenerator {
    params: XmlGenParams,
    rng: ChaCha8Rng,
    stage: Stage,
    event: u64,
    drawable: u64,
    point: u64,
    pending: Vec<u8>,
    cursor: usize,
    book: DrawableSummary,
}

impl XmlGenerator {
    pub fn new(params: XmlGenParams) -> Self {
        XmlGenerator {
            params,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            stage: Stage::Open,
            event: 0,
            drawable: 0,
            point: 0,
            pending: Vec::with_capacity(128),
            cursor: 0,
            book: DrawableSummary::default(),
        }
    }

    /// Summary of everything emitted so far. Complete once the reader is
    /// exhausted.
    pub fn bookkeeping(&self) -> &DrawableSummary {
        &self.book
    }

    fn coord(&mut self) -> f64 {
        // three decimals keep documents compact; Display round-trips exactly
        (self.rng.random_range(-100_000i64..=100_000) as f64) / 1000.0
    }

    fn refill(&mut self) {
        use std::io::Write;
        self.pending.clear();
        self.cursor = 0;
        let p = self.params;
        let out = &mut self.pending;
        match self.stage {
            Stage::Open => {
                out.extend_from_slice(b"<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<heprep>\n");
                self.stage = if p.events > 0 {
                    Stage::Event
                } else {
                    Stage::Close
                };
            }
            Stage::Event => {
                out.extend_from_slice(b"  <event>\n");
                self.book.events += 1;
                self.drawable = 0;
                self.stage = if p.drawables > 0 {
                    Stage::Drawable
                } else {
                    Stage::CloseEvent
                };
            }
            Stage::Drawable => {
                let ty = DRAWABLE_TYPES[self.rng.random_range(0..DRAWABLE_TYPES.len())];
                writeln!(out, "    <drawable type=\"{ty}\">").unwrap();
                self.book.add_drawable(ty);
                self.point = 0;
                self.stage = if p.points > 0 {
                    Stage::Point
                } else {
                    Stage::CloseDrawable
                };
            }
            Stage::Point => {
                let c = [self.coord(), self.coord(), self.coord()];
                let out = &mut self.pending;
                writeln!(
                    out,
                    "      <point x=\"{}\" y=\"{}\" z=\"{}\"/>",
                    c[0], c[1], c[2]
                )
                .unwrap();
                self.book.add_point(c);
                self.point += 1;
                if self.point == p.points {
                    self.stage = Stage::CloseDrawable;
                }
            }
            Stage::CloseDrawable => {
                out.extend_from_slice(b"    </drawable>\n");
                self.drawable += 1;
                self.stage = if self.drawable < p.drawables {
                    Stage::Drawable
                } else {
                    Stage::CloseEvent
                };
            }
            Stage::CloseEvent => {
                out.extend_from_slice(b"  </event>\n");
                self.event += 1;
                self.stage = if self.event < p.events {
                    Stage::Event
                } else {
                    Stage::Close
                };
            }
            Stage::Close => {
                out.extend_from_slice(b"</heprep>\n");
                self.stage = Stage::Finished;
            }
            Stage::Finished => {}
        }
    }
}

impl Read for XmlGenerator {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        while self.cursor == self.pending.len() {
            if matches!(self.stage, Stage::Finished) {
                return Ok(0);
            }
            self.refill();
        }
        let n = buf.len().min(self.pending.len() - self.cursor);
        buf[..n].copy_from_slice(&self.pending[self.cursor..self.cursor + n]);
        self.cursor += n;
        Ok(n)
    }
}

/// Whole document in memory together with the generator's bookkeeping.
pub fn gen_xml(params: XmlGenParams) -> (Vec<u8>, DrawableSummary) {
    let mut g = XmlGenerator::new(params);
    let mut doc = Vec::new();
    g.read_to_end(&mut doc)
        .expect("in-memory generation cannot fail");
    (doc, g.book)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::hier::read_hier_file;
    use crate::workloads::xml::parse_event_stream;

    #[test]
    fn hier_generation_is_seeded() {
        assert_eq!(gen_hier_bytes(2, 10, 7), gen_hier_bytes(2, 10, 7));
        assert_ne!(gen_hier_bytes(2, 10, 7), gen_hier_bytes(2, 10, 8));
        let f = read_hier_file(&gen_hier_bytes(3, 5, 1)).unwrap();
        assert_eq!(f.branches.len(), 3);
        assert_eq!(f.branches[2].name, "b2");
    }

    #[test]
    fn xml_bookkeeping_matches_parse() {
        let params = XmlGenParams {
            events: 3,
            drawables: 4,
            points: 2,
            seed: 9,
        };
        let (doc, book) = gen_xml(params);
        assert_eq!(book.events, 3);
        assert_eq!(book.total_drawables(), 12);
        assert_eq!(book.total_points, 24);
        assert_eq!(parse_event_stream(&doc[..]).unwrap(), book);
    }

    #[test]
    fn degenerate_documents_parse() {
        for (e, d, p) in [(0, 5, 5), (2, 0, 3), (1, 2, 0)] {
            let (doc, book) = gen_xml(XmlGenParams {
                events: e,
                drawables: d,
                points: p,
                seed: 1,
            });
            assert_eq!(parse_event_stream(&doc[..]).unwrap(), book);
        }
    }
}
