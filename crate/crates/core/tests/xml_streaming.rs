//! Parsing an event stream must not hold the document in memory.

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::{BufReader, Read};
use std::sync::atomic::{AtomicUsize, Ordering};

use agentfarm::workloads::gen::{XmlGenParams, XmlGenerator};
use agentfarm::workloads::parse_event_stream;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static A: Counting = Counting;

/// Counts bytes as they pass.
struct Tally<R> {
    inner: R,
    bytes: u64,
}

impl<R: Read> Read for Tally<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }
}

#[test]
fn peak_heap_is_independent_of_document_size() {
    let params = XmlGenParams {
        events: 4000,
        drawables: 10,
        points: 5,
        seed: 9,
    };
    let mut source = Tally {
        inner: XmlGenerator::new(params),
        bytes: 0,
    };
    let baseline = LIVE.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let summary = parse_event_stream(BufReader::with_capacity(64 * 1024, &mut source)).unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - baseline;

    assert_eq!(summary.events, 4000);
    assert_eq!(summary.total_points, 4000 * 10 * 5);
    assert!(summary.bounding_box.is_some());
    // the document is well over 10 MB; the parser may use a small fraction
    assert!(
        source.bytes > 10_000_000,
        "document only {} bytes",
        source.bytes
    );
    assert!(
        peak < 1_000_000,
        "peak heap {peak} bytes for a {} byte document",
        source.bytes
    );
}
