//! How segments are laid out over batch rows, with and without reversed rows.

use std::sync::Arc;

use melmo::corpus::{make_batch_streams, segment_stream, DocumentSet, Segment};

fn show(segments: &Arc<[Segment]>, batch: usize, btbptt: bool) -> Result<(), Box<dyn std::error::Error>> {
    let mut sched = make_batch_streams(segments.clone(), batch, btbptt, None, 0)?;
    println!("btbptt {btbptt}: directions {:?}", sched.directions());
    while !sched.is_exhausted() {
        let b = sched.next_batch()?;
        let cells: Vec<String> = b.segments.iter().map(|s| s.map_or("-".into(), |i| i.to_string())).collect();
        println!("  step: segments {}", cells.join(" "));
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 3 documents, 30 tokens, segmented into length-4 pieces
    let docs = DocumentSet::new(vec![(10..22).collect(), (30..38).collect(), (40..50).collect()]);
    let segments: Arc<[Segment]> = segment_stream(&docs, 4, 0)?.into();
    println!("{} segments; the last has {} pads", segments.len(), segments.last().map_or(0, |s| s.pad_count()));
    show(&segments, 4, false)?;
    show(&segments, 4, true)?;
    Ok(())
}
