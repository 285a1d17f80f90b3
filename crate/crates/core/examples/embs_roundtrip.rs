//! Writes a synthetic stream and its class bank to disk, reads both back and
//! checks that a rewrite reproduces the file byte for byte.
//!
//! ```text
//! cargo run --example embs_roundtrip [dir]
//! ```

use std::path::PathBuf;

use boostadapter::io::{
    read_class_bank, read_stream, write_class_bank, write_stream, StreamHeader,
};
use boostadapter::lab::{gen_shift_stream, ShiftStreamSpec};

fn main() -> boostadapter::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("boostadapter-embs"));
    std::fs::create_dir_all(&dir)?;

    let spec = ShiftStreamSpec {
        records: 50,
        ..Default::default()
    };
    let (bank, labeled) = gen_shift_stream(&spec)?;
    let records: Vec<_> = labeled.into_iter().map(|r| r.record).collect();
    let header = StreamHeader::for_records(spec.dim, spec.n_classes, &records);

    let stream = dir.join("stream.embs");
    let bytes = write_stream(&stream, &header, &records)?;
    write_class_bank(dir.join("bank.json"), &bank)?;
    println!("wrote {bytes} bytes to {}", stream.display());

    let reader = read_stream(&stream)?;
    println!("header: {:?}", reader.header());
    let back = reader.collect::<boostadapter::Result<Vec<_>>>()?;
    let bank_back = read_class_bank(dir.join("bank.json"))?;
    println!(
        "{} records read, bank {} x {}",
        back.len(),
        bank_back.n_classes(),
        bank_back.dim()
    );

    let again = dir.join("rewrite.embs");
    write_stream(&again, &header, &back)?;
    let same = std::fs::read(&stream)? == std::fs::read(&again)?;
    println!("rewrite identical: {same}");
    Ok(())
}
