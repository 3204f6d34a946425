//! Keyword search over a local document directory.
//!
//! `cargo run --example corpus_search -- DIR "query terms"`; without
//! arguments a small in-memory corpus is used.

use schemalign::providers::{sanitize, CorpusIndex, CorpusProvider, EvidenceProvider, EXCERPTS_PER_QUERY};

fn main() -> schemalign::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (provider, query) = match args.as_slice() {
        [dir, query] => (CorpusProvider::open(std::path::Path::new(dir))?, query.clone()),
        _ => {
            let index = CorpusIndex::from_documents([
                ("acme-fields.txt", "Acme firewall log fields. dpt is the destination port of the remote peer."),
                ("forum-17.txt", "Does dpt mean local port or remote port? Nobody seems sure."),
                ("release-notes.txt", "Version 4 renames act to action and adds rule ids."),
            ]);
            (CorpusProvider::new(index), "dpt RemotePort vs LocalPort definition Acme".to_string())
        }
    };
    let results = provider
        .search(&query)
        .map_err(|e| schemalign::Error::Config(e.to_string()))?;
    println!("query: {query}");
    for r in &results {
        println!("  {} ({})", r.locator, r.title);
    }
    println!("excerpts kept:");
    for e in sanitize(&results, EXCERPTS_PER_QUERY) {
        println!("  - {e}");
    }
    Ok(())
}
