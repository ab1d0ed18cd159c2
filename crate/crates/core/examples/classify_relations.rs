//! Relation cardinality classes from head/tail fan-out.
//!
//! cargo run --example classify_relations [-- <data dir>]

use hie_kge::cli::classify_rows;
use hie_kge::kg_data::KnowledgeGraph;
use hie_kge::synthetic::relational_ring;

fn main() -> hie_kge::Result<()> {
    let kg = match std::env::args().nth(1) {
        Some(dir) => KnowledgeGraph::load_dir(dir)?,
        None => relational_ring(40, 0.0, 0)?,
    };
    println!("{:<16} {:>7} {:>7}  category", "relation", "hco", "tcs");
    for row in classify_rows(&kg, 1.5)? {
        println!("{:<16} {:>7.3} {:>7.3}  {}", row.relation, row.hco, row.tcs, row.category);
    }
    Ok(())
}
