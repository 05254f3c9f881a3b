//! Extracts "comes-from" edges and assembles a code-diff-generation input.

use cctforge::dataflow::{build_cdg_input, extract_dataflow, serialize_edges};

fn main() {
    let old = ["total = 0", "for x in items:", "    total = total + x", "return total"];
    let new = ["total = start", "for x in items:", "    total = total + x * weight", "return total"];
    let g_old = extract_dataflow(&old);
    let g_new = extract_dataflow(&new);
    for e in &g_old.edges {
        println!(
            "{}@{}:{} <- {}@{}:{}",
            e.user.name, e.user.line_index, e.user.token_index, e.source.name, e.source.line_index, e.source.token_index
        );
    }
    println!("old edges: {}", serialize_edges(&g_old).join(" "));
    println!("new edges: {}", serialize_edges(&g_new).join(" "));
    let (input, layout) = build_cdg_input(&old, &g_old, &g_new);
    println!("cdg input ({} tokens, [SEP] at {} and {}):", input.len(), layout.first_sep, layout.second_sep);
    println!("{}", input.join(" "));
}
