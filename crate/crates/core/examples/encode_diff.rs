//! Parses a unified diff and shows its token encoding.

use cctforge::diff::{group_by_markers, parse_unified_diff, serialize_change, serialize_change_with_message};

const DIFF: &str = "\
--- a/superset/db_engine_specs/gsheets.py
+++ b/superset/db_engine_specs/gsheets.py
@@ -25,2 +25,2 @@
     engine = \"gsheets\"
-    allows_subqueries = False
+    allows_subqueries = True
";

fn main() -> Result<(), cctforge::DiffError> {
    let patch = parse_unified_diff(DIFF)?;
    let enc = serialize_change(&patch);
    println!("change:  {}", enc.tokens.join(" "));
    println!("with msg: {}", serialize_change_with_message(&patch, "Enable subqueries in gsheetsdb").join(" "));
    println!("old view: {:?}", patch.old_view());
    println!("new view: {:?}", patch.new_view());
    for (kind, tokens) in group_by_markers(&enc.tokens[1..]).unwrap_or_default() {
        println!("{kind:?}: {}", tokens.join(" "));
    }
    print!("round trip:\n{}", patch.to_unified());
    Ok(())
}
