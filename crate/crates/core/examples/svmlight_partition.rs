//! Parse svmlight rows, split features across three parties, and put a row
//! back together from its slices.
//!
//!     cargo run --example svmlight_partition

use std::io::Cursor;

use fdml::data::{make_partition, parse_svmlight, PartitionSpec};

const ROWS: &str = "\
+1 1:1 4:1 7:0.5 9:1
-1 2:1 5:1 8:2
+1 3:1 6:1 9:1 # trailing comment
";

fn main() -> fdml::Result<()> {
    let data = parse_svmlight(Cursor::new(ROWS))?;
    println!("{} rows, {} features, {} positive", data.len(), data.dim, data.positives());

    let spec = PartitionSpec::from_json(r#"{"sizes": [4, 3, 2]}"#)?;
    let partition = make_partition(data.dim, &spec)?;
    for (i, row) in data.rows.iter().enumerate() {
        let parts: Vec<_> = (0..partition.party_count())
            .map(|j| partition.project(row, j))
            .collect();
        let counts: Vec<usize> = parts.iter().map(|p| p.nnz()).collect();
        let whole = partition.reassemble(&parts)?;
        println!("row {i}: nonzeros per party {counts:?}, reassembles {}", &whole == row);
    }

    let scattered = PartitionSpec::from_json(r#"{"parties": [[0, 2, 4, 6, 8], [1, 3, 5, 7]]}"#)?;
    let partition = make_partition(data.dim, &scattered)?;
    println!("party 1 local row 0: {:?}", partition.project(&data.rows[0], 1));
    Ok(())
}
