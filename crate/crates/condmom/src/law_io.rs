//! Finite-support laws as CSV: a header `p,z0,z1,…` followed by one row per
//! support point. Lines starting with `#` are ignored. Probabilities are
//! normalized on read, so raw counts work too.

use std::path::Path;

use condmom_core::probability::DiscreteLaw;

use crate::error::{CliError, Result};

pub fn parse_law(text: &str) -> Result<DiscreteLaw> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| CliError::validation(format!("law file header: {e}")))?
        .clone();
    if header.get(0) != Some("p") || header.len() < 2 {
        return Err(CliError::validation("law file: header must be `p,z0,z1,...`"));
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::validation(format!("law file row {}: {e}", line + 1)))?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::validation(format!("law file row {}: {e}", line + 1)))?;
        weights.push(vals[0]);
        support.push(vals[1..].to_vec());
    }
    DiscreteLaw::from_weights(support, weights).map_err(|e| CliError::validation(format!("law file: {e}")))
}

pub fn read_law(path: &Path) -> Result<DiscreteLaw> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    parse_law(&text)
}

pub fn format_law(law: &DiscreteLaw) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["p".to_string()];
    header.extend((0..law.dim()).map(|c| format!("z{c}")));
    w.write_record(&header).expect("in-memory write");
    for i in 0..law.len() {
        let mut row = vec![format!("{:?}", law.prob(i))];
        row.extend(law.point(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn write_law(law: &DiscreteLaw, path: &Path) -> Result<()> {
    std::fs::write(path, format_law(law)).map_err(|e| CliError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let law = condmom_core::dgp::dgp_b().law;
        let back = parse_law(&format_law(&law)).unwrap();
        assert_eq!(law.support(), back.support());
        for (a, b) in law.probs().iter().zip(back.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn counts_and_comments() {
        let law = parse_law("# two points\np,z0\n1,0\n3,1\n").unwrap();
        assert_eq!(law.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn bad_header_and_ragged_rows() {
        assert!(parse_law("q,z0\n1,0\n").is_err());
        assert!(parse_law("p,z0\n1,0,3\n").is_err());
        assert!(parse_law("p,z0\n1,x\n").is_err());
    }
}
