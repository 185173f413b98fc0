use crate::error::{Error, Result};

pub const MISSING_TOKEN: &str = "NA";

/// Maps a raw integer cell to a category token: missing → `NA`, values ≤ 2 kept
/// verbatim, larger values → `floor(ln(v)²)`.
pub fn bucketize_numeric(raw: &str) -> Result<String> {
    let s = raw.trim();
    if s.is_empty() || s == MISSING_TOKEN {
        return Ok(MISSING_TOKEN.to_string());
    }
    let v: i64 = s
        .parse()
        .map_err(|_| Error::Parse { line: 0, message: format!("numeric field value {raw:?} is not an integer") })?;
    if v <= 2 {
        return Ok(v.to_string());
    }
    let l = (v as f64).ln();
    Ok(((l * l).floor() as i64).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches() {
        assert_eq!(bucketize_numeric("").unwrap(), "NA");
        assert_eq!(bucketize_numeric("2").unwrap(), "2");
        assert_eq!(bucketize_numeric("-5").unwrap(), "-5");
        // ln(100)² = 21.2075...
        assert_eq!(bucketize_numeric("100").unwrap(), "21");
        // ln(3)² = 1.2069...
        assert_eq!(bucketize_numeric("3").unwrap(), "1");
        assert!(matches!(bucketize_numeric("abc"), Err(Error::Parse { .. })));
    }
}
