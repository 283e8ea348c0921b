//! CSV helpers with bit-exact decimal formatting.

use std::io::{self, Write};

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV record; string cells are written verbatim.
pub fn write_record<W: Write, S: AsRef<str>>(w: &mut W, cells: impl IntoIterator<Item = S>) -> io::Result<()> {
    let mut first = true;
    for c in cells {
        if !first {
            w.write_all(b",")?;
        }
        first = false;
        w.write_all(c.as_ref().as_bytes())?;
    }
    w.write_all(b"\n")
}

/// Column names `prefix1..prefixm`.
pub fn indexed_columns(prefix: &str, m: usize) -> impl Iterator<Item = String> + '_ {
    (1..=m).map(move |i| format!("{prefix}{i}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn record_layout() {
        let mut buf = Vec::new();
        write_record(&mut buf, ["a", "b"]).unwrap();
        write_record(&mut buf, indexed_columns("x", 2)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\nx1,x2\n");
    }
}
