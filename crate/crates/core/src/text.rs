//! Lossless 8-bit text handling.
//!
//! Log bytes are mapped one-to-one onto the first 256 code points so that
//! evidence survives a decode/encode cycle unchanged whatever its encoding.

/// Decodes bytes as ISO-8859-1. Never fails.
pub fn decode(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

/// Encodes text produced by [`decode`]. Code points above U+00FF cannot
/// originate from a log file and are replaced with `?`.
pub fn encode(text: &str) -> Vec<u8> {
    text.chars()
        .map(|c| u8::try_from(u32::from(c)).unwrap_or(b'?'))
        .collect()
}

/// Splits a file body into physical lines, dropping `\n` / `\r\n` terminators.
pub fn lines(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = bytes.is_empty();
    body.split(|&b| b == b'\n')
        .filter(move |_| !empty)
        .map(|line| line.strip_suffix(b"\r").unwrap_or(line))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bytes_round_trip() {
        let bytes: Vec<u8> = (0..=255).collect();
        assert_eq!(encode(&decode(&bytes)), bytes);
    }

    #[test]
    fn splits_mixed_terminators() {
        let got: Vec<_> = lines(b"a\r\nb\nc").collect();
        assert_eq!(got, vec![&b"a"[..], b"b", b"c"]);
        assert_eq!(lines(b"").count(), 0);
        assert_eq!(lines(b"x\n").count(), 1);
        assert_eq!(lines(b"\n").count(), 1);
    }
}
