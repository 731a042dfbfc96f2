//! Small text utilities shared across modules.

/// Canonical entity-name key: lowercase, punctuation removed, whitespace
/// collapsed. Used for per-document entity dedup and for query-time matching.
pub fn normalize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_space = false;
    for c in name.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Trims and collapses internal whitespace runs to a single space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns the byte offset just past the `n`-th whitespace-delimited token,
/// or `None` when `text` has at most `n` tokens.
pub fn byte_offset_after_tokens(text: &str, n: usize) -> Option<usize> {
    if n == 0 {
        return if text.trim().is_empty() { None } else { Some(0) };
    }
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token {
                in_token = false;
                seen += 1;
                if seen == n {
                    return if text[i..].trim().is_empty() { None } else { Some(i) };
                }
            }
        } else {
            in_token = true;
        }
    }
    None
}

/// Keeps at most `max_tokens` whitespace tokens, cutting from the tail.
/// Returns the kept prefix and whether anything was removed.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> (&str, bool) {
    match byte_offset_after_tokens(text, max_tokens) {
        Some(end) => (&text[..end], true),
        None => (text, false),
    }
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
