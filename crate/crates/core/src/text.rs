//! Small text helpers shared across stages.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercase and collapse internal whitespace. Used for every knowledge-base key.
pub fn normalize_term(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Number of whitespace-separated words.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn is_noun_tag(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS" | "NNP" | "NNPS")
}

pub fn is_verb_tag(tag: &str) -> bool {
    tag.starts_with("VB")
}

/// True when the token contains no alphanumeric character.
pub fn is_punct(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_alphanumeric)
}

/// Crude singularization for plural nouns; enough to line up "deaths" with "death".
pub fn singularize(word: &str) -> String {
    let w = word.to_lowercase();
    if w.len() > 3 && w.ends_with("ies") {
        format!("{}y", &w[..w.len() - 3])
    } else if w.len() > 3
        && (w.ends_with("ses")
            || w.ends_with("xes")
            || w.ends_with("zes")
            || w.ends_with("ches")
            || w.ends_with("shes"))
    {
        w[..w.len() - 2].to_string()
    } else if w.len() > 2 && w.ends_with('s') && !w.ends_with("ss") {
        w[..w.len() - 1].to_string()
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_term("  Kids  in A\tcandy store "), "kids in a candy store");
        assert_eq!(word_count("kids in a candy store"), 5);
    }

    #[test]
    fn singular_forms() {
        assert_eq!(singularize("deaths"), "death");
        assert_eq!(singularize("stories"), "story");
        assert_eq!(singularize("boxes"), "box");
        assert_eq!(singularize("glass"), "glass");
        assert_eq!(singularize("kids"), "kid");
    }
}
