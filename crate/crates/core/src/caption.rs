//! Structured product/human captions and the hash-seeded toy text encoder.
//!
//! Canonical form is one line:
//!
//! ```text
//! {"category":"cup","size_cm":12,"color":"red","material":"ceramic","text":"OK","person":"","environment":"","lighting":""}
//! ```
//!
//! Keys appear in that order; `size_cm` and `text` are omitted when absent.
//! Numbers use Rust's shortest round-trip `Display` form.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::hash::Hasher;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_L_MAX: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductCaption {
    pub category: String,
    pub size_cm: Option<f64>,
    pub color: String,
    pub material: String,
    pub text_on_product: Option<String>,
}

impl ProductCaption {
    pub fn validate(&self) -> Result<()> {
        if self.category.is_empty() {
            return Err(Error::InvalidArgument("caption category is empty".into()));
        }
        if let Some(s) = self.size_cm {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidArgument(format!("caption size_cm {s} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HumanCaption {
    pub person: String,
    pub environment: String,
    pub lighting: String,
}

const KEYS: [&str; 8] = [
    "category",
    "size_cm",
    "color",
    "material",
    "text",
    "person",
    "environment",
    "lighting",
];

fn push_quoted(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

pub fn serialize_caption(p: &ProductCaption, h: &HumanCaption) -> String {
    let mut out = String::from("{");
    let field = |out: &mut String, key: &str| {
        if out.len() > 1 {
            out.push(',');
        }
        push_quoted(out, key);
        out.push(':');
    };
    field(&mut out, "category");
    push_quoted(&mut out, &p.category);
    if let Some(s) = p.size_cm {
        field(&mut out, "size_cm");
        let _ = write!(out, "{s}");
    }
    field(&mut out, "color");
    push_quoted(&mut out, &p.color);
    field(&mut out, "material");
    push_quoted(&mut out, &p.material);
    if let Some(t) = &p.text_on_product {
        field(&mut out, "text");
        push_quoted(&mut out, t);
    }
    for (k, v) in [
        ("person", &h.person),
        ("environment", &h.environment),
        ("lighting", &h.lighting),
    ] {
        field(&mut out, k);
        push_quoted(&mut out, v);
    }
    out.push('}');
    out
}

struct Parser<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, offset: usize, reason: impl Into<String>) -> Result<T> {
        Err(Error::MalformedCaption {
            offset,
            reason: reason.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.s.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.err(self.pos, format!("expected '{}', found '{}'", b as char, c as char)),
            None => self.err(self.pos, format!("expected '{}', input ended", b as char)),
        }
    }

    fn string(&mut self) -> Result<String> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            let rest = &self.s[self.pos..];
            let Some(ch) = rest.chars().next() else {
                return self.err(self.pos, "unterminated string");
            };
            let at = self.pos;
            self.pos += ch.len_utf8();
            match ch {
                '"' => return Ok(out),
                '\\' => {
                    let Some(e) = self.peek() else {
                        return self.err(self.pos, "unterminated escape");
                    };
                    self.pos += 1;
                    match e {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'/' => out.push('/'),
                        b'n' => out.push('\n'),
                        b't' => out.push('\t'),
                        b'r' => out.push('\r'),
                        b'u' => {
                            let hex = self.s.get(self.pos..self.pos + 4);
                            let code = hex.and_then(|h| u32::from_str_radix(h, 16).ok());
                            match code.and_then(char::from_u32) {
                                Some(c) => {
                                    out.push(c);
                                    self.pos += 4;
                                }
                                None => return self.err(self.pos.min(self.s.len()), "bad \\u escape"),
                            }
                        }
                        _ => return self.err(at, "unknown escape"),
                    }
                }
                c if (c as u32) < 0x20 => return self.err(at, "control character in string"),
                c => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E')) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err(start, if self.peek().is_none() { "input ended" } else { "expected number" });
        }
        match self.s[start..self.pos].parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
            Ok(_) => self.err(start, "size_cm must be a positive finite number"),
            Err(_) => self.err(start, "malformed number"),
        }
    }
}

pub fn parse_caption(s: &str) -> Result<(ProductCaption, HumanCaption)> {
    let mut p = Parser { s, pos: 0 };
    let mut seen = [false; KEYS.len()];
    let mut prod = ProductCaption {
        category: String::new(),
        size_cm: None,
        color: String::new(),
        material: String::new(),
        text_on_product: None,
    };
    let mut human = HumanCaption::default();

    p.expect(b'{')?;
    p.skip_ws();
    if p.peek() == Some(b'}') {
        return p.err(p.pos, "empty caption");
    }
    loop {
        p.skip_ws();
        let key_at = p.pos;
        let key = p.string()?;
        let Some(k) = KEYS.iter().position(|&k| k == key) else {
            return p.err(key_at, format!("unknown key \"{key}\""));
        };
        if core::mem::replace(&mut seen[k], true) {
            return p.err(key_at, format!("duplicate key \"{key}\""));
        }
        p.expect(b':')?;
        if key == "size_cm" {
            prod.size_cm = Some(p.number()?);
        } else {
            let v = p.string()?;
            match key.as_str() {
                "category" => prod.category = v,
                "color" => prod.color = v,
                "material" => prod.material = v,
                "text" => prod.text_on_product = Some(v),
                "person" => human.person = v,
                "environment" => human.environment = v,
                _ => human.lighting = v,
            }
        }
        p.skip_ws();
        match p.peek() {
            Some(b',') => p.pos += 1,
            Some(b'}') => {
                p.pos += 1;
                break;
            }
            Some(c) => return p.err(p.pos, format!("expected ',' or '}}', found '{}'", c as char)),
            None => return p.err(p.pos, "input ended inside caption"),
        }
    }
    p.skip_ws();
    if p.pos != s.len() {
        return p.err(p.pos, "trailing characters");
    }
    for (k, &present) in KEYS.iter().zip(&seen) {
        if !present && !matches!(*k, "size_cm" | "text") {
            return p.err(s.len(), format!("missing key \"{k}\""));
        }
    }
    prod.validate()
        .map_err(|e| Error::MalformedCaption { offset: 0, reason: e.to_string() })?;
    Ok((prod, human))
}

/// Alphanumeric runs; everything else separates tokens.
pub fn tokenize(s: &str) -> Vec<&str> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect()
}

/// FNV-1a 64 over the token's UTF-8 bytes.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Unit-norm embedding row for one token.
pub fn token_embedding(token: &str, c: usize) -> Vec<f64> {
    let mut r = rng::seeded(token_hash(token));
    loop {
        let mut v = rng::normal_vec(&mut r, c, 1.0);
        let norm = math::sqrt(v.iter().map(|a| a * a).sum());
        if norm > 1e-300 {
            for a in &mut v {
                *a /= norm;
            }
            return v;
        }
    }
}

/// `[1 × l × c]` text stream; an empty token list gives one zero row.
pub fn encode_text(s: &str, c: usize, l_max: usize) -> Result<Tensor> {
    if c == 0 || l_max == 0 {
        return Err(Error::InvalidArgument(format!("encode_text needs c >= 1 and l_max >= 1, got {c}, {l_max}")));
    }
    let tokens = tokenize(s);
    if tokens.is_empty() {
        return Ok(Tensor::zeros(&[1, 1, c]));
    }
    let l = tokens.len().min(l_max);
    let mut data = Vec::with_capacity(l * c);
    for t in &tokens[..l] {
        data.extend(token_embedding(t, c));
    }
    Tensor::new(&[1, l, c], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cup() -> (ProductCaption, HumanCaption) {
        (
            ProductCaption {
                category: "cup".into(),
                size_cm: None,
                color: "red".into(),
                material: "ceramic".into(),
                text_on_product: None,
            },
            HumanCaption::default(),
        )
    }

    #[test]
    fn minimal_caption_keys() {
        let (p, h) = cup();
        assert_eq!(
            serialize_caption(&p, &h),
            r#"{"category":"cup","color":"red","material":"ceramic","person":"","environment":"","lighting":""}"#
        );
    }

    #[test]
    fn round_trip_with_optionals() {
        let p = ProductCaption {
            category: "bottle \"XL\"".into(),
            size_cm: Some(12.5),
            color: "deep\tblue".into(),
            material: "glass\\plastic".into(),
            text_on_product: Some("Ünïcode ✓".into()),
        };
        let h = HumanCaption {
            person: "woman, 30s".into(),
            environment: "kitchen".into(),
            lighting: "soft".into(),
        };
        let s = serialize_caption(&p, &h);
        assert!(!s.contains('\n'));
        assert_eq!(parse_caption(&s).unwrap(), (p.clone(), h.clone()));
        let mut q = p.clone();
        q.size_cm = Some(0.1 + 0.2);
        assert_eq!(parse_caption(&serialize_caption(&q, &h)).unwrap().0, q);
    }

    #[test]
    fn material_changes_string() {
        let (p, h) = cup();
        let mut q = p.clone();
        q.material = "glass".into();
        assert_ne!(serialize_caption(&p, &h), serialize_caption(&q, &h));
    }

    #[test]
    fn unknown_key_rejected() {
        let s = r#"{"category":"cup","weight":3}"#;
        match parse_caption(s) {
            Err(Error::MalformedCaption { offset, reason }) => {
                assert_eq!(offset, 18);
                assert!(reason.contains("weight"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_offset() {
        let (p, h) = cup();
        let s = serialize_caption(&p, &h);
        for cut in [10, 25, s.len() - 1] {
            match parse_caption(&s[..cut]) {
                Err(Error::MalformedCaption { offset, .. }) => assert_eq!(offset, cut, "cut {cut}"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn missing_and_invalid() {
        assert!(parse_caption(r#"{"category":"cup"}"#).is_err());
        assert!(parse_caption(r#"{"category":"","color":"","material":"","person":"","environment":"","lighting":""}"#).is_err());
        assert!(parse_caption(r#"{"category":"a","size_cm":-1,"color":"","material":"","person":"","environment":"","lighting":""}"#).is_err());
        assert!(parse_caption("").is_err());
    }

    #[test]
    fn encode_deterministic_and_unit_norm() {
        let a = encode_text("red ceramic cup", 8, DEFAULT_L_MAX).unwrap();
        let b = encode_text("red ceramic cup", 8, DEFAULT_L_MAX).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[1, 3, 8]);
        for row in a.data().chunks(8) {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((math::sqrt(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_is_zero_token() {
        let t = encode_text("", 5, 32).unwrap();
        assert_eq!(t.shape(), &[1, 1, 5]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(encode_text(" ,;{}", 5, 32).unwrap(), t);
    }

    #[test]
    fn truncates_to_l_max() {
        let t = encode_text("a b c d e", 4, 3).unwrap();
        assert_eq!(t.shape(), &[1, 3, 4]);
    }

    #[test]
    fn token_order_permutes_rows() {
        let a = encode_text("cup red", 6, 32).unwrap();
        let b = encode_text("red cup", 6, 32).unwrap();
        assert_eq!(&a.data()[..6], &b.data()[6..]);
        assert_eq!(&a.data()[6..], &b.data()[..6]);
    }

    #[test]
    fn fixture_vocabulary_hashes_distinct() {
        let vocab = [
            "cup", "bottle", "phone", "box", "bag", "lipstick", "watch", "shoe", "book", "jar",
            "red", "blue", "green", "ceramic", "glass", "plastic", "metal", "paper",
        ];
        let mut hashes: Vec<u64> = vocab.iter().map(|t| token_hash(t)).collect();
        hashes.sort_unstable();
        hashes.dedup();
        assert_eq!(hashes.len(), vocab.len());
        for w in vocab.windows(2) {
            assert_ne!(token_embedding(w[0], 8), token_embedding(w[1], 8));
        }
    }
}
