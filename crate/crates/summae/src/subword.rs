//! Data-driven subword tokenizer with byte fallback.
//!
//! The vocabulary is trained by frequency-greedy pair merging over the
//! corpus; encoding applies greedy longest-match against the learned
//! piece inventory, so the vocab file (one piece per line) fully
//! determines encoding. All 256 byte values are base pieces, which makes
//! `decode(encode(text)) == text` hold for any UTF-8 input.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::Story;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
pub const MASK: TokenId = 2;
pub const BOS_S: TokenId = 3;
pub const BOS_P: TokenId = 4;
pub const CLS: TokenId = 5;
pub const NUM_SPECIALS: u32 = 6;

const SPECIAL_NAMES: [&str; 6] = ["<pad>", "<eos>", "<mask>", "<bos_s>", "<bos_p>", "<cls>"];
const NUM_BYTES: u32 = 256;
/// Smallest admissible vocabulary: specials, byte alphabet, one merge slot.
pub const MIN_VOCAB_SIZE: u32 = NUM_SPECIALS + NUM_BYTES + 1;

pub fn is_special(id: TokenId) -> bool {
    id < NUM_SPECIALS
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Special(u32),
    Bytes(Vec<u8>),
    Unused(u32),
}

/// Immutable subword vocabulary. Ids 0..6 are reserved specials, ids
/// 6..262 are the byte alphabet, higher ids are learned merges followed
/// by padding slots up to the requested size.
#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<Piece>,
    lookup: HashMap<Vec<u8>, TokenId>,
    max_piece_len: usize,
}

fn segments(text: &str) -> Vec<&str> {
    // Maximal runs of whitespace or non-whitespace characters. Merges
    // never cross a run boundary, so no piece mixes the two classes.
    let mut out = Vec::new();
    let mut start = 0;
    let mut class: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        match class {
            Some(prev) if prev == ws => {}
            Some(_) => {
                out.push(&text[start..i]);
                start = i;
                class = Some(ws);
            }
            None => class = Some(ws),
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

impl Vocab {
    /// Train a vocabulary of exactly `target_size` entries on the corpus
    /// sentences. Deterministic: merge order is fixed by pair frequency
    /// with lexicographic tie-breaking.
    pub fn train(corpus: &[Story], target_size: u32) -> Result<Vocab> {
        if corpus.is_empty() || corpus.iter().all(|s| s.sentences.is_empty()) {
            return Err(Error::Vocab("corpus is empty, cannot reach base coverage".into()));
        }
        if target_size < MIN_VOCAB_SIZE {
            return Err(Error::Vocab(format!(
                "target size {target_size} too small: need > {} (specials + byte alphabet)",
                NUM_SPECIALS + NUM_BYTES
            )));
        }

        let mut pieces: Vec<Piece> = (0..NUM_SPECIALS).map(Piece::Special).collect();
        for b in 0..=255u8 {
            pieces.push(Piece::Bytes(vec![b]));
        }

        // Segment type counts over the whole corpus.
        let mut type_counts: HashMap<&str, u64> = HashMap::new();
        for story in corpus {
            for sentence in &story.sentences {
                for seg in segments(sentence) {
                    *type_counts.entry(seg).or_insert(0) += 1;
                }
            }
        }
        let mut types: Vec<(Vec<TokenId>, u64)> = type_counts
            .into_iter()
            .map(|(seg, count)| {
                let ids = seg.bytes().map(|b| NUM_SPECIALS + b as TokenId).collect();
                (ids, count)
            })
            .collect();
        // Fixed processing order so incremental updates are reproducible.
        types.sort_by(|a, b| a.0.cmp(&b.0));

        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut pair_types: HashMap<(TokenId, TokenId), Vec<usize>> = HashMap::new();
        for (idx, (ids, count)) in types.iter().enumerate() {
            for w in ids.windows(2) {
                let pair = (w[0], w[1]);
                *pair_counts.entry(pair).or_insert(0) += count;
                pair_types.entry(pair).or_default().push(idx);
            }
        }

        let piece_bytes = |pieces: &[Piece], id: TokenId| -> Vec<u8> {
            match &pieces[id as usize] {
                Piece::Bytes(b) => b.clone(),
                _ => unreachable!("merge candidates are always byte pieces"),
            }
        };

        while (pieces.len() as u32) < target_size {
            // Highest count wins; ties go to the lexicographically
            // smallest (left bytes, right bytes) pair.
            let mut best: Option<((TokenId, TokenId), u64, (Vec<u8>, Vec<u8>))> = None;
            for (&pair, &count) in &pair_counts {
                if count < 2 {
                    continue;
                }
                let key = (piece_bytes(&pieces, pair.0), piece_bytes(&pieces, pair.1));
                let better = match &best {
                    None => true,
                    Some((_, bc, bk)) => count > *bc || (count == *bc && key < *bk),
                };
                if better {
                    best = Some((pair, count, key));
                }
            }
            let Some((pair, _, (left, right))) = best else {
                break;
            };

            let new_id = pieces.len() as TokenId;
            let mut merged = left;
            merged.extend_from_slice(&right);
            pieces.push(Piece::Bytes(merged));

            let mut affected = pair_types.remove(&pair).unwrap_or_default();
            affected.sort_unstable();
            affected.dedup();
            pair_counts.remove(&pair);
            for idx in affected {
                let (ids, count) = &mut types[idx];
                let count = *count;
                // Retract this type's old pair contributions.
                for w in ids.windows(2) {
                    let p = (w[0], w[1]);
                    if let Some(c) = pair_counts.get_mut(&p) {
                        *c = c.saturating_sub(count);
                        if *c == 0 {
                            pair_counts.remove(&p);
                        }
                    }
                }
                // Left-to-right merge application.
                let mut out = Vec::with_capacity(ids.len());
                let mut i = 0;
                while i < ids.len() {
                    if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                        out.push(new_id);
                        i += 2;
                    } else {
                        out.push(ids[i]);
                        i += 1;
                    }
                }
                *ids = out;
                for w in ids.windows(2) {
                    let p = (w[0], w[1]);
                    *pair_counts.entry(p).or_insert(0) += count;
                    pair_types.entry(p).or_default().push(idx);
                }
            }
        }

        let mut unused = 0;
        while (pieces.len() as u32) < target_size {
            pieces.push(Piece::Unused(unused));
            unused += 1;
        }
        Ok(Vocab::from_pieces(pieces))
    }

    fn from_pieces(pieces: Vec<Piece>) -> Vocab {
        let mut lookup = HashMap::new();
        let mut max_piece_len = 1;
        for (id, piece) in pieces.iter().enumerate() {
            if let Piece::Bytes(b) = piece {
                max_piece_len = max_piece_len.max(b.len());
                lookup.entry(b.clone()).or_insert(id as TokenId);
            }
        }
        Vocab {
            pieces,
            lookup,
            max_piece_len,
        }
    }

    pub fn size(&self) -> u32 {
        self.pieces.len() as u32
    }

    /// Encode raw text. Never produces special ids; byte fallback keeps
    /// this total over all UTF-8 input.
    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let top = self.max_piece_len.min(bytes.len() - pos);
            let mut matched = None;
            for len in (1..=top).rev() {
                if let Some(&id) = self.lookup.get(&bytes[pos..pos + len]) {
                    matched = Some((id, len));
                    break;
                }
            }
            let (id, len) = matched.expect("byte pieces cover all input");
            ids.push(id);
            pos += len;
        }
        ids
    }

    /// Encoder-ready sentence sequence: tokens plus terminal EOS.
    pub fn encode_sentence(&self, sentence: &str) -> Vec<TokenId> {
        let mut ids = self.encode_text(sentence);
        ids.push(EOS);
        ids
    }

    /// Encoder-ready paragraph sequence: the sentences' token sequences
    /// joined by the encoded single space, plus one terminal EOS.
    /// Identical to encoding the space-joined paragraph text.
    pub fn encode_paragraph(&self, sentences: &[String]) -> Vec<TokenId> {
        let space = self.encode_text(" ");
        let mut ids = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            if i > 0 {
                ids.extend_from_slice(&space);
            }
            ids.extend(self.encode_text(s));
        }
        ids.push(EOS);
        ids
    }

    /// Decode token ids to text. Specials and unused slots render as the
    /// empty string.
    pub fn decode_tokens(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.pieces.get(id as usize) {
                Some(Piece::Bytes(b)) => bytes.extend_from_slice(b),
                Some(Piece::Special(_)) | Some(Piece::Unused(_)) => {}
                None => {
                    return Err(Error::TokenOutOfRange {
                        id,
                        size: self.size(),
                    })
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Vocab file: header `summae-vocab v1 size=<N> algo=<name>`, then one
    /// piece per line (specials first, escaped byte pieces, unused slots).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("summae-vocab v1 size={} algo=bytebpe\n", self.size());
        for piece in &self.pieces {
            match piece {
                Piece::Special(i) => out.push_str(SPECIAL_NAMES[*i as usize]),
                Piece::Bytes(b) => out.push_str(&escape_piece(b)),
                Piece::Unused(i) => out.push_str(&format!("<unused{i}>")),
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Vocab(format!("{}: empty vocab file", path.display())))?;
        let size = parse_header(header)
            .ok_or_else(|| Error::Vocab(format!("{}: bad header `{header}`", path.display())))?;

        let mut pieces = Vec::with_capacity(size as usize);
        for (i, line) in lines.enumerate() {
            let id = i as u32;
            if id < NUM_SPECIALS {
                if line != SPECIAL_NAMES[i] {
                    return Err(Error::Vocab(format!(
                        "{}: expected special `{}` at id {id}, found `{line}`",
                        path.display(),
                        SPECIAL_NAMES[i]
                    )));
                }
                pieces.push(Piece::Special(id));
            } else if let Some(rest) = line.strip_prefix("<unused") {
                let n = rest
                    .strip_suffix('>')
                    .and_then(|s| s.parse::<u32>().ok())
                    .ok_or_else(|| Error::Vocab(format!("{}: bad unused slot `{line}`", path.display())))?;
                pieces.push(Piece::Unused(n));
            } else {
                pieces.push(Piece::Bytes(unescape_piece(line).map_err(|m| {
                    Error::Vocab(format!("{}: piece {id}: {m}", path.display()))
                })?));
            }
        }
        if pieces.len() as u32 != size {
            return Err(Error::Vocab(format!(
                "{}: header says {} pieces, file has {}",
                path.display(),
                size,
                pieces.len()
            )));
        }
        Ok(Vocab::from_pieces(pieces))
    }
}

fn parse_header(header: &str) -> Option<u32> {
    let mut parts = header.split_whitespace();
    if parts.next()? != "summae-vocab" || parts.next()? != "v1" {
        return None;
    }
    let mut size = None;
    for part in parts {
        if let Some(v) = part.strip_prefix("size=") {
            size = v.parse().ok();
        } else if !part.starts_with("algo=") {
            return None;
        }
    }
    size
}

/// Printable ASCII stays literal; backslash, control bytes, non-ASCII,
/// space, and a leading `<` are escaped so every line is one unambiguous
/// piece.
fn escape_piece(bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'<' if i == 0 => out.push_str("\\x3c"),
            0x21..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

fn unescape_piece(line: &str) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            if !c.is_ascii() || (c as u32) < 0x21 || (c as u32) > 0x7e {
                return Err(format!("unescaped byte `{c}`"));
            }
            out.push(c as u8);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push(b'\\'),
            Some('x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let byte = u8::from_str_radix(&format!("{hi}{lo}"), 16)
                    .map_err(|_| format!("bad hex escape \\x{hi}{lo}"))?;
                out.push(byte);
            }
            other => return Err(format!("bad escape `\\{other:?}`")),
        }
    }
    if out.is_empty() {
        return Err("empty piece line".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn story_of(sentences: &[&str]) -> Story {
        Story {
            id: "s".into(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn decode_piece(vocab: &Vocab, id: TokenId) -> String {
        vocab.decode_tokens(&[id]).unwrap()
    }

    #[test]
    fn most_frequent_pair_merges_first() {
        let corpus = vec![story_of(&["aaab", "aab"])];
        let vocab = Vocab::train(&corpus, 300).unwrap();
        assert_eq!(vocab.size(), 300);
        // Pair (a,a) has count 3, (a,b) count 2; after merging "aa" no
        // pair reaches count 2, so "aa" is the only learned piece.
        let learned: Vec<String> = (NUM_SPECIALS + NUM_BYTES..vocab.size())
            .map(|id| decode_piece(&vocab, id))
            .filter(|p| !p.is_empty())
            .collect();
        assert_eq!(learned, vec!["aa".to_string()]);
    }

    #[test]
    fn too_small_target_is_rejected() {
        let corpus = vec![story_of(&["hello"])];
        assert!(Vocab::train(&corpus, NUM_SPECIALS + NUM_BYTES).is_err());
        assert!(Vocab::train(&corpus, 5).is_err());
        assert!(Vocab::train(&[], 300).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = vec![
            story_of(&["the cat sat on the mat.", "the dog sat too."]),
            story_of(&["a cat and a dog met.", "they sat together."]),
        ];
        let a = Vocab::train(&corpus, 280).unwrap();
        let b = Vocab::train(&corpus, 280).unwrap();
        let pieces = |v: &Vocab| (0..v.size()).map(|i| decode_piece(v, i)).collect::<Vec<_>>();
        assert_eq!(pieces(&a), pieces(&b));
    }

    #[test]
    fn round_trip_identity() {
        let corpus = vec![story_of(&["Jason went to the beach.", "The kids played."])];
        let vocab = Vocab::train(&corpus, 300).unwrap();
        for text in [
            "",
            "Jason went to the beach.",
            "unseen words entirely!",
            "emoji \u{1f600} and curly \u{2019} quotes",
            "tabs\tand  double  spaces",
        ] {
            let ids = vocab.encode_text(text);
            assert_eq!(vocab.decode_tokens(&ids).unwrap(), text);
            for &id in &ids {
                assert!(!is_special(id), "special id {id} from raw text");
            }
        }
    }

    #[test]
    fn specials_render_empty_and_range_is_checked() {
        let corpus = vec![story_of(&["abc"])];
        let vocab = Vocab::train(&corpus, 263).unwrap();
        assert_eq!(vocab.decode_tokens(&[EOS]).unwrap(), "");
        assert_eq!(vocab.decode_tokens(&[PAD, MASK, BOS_S, BOS_P, CLS]).unwrap(), "");
        assert!(vocab.decode_tokens(&[vocab.size()]).is_err());
    }

    #[test]
    fn paragraph_encoding_matches_joined_text() {
        let corpus = vec![story_of(&["the cat sat.", "the dog ran.", "both slept."])];
        let vocab = Vocab::train(&corpus, 320).unwrap();
        let sentences: Vec<String> =
            ["the cat sat.", "the dog ran.", "both slept."].iter().map(|s| s.to_string()).collect();
        let joined = sentences.join(" ");
        let mut expect = vocab.encode_text(&joined);
        expect.push(EOS);
        assert_eq!(vocab.encode_paragraph(&sentences), expect);
        assert_eq!(vocab.decode_tokens(&vocab.encode_paragraph(&sentences)).unwrap(), joined);
    }

    #[test]
    fn vocab_file_round_trip() {
        let corpus = vec![story_of(&[
            "weird bytes: \\ backslash <angle> and \u{00e9}accents\u{1f600}",
            "plain text for merges merges merges",
        ])];
        let vocab = Vocab::train(&corpus, 300).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();

        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("summae-vocab v1 size=300 algo=bytebpe\n"));

        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        let text = "round trip through the saved file: \\ <ok> \u{00e9}\u{1f600}";
        assert_eq!(loaded.encode_text(text), vocab.encode_text(text));
        assert_eq!(loaded.decode_tokens(&loaded.encode_text(text)).unwrap(), text);
    }

    #[test]
    fn corrupt_vocab_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "not-a-vocab\n<pad>\n").unwrap();
        assert!(Vocab::load(&path).is_err());
        std::fs::write(&path, "summae-vocab v1 size=3 algo=bytebpe\n<pad>\n<eos>\n").unwrap();
        assert!(Vocab::load(&path).is_err());
        std::fs::write(&path, "summae-vocab v1 size=2 algo=bytebpe\n<pad>\n<mask>\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }

    #[test]
    fn exact_target_size_with_padding() {
        // Tiny corpus exhausts merges early; padding fills to target.
        let corpus = vec![story_of(&["xy xy"])];
        let vocab = Vocab::train(&corpus, 400).unwrap();
        assert_eq!(vocab.size(), 400);
        let ids = vocab.encode_text("xy xy");
        assert_eq!(vocab.decode_tokens(&ids).unwrap(), "xy xy");
    }
}
