//! Evaluation protocol: summary truncation, ROUGE-1/L recall against
//! multiple references, extractive and human baselines, length statistics,
//! and latent-space diagnostics.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ReferenceSet, Story};
use crate::error::{Error, Result};
use crate::seqmodel::{decode_greedy, encode, DecodePrompt, ModelConfig, Params};
use crate::subword::Vocab;

/// ROUGE-1 and ROUGE-L recall, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub r1_recall: f64,
    pub rl_recall: f64,
}

/// Per-example scoring record.
#[derive(Debug, Clone)]
pub struct ExampleRecord {
    pub id: String,
    pub candidate: String,
    pub rouge: RougeScore,
    /// Whitespace tokens of the truncated candidate.
    pub words: usize,
    /// Whitespace tokens of the raw (untruncated) candidate.
    pub raw_words: usize,
    /// Sentence count of the raw candidate under the truncation splitter.
    pub sentences: usize,
}

/// Aggregate evaluation report. Means are arithmetic averages over the
/// per-example reference-averaged scores.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mean: RougeScore,
    pub mean_words: f64,
    pub mean_raw_words: f64,
    pub mean_sentences: f64,
    pub examples: Vec<ExampleRecord>,
}

impl EvalReport {
    fn from_examples(examples: Vec<ExampleRecord>) -> Self {
        let n = examples.len().max(1) as f64;
        let mut mean = RougeScore::default();
        let (mut words, mut raw_words, mut sentences) = (0.0, 0.0, 0.0);
        for ex in &examples {
            mean.r1_recall += ex.rouge.r1_recall;
            mean.rl_recall += ex.rouge.rl_recall;
            words += ex.words as f64;
            raw_words += ex.raw_words as f64;
            sentences += ex.sentences as f64;
        }
        mean.r1_recall /= n;
        mean.rl_recall /= n;
        EvalReport {
            mean,
            mean_words: words / n,
            mean_raw_words: raw_words / n,
            mean_sentences: sentences / n,
            examples,
        }
    }
}

// ---------------------------------------------------------------------------
// Tokenization and truncation
// ---------------------------------------------------------------------------

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Scoring tokenizer: lowercase, split on runs of non-alphanumeric
/// characters, keeping intra-word apostrophes ("wasn't" is one token).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                current.push(lc);
            }
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Byte offset just past the first sentence-final terminator: one of
/// `.`, `!`, `?` followed by whitespace or end of text.
fn first_sentence_end(text: &str) -> Option<usize> {
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            match iter.peek() {
                None => return Some(i + c.len_utf8()),
                Some(&(_, next)) if next.is_whitespace() => return Some(i + c.len_utf8()),
                _ => {}
            }
        }
    }
    None
}

/// Sentence count under the same splitter `truncate_summary` uses.
/// Trailing text without a terminator counts as one sentence.
pub fn count_sentences(text: &str) -> usize {
    let mut count = 0;
    let mut rest = text;
    while let Some(end) = first_sentence_end(rest) {
        count += 1;
        rest = &rest[end..];
    }
    if !rest.trim().is_empty() {
        count += 1;
    }
    count
}

/// Truncate a generated summary: first sentence, then at most the first
/// 20 whitespace-delimited words, in that order.
pub fn truncate_summary(text: &str) -> String {
    let first = match first_sentence_end(text) {
        Some(end) => &text[..end],
        None => text,
    };
    let words: Vec<&str> = first.split_whitespace().collect();
    if words.len() <= 20 {
        first.trim().to_string()
    } else {
        words[..20].join(" ")
    }
}

// ---------------------------------------------------------------------------
// ROUGE
// ---------------------------------------------------------------------------

/// Clipped unigram overlap divided by reference unigram count.
/// An empty reference scores 0.
pub fn rouge1_recall(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if refr.is_empty() {
        return 0.0;
    }
    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for t in &cand {
        *cand_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &refr {
        *ref_counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut clipped = 0usize;
    for (tok, &rc) in &ref_counts {
        let cc = cand_counts.get(tok).copied().unwrap_or(0);
        clipped += rc.min(cc);
    }
    clipped as f64 / refr.len() as f64
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut table = vec![0usize; (a.len() + 1) * (b.len() + 1)];
    let cols = b.len() + 1;
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i * cols + j] = if a[i - 1] == b[j - 1] {
                table[(i - 1) * cols + j - 1] + 1
            } else {
                table[(i - 1) * cols + j].max(table[i * cols + j - 1])
            };
        }
    }
    table[a.len() * cols + b.len()]
}

/// Longest common subsequence length divided by reference token count.
pub fn rougel_recall(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if refr.is_empty() {
        return 0.0;
    }
    lcs_len(&cand, &refr) as f64 / refr.len() as f64
}

/// Truncate the candidate, score against every reference, and average.
pub fn score_candidate(candidate: &str, refs: &ReferenceSet) -> RougeScore {
    let truncated = truncate_summary(candidate);
    let k = refs.summaries.len() as f64;
    let mut score = RougeScore::default();
    for r in &refs.summaries {
        score.r1_recall += rouge1_recall(&truncated, r);
        score.rl_recall += rougel_recall(&truncated, r);
    }
    score.r1_recall /= k;
    score.rl_recall /= k;
    score
}

fn record_for(id: &str, candidate: &str, refs: &ReferenceSet) -> ExampleRecord {
    let truncated = truncate_summary(candidate);
    ExampleRecord {
        id: id.to_string(),
        rouge: score_candidate(candidate, refs),
        words: truncated.split_whitespace().count(),
        raw_words: candidate.split_whitespace().count(),
        sentences: count_sentences(candidate),
        candidate: candidate.to_string(),
    }
}

/// Score a set of (story id, candidate) pairs against references.
/// Every candidate id must have a reference set.
pub fn score_candidates(
    candidates: &[(String, String)],
    refs: &HashMap<String, ReferenceSet>,
) -> Result<EvalReport> {
    let mut examples = Vec::with_capacity(candidates.len());
    for (id, cand) in candidates {
        let r = refs
            .get(id)
            .ok_or_else(|| Error::Data(format!("no references for story id `{id}`")))?;
        examples.push(record_for(id, cand, r));
    }
    Ok(EvalReport::from_examples(examples))
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Fixed-index extractive baseline: sentence `i` (1-based) of each story
/// is the candidate, run through the same truncation/scoring pipeline.
pub fn extract_baseline(
    stories: &[Story],
    refs: &HashMap<String, ReferenceSet>,
    i: usize,
) -> Result<EvalReport> {
    if i == 0 {
        return Err(Error::Config("sentence index is 1-based".into()));
    }
    let mut candidates = Vec::with_capacity(stories.len());
    for story in stories {
        let sentence = story.sentences.get(i - 1).ok_or_else(|| {
            Error::Data(format!(
                "story `{}` has {} sentences, index {} out of range",
                story.id,
                story.sentences.len(),
                i
            ))
        })?;
        candidates.push((story.id.clone(), sentence.clone()));
    }
    score_candidates(&candidates, refs)
}

/// Per story, the sentence with the highest reference-averaged ROUGE-1
/// recall (ties broken by lowest index). Reports both metrics of the
/// chosen sentence.
pub fn extract_oracle(
    stories: &[Story],
    refs: &HashMap<String, ReferenceSet>,
) -> Result<EvalReport> {
    let mut candidates = Vec::with_capacity(stories.len());
    for story in stories {
        let r = refs
            .get(&story.id)
            .ok_or_else(|| Error::Data(format!("no references for story id `{}`", story.id)))?;
        let mut best: Option<(f64, &String)> = None;
        for sentence in &story.sentences {
            let s = score_candidate(sentence, r);
            if best.is_none() || s.r1_recall > best.as_ref().unwrap().0 {
                best = Some((s.r1_recall, sentence));
            }
        }
        let (_, chosen) = best.expect("story has at least one sentence");
        candidates.push((story.id.clone(), chosen.clone()));
    }
    score_candidates(&candidates, refs)
}

/// Human performance bounds. For each example, every ordered pair of
/// distinct reference summaries is scored (candidate side truncated);
/// the per-example mean and per-metric max over pairs are then averaged
/// over examples.
pub fn human_bounds(refs: &HashMap<String, ReferenceSet>) -> Result<(RougeScore, RougeScore)> {
    let mut ids: Vec<&String> = refs.keys().collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data("no reference sets".into()));
    }
    let mut avg = RougeScore::default();
    let mut max = RougeScore::default();
    for id in &ids {
        let set = &refs[*id];
        let k = set.summaries.len();
        if k < 2 {
            return Err(Error::Data(format!(
                "need at least 2 references per example for human bounds, story `{id}` has {k}"
            )));
        }
        let mut pair_avg = RougeScore::default();
        let mut pair_max = RougeScore::default();
        let mut pairs = 0.0;
        for a in 0..k {
            let cand = truncate_summary(&set.summaries[a]);
            for b in 0..k {
                if a == b {
                    continue;
                }
                let r1 = rouge1_recall(&cand, &set.summaries[b]);
                let rl = rougel_recall(&cand, &set.summaries[b]);
                pair_avg.r1_recall += r1;
                pair_avg.rl_recall += rl;
                pair_max.r1_recall = pair_max.r1_recall.max(r1);
                pair_max.rl_recall = pair_max.rl_recall.max(rl);
                pairs += 1.0;
            }
        }
        avg.r1_recall += pair_avg.r1_recall / pairs;
        avg.rl_recall += pair_avg.rl_recall / pairs;
        max.r1_recall += pair_max.r1_recall;
        max.rl_recall += pair_max.rl_recall;
    }
    let n = ids.len() as f64;
    avg.r1_recall /= n;
    avg.rl_recall /= n;
    max.r1_recall /= n;
    max.rl_recall /= n;
    Ok((avg, max))
}

// ---------------------------------------------------------------------------
// Model evaluation and latent export
// ---------------------------------------------------------------------------

/// Generate a summary for one story: encode the clean paragraph, decode
/// with the sentence prompt, detokenize.
pub fn summarize_story(
    params: &Params,
    config: &ModelConfig,
    vocab: &Vocab,
    story: &Story,
) -> Result<String> {
    let ids = vocab.encode_paragraph(&story.sentences);
    let z = encode(params, config, &ids)?;
    let out = decode_greedy(params, config, &z, DecodePrompt::Sentence);
    vocab.decode_tokens(&out)
}

/// Summarize every story and score against references.
pub fn evaluate_model(
    params: &Params,
    config: &ModelConfig,
    vocab: &Vocab,
    stories: &[Story],
    refs: &HashMap<String, ReferenceSet>,
) -> Result<EvalReport> {
    let mut candidates = Vec::with_capacity(stories.len());
    for story in stories {
        candidates.push((story.id.clone(), summarize_story(params, config, vocab, story)?));
    }
    score_candidates(&candidates, refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    Sentence,
    Paragraph,
}

impl LatentKind {
    pub fn tag(self) -> &'static str {
        match self {
            LatentKind::Sentence => "S",
            LatentKind::Paragraph => "P",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentRecord {
    pub story_id: String,
    pub kind: LatentKind,
    pub z: Array1<f64>,
}

/// Encode a seeded sample of stories, emitting one paragraph record and
/// one record per sentence for each sampled story.
pub fn export_latents(
    params: &Params,
    config: &ModelConfig,
    vocab: &Vocab,
    stories: &[Story],
    sample_size: usize,
    seed: u64,
) -> Result<Vec<LatentRecord>> {
    if sample_size > stories.len() {
        return Err(Error::Data(format!(
            "sample size {} exceeds available stories {}",
            sample_size,
            stories.len()
        )));
    }
    let mut indices: Vec<usize> = (0..stories.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(sample_size);
    indices.sort_unstable();

    let mut records = Vec::new();
    for &idx in &indices {
        let story = &stories[idx];
        let p_ids = vocab.encode_paragraph(&story.sentences);
        records.push(LatentRecord {
            story_id: story.id.clone(),
            kind: LatentKind::Paragraph,
            z: encode(params, config, &p_ids)?.z,
        });
        for sentence in &story.sentences {
            let s_ids = vocab.encode_sentence(sentence);
            records.push(LatentRecord {
                story_id: story.id.clone(),
                kind: LatentKind::Sentence,
                z: encode(params, config, &s_ids)?.z,
            });
        }
    }
    Ok(records)
}

/// Held-out accuracy of a logistic separator between sentence and
/// paragraph latents. Roughly 0.5 means the two kinds share the space;
/// close to 1.0 means they occupy disjoint regions.
pub fn segregation_probe(records: &[LatentRecord]) -> Result<f64> {
    let sents: Vec<&LatentRecord> = records
        .iter()
        .filter(|r| r.kind == LatentKind::Sentence)
        .collect();
    let paras: Vec<&LatentRecord> = records
        .iter()
        .filter(|r| r.kind == LatentKind::Paragraph)
        .collect();
    if sents.is_empty() || paras.is_empty() {
        return Err(Error::Data(
            "segregation probe needs both sentence and paragraph records".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eb_a11);
    let n = sents.len().min(paras.len());
    let pick = |records: &[&LatentRecord], rng: &mut ChaCha8Rng| -> Vec<Array1<f64>> {
        let mut idx: Vec<usize> = (0..records.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.iter().map(|&i| records[i].z.clone()).collect()
    };
    let sents = pick(&sents, &mut rng);
    let paras = pick(&paras, &mut rng);

    let mut data: Vec<(Array1<f64>, f64)> = Vec::with_capacity(2 * n);
    data.extend(sents.into_iter().map(|z| (z, 0.0)));
    data.extend(paras.into_iter().map(|z| (z, 1.0)));
    data.shuffle(&mut rng);

    let train_n = ((data.len() as f64) * 0.7).floor() as usize;
    let train_n = train_n.clamp(1, data.len() - 1);
    let (train, test) = data.split_at(train_n);

    let dim = train[0].0.len();
    let mut mean = Array1::<f64>::zeros(dim);
    for (z, _) in train {
        mean += z;
    }
    mean /= train.len() as f64;
    let mut var = Array1::<f64>::zeros(dim);
    for (z, _) in train {
        var += &(z - &mean).mapv(|v| v * v);
    }
    var /= train.len() as f64;
    let std = var.mapv(|v| v.sqrt().max(1e-6));
    let norm = |z: &Array1<f64>| (z - &mean) / &std;

    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0f64;
    let lr = 1.0;
    for _ in 0..500 {
        let mut gw = Array1::<f64>::zeros(dim);
        let mut gb = 0.0;
        for (z, y) in train {
            let x = norm(z);
            let p = 1.0 / (1.0 + (-(w.dot(&x) + b)).exp());
            let d = p - y;
            gw += &(&x * d);
            gb += d;
        }
        let inv = 1.0 / train.len() as f64;
        w -= &(gw * (lr * inv));
        b -= gb * lr * inv;
    }

    let mut correct = 0usize;
    for (z, y) in test {
        let x = norm(z);
        let p = 1.0 / (1.0 + (-(w.dot(&x) + b)).exp());
        if (p >= 0.5) == (*y >= 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

// ---------------------------------------------------------------------------
// Report and latent file IO
// ---------------------------------------------------------------------------

fn pct(x: f64) -> f64 {
    (x * 1000.0).round() / 10.0
}

/// Write an evaluation report as JSON lines: one row per example and a
/// final summary row. Metric values are scaled by 100 with one decimal.
pub fn write_report(path: &Path, label: &str, report: &EvalReport) -> Result<()> {
    let mut out = String::new();
    for ex in &report.examples {
        let row = serde_json::json!({
            "type": "example",
            "id": ex.id,
            "rouge1": pct(ex.rouge.r1_recall),
            "rougeL": pct(ex.rouge.rl_recall),
            "words": ex.words,
            "raw_words": ex.raw_words,
            "sentences": ex.sentences,
            "candidate": ex.candidate,
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    let summary = serde_json::json!({
        "type": "summary",
        "label": label,
        "examples": report.examples.len(),
        "rouge1": pct(report.mean.r1_recall),
        "rougeL": pct(report.mean.rl_recall),
        "mean_words": report.mean_words,
        "mean_raw_words": report.mean_raw_words,
        "mean_sentences": report.mean_sentences,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Latent export format: TSV with header `id kind z0..z{d-1}`, kind in
/// {S, P}, floats with 9 significant digits.
pub fn write_latents(path: &Path, records: &[LatentRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let dim = records.first().map(|r| r.z.len()).unwrap_or(0);
    let mut header = String::from("id\tkind");
    for i in 0..dim {
        header.push_str(&format!("\tz{i}"));
    }
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for rec in records {
        let mut line = format!("{}\t{}", rec.story_id, rec.kind.tag());
        for v in rec.z.iter() {
            line.push_str(&format!("\t{:.8e}", v));
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty latent file", path.display())))?;
    let dim = header.split('\t').count().saturating_sub(2);
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 2 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row: i + 2,
                message: format!("expected {} fields, got {}", dim + 2, fields.len()),
            });
        }
        let kind = match fields[1] {
            "S" => LatentKind::Sentence,
            "P" => LatentKind::Paragraph,
            other => {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    row: i + 2,
                    message: format!("unknown kind `{other}`"),
                })
            }
        };
        let mut z = Array1::<f64>::zeros(dim);
        for (j, f) in fields[2..].iter().enumerate() {
            z[j] = f.parse::<f64>().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                row: i + 2,
                message: format!("bad float `{f}`"),
            })?;
        }
        records.push(LatentRecord {
            story_id: fields[0].to_string(),
            kind,
            z,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    // Independent clipped-count oracle over token multisets.
    fn rouge1_oracle(cand: &[String], refr: &[String]) -> f64 {
        if refr.is_empty() {
            return 0.0;
        }
        let mut used = vec![false; cand.len()];
        let mut hits = 0usize;
        for r in refr {
            for (i, c) in cand.iter().enumerate() {
                if !used[i] && c == r {
                    used[i] = true;
                    hits += 1;
                    break;
                }
            }
        }
        hits as f64 / refr.len() as f64
    }

    // Exponential-enumeration LCS oracle: longest subsequence of `cand`
    // that is also a subsequence of `refr`.
    fn lcs_oracle(cand: &[String], refr: &[String]) -> usize {
        fn is_subseq(sub: &[&String], of: &[String]) -> bool {
            let mut it = of.iter();
            sub.iter().all(|s| it.any(|o| o == *s))
        }
        let mut best = 0usize;
        for mask in 0u32..(1u32 << cand.len()) {
            let picked: Vec<&String> = (0..cand.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &cand[i])
                .collect();
            if picked.len() > best && is_subseq(&picked, refr) {
                best = picked.len();
            }
        }
        best
    }

    #[test]
    fn tokenizer_keeps_intra_word_apostrophes() {
        assert_eq!(tokenize("Wasn't it GREAT?"), vec!["wasn't", "it", "great"]);
        assert_eq!(tokenize("the cat's -- toy"), vec!["the", "cat's", "toy"]);
        assert_eq!(tokenize("'quoted'"), vec!["quoted"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn truncation_takes_first_sentence_then_word_cap() {
        assert_eq!(truncate_summary("A b. C d."), "A b.");
        assert_eq!(truncate_summary("He paid $3.50 for it. Then left."), "He paid $3.50 for it.");
        let long = (0..25).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let truncated = truncate_summary(&long);
        assert_eq!(truncated.split_whitespace().count(), 20);
        assert_eq!(truncate_summary(""), "");
        assert_eq!(truncate_summary("No terminator here"), "No terminator here");
    }

    #[test]
    fn sentence_counting_matches_splitter() {
        assert_eq!(count_sentences("A b. C d."), 2);
        assert_eq!(count_sentences("A b. C d. trailing"), 3);
        assert_eq!(count_sentences(""), 0);
        assert_eq!(count_sentences("One sentence only"), 1);
        assert_eq!(count_sentences("Mr. Smith went home."), 2);
    }

    #[test]
    fn rouge1_clipped_counts() {
        // Oracle-computed: candidate {the,cat,sat} vs reference counts
        // {the:2,cat:1,sat:1,on:1,mat:1} clips to 3 of 6.
        let got = rouge1_recall("the cat sat", "the cat sat on the mat");
        let want = rouge1_oracle(&tokenize("the cat sat"), &tokenize("the cat sat on the mat"));
        assert_eq!(got, want);
        assert!((got - 0.5).abs() < 1e-12);

        assert_eq!(rouge1_recall("same text", "same text"), 1.0);
        assert_eq!(rouge1_recall("aa bb", "cc dd"), 0.0);
        assert_eq!(rouge1_recall("anything", ""), 0.0);
    }

    #[test]
    fn rougel_lcs_ratio() {
        let got = rougel_recall("a c d", "a b c d");
        assert!((got - 0.75).abs() < 1e-12);
        assert_eq!(lcs_oracle(&tokenize("a c d"), &tokenize("a b c d")), 3);
        assert_eq!(rougel_recall("x y", "x y"), 1.0);
        assert_eq!(rougel_recall("", "x y"), 0.0);
    }

    #[test]
    fn rouge_matches_oracles_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let alphabet = ["a", "b", "c", "d", "e"];
        for _ in 0..300 {
            let mk = |rng: &mut ChaCha8Rng| {
                let len = rng.gen_range(0..=10);
                (0..len)
                    .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let cand = mk(&mut rng);
            let refr = mk(&mut rng);
            let (ct, rt) = (tokenize(&cand), tokenize(&refr));
            assert_eq!(rouge1_recall(&cand, &refr), rouge1_oracle(&ct, &rt));
            let want_l = if rt.is_empty() {
                0.0
            } else {
                lcs_oracle(&ct, &rt) as f64 / rt.len() as f64
            };
            assert_eq!(rougel_recall(&cand, &refr), want_l);
        }
    }

    fn refset(id: &str, summaries: &[&str]) -> ReferenceSet {
        ReferenceSet {
            story_id: id.to_string(),
            summaries: summaries.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn score_candidate_averages_over_references() {
        let refs = refset("s", &["a b c", "a b c", "a b c"]);
        let uniform = score_candidate("a b c", &refs);
        assert!((uniform.r1_recall - 1.0).abs() < 1e-12);
        assert!((uniform.rl_recall - 1.0).abs() < 1e-12);

        let refs = refset("s", &["a b", "c d", "e f"]);
        let s = score_candidate("a b", &refs);
        let want = (rouge1_recall("a b", "a b") + rouge1_recall("a b", "c d") + rouge1_recall("a b", "e f")) / 3.0;
        assert!((s.r1_recall - want).abs() < 1e-12);

        let empty = score_candidate("", &refs);
        assert_eq!(empty.r1_recall, 0.0);
        assert_eq!(empty.rl_recall, 0.0);
    }

    fn story(id: &str, sentences: &[&str]) -> Story {
        Story {
            id: id.to_string(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn oracle_dominates_fixed_index() {
        let stories = vec![
            story("s1", &["Tom ran home.", "He ate pie.", "Rain fell hard.", "Dogs barked.", "Night came."]),
            story("s2", &["A builds.", "B paints.", "C sings loud.", "D naps.", "E reads books."]),
        ];
        let mut refs = HashMap::new();
        refs.insert("s1".to_string(), refset("s1", &["Tom ate pie at home.", "rain fell while dogs barked", "night came for tom"]));
        refs.insert("s2".to_string(), refset("s2", &["C sings loud.", "B paints and D naps.", "E reads."]));

        let oracle = extract_oracle(&stories, &refs).unwrap();
        for i in 1..=5 {
            let base = extract_baseline(&stories, &refs, i).unwrap();
            assert!(oracle.mean.r1_recall >= base.mean.r1_recall - 1e-12);
            for (o, b) in oracle.examples.iter().zip(base.examples.iter()) {
                assert!(o.rouge.r1_recall >= b.rouge.r1_recall - 1e-12);
            }
        }
        assert!(extract_baseline(&stories, &refs, 6).is_err());
    }

    #[test]
    fn oracle_breaks_ties_at_lowest_index() {
        let stories = vec![story("s", &["x y.", "x y.", "z w."])];
        let mut refs = HashMap::new();
        refs.insert("s".to_string(), refset("s", &["unrelated words", "other words"]));
        // All sentences score 0; the first must be chosen.
        let report = extract_oracle(&stories, &refs).unwrap();
        assert_eq!(report.examples[0].candidate, "x y.");
    }

    #[test]
    fn human_bounds_max_at_least_average() {
        let mut refs = HashMap::new();
        refs.insert("a".into(), refset("a", &["the dog ran.", "a dog ran fast.", "the dog sprinted."]));
        refs.insert("b".into(), refset("b", &["cats sleep.", "the cat naps.", "cats nap all day."]));
        let (avg, max) = human_bounds(&refs).unwrap();
        assert!(max.r1_recall >= avg.r1_recall);
        assert!(max.rl_recall >= avg.rl_recall);

        let mut identical = HashMap::new();
        identical.insert("c".into(), refset("c", &["same text.", "same text.", "same text."]));
        let (avg, max) = human_bounds(&identical).unwrap();
        assert!((avg.r1_recall - 1.0).abs() < 1e-12);
        assert!((max.r1_recall - 1.0).abs() < 1e-12);

        let mut single = HashMap::new();
        single.insert("d".into(), refset("d", &["only one"]));
        assert!(human_bounds(&single).is_err());
    }

    fn gaussian_records(n: usize, offset: f64, seed: u64) -> Vec<LatentRecord> {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut records = Vec::new();
        for i in 0..n {
            for (kind, shift) in [(LatentKind::Sentence, 0.0), (LatentKind::Paragraph, offset)] {
                let z = Array1::from_iter((0..8).map(|_| normal.sample(&mut rng) + shift));
                records.push(LatentRecord {
                    story_id: format!("r{i}"),
                    kind,
                    z,
                });
            }
        }
        records
    }

    #[test]
    fn probe_separates_distant_clusters() {
        let records = gaussian_records(200, 8.0, 3);
        let acc = segregation_probe(&records).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn probe_near_chance_on_identical_distributions() {
        let records = gaussian_records(400, 0.0, 4);
        let acc = segregation_probe(&records).unwrap();
        assert!((acc - 0.5).abs() < 0.07, "accuracy {acc}");
    }

    #[test]
    fn probe_rejects_single_kind() {
        let mut records = gaussian_records(10, 1.0, 5);
        records.retain(|r| r.kind == LatentKind::Sentence);
        assert!(segregation_probe(&records).is_err());
    }

    #[test]
    fn latent_file_round_trip() {
        let records = gaussian_records(3, 2.0, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latents.tsv");
        write_latents(&path, &records).unwrap();
        let back = read_latents(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(back.iter()) {
            assert_eq!(a.story_id, b.story_id);
            assert_eq!(a.kind.tag(), b.kind.tag());
            for (x, y) in a.z.iter().zip(b.z.iter()) {
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }
    }
}
