//! Story and reference ingestion, deterministic corpus splitting, and the
//! split-manifest files written by `prepare`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An identified paragraph of ordered sentences. Five for the story
/// corpus this tool targets, at least two in general.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub id: String,
    pub sentences: Vec<String>,
}

/// Disjoint train/valid/test partition of a corpus.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Story>,
    pub valid: Vec<Story>,
    pub test: Vec<Story>,
}

/// Reference summaries for one story (three per story in the released
/// evaluation sets).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    pub story_id: String,
    pub summaries: Vec<String>,
}

/// On-disk corpus layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// CSV with header `storyid,storytitle,sentence1..sentence5`.
    RocCsv,
    /// Headerless TSV `id<TAB>s1<TAB>..<TAB>s5`.
    Tsv,
}

impl CorpusFormat {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "roc_csv" => Ok(CorpusFormat::RocCsv),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::Config(format!(
                "unknown corpus format `{other}` (expected roc_csv or tsv)"
            ))),
        }
    }
}

const SENTENCES_PER_STORY: usize = 5;

fn validate_and_push(
    stories: &mut Vec<Story>,
    seen: &mut HashSet<String>,
    path: &Path,
    row: usize,
    id: &str,
    sentences: Vec<String>,
) -> Result<()> {
    if id.is_empty() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message: "empty story id".into(),
        });
    }
    if !seen.insert(id.to_string()) {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message: format!("duplicate story id `{id}`"),
        });
    }
    let mut trimmed = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.into_iter().enumerate() {
        let t = s.trim().to_string();
        if t.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                message: format!("sentence {} is empty", i + 1),
            });
        }
        trimmed.push(t);
    }
    stories.push(Story {
        id: id.to_string(),
        sentences: trimmed,
    });
    Ok(())
}

/// Load stories from `path` in the declared format. Ids and file order
/// are preserved; malformed rows are reported with their row number.
pub fn load_stories(path: &Path, format: CorpusFormat) -> Result<Vec<Story>> {
    let mut stories = Vec::new();
    let mut seen = HashSet::new();
    match format {
        CorpusFormat::RocCsv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .flexible(true)
                .from_path(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for (i, record) in reader.records().enumerate() {
                let row = i + 2; // 1-based, after header
                let record = record.map_err(|e| Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: e.to_string(),
                })?;
                if record.len() != SENTENCES_PER_STORY + 2 {
                    return Err(Error::MalformedRow {
                        path: path.to_path_buf(),
                        row,
                        message: format!(
                            "wrong field count: expected {}, got {}",
                            SENTENCES_PER_STORY + 2,
                            record.len()
                        ),
                    });
                }
                // Column 1 is the story title, unused here.
                let sentences = (2..record.len()).map(|j| record[j].to_string()).collect();
                validate_and_push(&mut stories, &mut seen, path, row, &record[0], sentences)?;
            }
        }
        CorpusFormat::Tsv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .delimiter(b'\t')
                .quoting(false)
                .flexible(true)
                .from_path(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for (i, record) in reader.records().enumerate() {
                let row = i + 1;
                let record = record.map_err(|e| Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: e.to_string(),
                })?;
                if record.len() != SENTENCES_PER_STORY + 1 {
                    return Err(Error::MalformedRow {
                        path: path.to_path_buf(),
                        row,
                        message: format!(
                            "wrong field count: expected {}, got {}",
                            SENTENCES_PER_STORY + 1,
                            record.len()
                        ),
                    });
                }
                let sentences = (1..record.len()).map(|j| record[j].to_string()).collect();
                validate_and_push(&mut stories, &mut seen, path, row, &record[0], sentences)?;
            }
        }
    }
    Ok(stories)
}

/// Serialize stories to `path` so that `load_stories` round-trips.
pub fn save_stories(path: &Path, stories: &[Story], format: CorpusFormat) -> Result<()> {
    match format {
        CorpusFormat::RocCsv => {
            let mut writer = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let mut header = vec!["storyid".to_string(), "storytitle".to_string()];
            for i in 1..=SENTENCES_PER_STORY {
                header.push(format!("sentence{i}"));
            }
            writer
                .write_record(&header)
                .and_then(|_| {
                    for story in stories {
                        let mut rec = vec![story.id.clone(), String::new()];
                        rec.extend(story.sentences.iter().cloned());
                        writer.write_record(&rec)?;
                    }
                    writer.flush()?;
                    Ok(())
                })
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        CorpusFormat::Tsv => {
            let mut out = String::new();
            for story in stories {
                for s in &story.sentences {
                    if s.contains('\t') {
                        return Err(Error::Data(format!(
                            "story `{}` contains a tab, not representable as TSV",
                            story.id
                        )));
                    }
                }
                out.push_str(&story.id);
                for s in &story.sentences {
                    out.push('\t');
                    out.push_str(s);
                }
                out.push('\n');
            }
            std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Split ratios for train/valid/test, all positive and summing to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.95,
            valid: 0.025,
            test: 0.025,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.valid <= 0.0 || self.test <= 0.0 {
            return Err(Error::Config("split ratios must all be positive".into()));
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Deterministic shuffle-then-slice split. The shuffle key is the seed
/// applied to the id-sorted corpus, so the result does not depend on
/// input row order. Train and valid counts are floored, the remainder
/// goes to test; every split keeps at least one story.
pub fn split_corpus(stories: &[Story], ratios: SplitRatios, seed: u64) -> Result<CorpusSplit> {
    ratios.validate()?;
    if stories.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 stories to populate all splits, got {}",
            stories.len()
        )));
    }
    let mut sorted: Vec<&Story> = stories.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Data("duplicate story ids in corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let n = sorted.len();
    let n_train = ((n as f64) * ratios.train).floor() as usize;
    let n_valid = ((n as f64) * ratios.valid).floor() as usize;
    let n_train = n_train.min(n.saturating_sub(2)).max(1);
    let n_valid = n_valid.min(n - n_train - 1).max(1);

    let take = |slice: &[&Story]| slice.iter().map(|s| (*s).clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: take(&sorted[..n_train]),
        valid: take(&sorted[n_train..n_train + n_valid]),
        test: take(&sorted[n_train + n_valid..]),
    })
}

/// Load reference summaries from a CSV with header
/// `storyid,summary1..summaryK`.
pub fn load_references(path: &Path) -> Result<HashMap<String, ReferenceSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let k = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .len()
        .saturating_sub(1);
    if k == 0 {
        return Err(Error::Data(format!(
            "{}: header must name at least one summary column",
            path.display()
        )));
    }
    let mut refs = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        if record.len() != k + 1 {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                message: format!("expected {} fields, got {}", k + 1, record.len()),
            });
        }
        let id = record[0].to_string();
        let mut summaries = Vec::with_capacity(k);
        for j in 1..=k {
            let s = record[j].trim().to_string();
            if s.is_empty() {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: format!("summary {} is empty", j),
                });
            }
            summaries.push(s);
        }
        if refs
            .insert(
                id.clone(),
                ReferenceSet {
                    story_id: id.clone(),
                    summaries,
                },
            )
            .is_some()
        {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate story id `{id}`"),
            });
        }
    }
    Ok(refs)
}

/// Write reference sets with the standard header.
pub fn save_references(path: &Path, refs: &[ReferenceSet]) -> Result<()> {
    let k = refs.first().map(|r| r.summaries.len()).unwrap_or(3);
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut header = vec!["storyid".to_string()];
    for i in 1..=k {
        header.push(format!("summary{i}"));
    }
    writer
        .write_record(&header)
        .and_then(|_| {
            for r in refs {
                let mut rec = vec![r.story_id.clone()];
                rec.extend(r.summaries.iter().cloned());
                writer.write_record(&rec)?;
            }
            writer.flush()?;
            Ok(())
        })
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// One id per line.
pub fn write_manifest(path: &Path, stories: &[Story]) -> Result<()> {
    let mut out = String::new();
    for s in stories {
        out.push_str(&s.id);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Select the stories named by a manifest, in manifest order.
pub fn select_by_manifest(path: &Path, stories: &[Story]) -> Result<Vec<Story>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let by_id: HashMap<&str, &Story> = stories.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut selected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let story = by_id.get(id).ok_or_else(|| Error::MalformedRow {
            path: path.to_path_buf(),
            row: i + 1,
            message: format!("manifest id `{id}` not found in corpus"),
        })?;
        selected.push((*story).clone());
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus(n: usize) -> Vec<Story> {
        (0..n)
            .map(|i| Story {
                id: format!("s{i:04}"),
                sentences: (0..5).map(|j| format!("Sentence {j} of story {i}.")).collect(),
            })
            .collect()
    }

    #[test]
    fn tsv_round_trip_preserves_stories() {
        let stories = tiny_corpus(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stories.tsv");
        save_stories(&path, &stories, CorpusFormat::Tsv).unwrap();
        let back = load_stories(&path, CorpusFormat::Tsv).unwrap();
        assert_eq!(stories, back);
    }

    #[test]
    fn csv_round_trip_with_quoting() {
        let mut stories = tiny_corpus(3);
        stories[1].sentences[2] = "He said, \"wait, really?\" and left.".to_string();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stories.csv");
        save_stories(&path, &stories, CorpusFormat::RocCsv).unwrap();
        let back = load_stories(&path, CorpusFormat::RocCsv).unwrap();
        assert_eq!(stories, back);
    }

    #[test]
    fn load_reports_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");

        std::fs::write(&path, "id1\ta.\tb.\tc.\td.\n").unwrap();
        match load_stories(&path, CorpusFormat::Tsv) {
            Err(Error::MalformedRow { row, message, .. }) => {
                assert_eq!(row, 1);
                assert!(message.contains("wrong field count"), "{message}");
            }
            other => panic!("expected malformed row, got {other:?}"),
        }

        std::fs::write(&path, "id1\ta.\tb.\tc.\td.\te.\nid1\ta.\tb.\tc.\td.\te.\n").unwrap();
        match load_stories(&path, CorpusFormat::Tsv) {
            Err(Error::MalformedRow { row, message, .. }) => {
                assert_eq!(row, 2);
                assert!(message.contains("duplicate"), "{message}");
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }

        std::fs::write(&path, "id1\ta.\t \tc.\td.\te.\n").unwrap();
        match load_stories(&path, CorpusFormat::Tsv) {
            Err(Error::MalformedRow { message, .. }) => {
                assert!(message.contains("empty"), "{message}");
            }
            other => panic!("expected empty sentence error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        std::fs::write(&path, "").unwrap();
        assert!(load_stories(&path, CorpusFormat::Tsv).unwrap().is_empty());
    }

    #[test]
    fn split_is_a_partition_with_floor_rounding() {
        let stories = tiny_corpus(100);
        let ratios = SplitRatios {
            train: 0.95,
            valid: 0.025,
            test: 0.025,
        };
        let split = split_corpus(&stories, ratios, 7).unwrap();
        assert_eq!(split.train.len(), 95);
        assert_eq!(split.valid.len(), 2);
        assert_eq!(split.test.len(), 3);

        let mut ids: Vec<&str> = split
            .train
            .iter()
            .chain(&split.valid)
            .chain(&split.test)
            .map(|s| s.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn split_rejects_bad_ratios_and_tiny_corpora() {
        let stories = tiny_corpus(10);
        let bad = SplitRatios {
            train: 1.1,
            valid: 0.0,
            test: 0.0,
        };
        assert!(split_corpus(&stories, bad, 1).is_err());
        assert!(split_corpus(&tiny_corpus(2), SplitRatios::default(), 1).is_err());
    }

    #[test]
    fn split_is_seed_deterministic_and_order_insensitive() {
        let stories = tiny_corpus(50);
        let ratios = SplitRatios::default();
        let a = split_corpus(&stories, ratios, 42).unwrap();
        let b = split_corpus(&stories, ratios, 42).unwrap();
        let ids = |s: &[Story]| s.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.valid), ids(&b.valid));
        assert_eq!(ids(&a.test), ids(&b.test));

        let mut reversed = stories.clone();
        reversed.reverse();
        let c = split_corpus(&reversed, ratios, 42).unwrap();
        assert_eq!(ids(&a.train), ids(&c.train));
        assert_eq!(ids(&a.test), ids(&c.test));

        let d = split_corpus(&stories, ratios, 43).unwrap();
        assert_ne!(ids(&a.train), ids(&d.train));
    }

    #[test]
    fn references_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refs.csv");
        let refs = vec![
            ReferenceSet {
                story_id: "id1".into(),
                summaries: vec!["s1".into(), "s2, with comma".into(), "s3".into()],
            },
            ReferenceSet {
                story_id: "id2".into(),
                summaries: vec!["a".into(), "b".into(), "c".into()],
            },
        ];
        save_references(&path, &refs).unwrap();
        let map = load_references(&path).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["id1"].summaries[1], "s2, with comma");

        std::fs::write(&path, "storyid,summary1,summary2\nid1,a,b\nid1,c,d\n").unwrap();
        assert!(load_references(&path).is_err());
        std::fs::write(&path, "storyid,summary1,summary2\nid1,a,\n").unwrap();
        assert!(load_references(&path).is_err());
    }

    #[test]
    fn manifest_selection_preserves_order() {
        let stories = tiny_corpus(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.txt");
        write_manifest(&path, &[stories[3].clone(), stories[1].clone()]).unwrap();
        let picked = select_by_manifest(&path, &stories).unwrap();
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].id, "s0003");
        assert_eq!(picked[1].id, "s0001");
    }
}
