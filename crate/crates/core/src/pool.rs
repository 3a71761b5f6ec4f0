//! The labeled/unlabeled corpus and its line-delimited JSON format.
//!
//! One record per line:
//!
//! ```text
//! {"id": 0, "tokens": [5, 7], "label": 3, "split": "train"}
//! {"id": 1, "tokens": [2, 9, 4], "label": [11, 12], "split": "test"}
//! ```
//!
//! Class labels are integers; sequence references are integer arrays.
//! Records are re-indexed to `0..n` in file order and the original ids are
//! kept in a side map.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    SequenceGeneration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Sequence(Vec<Token>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolItem {
    pub id: usize,
    pub tokens: Vec<Token>,
    pub label: Label,
    pub split: Split,
}

/// How to interpret and validate a pool file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolSchema {
    pub task_kind: Option<TaskKind>,
    /// Inferred as `max token + 1` when absent.
    pub vocab_size: Option<usize>,
    /// Classification only. Inferred as `max label + 1` when absent.
    pub num_classes: Option<usize>,
}

impl PoolSchema {
    pub fn new(task_kind: TaskKind) -> Self {
        Self {
            task_kind: Some(task_kind),
            ..Self::default()
        }
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = Some(vocab_size);
        self
    }

    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = Some(num_classes);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    items: Vec<PoolItem>,
    original_ids: Vec<i64>,
    vocab_size: usize,
    task_kind: TaskKind,
    num_classes: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: i64,
    tokens: Vec<Token>,
    label: Label,
    split: Split,
}

impl Pool {
    /// Builds a pool from in-memory items. Item ids are reassigned to their
    /// position; the caller's ids become the original ids.
    pub fn new(
        task_kind: TaskKind,
        vocab_size: usize,
        num_classes: Option<usize>,
        items: Vec<PoolItem>,
    ) -> Result<Self> {
        let original_ids = items.iter().map(|it| it.id as i64).collect();
        let items = items
            .into_iter()
            .enumerate()
            .map(|(i, mut it)| {
                it.id = i;
                it
            })
            .collect();
        let pool = Self {
            items,
            original_ids,
            vocab_size,
            task_kind,
            num_classes: match task_kind {
                TaskKind::Classification => num_classes,
                TaskKind::SequenceGeneration => None,
            },
        };
        pool.validate()?;
        Ok(pool)
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        if self.task_kind == TaskKind::Classification {
            match self.num_classes {
                Some(c) if c >= 1 => {}
                _ => return Err(Error::invalid("classification pool needs num_classes >= 1")),
            }
        }
        let mut seen = HashSet::with_capacity(self.items.len());
        for (i, item) in self.items.iter().enumerate() {
            let line = i + 1;
            if !seen.insert(self.original_ids[i]) {
                return Err(parse_err(line, "duplicate id"));
            }
            check_item(item, self.vocab_size, self.task_kind, self.num_classes)
                .map_err(|m| parse_err(line, m))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[PoolItem] {
        &self.items
    }

    pub fn item(&self, id: usize) -> &PoolItem {
        &self.items[id]
    }

    pub fn tokens(&self, id: usize) -> &[Token] {
        &self.items[id].tokens
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn original_id(&self, id: usize) -> i64 {
        self.original_ids[id]
    }

    pub fn original_ids(&self) -> &[i64] {
        &self.original_ids
    }

    /// Position of the item whose file id is `original`.
    pub fn position_of(&self, original: i64) -> Option<usize> {
        self.original_ids.iter().position(|&o| o == original)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.items
            .iter()
            .filter(|it| it.split == split)
            .map(|it| it.id)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Test)
    }

    /// Oracle class label, `None` for sequence pools.
    pub fn class_label(&self, id: usize) -> Option<usize> {
        match self.items[id].label {
            Label::Class(c) => Some(c),
            Label::Sequence(_) => None,
        }
    }

    /// Oracle reference sequence, `None` for classification pools.
    pub fn reference(&self, id: usize) -> Option<&[Token]> {
        match &self.items[id].label {
            Label::Sequence(s) => Some(s),
            Label::Class(_) => None,
        }
    }

    pub fn class_labels(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&i| {
                self.class_label(i)
                    .ok_or_else(|| Error::capability("pool has no class labels"))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> Result<()> {
        for (item, &orig) in self.items.iter().zip(&self.original_ids) {
            let rec = Record {
                id: orig,
                tokens: item.tokens.clone(),
                label: item.label.clone(),
                split: item.split,
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn check_item(
    item: &PoolItem,
    vocab_size: usize,
    task: TaskKind,
    num_classes: Option<usize>,
) -> std::result::Result<(), String> {
    if item.tokens.is_empty() {
        return Err("empty token sequence".into());
    }
    if item.tokens.iter().any(|&t| t as usize >= vocab_size) {
        return Err("token out of range".into());
    }
    match (&item.label, task) {
        (Label::Class(c), TaskKind::Classification) => {
            if let Some(n) = num_classes {
                if *c >= n {
                    return Err(format!("label {c} out of range for {n} classes"));
                }
            }
        }
        (Label::Sequence(s), TaskKind::SequenceGeneration) => {
            if s.is_empty() {
                return Err("empty reference sequence".into());
            }
            if s.iter().any(|&t| t as usize >= vocab_size) {
                return Err("reference token out of range".into());
            }
        }
        (Label::Class(_), TaskKind::SequenceGeneration) => {
            return Err("class label in a sequence-generation pool".into())
        }
        (Label::Sequence(_), TaskKind::Classification) => {
            return Err("sequence label in a classification pool".into())
        }
    }
    Ok(())
}

pub fn load_pool(path: impl AsRef<Path>, schema: &PoolSchema) -> Result<Pool> {
    let file = File::open(path)?;
    read_pool(BufReader::new(file), schema)
}

/// Parses line-delimited pool records. Blank lines are skipped but still
/// counted for error line numbers.
pub fn read_pool<R: BufRead>(reader: R, schema: &PoolSchema) -> Result<Pool> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| parse_err(line_no, format!("malformed record ({e})")))?;
        records.push((line_no, rec));
    }
    if records.is_empty() {
        return Err(Error::invalid("pool file has no records"));
    }

    let task_kind = match schema.task_kind {
        Some(t) => t,
        None => match records[0].1.label {
            Label::Class(_) => TaskKind::Classification,
            Label::Sequence(_) => TaskKind::SequenceGeneration,
        },
    };

    let vocab_size = match schema.vocab_size {
        Some(v) => v,
        None => {
            let max_tok = records
                .iter()
                .flat_map(|(_, r)| {
                    let refs: &[Token] = match &r.label {
                        Label::Sequence(s) => s,
                        Label::Class(_) => &[],
                    };
                    r.tokens.iter().chain(refs)
                })
                .copied()
                .max()
                .unwrap_or(0);
            max_tok as usize + 1
        }
    };

    let num_classes = match task_kind {
        TaskKind::SequenceGeneration => None,
        TaskKind::Classification => match schema.num_classes {
            Some(c) => Some(c),
            None => {
                let max_label = records
                    .iter()
                    .filter_map(|(_, r)| match r.label {
                        Label::Class(c) => Some(c),
                        Label::Sequence(_) => None,
                    })
                    .max()
                    .unwrap_or(0);
                log::warn!(
                    "num_classes not given; inferred {} from the data",
                    max_label + 1
                );
                Some(max_label + 1)
            }
        },
    };

    let mut seen = HashSet::with_capacity(records.len());
    let mut items = Vec::with_capacity(records.len());
    let mut original_ids = Vec::with_capacity(records.len());
    for (pos, (line_no, rec)) in records.into_iter().enumerate() {
        if !seen.insert(rec.id) {
            return Err(parse_err(line_no, format!("duplicate id {}", rec.id)));
        }
        let item = PoolItem {
            id: pos,
            tokens: rec.tokens,
            label: rec.label,
            split: rec.split,
        };
        check_item(&item, vocab_size, task_kind, num_classes).map_err(|m| parse_err(line_no, m))?;
        original_ids.push(rec.id);
        items.push(item);
    }

    Ok(Pool {
        items,
        original_ids,
        vocab_size,
        task_kind,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, schema: PoolSchema) -> Result<Pool> {
        read_pool(text.as_bytes(), &schema)
    }

    #[test]
    fn maps_fields_directly() {
        let schema = PoolSchema::new(TaskKind::Classification)
            .with_vocab_size(10)
            .with_num_classes(4);
        let pool = parse(
            r#"{"id":0,"tokens":[5,7],"label":3,"split":"train"}"#,
            schema,
        )
        .unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.tokens(0), &[5, 7]);
        assert_eq!(pool.class_label(0), Some(3));
        assert_eq!(pool.item(0).split, Split::Train);
    }

    #[test]
    fn token_out_of_range_reports_line() {
        let schema = PoolSchema::new(TaskKind::Classification)
            .with_vocab_size(10)
            .with_num_classes(4);
        let err = parse(
            r#"{"id":0,"tokens":[5,99],"label":1,"split":"train"}"#,
            schema,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "token out of range at line 1");
    }

    #[test]
    fn rejects_duplicates_empty_and_malformed() {
        let schema = PoolSchema::new(TaskKind::Classification).with_num_classes(2);
        let dup = "{\"id\":3,\"tokens\":[1],\"label\":0,\"split\":\"train\"}\n\
                   {\"id\":3,\"tokens\":[2],\"label\":1,\"split\":\"test\"}";
        let err = parse(dup, schema).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
        assert!(err.to_string().ends_with("line 2"));

        let empty = r#"{"id":0,"tokens":[],"label":0,"split":"train"}"#;
        assert!(parse(empty, schema)
            .unwrap_err()
            .to_string()
            .contains("empty token sequence"));

        let bad = "{\"id\":0,\"tokens\":[1],\"label\":0,\"split\":\"train\"}\nnot json";
        let err = parse(bad, schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn reindexes_and_keeps_original_ids() {
        let text = "{\"id\":40,\"tokens\":[1],\"label\":[2,3],\"split\":\"train\"}\n\
                    {\"id\":7,\"tokens\":[4,4],\"label\":[1],\"split\":\"test\"}";
        let pool = parse(text, PoolSchema::new(TaskKind::SequenceGeneration)).unwrap();
        assert_eq!(pool.item(1).id, 1);
        assert_eq!(pool.original_ids(), &[40, 7]);
        assert_eq!(pool.vocab_size(), 5);
        assert_eq!(pool.reference(0), Some(&[2, 3][..]));
        assert_eq!(pool.train_indices(), vec![0]);
        assert_eq!(pool.test_indices(), vec![1]);
    }

    #[test]
    fn infers_num_classes() {
        let text = "{\"id\":0,\"tokens\":[1],\"label\":2,\"split\":\"train\"}";
        let pool = parse(text, PoolSchema::default()).unwrap();
        assert_eq!(pool.task_kind(), TaskKind::Classification);
        assert_eq!(pool.num_classes(), Some(3));
    }

    #[test]
    fn label_kind_must_match_task() {
        let text = r#"{"id":0,"tokens":[1],"label":[1],"split":"train"}"#;
        assert!(parse(text, PoolSchema::new(TaskKind::Classification)).is_err());
    }

    #[test]
    fn save_then_load_is_identity() {
        let text = "{\"id\":9,\"tokens\":[1,2],\"label\":1,\"split\":\"train\"}\n\
                    {\"id\":2,\"tokens\":[3],\"label\":0,\"split\":\"test\"}";
        let schema = PoolSchema::new(TaskKind::Classification)
            .with_vocab_size(4)
            .with_num_classes(2);
        let pool = parse(text, schema).unwrap();
        let mut buf = Vec::new();
        pool.write_jsonl(&mut buf).unwrap();
        let again = read_pool(buf.as_slice(), &schema).unwrap();
        assert_eq!(pool, again);
    }
}
