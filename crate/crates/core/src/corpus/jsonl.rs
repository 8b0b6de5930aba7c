use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, Domain, DomainId, Interaction, Item, ItemId, UserId};
use crate::error::{Error, Result};

/// One line of the interchange format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub user_id: String,
    pub item_id: String,
    pub domain: String,
    pub title: String,
    pub timestamp: i64,
}

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub corpus: Corpus,
    /// Records dropped because their (user, item, timestamp) was already seen.
    pub duplicates: usize,
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str, line: usize) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field {name}"),
    })
}

fn string_field(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<String> {
    match field(obj, name, line)? {
        Value::String(s) => Ok(s.clone()),
        _ => Err(Error::Parse {
            line,
            message: format!("field {name} must be a string"),
        }),
    }
}

fn parse_record(text: &str, line: usize) -> Result<Record> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: format!("malformed JSON: {e}"),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let user_id = string_field(obj, "user_id", line)?;
    let item_id = string_field(obj, "item_id", line)?;
    let domain = string_field(obj, "domain", line)?;
    let title = string_field(obj, "title", line)?;
    let timestamp = field(obj, "timestamp", line)?.as_i64().ok_or_else(|| Error::Parse {
        line,
        message: "field timestamp must be an integer".into(),
    })?;
    if title.split_whitespace().next().is_none() {
        return Err(Error::Parse {
            line,
            message: "field title is empty".into(),
        });
    }
    Ok(Record {
        user_id,
        item_id,
        domain,
        title,
        timestamp,
    })
}

/// Parses newline-delimited records. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn parse_jsonl(text: &str) -> Result<IngestOutcome> {
    let mut corpus = Corpus::default();
    let mut domains: HashMap<String, DomainId> = HashMap::new();
    let mut items: HashMap<String, ItemId> = HashMap::new();
    let mut users: HashMap<String, UserId> = HashMap::new();
    let mut seen: HashSet<(UserId, ItemId, i64)> = HashSet::new();
    let mut duplicates = 0;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec = parse_record(raw, line)?;
        let domain = match domains.get(&rec.domain) {
            Some(d) => *d,
            None => {
                let id = DomainId(u16::try_from(corpus.domains.len()).map_err(|_| Error::Parse {
                    line,
                    message: "too many domains".into(),
                })?);
                corpus.domains.push(Domain {
                    id,
                    name: rec.domain.clone(),
                });
                domains.insert(rec.domain.clone(), id);
                id
            }
        };
        let item = match items.get(&rec.item_id) {
            Some(&id) => {
                if corpus.item(id).domain != domain {
                    return Err(Error::Parse {
                        line,
                        message: format!("item {} listed under two domains", rec.item_id),
                    });
                }
                id
            }
            None => {
                let id = ItemId(corpus.items.len() as u32);
                corpus.items.push(Item {
                    id,
                    key: rec.item_id.clone(),
                    domain,
                    title: rec.title.clone(),
                });
                items.insert(rec.item_id, id);
                id
            }
        };
        let user = *users.entry(rec.user_id.clone()).or_insert_with(|| {
            corpus.users.push(rec.user_id);
            UserId(corpus.users.len() as u32 - 1)
        });
        if !seen.insert((user, item, rec.timestamp)) {
            duplicates += 1;
            continue;
        }
        corpus.interactions.push(Interaction {
            user,
            item,
            timestamp: rec.timestamp,
        });
    }
    Ok(IngestOutcome { corpus, duplicates })
}

pub fn ingest_jsonl(path: &Path) -> Result<IngestOutcome> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let out = parse_jsonl(&text)?;
    if out.duplicates > 0 {
        log::info!("{}: dropped {} duplicate records", path.display(), out.duplicates);
    }
    Ok(out)
}

/// Serializes every interaction as one record, in ingestion order.
pub fn export_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for it in &corpus.interactions {
        let item = corpus.item(it.item);
        let rec = Record {
            user_id: corpus.users[it.user.index()].clone(),
            item_id: item.key.clone(),
            domain: corpus.domains[item.domain.index()].name.clone(),
            title: item.title.clone(),
            timestamp: it.timestamp,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(export_jsonl(corpus).as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"user_id":"u1","item_id":"b1","domain":"Books","title":"deep sea","timestamp":3}
{"user_id":"u1","item_id":"o1","domain":"Office","title":"red pen","timestamp":5}
{"user_id":"u2","item_id":"b1","domain":"Books","title":"deep sea","timestamp":4}
"#;

    #[test]
    fn ingests_well_formed_lines() {
        let out = parse_jsonl(GOOD).unwrap();
        assert_eq!(out.corpus.interactions.len(), 3);
        assert_eq!(out.corpus.domains.len(), 2);
        assert_eq!(out.corpus.items.len(), 2);
        assert_eq!(out.corpus.users.len(), 2);
        assert_eq!(out.duplicates, 0);
        out.corpus.validate().unwrap();
    }

    #[test]
    fn missing_field_names_line_and_field() {
        let text = "{\"user_id\":\"u\",\"item_id\":\"i\",\"domain\":\"d\",\"title\":\"t\",\"timestamp\":1}\n\
                    {\"user_id\":\"u\",\"item_id\":\"j\",\"domain\":\"d\",\"timestamp\":2}\n";
        let err = parse_jsonl(text).unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing field title");
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = parse_jsonl("{\"user_id\":\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1: malformed JSON"), "{err}");
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let line = r#"{"user_id":"u","item_id":"i","domain":"d","title":"t","timestamp":1}"#;
        let out = parse_jsonl(&format!("{line}\n{line}\n")).unwrap();
        assert_eq!(out.corpus.interactions.len(), 1);
        assert_eq!(out.duplicates, 1);
    }

    #[test]
    fn export_reingests_to_same_corpus() {
        let out = parse_jsonl(GOOD).unwrap();
        let again = parse_jsonl(&export_jsonl(&out.corpus)).unwrap();
        assert_eq!(out.corpus, again.corpus);
    }
}
