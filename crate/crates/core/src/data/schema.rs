use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index every field reserves for tokens outside its vocabulary.
pub const OOV_INDEX: u32 = 0;
pub const OOV_TOKEN: &str = "<oov>";
/// Masks are stored as `u64`, which bounds the number of fields.
pub const MAX_FIELDS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Categorical,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub id: usize,
    pub name: String,
    pub kind: FieldKind,
    /// Per-field override of the vocabulary frequency cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_frequency: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    fields: Vec<FieldSpec>,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::config("schema has no fields"));
        }
        if fields.len() > MAX_FIELDS {
            return Err(Error::config(format!("{} fields exceeds the limit of {MAX_FIELDS}", fields.len())));
        }
        for (i, f) in fields.iter().enumerate() {
            if f.id != i {
                return Err(Error::config(format!("field ids must be 0..N in order; position {i} has id {}", f.id)));
            }
        }
        Ok(FieldSchema { fields })
    }

    pub fn categorical<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(id, n)| FieldSpec {
                    id,
                    name: n.as_ref().to_string(),
                    kind: FieldKind::Categorical,
                    min_frequency: None,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }
}

/// Token dictionary of one field. Index 0 is the out-of-vocabulary bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVocab {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl FieldVocab {
    pub fn from_tokens(retained: Vec<String>) -> Result<Self> {
        let mut tokens = Vec::with_capacity(retained.len() + 1);
        tokens.push(OOV_TOKEN.to_string());
        let mut lookup = HashMap::with_capacity(retained.len());
        for t in retained {
            let idx = tokens.len() as u32;
            if lookup.insert(t.clone(), idx).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary token {t:?}")));
            }
            tokens.push(t);
        }
        Ok(FieldVocab { tokens, lookup })
    }

    /// `D_n`: retained tokens plus the OOV bucket.
    pub fn cardinality(&self) -> usize {
        self.tokens.len()
    }

    pub fn index(&self, token: &str) -> u32 {
        self.lookup.get(token).copied().unwrap_or(OOV_INDEX)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    /// Retained tokens in index order, excluding the OOV slot.
    pub fn retained(&self) -> &[String] {
        &self.tokens[1..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
}

impl Vocabulary {
    pub fn new(fields: Vec<FieldVocab>) -> Self {
        Vocabulary { fields }
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, n: usize) -> &FieldVocab {
        &self.fields[n]
    }

    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::cardinality).collect()
    }
}

/// One raw input row, tokens already bucketized, with its source line number.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub line: usize,
    pub tokens: Vec<String>,
}

/// Counts tokens per field and keeps those seen at least `min_frequency`
/// times (or the field's own cutoff). Retained tokens are indexed from 1 in
/// order of descending count, ties by token text.
pub fn build_vocabulary<'a, I>(rows: I, schema: &FieldSchema, min_frequency: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a RawRow>,
{
    if min_frequency < 1 {
        return Err(Error::config("min_frequency must be at least 1"));
    }
    let n = schema.len();
    let mut counts: Vec<HashMap<&str, u64>> = vec![HashMap::new(); n];
    for row in rows {
        if row.tokens.len() != n {
            return Err(Error::Parse {
                line: row.line,
                message: format!("expected {n} feature columns, found {}", row.tokens.len()),
            });
        }
        for (field, token) in counts.iter_mut().zip(&row.tokens) {
            *field.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let fields = counts
        .into_iter()
        .zip(schema.fields())
        .map(|(field_counts, spec)| {
            let cutoff = spec.min_frequency.unwrap_or(min_frequency).max(1);
            let mut kept: Vec<(&str, u64)> = field_counts.into_iter().filter(|&(_, c)| c >= cutoff).collect();
            kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            FieldVocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Vocabulary { fields })
}

/// Hot coordinate of each token; unseen tokens map to the OOV index.
pub fn encode_row<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Result<Vec<u32>> {
    if tokens.len() != vocab.len() {
        return Err(Error::contract(format!("row has {} tokens, vocabulary has {} fields", tokens.len(), vocab.len())));
    }
    Ok(tokens.iter().zip(vocab.fields()).map(|(t, v)| v.index(t.as_ref())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[&str]]) -> Vec<RawRow> {
        data.iter()
            .enumerate()
            .map(|(i, r)| RawRow { line: i + 1, tokens: r.iter().map(|s| s.to_string()).collect() })
            .collect()
    }

    #[test]
    fn gender_gets_two_distinct_indices() {
        let schema = FieldSchema::categorical(&["Gender"]).unwrap();
        let r = rows(&[&["Male"], &["Female"], &["Male"], &["Female"]]);
        let v = build_vocabulary(&r, &schema, 1).unwrap();
        let (m, f) = (v.field(0).index("Male"), v.field(0).index("Female"));
        assert_ne!(m, f);
        assert!(m >= 1 && f >= 1);
        assert_eq!(v.field(0).cardinality(), 3);
    }

    #[test]
    fn empty_stream_is_oov_only() {
        let schema = FieldSchema::categorical(&["a", "b"]).unwrap();
        let v = build_vocabulary(&[], &schema, 2).unwrap();
        assert_eq!(v.cardinalities(), vec![1, 1]);
    }

    #[test]
    fn min_frequency_cutoff() {
        // a appears 5 times, b once.
        let schema = FieldSchema::categorical(&["x"]).unwrap();
        let r = rows(&[&["a"], &["a"], &["b"], &["a"], &["a"], &["a"]]);
        let v = build_vocabulary(&r, &schema, 2).unwrap();
        assert!(v.field(0).index("a") >= 1);
        assert_eq!(v.field(0).index("b"), OOV_INDEX);
        assert_eq!(v.field(0).cardinality(), 2);
    }

    #[test]
    fn wrong_arity_names_line() {
        let schema = FieldSchema::categorical(&["x", "y"]).unwrap();
        let r = rows(&[&["a", "b"], &["a"]]);
        match build_vocabulary(&r, &schema, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encode_known_and_unseen() {
        let schema = FieldSchema::categorical(&["x", "y"]).unwrap();
        let r = rows(&[&["a", "p"], &["b", "q"], &["c", "q"], &["c", "r"], &["c", "s"]]);
        let v = build_vocabulary(&r, &schema, 1).unwrap();
        assert_eq!(encode_row(&["zz", "zz"], &v).unwrap(), vec![0, 0]);
        let c = v.field(0).index("c");
        assert_eq!(encode_row(&["c", "q"], &v).unwrap(), vec![c, v.field(1).index("q")]);
        assert!(encode_row(&["c"], &v).is_err());
    }

    #[test]
    fn schema_ids_must_be_contiguous() {
        let bad = vec![FieldSpec { id: 1, name: "x".into(), kind: FieldKind::Categorical, min_frequency: None }];
        assert!(FieldSchema::new(bad).is_err());
    }
}
