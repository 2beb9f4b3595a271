//! Expert demonstration data: dialogue states, multi-sub-action labels, and
//! `(s0, s, a, s', done)` transition tuples, plus the JSONL file format.
//!
//! File layout: the first line is a header
//! `{"k": int, "vocab_size": int, "representation": "tokens" | "tabular"}`;
//! every following line is one transition
//! `{"dialogue_id": str, "turn": int, "initial_state": [int] | int, "state": ...,
//!   "action": [0/1; k], "next_state": ..., "done": bool}`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token budget for dialogue-history states.
pub const DEFAULT_MAX_STATE_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invariant(String),
    #[error("operation {0} is not supported for this state representation")]
    UnsupportedRepresentation(&'static str),
}

/// `k`-dimensional binary vector of simultaneously taken sub-actions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionVector(Vec<u8>);

impl ActionVector {
    pub fn new(bits: Vec<u8>) -> Result<Self, DatasetError> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(DatasetError::Invariant(format!("action bit {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    /// Bit `j` of `index` becomes sub-action `j`.
    pub fn from_index(index: usize, k: usize) -> Self {
        Self((0..k).map(|j| ((index >> j) & 1) as u8).collect())
    }

    pub fn to_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .map(|(j, &b)| (b as usize) << j)
            .sum()
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn is_set(&self, j: usize) -> bool {
        self.0[j] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

/// Dialogue context at one turn: a tabular state index or the flattened token
/// history of every utterance so far.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum State {
    Tabular(usize),
    Tokens(Vec<u32>),
}

impl State {
    pub fn representation(&self) -> Representation {
        match self {
            State::Tabular(_) => Representation::Tabular,
            State::Tokens(_) => Representation::Tokens,
        }
    }

    pub fn tabular_id(&self) -> Option<usize> {
        match self {
            State::Tabular(id) => Some(*id),
            State::Tokens(_) => None,
        }
    }

    pub fn tokens(&self) -> Option<&[u32]> {
        match self {
            State::Tokens(t) => Some(t),
            State::Tabular(_) => None,
        }
    }

    fn max_symbol(&self) -> Option<usize> {
        match self {
            State::Tabular(id) => Some(*id),
            State::Tokens(t) => t.iter().max().map(|&m| m as usize),
        }
    }
}

/// Keeps only the latest `max_tokens` tokens of a history state.
pub fn truncate_state(s: &State, max_tokens: usize) -> Result<State, DatasetError> {
    match s {
        State::Tokens(t) => {
            let start = t.len().saturating_sub(max_tokens);
            Ok(State::Tokens(t[start..].to_vec()))
        }
        State::Tabular(_) => Err(DatasetError::UnsupportedRepresentation("truncate_state")),
    }
}

/// One turn of a token dialogue: the agent utterance, the user reply, and the
/// action the agent takes next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueTurn {
    pub agent_tokens: Vec<u32>,
    pub user_tokens: Vec<u32>,
    pub action: ActionVector,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionTuple {
    pub initial_state: State,
    pub state: State,
    pub action: ActionVector,
    pub next_state: State,
    pub done: bool,
    pub dialogue_id: String,
    pub turn_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Tokens,
    Tabular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn from_path(path: &Path) -> Split {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        if stem.contains("valid") {
            Split::Validation
        } else if stem.contains("test") {
            Split::Test
        } else {
            Split::Train
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Expected header values when loading a file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub k: usize,
    pub vocab_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemonstrationDataset {
    pub tuples: Vec<TransitionTuple>,
    pub k: usize,
    /// Token vocabulary size, or the number of states for tabular data.
    pub vocab_size: usize,
    pub representation: Representation,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Header {
    k: usize,
    vocab_size: usize,
    representation: Representation,
}

#[derive(Serialize, Deserialize)]
struct Record {
    dialogue_id: String,
    turn: usize,
    initial_state: State,
    state: State,
    action: Vec<u8>,
    next_state: State,
    done: bool,
}

impl DemonstrationDataset {
    pub fn empty(k: usize, vocab_size: usize, representation: Representation, split: Split) -> Self {
        Self {
            tuples: Vec::new(),
            k,
            vocab_size,
            representation,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Contiguous per-dialogue slices, in file order.
    pub fn dialogues(&self) -> Vec<&[TransitionTuple]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.tuples.len() {
            if i == self.tuples.len() || self.tuples[i].dialogue_id != self.tuples[start].dialogue_id {
                out.push(&self.tuples[start..i]);
                start = i;
            }
        }
        out
    }

    pub fn num_dialogues(&self) -> usize {
        self.dialogues().len()
    }

    /// Checks every dataset invariant; `Ok` means the tuples are safe to train on.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for dialogue in self.dialogues() {
            let id = &dialogue[0].dialogue_id;
            if !seen.insert(id.clone()) {
                return Err(DatasetError::Invariant(format!(
                    "dialogue {id} is split into non-contiguous runs"
                )));
            }
            for (t, tuple) in dialogue.iter().enumerate() {
                self.check_tuple(tuple)?;
                if tuple.turn_index != t {
                    return Err(DatasetError::Invariant(format!(
                        "dialogue {id}: expected turn {t}, found {}",
                        tuple.turn_index
                    )));
                }
                if tuple.initial_state != dialogue[0].state {
                    return Err(DatasetError::Invariant(format!(
                        "dialogue {id} turn {t}: initial_state differs from the first state"
                    )));
                }
                let last = t + 1 == dialogue.len();
                if tuple.done != last {
                    return Err(DatasetError::Invariant(format!(
                        "dialogue {id} turn {t}: done={} but last={last}",
                        tuple.done
                    )));
                }
                if !last && tuple.next_state != dialogue[t + 1].state {
                    return Err(DatasetError::Invariant(format!(
                        "dialogue {id} turn {t}: next_state does not continue into turn {}",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_tuple(&self, tuple: &TransitionTuple) -> Result<(), DatasetError> {
        if tuple.action.k() != self.k {
            return Err(DatasetError::Invariant(format!(
                "action length {} under declared k={}",
                tuple.action.k(),
                self.k
            )));
        }
        for s in [&tuple.initial_state, &tuple.state, &tuple.next_state] {
            if s.representation() != self.representation {
                return Err(DatasetError::Invariant(format!(
                    "{:?} state in a {:?} dataset",
                    s.representation(),
                    self.representation
                )));
            }
            if let Some(m) = s.max_symbol() {
                if m >= self.vocab_size {
                    return Err(DatasetError::Invariant(format!(
                        "symbol {m} outside vocabulary of size {}",
                        self.vocab_size
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        let header = Header {
            k: self.k,
            vocab_size: self.vocab_size,
            representation: self.representation,
        };
        writeln!(w, "{}", serde_json::to_string(&header).map_err(io_json)?)?;
        for t in &self.tuples {
            let rec = Record {
                dialogue_id: t.dialogue_id.clone(),
                turn: t.turn_index,
                initial_state: t.initial_state.clone(),
                state: t.state.clone(),
                action: t.action.bits().to_vec(),
                next_state: t.next_state.clone(),
                done: t.done,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).map_err(io_json)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads JSONL from any reader. An empty input yields an empty dataset whose
    /// `k`/`vocab_size` come from `schema` (or zero).
    pub fn read_jsonl<R: BufRead>(
        reader: R,
        schema: Option<DatasetSchema>,
        split: Split,
    ) -> Result<Self, DatasetError> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let Some((line_no, header_line)) = lines.next() else {
            log::warn!("empty dataset file");
            let (k, vocab_size) = schema.map_or((0, 0), |s| (s.k, s.vocab_size));
            return Ok(Self::empty(k, vocab_size, Representation::Tokens, split));
        };
        let header: Header = serde_json::from_str(&header_line?).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: format!("header: {e}"),
        })?;
        if let Some(s) = schema {
            if s.k != header.k || s.vocab_size != header.vocab_size {
                return Err(DatasetError::Schema {
                    line: line_no,
                    message: format!(
                        "header declares k={}, vocab_size={}; expected k={}, vocab_size={}",
                        header.k, header.vocab_size, s.k, s.vocab_size
                    ),
                });
            }
        }
        let mut ds = Self::empty(header.k, header.vocab_size, header.representation, split);
        for (line_no, line) in lines {
            let rec: Record = serde_json::from_str(&line?).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let schema_err = |message: String| DatasetError::Schema {
                line: line_no,
                message,
            };
            let action = ActionVector::new(rec.action).map_err(|e| schema_err(e.to_string()))?;
            let tuple = TransitionTuple {
                initial_state: rec.initial_state,
                state: rec.state,
                action,
                next_state: rec.next_state,
                done: rec.done,
                dialogue_id: rec.dialogue_id,
                turn_index: rec.turn,
            };
            ds.check_tuple(&tuple).map_err(|e| schema_err(e.to_string()))?;
            ds.tuples.push(tuple);
        }
        ds.validate()?;
        Ok(ds)
    }

    /// Random subset of whole dialogues (`round(fraction * n)`, at least one),
    /// kept in original order. `fraction >= 1` returns an identical copy.
    pub fn subsample_dialogues(&self, fraction: f64, seed: u64) -> Self {
        let dialogues = self.dialogues();
        let n = dialogues.len();
        if fraction >= 1.0 || n == 0 {
            return self.clone();
        }
        let keep = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        let tuples = chosen
            .into_iter()
            .flat_map(|i| dialogues[i].iter().cloned())
            .collect();
        Self {
            tuples,
            ..Self::empty(self.k, self.vocab_size, self.representation, self.split)
        }
    }
}

fn io_json(e: serde_json::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::other(e))
}

/// Loads a JSONL dataset, validating every invariant. The split tag is taken
/// from the file stem (`train`, `validation`, `test`; default train).
pub fn load_dataset(path: &Path, schema: Option<DatasetSchema>) -> Result<DemonstrationDataset, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    DemonstrationDataset::read_jsonl(reader, schema, Split::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"k":3,"vocab_size":10,"representation":"tokens"}"#;

    fn read(text: &str, schema: Option<DatasetSchema>) -> Result<DemonstrationDataset, DatasetError> {
        DemonstrationDataset::read_jsonl(text.as_bytes(), schema, Split::Train)
    }

    #[test]
    fn two_records_round_trip() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"dialogue_id":"d0","turn":0,"initial_state":[1,2],"state":[1,2],"action":[1,0,1],"next_state":[1,2,3],"done":false}"#,
            r#"{"dialogue_id":"d0","turn":1,"initial_state":[1,2],"state":[1,2,3],"action":[0,1,0],"next_state":[1,2,3,4],"done":true}"#
        );
        let ds = read(&text, Some(DatasetSchema { k: 3, vocab_size: 10 })).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.tuples[0].action.bits(), &[1, 0, 1]);
        assert_eq!(ds.tuples[1].state, State::Tokens(vec![1, 2, 3]));
        let mut out = Vec::new();
        ds.write_jsonl(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn wrong_action_length_names_the_line() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"dialogue_id":"d0","turn":0,"initial_state":[1],"state":[1],"action":[1,0,1,1],"next_state":[2],"done":true}"#
        );
        match read(&text, None) {
            Err(DatasetError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_record_is_a_parse_error() {
        let text = format!("{HEADER}\n{{\"dialogue_id\": 3}}\n");
        assert!(matches!(read(&text, None), Err(DatasetError::Parse { line: 2, .. })));
    }

    #[test]
    fn header_mismatch_is_a_schema_error() {
        let schema = Some(DatasetSchema { k: 4, vocab_size: 10 });
        assert!(matches!(read(HEADER, schema), Err(DatasetError::Schema { line: 1, .. })));
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let ds = read("", Some(DatasetSchema { k: 3, vocab_size: 7 })).unwrap();
        assert!(ds.is_empty());
        assert_eq!((ds.k, ds.vocab_size), (3, 7));
    }

    #[test]
    fn broken_dialogue_structure_is_rejected() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"dialogue_id":"d0","turn":0,"initial_state":[1],"state":[1],"action":[1,0,1],"next_state":[2],"done":false}"#
        );
        assert!(matches!(read(&text, None), Err(DatasetError::Invariant(_))));
    }

    #[test]
    fn truncation_keeps_latest_tokens() {
        let long = State::Tokens((0..600).collect());
        let t = truncate_state(&long, 512).unwrap();
        assert_eq!(t, State::Tokens((88..600).collect()));
        let short = State::Tokens((0..10).collect());
        assert_eq!(truncate_state(&short, 512).unwrap(), short);
        assert_eq!(truncate_state(&State::Tokens(vec![]), 512).unwrap(), State::Tokens(vec![]));
        assert!(matches!(
            truncate_state(&State::Tabular(3), 512),
            Err(DatasetError::UnsupportedRepresentation(_))
        ));
    }

    #[test]
    fn action_index_encoding_round_trips() {
        for idx in 0..16 {
            assert_eq!(ActionVector::from_index(idx, 4).to_index(), idx);
        }
        assert_eq!(ActionVector::from_index(5, 3).bits(), &[1, 0, 1]);
        assert!(ActionVector::new(vec![0, 2]).is_err());
    }
}
