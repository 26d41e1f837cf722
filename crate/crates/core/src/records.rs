//! Line-delimited prediction records: one JSON object per sentence, carrying
//! the extracted triplets with token indices, sentiment, confidence, and the
//! decode direction that produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Sentence, Sentiment};
use crate::decoder::Direction;
use crate::error::{Error, Result};
use crate::eval::{Predictions, TripletKey};
use crate::inference::PredictedTriplet;
use crate::lattice::Span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub aspect: Vec<usize>,
    pub opinion: Vec<usize>,
    pub sentiment: Sentiment,
    pub confidence: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub triplets: Vec<TripletRecord>,
}

impl TripletRecord {
    pub fn from_predicted(t: &PredictedTriplet) -> TripletRecord {
        TripletRecord {
            aspect: t.aspect.token_indices().collect(),
            opinion: t.opinion.token_indices().collect(),
            sentiment: t.sentiment,
            confidence: t.confidence,
            direction: t.direction,
        }
    }

    pub fn key(&self) -> TripletKey {
        TripletKey {
            aspect: Span::from_indices(&self.aspect),
            opinion: Span::from_indices(&self.opinion),
            sentiment: self.sentiment,
        }
    }
}

impl SentenceRecord {
    pub fn new(id: &str, triplets: &[PredictedTriplet]) -> SentenceRecord {
        SentenceRecord {
            id: id.to_string(),
            triplets: triplets.iter().map(TripletRecord::from_predicted).collect(),
        }
    }
}

/// Serialize records to the line-delimited format.
pub fn render_predictions(records: &[SentenceRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<SentenceRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SentenceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Collapse records into the id-keyed map the scorer consumes.
pub fn to_predictions_map(records: &[SentenceRecord]) -> Predictions {
    let mut map = Predictions::new();
    for record in records {
        map.entry(record.id.clone())
            .or_default()
            .extend(record.triplets.iter().map(TripletRecord::key));
    }
    map
}

/// Express gold annotations in the prediction format (confidence 1).
pub fn gold_as_records(sentences: &[Sentence]) -> Vec<SentenceRecord> {
    sentences
        .iter()
        .map(|s| SentenceRecord {
            id: s.id.clone(),
            triplets: s
                .gold
                .iter()
                .map(|g| TripletRecord {
                    aspect: g.aspect.clone(),
                    opinion: g.opinion.clone(),
                    sentiment: g.sentiment,
                    confidence: 1.0,
                    direction: Direction::AspectToOpinion,
                })
                .collect(),
        })
        .collect()
}
