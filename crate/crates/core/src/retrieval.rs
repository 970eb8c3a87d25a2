//! Ranked search over a descriptor database and mean-average-precision evaluation.
//!
//! AP is the rank-based, non-interpolated variant: ignored ids are deleted
//! from the ranking first, then `AP = (1/|R|)·Σ_{r: relevant} hits(≤r)/r`.

use crate::backbone::Image;
use crate::binio::{read_file, write_file};
use crate::descriptor::{BBox, Descriptor, DescriptorDb};
use crate::error::{Error, Result};
use crate::extract::{CropMode, Extractor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryTruth {
    pub relevant: BTreeSet<String>,
    #[serde(default)]
    pub ignored: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[usize; 4]>,
}

impl QueryTruth {
    pub fn new<I, J, S>(relevant: I, ignored: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = S>,
        S: Into<String>,
    {
        QueryTruth {
            relevant: relevant.into_iter().map(Into::into).collect(),
            ignored: ignored.into_iter().map(Into::into).collect(),
            bbox: None,
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.bbox.map(|[x0, y0, x1, y1]| BBox::new(x0, y0, x1, y1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.relevant.is_empty() {
            return Err(Error::Protocol("empty relevant set".into()));
        }
        if let Some(id) = self.relevant.intersection(&self.ignored).next() {
            return Err(Error::Protocol(format!("{id} is both relevant and ignored")));
        }
        Ok(())
    }
}

/// Per-query relevance judgements keyed by query id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundTruth(pub BTreeMap<String, QueryTruth>);

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let gt: GroundTruth = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        for (q, t) in &gt.0 {
            t.validate()
                .map_err(|e| Error::format(path, format!("query {q}: {e}")))?;
        }
        Ok(gt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self).expect("serializes").as_bytes())
    }
}

/// Top-`topn` database entries by inner product, ties by lower id.
pub fn search(db: &DescriptorDb, q: &Descriptor, topn: usize) -> Result<Vec<(String, f64)>> {
    if q.dim() != db.dim() {
        return Err(Error::Dimension(format!(
            "query of dim {} against a dim {} database",
            q.dim(),
            db.dim()
        )));
    }
    let mut scored: Vec<(String, f64)> = db
        .iter()
        .map(|(id, v)| {
            let s: f64 = v.iter().zip(q.values()).map(|(&a, b)| a as f64 * b).sum();
            (id.to_string(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(topn);
    Ok(scored)
}

pub fn average_precision<S: AsRef<str>>(ranking: &[S], gt: &QueryTruth) -> Result<f64> {
    if gt.relevant.is_empty() {
        return Err(Error::Protocol("empty relevant set".into()));
    }
    let mut rank = 0usize;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for id in ranking {
        let id = id.as_ref();
        if gt.ignored.contains(id) {
            continue;
        }
        rank += 1;
        if gt.relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    Ok(sum / gt.relevant.len() as f64)
}

pub struct EvalQuery<'a> {
    pub id: String,
    pub image: &'a Image,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub map: f64,
    pub per_query: Vec<(String, f64)>,
}

impl EvalReport {
    /// `query_id,ap` rows then a final `mAP` line, six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,ap\n");
        for (q, ap) in &self.per_query {
            out.push_str(&format!("{q},{ap:.6}\n"));
        }
        out.push_str(&format!("mAP {:.6}\n", self.map));
        out
    }
}

/// AP of every query against the full database ranking, with descriptors
/// produced by `extractor` under `mode`.
pub fn evaluate(
    db: &DescriptorDb,
    queries: &[EvalQuery<'_>],
    gt: &GroundTruth,
    mode: CropMode,
    extractor: &Extractor<'_>,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Protocol("no queries".into()));
    }
    let per_query = queries
        .par_iter()
        .map(|q| {
            let truth = gt
                .0
                .get(&q.id)
                .ok_or_else(|| Error::Protocol(format!("no ground truth for query {}", q.id)))?;
            let bbox = q.bbox.or_else(|| truth.bbox());
            if mode != CropMode::Full && bbox.is_none() {
                return Err(Error::Protocol(format!("query {} has no bbox", q.id)));
            }
            let d = extractor.describe_query(q.image, bbox.as_ref(), mode)?;
            let ranking: Vec<String> = search(db, &d, db.len())?.into_iter().map(|(id, _)| id).collect();
            Ok((q.id.clone(), average_precision(&ranking, truth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        map: mean_ap(&per_query),
        per_query,
    })
}

/// mAP over precomputed query descriptors, no extraction involved.
pub fn evaluate_descriptors(
    db: &DescriptorDb,
    queries: &[(String, Descriptor)],
    gt: &GroundTruth,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::Protocol("no queries".into()));
    }
    let per_query = queries
        .par_iter()
        .map(|(id, d)| {
            let truth = gt
                .0
                .get(id)
                .ok_or_else(|| Error::Protocol(format!("no ground truth for query {id}")))?;
            let ranking: Vec<String> = search(db, d, db.len())?.into_iter().map(|(id, _)| id).collect();
            Ok((id.clone(), average_precision(&ranking, truth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        map: mean_ap(&per_query),
        per_query,
    })
}

fn mean_ap(per_query: &[(String, f64)]) -> f64 {
    per_query.iter().map(|(_, ap)| ap).sum::<f64>() / per_query.len() as f64
}
