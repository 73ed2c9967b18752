//! Glue for batch runs: ranker training from ground-truth alignments and
//! grouping of ID-gloss samples.

use std::collections::BTreeMap;

use crate::datamodel::{FrameSpan, SampleFeatures, SampleRecord};
use crate::enhanced::evidence::ranker_rows;
use crate::enhanced::{
    collect_gloss_evidence, train_ranker, EnhancedError, EvidenceConfig, EvidenceContext, Gbdt, GbdtConfig,
};

/// A sample with its true segmentation and gloss per segment.
pub struct AlignedSample<'a> {
    pub features: &'a SampleFeatures,
    pub spans: &'a [FrameSpan],
    pub gloss_ids: &'a [String],
}

/// Pointwise rows over every candidate of every true segment. Evidence is
/// gathered without a ranker and without truncation.
pub fn ranker_training_rows(
    samples: &[AlignedSample<'_>],
    ctx: EvidenceContext<'_>,
    cfg: &EvidenceConfig,
) -> Result<Vec<(Vec<f64>, f64)>, EnhancedError> {
    let cfg = EvidenceConfig { bypass_ranker: true, m: ctx.dictionary.len().max(cfg.m), ..*cfg };
    let mut rows = Vec::new();
    for s in samples {
        let evidence = collect_gloss_evidence(s.features, Some(s.spans), ctx, &cfg, None)?;
        for (ev, truth) in evidence.iter().zip(s.gloss_ids) {
            rows.extend(ranker_rows(ev, truth));
        }
    }
    Ok(rows)
}

pub fn train_from_alignments(
    samples: &[AlignedSample<'_>],
    ctx: EvidenceContext<'_>,
    ecfg: &EvidenceConfig,
    gcfg: &GbdtConfig,
) -> Result<Gbdt, EnhancedError> {
    let rows = ranker_training_rows(samples, ctx, ecfg)?;
    Ok(train_ranker(&rows, gcfg)?)
}

/// Samples grouped by gloss label, in label order; unlabelled samples are skipped.
pub fn group_by_gloss<T>(items: &[(SampleRecord, T)]) -> BTreeMap<String, Vec<&(SampleRecord, T)>> {
    let mut out: BTreeMap<String, Vec<&(SampleRecord, T)>> = BTreeMap::new();
    for item in items {
        if let Some(g) = &item.0.gloss_label {
            out.entry(g.clone()).or_default().push(item);
        }
    }
    out
}
