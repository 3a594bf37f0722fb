use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::rundir::write_atomic;
use super::{io_err, read_records, DocumentRecord, PipelineError, RunDir};
use crate::corpus::Corpus;
use crate::metrics::{EvalAccumulator, EvalReport};

/// Folds records into one accumulator; shards are merged exactly, so the
/// result does not depend on order or thread count.
pub fn evaluate_records(
    corpus: &Corpus,
    records: &[DocumentRecord],
    strict: bool,
) -> Result<EvalAccumulator, PipelineError> {
    records
        .par_iter()
        .try_fold(
            || EvalAccumulator::new(strict),
            |mut acc, rec| {
                let md = corpus.masked(&rec.document.doc_id).ok_or_else(|| {
                    PipelineError::Eval(crate::metrics::EvalError::UnknownDocument {
                        doc_id: rec.document.doc_id.clone(),
                    })
                })?;
                acc.add_document(rec.dataset, md, &rec.document, rec.ranking.as_ref())?;
                Ok(acc)
            },
        )
        .try_reduce(
            || EvalAccumulator::new(strict),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )
}

/// Recomputes the report from a run directory's persisted artifacts alone
/// and writes `eval/report.json`, `eval/report.txt` and the CSV breakdowns.
pub fn cmd_eval(run_dir: &Path) -> Result<EvalReport, PipelineError> {
    let dir = RunDir::new(run_dir);
    let manifest = dir
        .read_manifest()?
        .ok_or_else(|| PipelineError::Invalid(format!("{} has no manifest", run_dir.display())))?;
    let corpus = Corpus::load(&dir.corpus())?;
    if corpus.content_hash() != manifest.corpus.content_hash {
        return Err(PipelineError::ManifestMismatch {
            dir: dir.root.clone(),
            reason: "corpus snapshot does not match the manifest".into(),
        });
    }
    let records = read_records(&dir)?;
    let acc = evaluate_records(&corpus, &records, manifest.config.eval.strict)?;
    let report = acc.finish(Some(manifest.run_fingerprint.clone()));
    let out = dir.eval();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    write_atomic(&out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&out.join("report.txt"), report.render_table().as_bytes())?;
    report.write_csv(&out)?;
    Ok(report)
}
