use crate::cli::EvaluateArgs;
use crate::commands::sample::read_sample_manifest;
use ssb_core::metrics::{evaluate_masks, MaskRole, MaskSet, MetricsReport};
use ssb_core::synthdata::load_dataset;
use ssb_core::{Grid, Result, SsbError};
use std::collections::HashMap;

/// Metrics a set is too small to define are left as empty cells.
fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9}"),
        None => String::new(),
    }
}

/// Mean of the present values; empty only when absent in every row.
fn aggregate(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn csv_row(id: &str, r: &MetricsReport) -> String {
    format!(
        "{id},{},{},{},{},{},{}\n",
        fmt(Some(r.ged)),
        fmt(Some(r.d_max)),
        fmt(Some(r.ci)),
        fmt(r.d_a),
        fmt(r.ddi_exp),
        fmt(r.ddi_gen),
    )
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let manifest = read_sample_manifest(&args.pred)?;
    if manifest.records.is_empty() {
        return Err(SsbError::Dataset("sample manifest lists no records".into()));
    }
    let by_id: HashMap<&str, &ssb_core::synthdata::LoadedRecord> =
        ds.records.iter().map(|r| (r.id.as_str(), r)).collect();

    let mut csv = String::from("id,ged,d_max,ci,d_a,ddi_exp,ddi_gen\n");
    let mut rows: Vec<MetricsReport> = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let dsr = by_id.get(rec.id.as_str()).ok_or_else(|| {
            SsbError::Dataset(format!("sampled record {} is not in the dataset", rec.id))
        })?;
        let masks: Vec<Grid> = rec
            .masks
            .iter()
            .map(|rel| ssb_core::pgm::read_mask_pgm(&args.pred.join(rel)))
            .collect::<Result<_>>()?;
        let generated = MaskSet::new(masks, MaskRole::Generated)?;
        let experts = MaskSet::new(dsr.expert_masks.clone(), MaskRole::Expert)?;
        let report = evaluate_masks(&generated, &experts)?;
        csv.push_str(&csv_row(&rec.id, &report));
        rows.push(report);
    }

    let agg = [
        aggregate(rows.iter().map(|r| Some(r.ged))),
        aggregate(rows.iter().map(|r| Some(r.d_max))),
        aggregate(rows.iter().map(|r| Some(r.ci))),
        aggregate(rows.iter().map(|r| r.d_a)),
        aggregate(rows.iter().map(|r| r.ddi_exp)),
        aggregate(rows.iter().map(|r| r.ddi_gen)),
    ];
    let agg_line = format!(
        "AGGREGATE,{},{},{},{},{},{}",
        fmt(agg[0]),
        fmt(agg[1]),
        fmt(agg[2]),
        fmt(agg[3]),
        fmt(agg[4]),
        fmt(agg[5]),
    );
    csv.push_str(&agg_line);
    csv.push('\n');
    ssb_core::pgm::atomic_write(&args.out, csv.as_bytes())?;

    println!("scored {} records -> {}", rows.len(), args.out.display());
    println!("{agg_line}");
    Ok(())
}
