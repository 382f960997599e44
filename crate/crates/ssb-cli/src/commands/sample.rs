use crate::cli::SampleArgs;
use crate::config::{write_toml, RunConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssb_core::bridge::{generate, SampleConfig};
use ssb_core::predictor::{load_checkpoint, ExpertId, Predictor};
use ssb_core::rng::stream;
use ssb_core::synthdata::{load_dataset, Split};
use ssb_core::{Result, SsbError};
use std::path::Path;

pub const SAMPLE_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    pub format_version: u32,
    /// Hex SHA-256 of the checkpoint file the masks came from.
    pub checkpoint_digest: String,
    pub split: Split,
    pub num_samples: usize,
    pub omega: f64,
    pub nfe: usize,
    pub stochastic: bool,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub masks: Vec<String>,
}

#[derive(Serialize)]
struct SampleEcho {
    checkpoint: String,
    split: Split,
    num_samples: usize,
    sample: SampleConfig,
}

pub fn read_sample_manifest(dir: &Path) -> Result<SampleManifest> {
    let path = dir.join("manifest.json");
    let bytes =
        std::fs::read(&path).map_err(|e| SsbError::io(path.display().to_string(), e))?;
    let manifest: SampleManifest = serde_json::from_slice(&bytes)
        .map_err(|e| SsbError::Dataset(format!("sample manifest parse: {e}")))?;
    if manifest.format_version != SAMPLE_MANIFEST_VERSION {
        return Err(SsbError::Dataset(format!(
            "unsupported sample manifest format_version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn run(args: &SampleArgs) -> Result<()> {
    let rc = RunConfig::load(args.config.as_deref())?;
    let mut sec = rc.sample;
    if let Some(v) = args.split {
        sec.split = v.into();
    }
    if let Some(v) = args.num_samples {
        sec.num_samples = v;
    }
    if let Some(v) = args.omega {
        sec.omega = v;
    }
    if let Some(v) = args.nfe {
        sec.nfe = v;
    }
    if let Some(v) = args.seed {
        sec.seed = v;
    }
    if args.deterministic {
        sec.stochastic = false;
    }
    if sec.num_samples == 0 {
        return Err(SsbError::InvalidArgument("num_samples must be at least 1".into()));
    }
    let scfg = sec.to_config();
    scfg.validate()?;

    let ck = load_checkpoint(&args.checkpoint)?;
    let schedule = ck.schedule.build()?;
    let ds = load_dataset(&args.data)?;
    if ds.config.grid_size != ck.header.arch.grid_size {
        return Err(SsbError::InvalidArgument(format!(
            "dataset grid {} does not match checkpoint grid {}",
            ds.config.grid_size, ck.header.arch.grid_size
        )));
    }
    let eta = ck.header.arch.eta;
    let records: Vec<_> = ds.split(sec.split).collect();
    if records.is_empty() {
        return Err(SsbError::InvalidArgument(format!(
            "dataset has no {:?} records",
            sec.split
        )));
    }

    let pred_dir = args.out.join("pred");
    std::fs::create_dir_all(&pred_dir)
        .map_err(|e| SsbError::io(pred_dir.display().to_string(), e))?;

    // One job per (record, sample); each draws from its own stream keyed by
    // record id and sample index, so ordering and thread count are irrelevant.
    let jobs: Vec<(usize, usize)> = (0..records.len())
        .flat_map(|r| (0..sec.num_samples).map(move |j| (r, j)))
        .collect();
    jobs.par_iter().try_for_each(|&(r, j)| -> Result<()> {
        let rec = records[r];
        let label = ExpertId::new((j as u32 % eta) + 1)?;
        let mut rng =
            stream(scfg.seed, &[b"sample", rec.id.as_bytes(), &(j as u64).to_le_bytes()]);
        let net: &dyn Predictor = &ck.net;
        let xf = generate(net, &rec.image, label, &scfg, &schedule, &mut rng)?;
        let mask = xf.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        ssb_core::pgm::write_mask_pgm(&pred_dir.join(format!("{}_s{j}.pgm", rec.id)), &mask)
    })?;

    let ckpt_bytes = std::fs::read(&args.checkpoint)
        .map_err(|e| SsbError::io(args.checkpoint.display().to_string(), e))?;
    let digest: String =
        Sha256::digest(&ckpt_bytes).iter().map(|b| format!("{b:02x}")).collect();
    let manifest = SampleManifest {
        format_version: SAMPLE_MANIFEST_VERSION,
        checkpoint_digest: digest,
        split: sec.split,
        num_samples: sec.num_samples,
        omega: scfg.omega,
        nfe: scfg.nfe,
        stochastic: scfg.stochastic,
        seed: scfg.seed,
        records: records
            .iter()
            .map(|rec| SampleRecord {
                id: rec.id.clone(),
                masks: (0..sec.num_samples)
                    .map(|j| format!("pred/{}_s{j}.pgm", rec.id))
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| SsbError::Dataset(format!("sample manifest encode: {e}")))?;
    ssb_core::pgm::atomic_write(&args.out.join("manifest.json"), &json)?;
    write_toml(
        &args.out.join("sample_config.toml"),
        &SampleEcho {
            checkpoint: args.checkpoint.display().to_string(),
            split: sec.split,
            num_samples: sec.num_samples,
            sample: scfg,
        },
    )?;

    println!(
        "drew {} masks ({} records x {} samples, nfe {}, omega {}) -> {}",
        records.len() * sec.num_samples,
        records.len(),
        sec.num_samples,
        scfg.nfe,
        scfg.omega,
        args.out.display()
    );
    Ok(())
}
