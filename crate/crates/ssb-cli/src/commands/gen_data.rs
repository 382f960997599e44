use crate::cli::GenDataArgs;
use crate::config::RunConfig;
use ssb_core::synthdata::{write_dataset, Split};
use ssb_core::Result;

pub fn run(args: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.data;
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.grid_size {
        cfg.grid_size = v;
    }
    if let Some(v) = args.experts {
        cfg.experts = v;
    }
    if let Some(v) = args.ambiguity {
        cfg.ambiguity = v;
    }
    if let Some(v) = args.split {
        cfg.split = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    let manifest = write_dataset(&cfg, &args.out)?;
    let train = manifest.records.iter().filter(|r| r.split == Split::Train).count();
    println!(
        "wrote {} records ({} train / {} test), {}x{}, {} experts, ambiguity {} -> {}",
        manifest.records.len(),
        train,
        manifest.records.len() - train,
        cfg.grid_size,
        cfg.grid_size,
        cfg.experts,
        cfg.ambiguity,
        args.out.display()
    );
    Ok(())
}
