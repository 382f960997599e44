use crate::cli::TrainArgs;
use crate::config::{write_toml, RunConfig};
use serde::Serialize;
use ssb_core::predictor::{config_digest, save_checkpoint, train, ArchConfig, TrainConfig};
use ssb_core::schedule::ScheduleParams;
use ssb_core::synthdata::{load_dataset, DatasetConfig, Split};
use ssb_core::{Result, SsbError};

pub const CHECKPOINT_FILE: &str = "checkpoint.ssbc";

/// Effective settings echoed next to the checkpoint.
#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a DatasetConfig,
    schedule: ScheduleParams,
    model: &'a ArchConfig,
    train: &'a TrainConfig,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let rc = RunConfig::load(args.config.as_deref())?;
    let mut tcfg = rc.train;
    if let Some(v) = args.steps {
        tcfg.steps = v;
    }
    if let Some(v) = args.batch {
        tcfg.batch = v;
    }
    if let Some(v) = args.lr {
        tcfg.lr = v;
    }
    if let Some(v) = args.seed {
        tcfg.seed = v;
    }
    if let Some(v) = args.gamma {
        tcfg.loss.gamma = v;
    }
    if let Some(v) = args.label_drop_prob {
        tcfg.loss.label_drop_prob = v;
    }
    if let Some(v) = args.dice_on_eps {
        tcfg.loss.dice_on_eps = v;
    }
    let mut sched = rc.schedule;
    if let Some(v) = args.n_steps {
        sched.n_steps = v;
    }
    if let Some(v) = args.total_variance {
        sched.total_variance = v;
    }
    let mut model = rc.model;
    if let Some(v) = &args.channels {
        let [a, b] = v.as_slice() else {
            return Err(SsbError::InvalidArgument(format!(
                "--channels takes exactly two widths, got {}",
                v.len()
            )));
        };
        model.channels = [*a, *b];
    }
    if let Some(v) = args.groups {
        model.groups = v;
    }

    let ds = load_dataset(&args.data)?;
    let arch = model.to_arch(ds.config.grid_size, ds.config.experts);
    let items: Vec<ssb_core::predictor::TrainItem> = ds
        .split(Split::Train)
        .map(|r| ssb_core::predictor::TrainItem {
            image: r.image.clone(),
            masks: r.expert_masks.clone(),
        })
        .collect();
    if items.is_empty() {
        return Err(SsbError::InvalidArgument(
            "dataset has no train records; regenerate with a positive split".into(),
        ));
    }
    let schedule = sched.to_params().build()?;

    let outcome = train(&items, arch, &tcfg, &schedule)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| SsbError::io(args.out.display().to_string(), e))?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.net, schedule.params(), &config_digest(&tcfg))?;

    let mut trace = String::from("iteration,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{l:.9}\n"));
    }
    ssb_core::pgm::atomic_write(&args.out.join("loss_trace.csv"), trace.as_bytes())?;
    write_toml(
        &args.out.join("train_config.toml"),
        &TrainEcho { data: &ds.config, schedule: schedule.params(), model: &arch, train: &tcfg },
    )?;

    let last = *outcome.loss_trace.last().expect("steps >= 1");
    println!(
        "trained {} iterations on {} records ({} parameters); final batch loss {:.6}",
        tcfg.steps,
        items.len(),
        outcome.net.params().len(),
        last
    );
    println!("checkpoint {}", ckpt.display());
    Ok(())
}
