//! Built-in self checks: a table of fast, deterministic probes over the
//! numeric core, each reducing to ok or FAIL with a one-line reason. The
//! fault-injection flag corrupts the schedule driving the reverse chain (and
//! the rate table) while leaving the reference expectations alone, which must
//! flip the affected checks to FAIL; it exists to prove the table has teeth.

use crate::cli::VerifyArgs;
use ssb_core::bridge;
use ssb_core::loss::{ssb_loss_grad, LossConfig};
use ssb_core::predictor::{
    load_checkpoint, save_checkpoint, train, ArchConfig, DiracOracle, DownsampleKind,
    GaussianOracle, Predictor, TrainConfig, TrainItem, UpsampleKind,
};
use ssb_core::rng::{stream, stream_indexed};
use ssb_core::schedule::Schedule;
use ssb_core::synthdata::{gen_record, DatasetConfig};
use ssb_core::{Grid, Result};

type Check = std::result::Result<(), String>;

fn err<T: std::fmt::Display>(e: T) -> String {
    e.to_string()
}

/// Strongly asymmetric rate ramp with total mass 1; a stand-in corruption for
/// the symmetric tent.
fn ramp_schedule(n: usize) -> Result<Schedule> {
    let raw_total = (n * (n + 1) / 2) as f64;
    Schedule::from_beta((1..=n).map(|i| i as f64 / raw_total).collect())
}

fn check_schedule_endpoints() -> Check {
    let s = Schedule::with_total_variance(50, 1.0).map_err(err)?;
    if s.sigma_sq()[0] != 0.0 || s.sigma_sq()[50] != 1.0 {
        return Err(format!(
            "accumulated variance endpoints are ({}, {}), want (0, 1)",
            s.sigma_sq()[0],
            s.sigma_sq()[50]
        ));
    }
    let c0 = s.bridge_coeffs(0).map_err(err)?;
    let cn = s.bridge_coeffs(50).map_err(err)?;
    if (c0.w0, c0.w1, c0.var) != (1.0, 0.0, 0.0) || (cn.w0, cn.w1, cn.var) != (0.0, 1.0, 0.0) {
        return Err("bridge coefficients are not exact at the endpoints".into());
    }
    Ok(())
}

fn check_rate_symmetry(fault: bool) -> Check {
    let rates: Vec<f64> = if fault {
        ramp_schedule(10).map_err(err)?.beta().to_vec()
    } else {
        Schedule::new(10, 0.2).map_err(err)?.beta().to_vec()
    };
    let n = rates.len();
    for i in 0..n {
        if rates[i] != rates[n - 1 - i] {
            return Err(format!(
                "rate[{i}] = {} but rate[{}] = {}",
                rates[i],
                n - 1 - i,
                rates[n - 1 - i]
            ));
        }
    }
    Ok(())
}

fn check_bridge_endpoint_draws() -> Check {
    let s = Schedule::with_total_variance(50, 1.0).map_err(err)?;
    let x0 = Grid::from_vec(2, 2, vec![0.0, 1.0, 0.25, 0.75]).map_err(err)?;
    let x1 = Grid::from_vec(2, 2, vec![0.9, 0.1, 0.5, 0.3]).map_err(err)?;
    let mut rng = stream(11, &[b"verify-endpoints"]);
    if bridge::sample_xt(&x0, &x1, 0, &s, &mut rng).map_err(err)? != x0 {
        return Err("draw at step 0 is not exactly x0".into());
    }
    if bridge::sample_xt(&x0, &x1, 50, &s, &mut rng).map_err(err)? != x1 {
        return Err("draw at step n is not exactly x1".into());
    }
    Ok(())
}

fn check_ladder_pins() -> Check {
    let want7 = vec![50, 43, 36, 29, 21, 14, 7, 0];
    let got7 = bridge::step_ladder(50, 7).map_err(err)?;
    if got7 != want7 {
        return Err(format!("ladder(50, 7) = {got7:?}, want {want7:?}"));
    }
    let want10: Vec<usize> = (0..=10).rev().map(|k| k * 5).collect();
    let got10 = bridge::step_ladder(50, 10).map_err(err)?;
    if got10 != want10 {
        return Err(format!("ladder(50, 10) = {got10:?}, want {want10:?}"));
    }
    let big = bridge::step_ladder(1000, 50).map_err(err)?;
    if big[1] != 980 {
        return Err(format!("ladder(1000, 50)[1] = {}, want 980", big[1]));
    }
    Ok(())
}

fn check_dirac_chain() -> Check {
    let s = Schedule::with_total_variance(50, 1.0).map_err(err)?;
    let target = Grid::constant(2, 2, 0.7);
    let oracle = DiracOracle::new(target.clone(), s.clone());
    let x1 = Grid::from_vec(2, 2, vec![0.9, 0.1, 0.5, 0.3]).map_err(err)?;
    for nfe in [1usize, 7, 50] {
        let cfg =
            bridge::SampleConfig { omega: 0.0, nfe, stochastic: true, seed: 77 };
        let mut rng = stream_indexed(77, "verify-dirac", nfe as u64);
        let label = ssb_core::predictor::ExpertId::new(1).map_err(err)?;
        let out = bridge::generate(&oracle, &x1, label, &cfg, &s, &mut rng).map_err(err)?;
        for (got, want) in out.data().iter().zip(target.data()) {
            if (got - want).abs() > 1e-9 {
                return Err(format!(
                    "chain with exact noise missed its point target at nfe {nfe}: {got} vs {want}"
                ));
            }
        }
    }
    Ok(())
}

/// Run the reverse chain (with the true mask plugged in) down to the middle
/// rung and compare the pooled sample moments against the closed-form bridge
/// marginal. Under fault injection only the chain's schedule is corrupted, so
/// the moments drift outside the tolerance band and the check must FAIL.
fn check_reverse_marginal_moments(fault: bool) -> Check {
    let n = 10usize;
    let rung = 5usize;
    let clean = Schedule::with_total_variance(n, 1.0).map_err(err)?;
    let chain_s = if fault { ramp_schedule(n).map_err(err)? } else { clean.clone() };
    let x0 = Grid::constant(4, 4, 0.1);
    let x1 = Grid::constant(4, 4, 0.9);
    let c = clean.bridge_coeffs(rung).map_err(err)?;
    let chains = 4000usize;
    let total = chains * x0.len();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for chain in 0..chains {
        let mut rng = stream_indexed(2024, "verify-moments", chain as u64);
        let mut x = x1.clone();
        for from in ((rung + 1)..=n).rev() {
            x = bridge::reverse_step(&x, &x0, from, from - 1, &chain_s, true, &mut rng)
                .map_err(err)?;
        }
        for (i, v) in x.data().iter().enumerate() {
            let expected = c.w0 * x0.data()[i] + c.w1 * x1.data()[i];
            let r = v - expected;
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / total as f64;
    let var = sum_sq / total as f64 - mean * mean;
    let mean_tol = 5.0 * (c.var / total as f64).sqrt();
    let var_tol = 5.0 * c.var * (2.0 / (total as f64 - 1.0)).sqrt();
    if mean.abs() > mean_tol {
        return Err(format!(
            "pooled mean residual {mean:.6} exceeds {mean_tol:.6} at rung {rung}"
        ));
    }
    if (var - c.var).abs() > var_tol {
        return Err(format!(
            "pooled variance {var:.6} is off the marginal {:.6} by more than {var_tol:.6}",
            c.var
        ));
    }
    Ok(())
}

fn check_oracle_posterior() -> Check {
    let s = Schedule::with_total_variance(50, 1.0).map_err(err)?;
    let m0 = Grid::constant(1, 1, 0.3);
    let x1 = Grid::constant(1, 1, 2.0);
    let far = GaussianOracle::new(m0, 0.25, x1.clone(), s.clone()).map_err(err)?;
    let post = far.posterior_mean(&x1, 50).map_err(err)?;
    if post.data()[0] != 0.3 {
        return Err(format!(
            "posterior at the uninformative endpoint is {}, want the prior mean 0.3",
            post.data()[0]
        ));
    }
    let mid = GaussianOracle::new(Grid::zeros(1, 1), 1.0, Grid::zeros(1, 1), s).map_err(err)?;
    let got = mid.posterior_mean(&Grid::constant(1, 1, 1.0), 25).map_err(err)?.data()[0];
    if (got - 1.0).abs() > 1e-9 {
        return Err(format!("midpoint posterior mean {got}, want 1.0"));
    }
    Ok(())
}

fn check_checkpoint_round_trip() -> Check {
    let arch = ArchConfig {
        grid_size: 8,
        channels: [4, 8],
        time_embed_dim: 8,
        groups: 2,
        eta: 2,
        down_kind: DownsampleKind::StridedConv,
        up_kind: UpsampleKind::Nearest,
        residual: true,
    };
    let net = ssb_core::predictor::TinyUNet::init(arch, 5).map_err(err)?;
    let schedule = Schedule::with_total_variance(10, 1.0).map_err(err)?;
    let dir = std::env::temp_dir();
    let tag = format!(
        "ssb-verify-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    );
    let path_a = dir.join(format!("{tag}-a.ssbc"));
    let path_b = dir.join(format!("{tag}-b.ssbc"));
    let result = (|| -> Check {
        save_checkpoint(&path_a, &net, schedule.params(), "verify").map_err(err)?;
        let loaded = load_checkpoint(&path_a).map_err(err)?;
        for (a, b) in net.params().iter().zip(loaded.net.params()) {
            if *a as f32 != *b as f32 {
                return Err("reloaded parameters differ beyond f32 storage".into());
            }
        }
        save_checkpoint(&path_b, &loaded.net, loaded.schedule, &loaded.header.train_digest)
            .map_err(err)?;
        let bytes_a = std::fs::read(&path_a).map_err(err)?;
        let bytes_b = std::fs::read(&path_b).map_err(err)?;
        if bytes_a != bytes_b {
            return Err("resaving a loaded checkpoint changed the bytes".into());
        }
        Ok(())
    })();
    let _ = std::fs::remove_file(&path_a);
    let _ = std::fs::remove_file(&path_b);
    result
}

fn check_loss_gradient_probe() -> Check {
    let eps_pred = Grid::from_vec(2, 2, vec![0.3, -0.2, 0.1, 0.4]).map_err(err)?;
    let eps_target = Grid::from_vec(2, 2, vec![0.1, 0.0, -0.3, 0.2]).map_err(err)?;
    let x_t = Grid::from_vec(2, 2, vec![0.5, 0.45, 0.65, 0.3]).map_err(err)?;
    let x0 = Grid::from_vec(2, 2, vec![1.0, 0.0, 1.0, 0.0]).map_err(err)?;
    let sigma = 0.6;
    for dice_on_eps in [false, true] {
        let cfg = LossConfig { dice_on_eps, ..LossConfig::default() };
        let (_, grad) =
            ssb_loss_grad(&eps_pred, &eps_target, &x_t, sigma, &x0, &cfg).map_err(err)?;
        let h = 1e-6;
        for i in 0..eps_pred.len() {
            let mut plus = eps_pred.clone();
            plus.data_mut()[i] += h;
            let mut minus = eps_pred.clone();
            minus.data_mut()[i] -= h;
            let (lp, _) = ssb_loss_grad(&plus, &eps_target, &x_t, sigma, &x0, &cfg).map_err(err)?;
            let (lm, _) =
                ssb_loss_grad(&minus, &eps_target, &x_t, sigma, &x0, &cfg).map_err(err)?;
            let fd = (lp - lm) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            if rel > 1e-5 {
                return Err(format!(
                    "loss gradient pixel {i} (dice_on_eps {dice_on_eps}): fd {fd} vs {an}"
                ));
            }
        }
    }
    Ok(())
}

fn check_train_determinism() -> Check {
    let dcfg = DatasetConfig { count: 2, grid_size: 8, experts: 2, ambiguity: 0.4, split: 1.0, seed: 5 };
    let items: Vec<TrainItem> = (0..2u64)
        .map(|i| {
            let r = gen_record(&dcfg, i).map_err(err)?;
            Ok(TrainItem { image: r.image, masks: r.expert_masks })
        })
        .collect::<std::result::Result<_, String>>()?;
    let arch = ArchConfig {
        grid_size: 8,
        channels: [4, 8],
        time_embed_dim: 8,
        groups: 2,
        eta: 2,
        down_kind: DownsampleKind::StridedConv,
        up_kind: UpsampleKind::Nearest,
        residual: true,
    };
    let schedule = Schedule::with_total_variance(10, 1.0).map_err(err)?;
    let cfg = TrainConfig { steps: 2, batch: 2, ..TrainConfig::default() };
    let a = train(&items, arch, &cfg, &schedule).map_err(err)?;
    let b = train(&items, arch, &cfg, &schedule).map_err(err)?;
    if a.net.params() != b.net.params() || a.loss_trace != b.loss_trace {
        return Err("two identical short trainings produced different results".into());
    }
    Ok(())
}

fn check_pgm_round_trip() -> Check {
    let mask = Grid::from_vec(
        2,
        4,
        vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
    )
    .map_err(err)?;
    let bytes = ssb_core::pgm::mask_to_bytes(&mask).map_err(err)?;
    let back = ssb_core::pgm::mask_from_bytes(4, 2, &bytes).map_err(err)?;
    if back != mask {
        return Err("binary mask did not survive the byte round trip".into());
    }
    let img = Grid::from_vec(1, 4, vec![0.0, 0.34, 0.661, 1.0]).map_err(err)?;
    let once = ssb_core::pgm::image_to_bytes(&img);
    let re = ssb_core::pgm::image_from_bytes(4, 1, &once).map_err(err)?;
    if ssb_core::pgm::image_to_bytes(&re) != once {
        return Err("8-bit image quantization is not idempotent".into());
    }
    Ok(())
}

fn check_guidance_shortcut() -> Check {
    let s = Schedule::with_total_variance(10, 1.0).map_err(err)?;
    let target = Grid::constant(2, 2, 0.4);
    let oracle = DiracOracle::new(target, s);
    let x = Grid::constant(2, 2, 0.8);
    let label = ssb_core::predictor::ExpertId::new(1).map_err(err)?;
    let guided = bridge::guided_eps(&oracle, &x, label, 3, 0.0).map_err(err)?;
    let direct = oracle.predict(&x, Some(label), 3).map_err(err)?;
    if guided != direct {
        return Err("omega = 0 result is not bitwise the conditional prediction".into());
    }
    Ok(())
}

pub fn run(args: &VerifyArgs) -> Result<bool> {
    if args.inject_fault {
        println!(
            "fault injection on: rate table and reverse chain run on an asymmetric schedule"
        );
    }
    let checks: Vec<(&str, Check)> = vec![
        ("schedule-endpoints", check_schedule_endpoints()),
        ("rate-symmetry", check_rate_symmetry(args.inject_fault)),
        ("bridge-endpoint-draws", check_bridge_endpoint_draws()),
        ("ladder-pins", check_ladder_pins()),
        ("dirac-chain", check_dirac_chain()),
        ("reverse-marginal-moments", check_reverse_marginal_moments(args.inject_fault)),
        ("oracle-posterior", check_oracle_posterior()),
        ("guidance-shortcut", check_guidance_shortcut()),
        ("checkpoint-round-trip", check_checkpoint_round_trip()),
        ("loss-gradient-probe", check_loss_gradient_probe()),
        ("train-determinism", check_train_determinism()),
        ("pgm-round-trip", check_pgm_round_trip()),
    ];
    let mut failures = 0usize;
    for (name, outcome) in &checks {
        match outcome {
            Ok(()) => println!("ok    {name}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failures == 0 {
        println!("verification passed ({} checks)", checks.len());
    } else {
        println!("verification failed: {failures} of {} checks", checks.len());
    }
    Ok(failures == 0)
}
