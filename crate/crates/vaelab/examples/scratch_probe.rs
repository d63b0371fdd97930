use vaelab::manifolds::gen_ground_truth;
use vaelab::models::{train, GenerativeModel, ModelKind, TrainConfig};
use vaelab::numkit::RngStream;
use vaelab::probes::{count_nonzero_columns, sigma_z_stats};
use vaelab::manifolds::nmse;
use rayon::prelude::*;

fn main() {
    // prune: alpha 1e-3, c1 5e-3, e3000, seeds 0..4
    let jobs: Vec<u64> = (0..5).collect();
    let out: Vec<String> = jobs.par_iter().map(|&rep| {
        let gt = gen_ground_truth(5, 64, 64, 30, 2000, 2000 + rep).unwrap();
        let stream = RngStream::new(11, format!("cal6/prune/r{rep}"));
        let cfg = TrainConfig { epochs: 3000, lr: 1e-3, alpha: 1e-3, c1: 5e-3, seed: stream.derive_seed(), ..TrainConfig::default() };
        let mut vae = GenerativeModel::new(30, &[64, 64], 8, &[64, 64], ModelKind::Vae, &stream.child("v"));
        train(&mut vae, &gt.l, &cfg, None).unwrap();
        let p = count_nonzero_columns(vae.decoder_first_layer());
        let nm = vae.reconstruct_columns(&gt.l).map(|r| nmse(&gt.l, &r).unwrap()).unwrap();
        format!("prune rep={rep}: count={} nmse={:.3} norms={:?}",
            p.nonzero, nm, p.sorted_norms.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>())
    }).collect();
    for r in out { println!("{r}"); }

    // cov nu=0: c1 5e-3, e3000, seeds
    let out2: Vec<String> = (0..3u64).collect::<Vec<_>>().par_iter().map(|&rep| {
        let gt = gen_ground_truth(2, 64, 64, 30, 2000, 3002 + 10 * rep).unwrap();
        let stream = RngStream::new(13, format!("cal6/cov/r{rep}"));
        let cfg = TrainConfig { epochs: 3000, lr: 1e-3, alpha: 1e-4, c1: 5e-3, seed: stream.derive_seed(), ..TrainConfig::default() };
        let mut vae = GenerativeModel::new(30, &[64, 64], 20, &[64, 64], ModelKind::Vae, &stream.child("v"));
        train(&mut vae, &gt.l, &cfg, None).unwrap();
        let st = sigma_z_stats(&vae, &gt.l).unwrap();
        let mid: u64 = st.counts.iter().zip(st.bin_edges.windows(2)).filter(|(_, e)| e[1] > 0.2 && e[0] < 0.8).map(|(c, _)| *c).sum();
        format!("cov rep={rep}: frac<0.1={:.3} mid={:.3} diag(low)={:?}",
            st.frac_below_0_1, mid as f64 / st.total_entries as f64,
            st.sorted_mean_diag.iter().take(6).map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>())
    }).collect();
    for r in out2 { println!("{r}"); }
}
