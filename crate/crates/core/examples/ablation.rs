//! Runs the loss ablation on the adaptation benchmark and prints mean final
//! target accuracy per configuration.
//!
//! `cargo run --release -p pcsr-core --example ablation [seeds]`

use pcsr::losses::LossToggles;
use pcsr::trainer::{adapt_accuracy, mean_std, prepare_all, AdaptConfig, Arch, PretrainConfig};
use pcsr::ShiftSpec;

fn main() -> pcsr::Result<()> {
    let n_seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let spec = ShiftSpec::benchmark(0);
    let t = std::time::Instant::now();
    let prepared = prepare_all(&spec, &Arch::standard(6), &PretrainConfig::default(), &seeds)?;
    for p in &prepared {
        println!(
            "seed {}: source test {:.4}, source-only target {:.4}",
            p.seed,
            p.source.test_acc.unwrap_or(f64::NAN),
            p.source_only.accuracy
        );
    }
    let src: Vec<f64> = prepared.iter().map(|p| p.source_only.accuracy).collect();
    println!(
        "{:<12} {:.4} ± {:.4}",
        "source-only",
        mean_std(&src).0,
        mean_std(&src).1
    );
    let t_of = |im, pcc, mix| LossToggles { im, pcc, mix };
    let rows = [
        ("im", t_of(true, false, false), 3),
        ("im+pcc", t_of(true, true, false), 3),
        ("im+mix", t_of(true, false, true), 3),
        ("full", LossToggles::ALL, 3),
        ("full P=1", LossToggles::ALL, 1),
    ];
    for (name, toggles, p) in rows {
        let cfg = AdaptConfig {
            toggles,
            centers_per_class: p,
            ..Default::default()
        };
        let accs = prepared
            .iter()
            .map(|prep| adapt_accuracy(prep, &cfg))
            .collect::<pcsr::Result<Vec<_>>>()?;
        let (m, s) = mean_std(&accs);
        println!("{name:<12} {m:.4} ± {s:.4}  {accs:.3?}");
    }
    println!("elapsed {:.1?}", t.elapsed());
    Ok(())
}
