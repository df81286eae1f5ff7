use std::time::Instant;

use truthprobe::eval::Cell;
use truthprobe::probe::{sweep, TrainConfig};
use truthprobe::synth::{generate_planted, SynthConfig};

#[test]
fn planted_cell_is_recovered() {
    let config = SynthConfig {
        num_records: 2000,
        num_layers: 8,
        hidden_dim: 64,
        planted_cell: Cell::new(5, "exact_last"),
        signal_strength: 4.0,
        noise_std: 1.0,
        seed: 11,
        ..Default::default()
    };
    assert!(config.bayes_auc() >= 0.99);
    let (ds, truth) = generate_planted(&config).unwrap();
    let start = Instant::now();
    let grid = sweep(&ds, &TrainConfig::default()).unwrap();
    eprintln!("sweep took {:?}", start.elapsed());
    assert_eq!(grid.select_best_cell().unwrap(), truth.cell);
    let best = grid.auc_at(&truth.cell).unwrap();
    assert!(best >= 0.97, "{best}");
    for l in 0..8 {
        for (p, name) in grid.positions.iter().enumerate() {
            if l == 5 && name == "exact_last" {
                continue;
            }
            let a = grid.get(l, p);
            assert!((0.4..=0.6).contains(&a), "{l}:{name} -> {a}");
        }
    }
}
