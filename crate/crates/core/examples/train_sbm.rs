//! Trains on a planted-community graph and compares the adapted classifier
//! with plain prototypes over the same embeddings on held-out labels.
//!
//! ```bash
//! cargo run --release --example train_sbm -- 0 1 2 --set total_steps=2000
//! ```

use std::time::Instant;

use fewshot_graph::eval::{evaluate, EvalOptions, Scorer, TaskSource};
use fewshot_graph::graph::split_labels;
use fewshot_graph::rng::{Seeds, Stream};
use fewshot_graph::synth::{planted_benchmark, planted_config};
use fewshot_graph::train::train;

fn main() -> fewshot_graph::Result<()> {
    let mut cfg = planted_config();
    let mut seeds = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--set" {
            let kv = args.next().expect("--set needs key=value");
            let (k, v) = kv.split_once('=').expect("key=value");
            cfg.set(k, v)?;
        } else {
            seeds.push(a.parse::<u64>().expect("seed"));
        }
    }
    if seeds.is_empty() {
        seeds.push(0);
    }

    let mut gaps = Vec::new();
    for seed in seeds {
        let start = Instant::now();
        cfg.seed = seed;
        let (graph, labels) = planted_benchmark(&mut Seeds::new(seed).stream(Stream::Data))?;
        let split = split_labels(&labels, cfg.split_ratio(), seed)?;
        let out = train(&graph, &labels, &split, &cfg, |_| {})?;
        let source = TaskSource::Sample {
            labels: &labels,
            pool: &split.novel,
            shape: cfg.shape()?,
        };
        let mut opts = EvalOptions {
            n_tasks: 200,
            n_trials: 1,
            seed,
            threshold: cfg.threshold,
            scorer: Scorer::Transform,
            threads: 1,
        };
        let adapted = evaluate(&out.model, &source, &opts)?;
        opts.scorer = Scorer::Identity;
        let plain = evaluate(&out.model, &source, &opts)?;
        let gap = adapted.f1.mean - plain.f1.mean;
        gaps.push(gap);
        println!(
            "seed={seed} best_step={:?} adapted f1={:.4} auc={:.4} | plain f1={:.4} auc={:.4} | gap={gap:+.4} ({:.1}s)",
            out.best_step,
            adapted.f1.mean,
            adapted.auc.mean,
            plain.f1.mean,
            plain.auc.mean,
            start.elapsed().as_secs_f64()
        );
    }
    println!("mean gap {:+.4}", gaps.iter().sum::<f64>() / gaps.len() as f64);
    Ok(())
}
