//! Runs the set transformation on one query and its supports, prints the
//! attention weights of the first head, and shows that reordering the
//! supports only reorders the outputs.

use fewshot_graph::linalg::Mat;
use fewshot_graph::rng::{Seeds, Stream};
use fewshot_graph::transform::{attention_weights, stack_set, Mode, TransformConfig, TransformParams};
use rand::Rng as _;

fn main() -> fewshot_graph::Result<()> {
    let config = TransformConfig {
        d: 8,
        d_prime: 8,
        heads: 2,
        d_ff: 16,
        ..TransformConfig::default()
    };
    let seeds = Seeds::new(3);
    let params = TransformParams::init(config, &mut seeds.stream(Stream::Init))?;
    let mut rng = seeds.stream(Stream::Eval);
    let query: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let supports = Mat::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());

    let set = stack_set(&query, &supports)?;
    let block = &params.blocks()[0];
    let dh = config.d_head();
    let a = attention_weights(&set, &block.wq.row_block(0, dh), &block.wk.row_block(0, dh))?;
    println!("head 0 attention (row = attending element, query first):");
    for i in 0..a.rows() {
        let row: Vec<String> = a.row(i).iter().map(|w| format!("{w:.3}")).collect();
        println!("  {}", row.join(" "));
    }

    let (q_out, s_out) = params.transform_set(&query, &supports, Mode::Eval)?;
    let reversed = Mat::from_rows(&[supports.row(2), supports.row(1), supports.row(0)]);
    let (q_rev, s_rev) = params.transform_set(&query, &reversed, Mode::Eval)?;
    println!("query output unchanged under reordering: {}", q_out == q_rev);
    println!("support outputs follow their inputs: {}", s_out.row(0) == s_rev.row(2));
    Ok(())
}
