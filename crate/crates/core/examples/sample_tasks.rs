//! Draws few-shot tasks from a label pool and writes them in the task file
//! format read by `fewshot-graph eval --tasks`.

use fewshot_graph::rng::{Seeds, Stream};
use fewshot_graph::synth::planted_benchmark;
use fewshot_graph::task::{eligible_labels, sample_tasks, write_tasks, TaskShape};

fn main() -> fewshot_graph::Result<()> {
    let (_, labels) = planted_benchmark(&mut Seeds::new(0).stream(Stream::Data))?;
    let pool: Vec<usize> = (0..labels.label_count()).collect();

    let shape = TaskShape::new(3, 6, 2, 4)?;
    println!("eligible for {shape:?}: {:?}", eligible_labels(&labels, &pool, shape));
    let tight = TaskShape::new(40, 60, 20, 20)?;
    println!("eligible for {tight:?}: {:?}", eligible_labels(&labels, &pool, tight));

    let tasks = sample_tasks(&labels, &pool, shape, 3, &mut Seeds::new(0).stream(Stream::Tasks))?;
    for t in &tasks {
        t.validate(&labels)?;
    }
    let mut text = Vec::new();
    write_tasks(&tasks, &mut text).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}
