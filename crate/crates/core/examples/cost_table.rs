//! Multiplication counts from the closed-form cost model, checked against an
//! instrumented run on a tiny stack.

use sim_cellfree::complexity::{ap_cost, cost_table, instrumented_count, write_cost_table, CostPoint};

fn main() -> sim_cellfree::Result<()> {
    let (n, m, k, t) = (4, 2, 2, 2);
    let counted = instrumented_count(n, m, k, t, 0)?;
    let model = ap_cost(n as u64, m as u64, k as u64, t as u64)?;
    println!("counted  channel {} combining {} layers {:?}", counted.channel, counted.combining, counted.per_layer);
    println!("formula  channel {} combining {} layers {:?}", model.channel, model.combining, model.per_layer);

    let points: Vec<CostPoint> = [16, 64, 256]
        .into_iter()
        .flat_map(|n| [2, 4].map(move |t| CostPoint { n, m: 16, k: 8, l: 16, t }))
        .collect();
    let rows = cost_table(&points, 10)?;
    write_cost_table(std::io::stdout().lock(), &rows)
}
