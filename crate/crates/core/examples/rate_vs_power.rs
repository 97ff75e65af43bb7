//! Average rate against transmit power for ideal and impaired hardware,
//! written as sweep CSV to standard output.

use sim_cellfree::harness::{run_experiment, write_sweep_csv, Experiment, ExperimentSpec, Scale};

fn main() -> sim_cellfree::Result<()> {
    for eps in [1.0, 0.99] {
        let mut spec = ExperimentSpec::new(Experiment::RateVsPower, Scale::Desk);
        spec.trials = 20;
        spec.grid = vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0];
        spec.base.set_all_quality(eps);
        eprintln!("quality factor {eps}");
        let report = run_experiment(&spec)?;
        write_sweep_csv(std::io::stdout().lock(), &report)?;
    }
    Ok(())
}
