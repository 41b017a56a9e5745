use criterion::criterion_main;

mod fluctuation;
mod simulator;
mod solver;

criterion_main!(simulator::benches, solver::benches, fluctuation::benches);
