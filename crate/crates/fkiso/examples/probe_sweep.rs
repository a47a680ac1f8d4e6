use fkiso::lattice::*;
use fkiso::sampler::*;
use fkiso::weights::*;
use std::f64::consts::PI;
use std::time::Instant;

fn main() {
    for size in [128usize, 340] {
        let lat = RectLattice::build(
            AngleSequence::Alternating { a: PI / 3.0, b: PI / 2.0 },
            size, size, Geometry::Window,
        ).unwrap();
        let weights = WeightTable::from_thetas(lat.edge_thetas(), 4.0).unwrap();
        let mut rng = fkiso::rng::stream(1, 1);
        let mut chain = ChainState::new(&lat, &weights, PatchBc::free(&lat));
        chain.run(150, &mut rng); // deeper equilibration for realistic costs
        let t0 = Instant::now();
        let reps = 10;
        chain.run(reps, &mut rng);
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!("size {size}: {:.1} ms/sweep equilibrated ({:.0} ns/update)",
                 dt * 1e3, dt / lat.n_edges() as f64 * 1e9);
    }
}
