use num_complex::Complex64;

use crate::grid::GridCase;
use crate::CMat;

/// Assemble the bus admittance matrix (dense, n_bus x n_bus).
///
/// Branch model: series impedance r + jx, total charging b split evenly
/// between the terminals, off-nominal tap `a` on the `from` side:
///
///   Y_ff += (y + jb/2) / a^2,  Y_ft -= y / a,
///   Y_tf -= y / a,             Y_tt += y + jb/2.
pub fn build_ybus(case: &GridCase) -> CMat {
    let n = case.n_bus();
    let mut y = CMat::zeros(n, n);
    for br in &case.branches {
        let f = case.bus_index(br.from).expect("validated");
        let t = case.bus_index(br.to).expect("validated");
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ysh = Complex64::new(0.0, br.b / 2.0);
        let a = br.tap;
        y[(f, f)] += (ys + ysh) / (a * a);
        y[(f, t)] -= ys / a;
        y[(t, f)] -= ys / a;
        y[(t, t)] += ys + ysh;
    }
    y
}
