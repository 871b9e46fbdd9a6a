use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

/// Denominator floor of the relative error. Central differences of a loss of
/// magnitude `L` carry roundoff near `1e-16 * L / h`, which a structurally
/// zero gradient would otherwise turn into a large relative error.
pub const FD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    /// Max over checked coordinates of `|analytic - fd| / (|analytic| + FD_FLOOR)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub nan_count: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.nan_count == 0 && self.max_rel_error <= tol
    }
}

/// Compares analytic gradients against central differences of `f`.
///
/// `params` are perturbed in place (and restored). For each tensor at most
/// `coords_per_param` coordinates are checked, chosen by `seed`.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &mut [Tensor],
    analytic: &[Vec<f64>],
    h: f64,
    coords_per_param: usize,
    seed: u64,
) -> FdReport
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        nan_count: 0,
    };
    for p in 0..params.len() {
        let n = params[p].numel();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + h;
            let up = f(params);
            params[p].data_mut()[i] = orig - h;
            let down = f(params);
            params[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[p][i];
            let err = (a - fd).abs() / (a.abs() + FD_FLOOR);
            if err.is_nan() {
                report.nan_count += 1;
            } else if err > report.max_rel_error {
                report.max_rel_error = err;
            }
            report.checked += 1;
        }
    }
    report
}
