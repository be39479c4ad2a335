use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{GradMap, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`.
    Central,
    /// `(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h`; fourth-order, so a
    /// wider `h` keeps truncation small while cutting roundoff.
    FivePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub stencil: Stencil,
    /// Also try `eps / 10`, `eps / 100`, ... this many times and keep the
    /// smallest error per coordinate. Wide steps beat roundoff on tiny
    /// gradients; narrow ones avoid stepping over a ReLU kink.
    pub refine: u32,
    /// Check every coordinate when the model has at most this many,
    /// otherwise a seeded random subset of this size.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            stencil: Stencil::Central,
            refine: 0,
            max_coords: 400,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    /// Setting for deep models whose smallest gradients sit near the
    /// roundoff floor of a central difference.
    pub fn five_point() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            stencil: Stencil::FivePoint,
            refine: 2,
            ..GradCheckConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Relative error `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central finite differences of
/// `loss_fn` at the values in `store`.
pub fn grad_check<T, F>(
    store: &ParamStore<T>,
    analytic: &GradMap<T>,
    mut loss_fn: F,
    cfg: GradCheckConfig,
) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> T,
{
    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, _, t)| t.requires_grad)
        .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if coords.len() <= cfg.max_coords {
        coords
    } else {
        let mut rng = SplitMix64::seed_from_u64(cfg.seed);
        let mut picks = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| coords[i]).collect()
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: chosen.len(),
        worst: None,
    };
    for (id, i) in chosen {
        let orig = work.get(id).data()[i];
        let exact = analytic
            .get(&id)
            .map_or(0.0, |g| g[i].to_f64().unwrap_or(f64::NAN));
        let mut err = f64::INFINITY;
        for r in 0..=cfg.refine {
            let eps = T::lit(cfg.eps / 10f64.powi(r as i32));
            let mut at = |x: T| {
                work.get_mut(id).data_mut()[i] = x;
                loss_fn(&work)
            };
            let numeric = match cfg.stencil {
                Stencil::Central => (at(orig + eps) - at(orig - eps)) / (eps + eps),
                Stencil::FivePoint => {
                    let h2 = eps + eps;
                    let eight = T::lit(8.0);
                    let near = at(orig + eps) - at(orig - eps);
                    let far = at(orig + h2) - at(orig - h2);
                    (eight * near - far) / (T::lit(12.0) * eps)
                }
            };
            let e = relative_error(exact, numeric.to_f64().unwrap_or(f64::NAN));
            if e < err || e.is_nan() {
                err = e;
            }
            if e.is_nan() {
                break;
            }
        }
        work.get_mut(id).data_mut()[i] = orig;
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = err;
            report.worst = Some((store.name(id).to_string(), i));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;
    use crate::nn::tensor::Tensor;
    use crate::nn::Init;

    #[test]
    fn constant_loss_has_zero_error() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad())
            .unwrap();
        let report = grad_check(&s, &GradMap::new(), |_| 4.0, GradCheckConfig::default());
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.coords_checked, 3);
    }

    fn linreg_loss(store: &ParamStore<f64>, x: &[f64], y: &[f64]) -> (f64, GradMap<f64>) {
        let mut t = Tape::new();
        let w = t.param(store, store.id("w").unwrap());
        let b = t.param(store, store.id("b").unwrap());
        let xv = t.constant(4, 3, x.to_vec()).unwrap();
        let yv = t.constant(4, 1, y.to_vec()).unwrap();
        let pred = t.matmul(xv, w).unwrap();
        let pred = t.add_row(pred, b).unwrap();
        let diff = t.sub(pred, yv).unwrap();
        let l = t.sum_squares(diff);
        let l = t.scale(l, 0.25);
        let g = t.backward(l, 1.0).unwrap();
        (t.scalar(l), g)
    }

    #[test]
    fn linear_regression_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mut s = ParamStore::<f64>::new();
            s.insert_init("w", vec![3, 1], Init::XavierUniform, &mut rng).unwrap();
            s.insert_init("b", vec![1], Init::Normal(0.5), &mut rng).unwrap();
            let x: Vec<f64> = (0..12).map(|i| ((i * 7 + seed as usize) % 5) as f64 - 2.0).collect();
            let y = vec![0.5, -1.0, 2.0, 0.0];
            let (_, g) = linreg_loss(&s, &x, &y);
            let report = grad_check(&s, &g, |st| linreg_loss(st, &x, &y).0, GradCheckConfig::default());
            assert!(report.max_rel_err < 1e-6, "seed {seed}: {report:?}");
            let report = grad_check(&s, &g, |st| linreg_loss(st, &x, &y).0, GradCheckConfig::five_point());
            assert!(report.max_rel_err < 1e-6, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_caught_at_every_step() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Tensor::new(vec![1], vec![0.7]).unwrap().with_grad()).unwrap();
        let id = s.id("w").unwrap();
        let wrong: GradMap<f64> = [(id, vec![1.1 * 2.0 * 0.7])].into();
        let r = grad_check(&s, &wrong, |st| st.get(id).data()[0].powi(2), GradCheckConfig::five_point());
        assert!(r.max_rel_err > 0.04, "{r:?}");
    }

    #[test]
    fn subset_is_seeded_and_sized() {
        let mut rng = SplitMix64::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        s.insert_init("w", vec![30, 30], Init::XavierUniform, &mut rng).unwrap();
        let cfg = GradCheckConfig {
            max_coords: 200,
            ..GradCheckConfig::default()
        };
        let r = grad_check(&s, &GradMap::new(), |_| 0.0, cfg);
        assert_eq!(r.coords_checked, 200);
    }
}
