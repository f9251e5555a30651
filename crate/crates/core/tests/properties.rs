use pegrad_core::combine::{pcgrad_plus_combine, pegrad_combine, project_orthogonal, scalarized_combine};
use pegrad_core::ppo::{gae, scalarized_advantage, Boundary};
use pegrad_core::{Graph, GradPair, ParamVector, Tensor};
use proptest::prelude::*;

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::from_tensors([("g", Tensor::new(vec![v.len()], v.to_vec()).unwrap())])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Pairs of equal-length vectors whose entries span many orders of magnitude.
fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..64).prop_flat_map(|d| {
        let entry = (-1.0f64..1.0, -3i32..4).prop_map(|(m, e)| m * 10f64.powi(e));
        (prop::collection::vec(entry.clone(), d), prop::collection::vec(entry, d))
    })
}

proptest! {
    #[test]
    fn pegrad_invariants((g_r, g_e) in pair()) {
        prop_assume!(norm(&g_r) > 1e-9);
        let out = pegrad_combine(&GradPair::new(pv(&g_r), pv(&g_e)).unwrap()).unwrap();
        let d = out.direction.values();
        let (nr, ne) = (norm(&g_r), norm(&g_e));
        let v = project_orthogonal(&pv(&g_e), &pv(&g_r)).unwrap();
        prop_assert!(dot(&g_r, v.values()).abs() <= 1e-9 * nr * ne.max(f64::MIN_POSITIVE));
        let step: Vec<f64> = d.iter().zip(&g_r).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&step) <= nr * (1.0 + 1e-12));
        prop_assert!((dot(&g_r, d) - nr * nr).abs() <= 1e-9 * nr * nr);
        prop_assert!(out.diagnostics.beta_scale > 0.0 && out.diagnostics.beta_scale <= 1.0);
        prop_assert!(out.diagnostics.projected);
    }

    #[test]
    fn pegrad_is_positively_homogeneous((g_r, g_e) in pair(), c in 1e-3f64..1e3) {
        prop_assume!(norm(&g_r) > 1e-6);
        let base = pegrad_combine(&GradPair::new(pv(&g_r), pv(&g_e)).unwrap()).unwrap();
        let scaled_r: Vec<f64> = g_r.iter().map(|x| c * x).collect();
        let scaled_e: Vec<f64> = g_e.iter().map(|x| c * x).collect();
        let scaled = pegrad_combine(&GradPair::new(pv(&scaled_r), pv(&scaled_e)).unwrap()).unwrap();
        let tol = 1e-12 * c * (norm(&g_r) + norm(&g_e));
        for (a, b) in scaled.direction.values().iter().zip(base.direction.values()) {
            prop_assert!((a - c * b).abs() <= tol, "{} vs {}", a, c * b);
        }
        prop_assert!((scaled.diagnostics.beta_scale - base.diagnostics.beta_scale).abs() <= 1e-12);
        prop_assert!((scaled.diagnostics.cos_g - base.diagnostics.cos_g).abs() <= 1e-12);
    }

    #[test]
    fn energy_scale_invariance_of_pegrad_direction_when_clamped((g_r, g_e) in pair(), c in 1.0f64..1e3) {
        // Once the clamp is active, stretching g_E cannot change the step.
        prop_assume!(norm(&g_r) > 1e-6);
        let big: Vec<f64> = g_e.iter().map(|x| x * 1e6).collect();
        let bigger: Vec<f64> = big.iter().map(|x| x * c).collect();
        let v = project_orthogonal(&pv(&big), &pv(&g_r)).unwrap();
        prop_assume!(norm(v.values()) > norm(&g_r));
        let a = pegrad_combine(&GradPair::new(pv(&g_r), pv(&big)).unwrap()).unwrap();
        let b = pegrad_combine(&GradPair::new(pv(&g_r), pv(&bigger)).unwrap()).unwrap();
        for (x, y) in a.direction.values().iter().zip(b.direction.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * norm(&g_r));
        }
    }

    #[test]
    fn pcgrad_plus_projects_only_on_conflict((g_r, g_e) in pair()) {
        let out = pcgrad_plus_combine(&GradPair::new(pv(&g_r), pv(&g_e)).unwrap()).unwrap();
        let conflict = dot(&g_r, &g_e) < 0.0;
        prop_assert_eq!(out.diagnostics.projected, conflict);
        prop_assert_eq!(out.diagnostics.projected, out.diagnostics.cos_g < 0.0);
        if !conflict {
            for ((d, r), e) in out.direction.values().iter().zip(&g_r).zip(&g_e) {
                prop_assert_eq!(*d, r + e);
            }
        } else {
            // Never moves against g_R.
            prop_assert!(dot(&g_r, out.direction.values()) >= -1e-9 * norm(&g_r) * norm(&g_e));
        }
    }

    #[test]
    fn scalarized_is_linear_in_lambda((g_r, g_e) in pair(), l1 in 0.0f64..10.0, l2 in 0.0f64..10.0) {
        let p = GradPair::new(pv(&g_r), pv(&g_e)).unwrap();
        let a = scalarized_combine(&p, l1).unwrap().direction;
        let b = scalarized_combine(&p, l2).unwrap().direction;
        let mid = scalarized_combine(&p, 0.5 * (l1 + l2)).unwrap().direction;
        let scale = norm(&g_r) + (l1 + l2) * norm(&g_e);
        for ((x, y), m) in a.values().iter().zip(b.values()).zip(mid.values()) {
            prop_assert!((0.5 * (x + y) - m).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(
        w in prop::collection::vec(-2.0f64..2.0, 6),
        x in prop::collection::vec(-2.0f64..2.0, 6),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let grads = |ca: f64, cb: f64| {
            let mut g = Graph::new();
            let wv = g.param("w", Tensor::new(vec![3, 2], w.clone()).unwrap());
            let xv = g.constant(Tensor::new(vec![2, 3], x.clone()).unwrap());
            let h = g.matmul(xv, wv).unwrap();
            let t = g.tanh(h).unwrap();
            let l1 = g.sum(t).unwrap();
            let sq = g.square(h).unwrap();
            let l2 = g.mean(sq).unwrap();
            let s1 = g.scale(l1, ca).unwrap();
            let s2 = g.scale(l2, cb).unwrap();
            let l = g.add(s1, s2).unwrap();
            g.backward(l).unwrap().into_values()
        };
        let (g1, g2, both) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(a, b));
        for ((p, q), r) in g1.iter().zip(&g2).zip(&both) {
            prop_assert!((a * p + b * q - r).abs() <= 1e-12 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn gae_is_linear_across_channels(
        steps in prop::collection::vec((-1.0f64..1.0, 0.0f64..2.0, -3.0f64..3.0, 0.0f64..5.0, 0u8..10), 1..80),
        lambda in 0.0f64..2.0,
        last in (-3.0f64..3.0, 0.0f64..5.0),
    ) {
        let flags: Vec<Boundary> = steps.iter().map(|s| match s.4 {
            0 => Boundary::Terminated,
            1 => Boundary::Truncated(0.7),
            _ => Boundary::Continue,
        }).collect();
        let energy_flags: Vec<Boundary> = steps.iter().map(|s| match s.4 {
            0 => Boundary::Terminated,
            1 => Boundary::Truncated(1.9),
            _ => Boundary::Continue,
        }).collect();
        let combined_flags: Vec<Boundary> = steps.iter().map(|s| match s.4 {
            0 => Boundary::Terminated,
            1 => Boundary::Truncated(0.7 - lambda * 1.9),
            _ => Boundary::Continue,
        }).collect();
        let col = |f: fn(&(f64, f64, f64, f64, u8)) -> f64| steps.iter().map(f).collect::<Vec<f64>>();
        let (r, e, vr, ve) = (col(|s| s.0), col(|s| s.1), col(|s| s.2), col(|s| s.3));
        let ar = gae(&r, &vr, last.0, &flags, 0.99, 0.95).unwrap();
        let ae = gae(&e, &ve, last.1, &energy_flags, 0.99, 0.95).unwrap();
        let rc: Vec<f64> = r.iter().zip(&e).map(|(a, b)| a - lambda * b).collect();
        let vc: Vec<f64> = vr.iter().zip(&ve).map(|(a, b)| a - lambda * b).collect();
        let ac = gae(&rc, &vc, last.0 - lambda * last.1, &combined_flags, 0.99, 0.95).unwrap();
        let folded = scalarized_advantage(&ar, &ae, lambda).unwrap();
        for (x, y) in folded.iter().zip(&ac) {
            prop_assert!((x - y).abs() <= 1e-10, "{} vs {}", x, y);
        }
    }
}
