mod common;

use activeduel::rng::{RecordedDraws, stream};
use activeduel::selection::{
    FixedScores, SelectionContext, select_deltaucb, select_drts, select_dts, select_infomax,
    select_maxmin, select_maxminlcb, select_random, select_ultrafeedback, thompson_draw,
};
use activeduel::RewardEstimate;
use common::*;
use rand::Rng;

const P_MIN: f64 = 0.01;
const DRAWS: usize = 30_000;

#[test]
fn deterministic_methods_match_brute_force() {
    let mut rng = stream(11, 0, &[]);
    let mut sel_rng = stream(12, 0, &[]);
    for _ in 0..1000 {
        let m = rng.random_range(2..=8);
        let beta = rng.random_range(0.5..2.0);
        let set = candidates(m);
        let est = random_estimates(&mut rng, m, beta);

        let mut ctx = SelectionContext::new(&set, &mut sel_rng).with_estimates(&est);
        let p = select_infomax(&mut ctx).unwrap();
        assert_eq!((p.first_id, p.second_id), brute_infomax(&est));

        let mut ctx = SelectionContext::new(&set, &mut sel_rng).with_estimates(&est);
        let p = select_deltaucb(&mut ctx).unwrap();
        assert_eq!((p.first_id, p.second_id), brute_deltaucb(&est));

        let mut ctx = SelectionContext::new(&set, &mut sel_rng).with_estimates(&est);
        ctx.epsilon = 0.0;
        let p = select_maxminlcb(&mut ctx).unwrap();
        assert_eq!((p.first_id, p.second_id), brute_maxminlcb(&est));

        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..5.0)).collect();
        let mut judge = FixedScores::new(scores.clone());
        let mut ctx = SelectionContext::new(&set, &mut sel_rng).with_judge(&mut judge);
        let p = select_maxmin(&mut ctx).unwrap();
        assert_eq!((p.first_id, p.second_id), brute_maxmin(&scores));
        assert_eq!(p.annotations_spent, m);
    }
}

#[test]
fn random_pairs_are_uniform() {
    let m = 5;
    let set = candidates(m);
    let mut rng = stream(21, 0, &[]);
    let mut counts = vec![0u64; m * m];
    for _ in 0..DRAWS {
        let mut ctx = SelectionContext::new(&set, &mut rng);
        let p = select_random(&mut ctx).unwrap();
        counts[p.first_id * m + p.second_id] += 1;
    }
    let probs: Vec<f64> = (0..m * m)
        .map(|c| if c / m == c % m { 0.0 } else { 1.0 / (m * (m - 1)) as f64 })
        .collect();
    let p = chi_square_p(&counts, &probs);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn ultrafeedback_second_pick_law() {
    let scores = [2.0, 4.5, 1.2, 3.3, 4.9, 2.7];
    let set = candidates(scores.len());
    let mut rng = stream(31, 0, &[]);
    let mut counts = vec![0u64; scores.len()];
    for _ in 0..DRAWS {
        let mut judge = FixedScores::new(scores.to_vec());
        let mut ctx = SelectionContext::new(&set, &mut rng).with_judge(&mut judge);
        let p = select_ultrafeedback(&mut ctx).unwrap();
        assert_eq!(p.annotations_spent, 4);
        counts[p.second_id] += 1;
    }
    let p = chi_square_p(&counts, &ultrafeedback_second_law(&scores));
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn maxminlcb_tie_breaks_are_uniform() {
    let m = 4;
    let set = candidates(m);
    let est = vec![RewardEstimate::new(0.3, 0.2, 1.0).unwrap(); m];
    let mut rng = stream(41, 0, &[]);
    let mut counts = vec![0u64; m * m];
    for _ in 0..DRAWS {
        let mut ctx = SelectionContext::new(&set, &mut rng).with_estimates(&est);
        let p = select_maxminlcb(&mut ctx).unwrap();
        counts[p.first_id * m + p.second_id] += 1;
    }
    let probs: Vec<f64> = (0..m * m)
        .map(|c| if c / m == c % m { 0.0 } else { 1.0 / (m * (m - 1)) as f64 })
        .collect();
    let p = chi_square_p(&counts, &probs);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn thompson_draw_law() {
    let lower = [0.0, 0.5, 0.25, -0.2];
    let upper = [1.0, 1.5, 0.75, 0.9];
    let probs = thompson_probs(&lower, &upper, 200_000);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    let mut rng = stream(51, 0, &[]);
    let mut counts = vec![0u64; 4];
    for _ in 0..DRAWS {
        counts[thompson_draw(&lower, &upper, &mut rng)] += 1;
    }
    let p = chi_square_p(&counts, &probs);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn thompson_two_arm_probability() {
    // Second arm U[0.5, 1.5] beats U[0, 1] with probability 7/8.
    let mut rng = stream(61, 0, &[]);
    let n = 100_000;
    let wins = (0..n).filter(|_| thompson_draw(&[0.0, 0.5], &[1.0, 1.5], &mut rng) == 1).count();
    let freq = wins as f64 / n as f64;
    assert!((freq - 0.875).abs() < 0.01, "{freq}");
    // Midpoint integration is accurate to about one step at the density edges.
    let probs = thompson_probs(&[0.0, 0.5], &[1.0, 1.5], 100_000);
    assert!((probs[1] - 0.875).abs() < 1e-4, "{}", probs[1]);
}

#[test]
fn dts_and_drts_match_step_through() {
    let mut rng = stream(71, 0, &[]);
    let maxiter = 16;
    let mut fallbacks = [0, 0];
    for i in 0..1000 {
        let m = rng.random_range(2..=8);
        let set = candidates(m);
        // Every third instance is nearly degenerate so that fallbacks occur.
        let est: Vec<RewardEstimate> = if i % 3 == 0 {
            let top = rng.random_range(0..m);
            (0..m)
                .map(|j| {
                    let mean = if j == top { 5.0 } else { rng.random_range(-1.0..1.0) };
                    RewardEstimate::new(mean, rng.random_range(0.0..0.05), 1.0).unwrap()
                })
                .collect()
        } else {
            let beta = rng.random_range(0.5..2.0);
            random_estimates(&mut rng, m, beta)
        };
        let tape: Vec<f64> = (0..m * (maxiter + 1) + 1).map(|_| rng.random::<f64>()).collect();
        for (k, reverse) in [false, true].into_iter().enumerate() {
            let (j, jj, fb, used) = step_through(&est, &tape, maxiter, reverse);
            let mut draws = RecordedDraws::new(tape.clone());
            let mut ctx = SelectionContext::new(&set, &mut draws).with_estimates(&est);
            ctx.maxiter = maxiter;
            let p = if reverse { select_drts(&mut ctx) } else { select_dts(&mut ctx) }.unwrap();
            assert_eq!((p.first_id, p.second_id, p.fallback_used), (j, jj, fb), "instance {i}");
            assert_eq!(draws.consumed(), used);
            fallbacks[k] += usize::from(fb);
        }
    }
    assert!(fallbacks[0] > 0, "no DTS fallback exercised");
}
