use mixverify_core::curation::{select_and_filter, CotSource, CurationRecord, SourceKind, DEFAULT_THRESHOLD};
use mixverify_core::gatemixer::gate_mix;
use mixverify_core::objectives::{
    creg_loss, creg_loss_graph, similarity_matrix, BatchRepresentations, SimilarityMatrix, SimilarityMode,
};
use mixverify_core::selfverify::{
    confidence, self_verify, weighted_score, Branch, GenerationTrace, PromptMode, ScoredResponse,
};
use mixverify_core::tensor::{finite_diff_check, Graph, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Gram-Schmidt on the rows; `None` when the draw is near-degenerate.
fn orthonormal_rows(m: &Tensor) -> Option<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..m.rows() {
        let mut v = m.row(i).to_vec();
        for q in &rows {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= dot * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        rows.push(v.into_iter().map(|x| x / n).collect());
    }
    Some(Tensor::from_rows(&rows).unwrap())
}

fn response(answer: &str, s: f64, c: f64) -> ScoredResponse {
    ScoredResponse {
        trace: GenerationTrace {
            text: answer.into(),
            token_logprobs: vec![c.ln()],
            img_rep: vec![],
            txt_rep: vec![],
            prompt_mode: PromptMode::Direct,
        },
        answer: answer.into(),
        s,
        c,
        sc: weighted_score(s, c, 0.5),
        alpha: 0.5,
    }
}

proptest! {
    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
            .prop_flat_map(|(m, k, n, p)| (matrix(m, k, 1.0), matrix(k, n, 1.0), matrix(n, p, 1.0)))
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(max_abs_diff(left.data(), right.data()) <= 1e-9);
    }

    #[test]
    fn backward_is_linear(
        x in matrix(3, 4, 1.5),
        w in matrix(4, 2, 1.5),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        // f = sum(sigmoid(x w)), g = mean(exp(x) * x w-row-sums)
        let build = |g: &mut Graph, wa: f64, wb: f64| {
            let xv = g.leaf(x.clone().with_requires_grad());
            let wv = g.leaf(w.clone().with_requires_grad());
            let xw = g.matmul(xv, wv).unwrap();
            let sg = g.sigmoid(xw);
            let f = g.sum(sg);
            let ex = g.exp(xv).unwrap();
            let prod = g.mul(ex, xv).unwrap();
            let pw = g.matmul(prod, wv).unwrap();
            let gl = g.mean(pw);
            let fa = g.scale(f, wa).unwrap();
            let gb = g.scale(gl, wb).unwrap();
            let loss = g.add(fa, gb).unwrap();
            g.backward(loss).unwrap();
            (g.grad(xv).unwrap().to_vec(), g.grad(wv).unwrap().to_vec())
        };
        let (cx, cw) = build(&mut Graph::new(), a, b);
        let (fx, fw) = build(&mut Graph::new(), 1.0, 0.0);
        let (gx, gw) = build(&mut Graph::new(), 0.0, 1.0);
        let mix = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| a * u + b * v).collect::<Vec<_>>();
        prop_assert!(max_abs_diff(&cx, &mix(&fx, &gx)) <= 1e-9);
        prop_assert!(max_abs_diff(&cw, &mix(&fw, &gw)) <= 1e-9);
    }

    #[test]
    fn sigmoid_strictly_inside_unit_interval(v in prop::collection::vec(finite_f64(), 1..32)) {
        let s = Tensor::vector(v).unwrap().sigmoid();
        prop_assert!(s.data().iter().all(|&y| y > 0.0 && y < 1.0));
    }

    #[test]
    fn sigmoid_is_symmetric(v in prop::collection::vec(-30.0..30.0f64, 1..32)) {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let p = Tensor::vector(v).unwrap().sigmoid();
        let n = Tensor::vector(neg).unwrap().sigmoid();
        for (a, b) in p.data().iter().zip(n.data()) {
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gate_output_is_bounded_by_its_streams(
        (h_v, h_c, w_g, b_g) in (1usize..5, 1usize..6).prop_flat_map(|(n, d)| (
            matrix(n, d, 10.0),
            matrix(n, d, 10.0),
            matrix(d, 2 * d, 3.0),
            prop::collection::vec(-20.0..20.0f64, d),
        ))
    ) {
        let d = h_v.cols();
        let (alpha, h) = gate_mix(&h_v, &h_c, &w_g, &Tensor::vector(b_g).unwrap()).unwrap();
        prop_assert!(alpha.data().iter().all(|&a| a > 0.0 && a < 1.0));
        prop_assert_eq!(h.shape(), &[h_v.rows(), d][..]);
        for ((&x, &v), &c) in h.data().iter().zip(h_v.data()).zip(h_c.data()) {
            prop_assert!(v.min(c) <= x && x <= v.max(c), "{} not within [{}, {}]", x, v.min(c), v.max(c));
        }
    }

    #[test]
    fn gate_output_is_bounded_for_nearly_equal_streams(
        (h_v, rel, w_g, b_g) in (1usize..4, 1usize..6).prop_flat_map(|(n, d)| (
            matrix(n, d, 1e6),
            prop::collection::vec(-1e-13..1e-13f64, n * d),
            matrix(d, 2 * d, 3.0),
            prop::collection::vec(-40.0..40.0f64, d),
        ))
    ) {
        let c: Vec<f64> = h_v.data().iter().zip(&rel).map(|(v, r)| v * (1.0 + r)).collect();
        let h_c = Tensor::new(h_v.shape().to_vec(), c).unwrap();
        let (_, h) = gate_mix(&h_v, &h_c, &w_g, &Tensor::vector(b_g).unwrap()).unwrap();
        for ((&x, &v), &c) in h.data().iter().zip(h_v.data()).zip(h_c.data()) {
            prop_assert!(v.min(c) <= x && x <= v.max(c));
        }
    }
}

proptest! {
    #[test]
    fn raising_gate_bias_never_lowers_alpha(
        (h_v, h_c, w_g, b_g, delta) in (1usize..5, 1usize..6).prop_flat_map(|(n, d)| (
            matrix(n, d, 3.0),
            matrix(n, d, 3.0),
            matrix(d, 2 * d, 2.0),
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(0.0..5.0f64, d),
        ))
    ) {
        let raised: Vec<f64> = b_g.iter().zip(&delta).map(|(b, e)| b + e).collect();
        let (lo, _) = gate_mix(&h_v, &h_c, &w_g, &Tensor::vector(b_g).unwrap()).unwrap();
        let (hi, _) = gate_mix(&h_v, &h_c, &w_g, &Tensor::vector(raised).unwrap()).unwrap();
        for (a, b) in lo.data().iter().zip(hi.data()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn gate_mix_is_pure(h_v in matrix(3, 4, 2.0), h_c in matrix(3, 4, 2.0), w_g in matrix(4, 8, 1.0)) {
        let b = Tensor::zeros(&[4]);
        let first = gate_mix(&h_v, &h_c, &w_g, &b).unwrap();
        let second = gate_mix(&h_v, &h_c, &w_g, &b).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn creg_is_non_negative_in_exp_mode(
        (img, txt) in (1usize..7, 1usize..6).prop_flat_map(|(b, d)| (matrix(b, d, 2.0), matrix(b, d, 2.0))),
        tau in 0.05..5.0f64,
    ) {
        prop_assume!(img.normalize_rows().is_ok() && txt.normalize_rows().is_ok());
        let reps = BatchRepresentations::new(img, txt).unwrap();
        let loss = creg_loss(&similarity_matrix(&reps, SimilarityMode::ExpCosine, tau).unwrap()).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn creg_vanishes_in_the_saturated_limit(raw in (2usize..7).prop_flat_map(|b| matrix(b, b + 1, 1.0))) {
        let q = orthonormal_rows(&raw);
        prop_assume!(q.is_some());
        let q = q.unwrap();
        let reps = BatchRepresentations::new(q.clone(), q).unwrap();
        let loss = creg_loss(&similarity_matrix(&reps, SimilarityMode::ExpCosine, 0.01).unwrap()).unwrap();
        prop_assert!((0.0..=1e-30).contains(&loss), "loss {}", loss);
    }

    #[test]
    fn matched_pairs_beat_any_swap(
        (raw, i, j) in (2usize..7).prop_flat_map(|b| (matrix(b, b + 2, 1.0), 0..b, 0..b)),
    ) {
        prop_assume!(i != j);
        let q = orthonormal_rows(&raw);
        prop_assume!(q.is_some());
        let img = q.unwrap();
        let mut rows: Vec<Vec<f64>> = (0..img.rows()).map(|r| img.row(r).to_vec()).collect();
        rows.swap(i, j);
        let swapped = Tensor::from_rows(&rows).unwrap();
        let loss = |txt: Tensor| {
            let reps = BatchRepresentations::new(img.clone(), txt).unwrap();
            creg_loss(&similarity_matrix(&reps, SimilarityMode::ExpCosine, 1.0).unwrap()).unwrap()
        };
        prop_assert!(loss(img.clone()) < loss(swapped));
    }

    #[test]
    fn creg_is_permutation_invariant(
        (s, perm) in (1usize..8).prop_flat_map(|b| (
            prop::collection::vec(0.05..5.0f64, b * b),
            Just((0..b).collect::<Vec<usize>>()).prop_shuffle(),
        ))
    ) {
        let b = perm.len();
        let permuted: Vec<f64> = (0..b * b).map(|k| s[perm[k / b] * b + perm[k % b]]).collect();
        let sim = |data: Vec<f64>| SimilarityMatrix {
            s: Tensor::matrix(b, b, data).unwrap(),
            mode: SimilarityMode::ExpCosine,
            tau: 1.0,
        };
        let a = creg_loss(&sim(s)).unwrap();
        let p = creg_loss(&sim(permuted)).unwrap();
        prop_assert!((a - p).abs() <= 1e-12);
    }

    #[test]
    fn creg_gradient_matches_finite_differences(
        (img, txt) in (2usize..6, 2usize..5).prop_flat_map(|(b, d)| (matrix(b, d, 1.0), matrix(b, d, 1.0))),
    ) {
        let norms_ok = |t: &Tensor| (0..t.rows()).all(|r| t.row(r).iter().map(|x| x * x).sum::<f64>() > 0.05);
        prop_assume!(norms_ok(&img) && norms_ok(&txt));
        let report = finite_diff_check(
            |g, v| creg_loss_graph(g, v[0], v[1], SimilarityMode::ExpCosine, 1.0),
            &[img, txt],
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_err <= 1e-5, "{:?}", report);
    }

    #[test]
    fn confidence_ignores_token_order(
        (lp, shuffled) in prop::collection::vec(-8.0..0.0f64, 1..40)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    ) {
        prop_assert_eq!(confidence(&lp).unwrap(), confidence(&shuffled).unwrap());
    }

    #[test]
    fn lowering_a_logprob_lowers_confidence(
        (lp, pos) in prop::collection::vec(-8.0..0.0f64, 1..40).prop_flat_map(|v| {
            let n = v.len();
            (Just(v), 0..n)
        }),
        drop in 1e-3..5.0f64,
    ) {
        let mut lower = lp.clone();
        lower[pos] -= drop;
        prop_assert!(confidence(&lower).unwrap() < confidence(&lp).unwrap());
    }

    #[test]
    fn alpha_zero_reads_only_similarity(
        s_d in 0.0..1.0f64, s_c in 0.0..1.0f64,
        c_d in 0.01..1.0f64, c_c in 0.01..1.0f64,
        c_d2 in 0.01..1.0f64, c_c2 in 0.01..1.0f64,
    ) {
        let a = self_verify(&response("A", s_d, c_d), &response("B", s_c, c_c), 0.0).unwrap();
        let b = self_verify(&response("A", s_d, c_d2), &response("B", s_c, c_c2), 0.0).unwrap();
        prop_assert_eq!(a.final_answer, b.final_answer);
        prop_assert_eq!(a.branch, b.branch);
    }

    #[test]
    fn alpha_one_reads_only_confidence(
        c_d in 0.01..1.0f64, c_c in 0.01..1.0f64,
        s_d in 0.0..1.0f64, s_c in 0.0..1.0f64,
        s_d2 in 0.0..1.0f64, s_c2 in 0.0..1.0f64,
    ) {
        let a = self_verify(&response("A", s_d, c_d), &response("B", s_c, c_c), 1.0).unwrap();
        let b = self_verify(&response("A", s_d2, c_d), &response("B", s_c2, c_c), 1.0).unwrap();
        prop_assert_eq!(a.final_answer, b.final_answer);
        prop_assert_eq!(a.branch, b.branch);
    }

    #[test]
    fn agreement_short_circuits(
        s_d in 0.0..=1.0f64, s_c in 0.0..=1.0f64,
        c_d in 0.01..=1.0f64, c_c in 0.01..=1.0f64,
        alpha in 0.0..=1.0f64,
        letter in "[A-E]",
    ) {
        let d = self_verify(&response(&letter, s_d, c_d), &response(&letter, s_c, c_c), alpha).unwrap();
        prop_assert_eq!(d.branch, Branch::CotByAgreement);
        prop_assert_eq!(d.final_answer, letter);
    }

    #[test]
    fn filter_is_sound(
        raw_score in 0.0..=1.0f64,
        rewritten_score in 0.0..=1.0f64,
        manual in any::<bool>(),
        threshold in prop::sample::select(vec![DEFAULT_THRESHOLD, 0.0, 0.5, 0.9, 1.0]),
    ) {
        let rec = CurationRecord {
            id: "r".into(),
            image_ref: "img".into(),
            question: "q?".into(),
            options: vec![],
            raw_cot: "raw".into(),
            rewritten_cot: manual.then(|| "rewritten".into()),
            raw_score: Some(raw_score),
            rewritten_score: manual.then_some(rewritten_score),
            source_kind: if manual { SourceKind::Manual } else { SourceKind::AiGenerated },
            split: Some("train".into()),
            image_description: None,
        };
        let best = if manual { raw_score.max(rewritten_score) } else { raw_score };
        match select_and_filter(&rec, threshold).unwrap() {
            Some(kept) => {
                prop_assert!(kept.overall_score >= threshold);
                prop_assert_eq!(kept.overall_score, best);
                let want = if manual && rewritten_score >= raw_score { CotSource::Rewritten } else { CotSource::Raw };
                prop_assert_eq!(kept.chosen, want);
            }
            None => prop_assert!(best < threshold),
        }
    }
}
