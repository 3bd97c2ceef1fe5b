use alignkv::align::{k_channel_tiers, required_mantissa_bits, rule2_targets};
use alignkv::attention::{decode, reference_scores, scores_aligned};
use alignkv::{
    AlignConfig, AttentionConfig, Error, HalfWord, KvStore, ReadTier, Tier, UlpExponent, VStrategy,
};
use proptest::prelude::*;

fn finite_half() -> impl Strategy<Value = HalfWord> {
    prop_oneof![
        4 => (-6.0f64..6.0, any::<bool>(), -1.0f64..1.0)
            .prop_map(|(e, neg, m)| HalfWord::encode(if neg { -1.0 } else { 1.0 } * (1.0 + m.abs()) * e.exp2())),
        1 => any::<u16>().prop_map(|b| HalfWord::from_bits(b & 0x7BFF | b & 0x8000)),
        1 => Just(HalfWord::ZERO),
    ]
}

fn context() -> impl Strategy<Value = (Vec<HalfWord>, Vec<Vec<HalfWord>>, Vec<Vec<HalfWord>>)> {
    (1usize..12, 1usize..40).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(finite_half(), d),
            prop::collection::vec(prop::collection::vec(finite_half(), d), n),
            prop::collection::vec(prop::collection::vec(finite_half(), d), n),
        )
    })
}

fn store_of(k: &[Vec<HalfWord>], v: &[Vec<HalfWord>]) -> KvStore {
    let mut s = KvStore::new(k[0].len());
    for (kr, vr) in k.iter().zip(v) {
        s.append_token(kr, vr).unwrap();
    }
    s
}

fn truncated(h: HalfWord, tier: ReadTier) -> f64 {
    match tier {
        ReadTier::Skip => 0.0,
        ReadTier::Read(t) => h.truncate_fill(t.kept_mantissa_bits()).unwrap().decode(),
    }
}

fn decode_or_skip(
    q: &[HalfWord],
    s: &KvStore,
    cfg: &AttentionConfig,
) -> Option<alignkv::AttentionResult> {
    match decode(q, s, cfg) {
        Err(Error::DegenerateDotProduct) => None,
        r => Some(r.unwrap()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tiers_are_invariant_to_power_of_two_query_scaling(
        (q, k, _v) in context(),
        shift in -3i32..=3,
    ) {
        let colmax = store_of(&k, &k).colmax().to_vec();
        let scaled: Vec<HalfWord> = q.iter().map(|h| HalfWord::encode(h.decode() * 2f64.powi(shift))).collect();
        let exact = q.iter().zip(&scaled).all(|(a, b)| b.decode() == a.decode() * 2f64.powi(shift));
        prop_assume!(exact);
        let cfg = AlignConfig::default();
        match (k_channel_tiers(&q, &colmax, &cfg), k_channel_tiers(&scaled, &colmax, &cfg)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn larger_margin_never_reads_less(
        p in -40i32..20,
        u in -30i32..10,
        m in -2i32..4,
    ) {
        let lo = AlignConfig { margin_bits: m, ..AlignConfig::default() };
        let hi = AlignConfig { margin_bits: m + 1, ..AlignConfig::default() };
        let target = UlpExponent(u);
        prop_assert!(required_mantissa_bits(p, target, &hi) >= required_mantissa_bits(p, target, &lo));
        prop_assert!(hi.tier_for_requirement(p, target) >= lo.tier_for_requirement(p, target));
    }

    #[test]
    fn colmax_and_rowmax_dominate((_q, k, v) in context()) {
        let s = store_of(&k, &v);
        for (t, (kr, vr)) in k.iter().zip(&v).enumerate() {
            for (c, h) in kr.iter().enumerate() {
                prop_assert!(s.colmax()[c].decode() >= h.decode().abs());
            }
            let m = vr.iter().map(|h| h.decode().abs()).fold(0.0, f64::max);
            prop_assert_eq!(s.rowmax()[t].decode(), m);
        }
    }

    #[test]
    fn every_k_addend_meets_its_budget((q, k, v) in context()) {
        let s = store_of(&k, &v);
        let cfg = AlignConfig::default();
        let r = match scores_aligned(&q, &s, &cfg) {
            Err(Error::DegenerateDotProduct) => return Ok(()),
            r => r.unwrap(),
        };
        let budget = 2f64.powi(r.target.unwrap().0 - cfg.margin_bits);
        let d = q.len() as f64;
        let reference = reference_scores(&q, &s.k().to_tensor()).unwrap();
        for (t, row) in k.iter().enumerate() {
            let mut total = 0.0;
            let mut magnitude = 0.0;
            for (c, &tier) in r.channel_tiers.iter().enumerate() {
                let err = (q[c].decode() * (truncated(row[c], tier) - row[c].decode())).abs();
                prop_assert!(err <= budget, "token {} channel {}: {} > {}", t, c, err, budget);
                total += err;
                magnitude += (q[c].decode() * row[c].decode()).abs();
            }
            let rounding = 4.0 * (d + 2.0) * f64::EPSILON * (magnitude + total);
            let gap = (r.scores[t] - reference[t]).abs() * d.sqrt();
            prop_assert!(gap <= d * budget + rounding, "token {}: {} > {}", t, gap, d * budget);
            prop_assert!(gap <= total + rounding);
        }
    }

    #[test]
    fn every_v_addend_meets_its_budget((q, k, v) in context()) {
        let s = store_of(&k, &v);
        let cfg = AttentionConfig::default();
        let Some(r) = decode_or_skip(&q, &s, &cfg) else { return Ok(()) };
        let d = q.len();
        let targets = rule2_targets(&r.estimate.as_ref().unwrap().o_est);
        for (t, row) in v.iter().enumerate() {
            for (c, h) in row.iter().enumerate() {
                let tier = r.v_tiers[t * d + c];
                let err = (r.probs[t] * (truncated(*h, tier) - h.decode())).abs();
                match targets[c] {
                    Some(u) => prop_assert!(err <= 2f64.powi(u.0 - cfg.align.margin_bits)),
                    None => prop_assert!(tier == ReadTier::Read(Tier::T16) || err == 0.0),
                }
            }
        }
    }

    #[test]
    fn metering_matches_the_plan((q, k, v) in context()) {
        let s = store_of(&k, &v);
        let Some(r) = decode_or_skip(&q, &s, &AttentionConfig::default()) else { return Ok(()) };
        let (n, d) = (k.len() as u64, q.len() as u64);
        prop_assert!(r.k_stats.is_consistent() && r.v_stats.is_consistent());
        prop_assert_eq!(r.k_stats.elements_read + r.k_stats.skipped, n * d);
        let k_bits: u64 = r.k_tiers.iter().map(|t| t.read_bits()).sum::<u64>() * n;
        prop_assert_eq!(r.k_stats.bits_read, k_bits);
        let est = r.estimate.as_ref().unwrap();
        let v_plan: u64 = r
            .v_tiers
            .chunks(d as usize)
            .enumerate()
            .filter(|(t, _)| !est.selected.contains(t))
            .flat_map(|(_, row)| row.iter().map(|t| t.read_bits()))
            .sum();
        prop_assert_eq!(r.v_stats.bits_read, v_plan + est.stats.bits_read);
        prop_assert_eq!(est.stats.bits_read, 16 * d * est.selected.len() as u64);
    }

    #[test]
    fn row_strategy_reads_at_least_element_strategy((q, k, v) in context()) {
        let s = store_of(&k, &v);
        let element = AttentionConfig::default();
        let row = AttentionConfig { strategy: VStrategy::Row, ..element };
        let (Some(a), Some(b)) = (decode_or_skip(&q, &s, &element), decode_or_skip(&q, &s, &row)) else {
            return Ok(());
        };
        prop_assert_eq!(&a.scores, &b.scores);
        let d = q.len();
        for t in 0..k.len() {
            let (ea, eb) = (&a.v_tiers[t * d..(t + 1) * d], &b.v_tiers[t * d..(t + 1) * d]);
            prop_assert!(eb.iter().all(|x| *x == eb[0]));
            // A row known to be all zeros is skipped outright.
            if eb[0] == ReadTier::Skip && s.rowmax()[t].is_zero() {
                continue;
            }
            for (x, y) in ea.iter().zip(eb) {
                prop_assert!(y.read_bits() >= x.read_bits());
            }
        }
    }
}
