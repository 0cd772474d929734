use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use guardmem::analysis::{LabeledStateDistribution, Level};
use guardmem::evidence::{gate, regularized_incomplete_beta};
use guardmem::induction::cluster::average_linkage;
use guardmem::induction::{conflict_score, merge_broad};
use guardmem::memory::{Pivot, RuleType};
use guardmem::retrieval::{retrieve, Embedder, HashingEmbedder, PoolEntry};
use guardmem::simulator::apply_noise;
use guardmem::{
    beta_lower_quantile, confidence, BroadPolicy, CaseRecord, EvidenceCounts, GatingConfig, Label, LabelHistogram,
    LocalRule, MemorySnapshot, Report,
};

fn conf(s: u64, c: u64) -> f64 {
    confidence(&EvidenceCounts::new(s, c), 0.05).unwrap()
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Allow), Just(Label::Refuse)]
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "diagnosis", "salary", "address", "family", "friend", "manager", "public", "private", "logs", "invoices",
    ])
    .prop_map(str::to_string)
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..6).prop_map(|w| w.join(" "))
}

fn policy(id: String, statement: String, label: Label, ev: (u64, u64)) -> BroadPolicy {
    BroadPolicy {
        provenance: [format!("{id}-r")].into_iter().collect(),
        policy_id: id.clone(),
        title: format!("title {id}"),
        description: String::new(),
        statement,
        rule_type: RuleType::GeneralPolicy,
        recommended_label: label,
        evidence: EvidenceCounts::new(ev.0, ev.1),
        label_skew: LabelHistogram::from_labels([label]),
        near_conflict: false,
    }
}

proptest! {
    #[test]
    fn confidence_is_monotone(s in 0u64..300, c in 0u64..300) {
        let base = conf(s, c);
        prop_assert!((0.0..1.0).contains(&base));
        prop_assert!(conf(s + 1, c) >= base);
        prop_assert!(conf(s, c + 1) <= base);
    }

    #[test]
    fn quantile_agrees_with_statrs(s in 0u64..150, c in 0u64..150, delta in 0.005f64..0.5) {
        let q = beta_lower_quantile(s, c, delta).unwrap();
        let oracle = Beta::new(1.0 + s as f64, 1.0 + c as f64).unwrap();
        prop_assert!((oracle.cdf(q) - delta).abs() <= 1e-8, "cdf {} vs {}", oracle.cdf(q), delta);
        prop_assert!((regularized_incomplete_beta(q, 1.0 + s as f64, 1.0 + c as f64) - oracle.cdf(q)).abs() <= 1e-10);
    }

    #[test]
    fn contradiction_free_quantile_has_closed_form(s in 0u64..1000, delta in 0.001f64..0.999) {
        let q = beta_lower_quantile(s, 0, delta).unwrap();
        prop_assert!((q - delta.powf(1.0 / (s as f64 + 1.0))).abs() <= 1e-8);
    }

    #[test]
    fn gate_is_inclusive(tau in 0.0f64..=1.0, l in label()) {
        let cfg = GatingConfig { delta: 0.05, tau_refuse: tau, tau_allow: tau };
        prop_assert!(gate(l, tau, &cfg));
        if tau > 0.0 {
            prop_assert!(!gate(l, tau - 1e-9, &cfg));
        }
    }

    #[test]
    fn conflict_score_is_minority_share(allow in 0u64..50, refuse in 0u64..50) {
        let score = conflict_score(&LabelHistogram { allow, refuse });
        prop_assert!((0.0..=0.5).contains(&score));
        if allow + refuse > 0 {
            prop_assert!((score - allow.min(refuse) as f64 / (allow + refuse) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn merging_conserves_evidence(
        items in prop::collection::vec((sentence(), label(), 0u64..20, 0u64..20), 1..12),
    ) {
        let raw: Vec<BroadPolicy> = items
            .into_iter()
            .enumerate()
            .map(|(i, (st, l, s, c))| policy(format!("b{i:02}"), st, l, (s, c)))
            .collect();
        let merged = merge_broad(&raw, &HashingEmbedder::default(), 0.20).unwrap();
        let total = |ps: &[BroadPolicy]| ps.iter().fold((0, 0), |acc, p| (acc.0 + p.evidence.support, acc.1 + p.evidence.contradiction));
        prop_assert_eq!(total(&raw), total(&merged));
        let prov: BTreeSet<String> = merged.iter().flat_map(|p| p.provenance.iter().cloned()).collect();
        prop_assert_eq!(prov.len(), raw.len());
        let statements: BTreeSet<&str> = raw.iter().map(|p| p.statement.as_str()).collect();
        prop_assert!(merged.len() <= statements.len());
    }

    #[test]
    fn clustering_partitions_points(texts in prop::collection::vec(sentence(), 1..15), threshold in 0.0f64..1.0) {
        let e = HashingEmbedder::default();
        let points: Vec<_> = texts.iter().map(|t| e.embed(t).unwrap()).collect();
        let mut seen: Vec<usize> = average_linkage(&points, threshold).into_iter().flatten().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..points.len()).collect::<Vec<_>>());
    }

    #[test]
    fn retrieval_is_ranked_and_bounded(texts in prop::collection::vec(sentence(), 0..12), query in sentence(), k in 0usize..6) {
        let e = HashingEmbedder::default();
        let pool: Vec<PoolEntry> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| PoolEntry { id: format!("p{i:02}"), embedding: e.embed(t).unwrap() })
            .collect();
        let hits = retrieve(&e.embed(&query).unwrap(), &pool, k);
        prop_assert_eq!(hits.len(), k.min(pool.len()));
        for w in hits.windows(2) {
            prop_assert!(w[0].similarity >= w[1].similarity);
        }
        if let Some(last) = hits.last() {
            let picked: BTreeSet<usize> = hits.iter().map(|h| h.index).collect();
            let q = e.embed(&query).unwrap();
            for (i, p) in pool.iter().enumerate() {
                if !picked.contains(&i) {
                    prop_assert!(q.cosine(&p.embedding) <= last.similarity + 1e-12);
                }
            }
        }
    }

    #[test]
    fn snapshot_round_trip(
        broad in prop::collection::vec((sentence(), label(), 0u64..50, 0u64..50), 0..6),
        local in prop::collection::vec((sentence(), label(), 0u64..9, 0u64..9, word(), word()), 0..4),
        version in 0u64..100,
    ) {
        let broad: Vec<BroadPolicy> = broad
            .into_iter()
            .enumerate()
            .map(|(i, (st, l, s, c))| policy(format!("b{i}"), st, l, (s, c)))
            .collect();
        let local: Vec<LocalRule> = local
            .into_iter()
            .enumerate()
            .map(|(i, (region, l, s, c, own, other))| LocalRule {
                rule_id: format!("l{i}"),
                region_summary: region,
                recommended_label: l,
                pivots: vec![Pivot { facet: "venue".into(), own: vec![own], other: vec![other] }, Pivot::none_found()],
                evidence: EvidenceCounts::new(s, c),
                source_cluster_id: format!("privacy-{i}"),
            })
            .collect();
        let snap = MemorySnapshot::new(version, GatingConfig::default(), broad, local).unwrap();
        prop_assert_eq!(MemorySnapshot::from_json(&snap.to_json()).unwrap(), snap);
    }

    #[test]
    fn refinement_never_hurts(seed in any::<u64>(), states in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = LabeledStateDistribution::random(&mut rng, states, 4);
        let (broad, refined) = (d.bayes_risk(Level::Broad), d.bayes_risk(Level::Refined));
        prop_assert!(refined <= broad + 1e-12);
        prop_assert!((0.0..=0.5 + 1e-12).contains(&broad));
        let mut gains = 0.0;
        for z in 0..states {
            let gain = d.refinement_gain(z).unwrap();
            prop_assert!(gain >= -1e-12 && gain <= d.conflict_mass(z).unwrap() + 1e-10);
            gains += gain;
        }
        prop_assert!((broad - refined - gains).abs() < 1e-10);
    }

    #[test]
    fn noise_extremes(n in 0usize..20, seed in any::<u64>()) {
        let reports: Vec<Report> = (0..n)
            .map(|i| {
                let case = CaseRecord {
                    case_id: format!("c{i}"),
                    namespace: "privacy".into(),
                    scenario_text: "t".into(),
                    scenario_summary: "t".into(),
                    group_id: "g".into(),
                    attributes: BTreeMap::new(),
                };
                Report::new(case, Label::Allow, Label::Refuse, 1).unwrap()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clean = reports.clone();
        apply_noise(&mut clean, 0.0, &mut rng);
        prop_assert_eq!(&clean, &reports);
        let mut all = reports.clone();
        apply_noise(&mut all, 1.0, &mut rng);
        prop_assert!(all.iter().all(|r| r.flipped && r.corrected_label == r.predicted_label));
    }
}
