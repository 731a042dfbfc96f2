//! Property tests against small independent oracles.

use std::collections::HashSet;

use proptest::prelude::*;

use structrag_core::config::BuildFlags;
use structrag_core::corpus::{chunk_document, reassemble, WhitespaceTokenizer};
use structrag_core::eval::token_f1;
use structrag_core::extraction::window_start;
use structrag_core::ids::{Id, IdKind, Span};
use structrag_core::pipeline::Builder;
use structrag_core::prompts::Prompts;
use structrag_core::retrieval::top_n;
use structrag_core::ssc::distance::Points;
use structrag_core::ssc::{cluster_document, SPAN_SEPARATOR};
use structrag_core::store::{load_kb, merge_documents, save_kb, BuildMeta};
use structrag_core::{
    Document, Embedding, Hyperedge, MockProvider, PartitionConfig, PipelineConfig, SscConfig, WindowConfig,
};

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}".prop_map(|s| s),
        "[A-Z][a-z]{2,6}\\.".prop_map(|s| s),
        Just("and".to_string()),
    ]
}

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..60).prop_map(|w| w.join(" "))
}

fn document_text() -> impl Strategy<Value = String> {
    prop::collection::vec(paragraph(), 1..8).prop_map(|p| p.join("\n\n"))
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4i8..=4, dim).prop_map(|v| v.into_iter().map(f32::from).collect())
}

fn nonzero(v: &[f32]) -> bool {
    v.iter().any(|&x| x != 0.0)
}

fn oracle_cos(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn hyperedge(doc: &str, k: usize, text: &str, start: usize, v: Vec<f32>) -> Hyperedge {
    Hyperedge {
        hyperedge_id: Id::new(doc, IdKind::Hyperedge, k as u32),
        h_text: text.into(),
        h_ref: text.into(),
        incident_entities: Vec::new(),
        k_index: k,
        chunk_index: 1,
        ref_span: Span::new(start, start + text.len()),
        embedding: Embedding(v),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_respects_bounds_and_reassembles(text in document_text(), ct_min in 1usize..20, extra in 1usize..40) {
        let cfg = PartitionConfig::new(ct_min, ct_min + extra).unwrap();
        let doc = Document::new("d", &text, None).unwrap();
        let chunks = chunk_document(&doc, &cfg, &WhitespaceTokenizer).unwrap();
        prop_assert!(!chunks.is_empty());
        for (n, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.chunk_index, n + 1);
            prop_assert!(c.token_count <= cfg.ct_max);
            prop_assert_eq!(c.token_count, c.text.split_whitespace().count());
            prop_assert_eq!(&doc.text[c.span.start..c.span.end], c.text.as_str());
        }
        prop_assert_eq!(reassemble(&chunks), doc.text.clone());
    }

    #[test]
    fn window_matches_stepwise_oracle(g_max in 1usize..8, ov in 0usize..7, i in 1usize..60) {
        prop_assume!(ov < g_max);
        let cfg = WindowConfig::new(g_max, ov).unwrap();
        let step = g_max - ov;
        // largest start 1 + m*step not beyond i - ov, else 1
        let mut expected = 1;
        let mut t = 1;
        while t + ov <= i {
            expected = t;
            t += step;
        }
        let s = window_start(i, &cfg).unwrap();
        prop_assert_eq!(s, expected);
        prop_assert!(s <= i);
        prop_assert!(i - s <= g_max);
    }

    #[test]
    fn distance_matrix_is_symmetric_and_matches_formula(
        vs in prop::collection::vec(vector(6), 2..12),
        alpha in 0.0f64..2.0,
    ) {
        prop_assume!(vs.iter().all(|v| nonzero(v)));
        let embs: Vec<Embedding> = vs.iter().cloned().map(Embedding).collect();
        let k: Vec<usize> = (0..vs.len()).map(|i| i * 3 + 1).collect();
        let m = Points { embeddings: embs.iter().collect(), k_indices: k.clone(), alpha, scale: 1.0 }
            .matrix_seq()
            .unwrap();
        for i in 0..vs.len() {
            prop_assert_eq!(m.get(i, i), 0.0);
            for j in 0..vs.len() {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!(m.get(i, j) >= 0.0);
                if i != j {
                    let want = (1.0 - oracle_cos(&vs[i], &vs[j])) + alpha * k[i].abs_diff(k[j]) as f64;
                    prop_assert!((m.get(i, j) - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn top_n_matches_brute_force(
        vs in prop::collection::vec(vector(5), 0..40),
        q in vector(5),
        n in 0usize..10,
        tau in -1.0f64..1.0,
    ) {
        prop_assume!(nonzero(&q));
        let ids: Vec<Id> = (0..vs.len()).map(|i| Id::new("d", IdKind::Hyperedge, i as u32 + 1)).collect();
        let embs: Vec<Embedding> = vs.iter().cloned().map(Embedding).collect();
        let cands: Vec<(&Id, &Embedding)> = ids.iter().zip(&embs).collect();
        let got = top_n(&Embedding(q.clone()), &cands, n, tau).unwrap();

        let mut want: Vec<(f64, usize)> = vs
            .iter()
            .enumerate()
            .filter(|(_, v)| nonzero(v))
            .map(|(i, v)| (oracle_cos(&q, v), i + 1))
            .filter(|(s, _)| *s > tau)
            .collect();
        want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        want.truncate(n);
        prop_assert_eq!(got.len(), want.len());
        for (g, (s, c)) in got.iter().zip(&want) {
            prop_assert_eq!(g.id.counter() as usize, *c);
            prop_assert!((g.score - s).abs() < 1e-9);
        }
    }

    #[test]
    fn clusters_are_sound(
        vs in prop::collection::vec(vector(4), 2..30),
        mcs in 2usize..5,
        ms in 1usize..4,
        alpha in 0.0f64..0.5,
    ) {
        prop_assume!(vs.iter().all(|v| nonzero(v)));
        let hs: Vec<Hyperedge> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| hyperedge("d", i + 1, &format!("s{i}."), i * 10, v.clone()))
            .collect();
        let cfg = SscConfig { alpha, min_cluster_size: mcs, min_samples: ms, ..SscConfig::default() };
        let clusters = cluster_document("d", &hs, &cfg).unwrap();
        let known: HashSet<&Id> = hs.iter().map(|h| &h.hyperedge_id).collect();
        let mut seen = HashSet::new();
        for c in &clusters {
            prop_assert_eq!(c.doc_id.as_str(), "d");
            prop_assert!(c.member_hyperedges.len() >= mcs);
            let mut last = 0;
            let mut refs = Vec::new();
            for m in &c.member_hyperedges {
                prop_assert!(known.contains(m));
                prop_assert!(seen.insert(m.clone()), "hyperedge in two clusters");
                prop_assert!(m.counter() as usize > last);
                last = m.counter() as usize;
                refs.push(format!("s{}.", last - 1));
            }
            prop_assert_eq!(&c.ch_text, &refs.join(SPAN_SEPARATOR));
        }
    }

    #[test]
    fn f1_is_symmetric_and_bounded(a in "[a-zA-Z ,.]{0,40}", b in "[a-zA-Z ,.]{0,40}") {
        let ab = token_f1(&a, &b);
        prop_assert_eq!(ab, token_f1(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.chars().any(|c| c.is_alphanumeric()) {
            prop_assert_eq!(token_f1(&a, &a), 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn store_round_trips(texts in prop::collection::vec(sentences(), 1..3)) {
        let mut config = PipelineConfig { partition: PartitionConfig::new(6, 14).unwrap(), ..PipelineConfig::default() };
        config.kbuild.tau_e = 1;
        config.ssc.min_cluster_size = 2;
        let provider = MockProvider::new(32, 0);
        let prompts = Prompts::default();
        let builder = Builder { config: &config, flags: BuildFlags::default(), provider: &provider, prompts: &prompts, cache: None };
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("doc{i}"), t, None).unwrap())
            .collect();
        let built: Vec<_> = builder.build_corpus(&docs).into_iter().map(|r| r.unwrap()).collect();
        let kb = merge_documents(&built, BuildMeta::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb");
        save_kb(&kb, &path, false).unwrap();
        let back = load_kb(&path).unwrap();
        prop_assert_eq!(&back, &kb);
        for d in &built {
            prop_assert_eq!(back.document(&d.doc_id), Some(d.clone()));
        }
    }
}

fn sentences() -> impl Strategy<Value = String> {
    let names = ["Alice", "Bob", "Acme", "Carol", "Dunmore", "Helix"];
    let verbs = ["met", "founded", "hired", "visited", "praised"];
    prop::collection::vec((0..names.len(), 0..verbs.len(), 0..names.len(), 1990u32..2020), 2..10).prop_map(
        move |triples| {
            triples
                .into_iter()
                .enumerate()
                .map(|(n, (a, v, b, y))| {
                    let s = format!("{} {} {} in {y}.", names[a], verbs[v], names[b]);
                    if n % 3 == 2 {
                        format!("{s}\n\n")
                    } else {
                        format!("{s} ")
                    }
                })
                .collect::<String>()
        },
    )
}
