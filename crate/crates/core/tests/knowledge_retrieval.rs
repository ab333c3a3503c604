use automind_core::knowledge::{
    Embedder, HashEmbedder, KnowledgeEntry, KnowledgeIndex, KnowledgeQuery, LabelPath, TrickEntry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "boosting",
    "augmentation",
    "ensemble",
    "lag",
    "features",
    "tokenizer",
    "fold",
    "stratified",
    "mixup",
    "cutmix",
    "pseudo",
    "label",
    "target",
    "encoding",
    "dropout",
    "transformer",
    "lstm",
    "graph",
    "embedding",
    "smoothing",
    "threshold",
    "calibration",
    "resize",
    "crop",
    "tfidf",
];

fn labels() -> Vec<LabelPath> {
    ["A", "B", "C", "D", "E", "F"]
        .iter()
        .map(|s| LabelPath::new("Top", *s))
        .collect()
}

fn text(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn corpus(seed: u64, n: usize) -> Vec<KnowledgeEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = labels();
    (0..n)
        .map(|i| {
            let mut ls = Vec::new();
            for _ in 0..rng.random_range(0..3) {
                let l = all[rng.random_range(0..all.len())].clone();
                if !ls.contains(&l) {
                    ls.push(l);
                }
            }
            let body_len = rng.random_range(3..12);
            KnowledgeEntry::Trick(TrickEntry {
                id: format!("e{i:03}"),
                source_task_id: format!("task{}", rng.random_range(0..8)),
                title: text(&mut rng, 2),
                body: text(&mut rng, body_len),
                labels: ls,
            })
        })
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let num: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let den =
        a.iter().map(|x| x * x).sum::<f32>().sqrt() * b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Exhaustive ranking: every trick outside the query task whose labels meet
/// the query labels, keyed by (first matching label rank, -similarity, id).
fn oracle(entries: &[KnowledgeEntry], e: &HashEmbedder, q: &KnowledgeQuery) -> Vec<String> {
    let qv = e.embed(&q.free_text).unwrap();
    let mut scored: Vec<(usize, f32, String)> = Vec::new();
    for entry in entries {
        let KnowledgeEntry::Trick(t) = entry else {
            continue;
        };
        if t.source_task_id == q.task_id {
            continue;
        }
        let mut best_rank = None;
        for (r, l) in q.task_labels.iter().enumerate() {
            if t.labels.contains(l) && best_rank.is_none_or(|b| r < b) {
                best_rank = Some(r);
            }
        }
        if q.task_labels.is_empty() {
            best_rank = Some(0);
        }
        if let Some(r) = best_rank {
            let v = e.embed(&format!("{}\n{}", t.title, t.body)).unwrap();
            scored.push((r, dot(&qv, &v), t.id.clone()));
        }
    }
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored.into_iter().take(q.k).map(|s| s.2).collect()
}

#[test]
fn retrieval_matches_exhaustive_oracle() {
    let e = HashEmbedder::default();
    let entries = corpus(7, 200);
    let index = KnowledgeIndex::build(entries.clone(), &e).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let all = labels();
    let mut mismatches = 0;
    for _ in 0..300 {
        let mut qlabels = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let l = all[rng.random_range(0..all.len())].clone();
            if !qlabels.contains(&l) {
                qlabels.push(l);
            }
        }
        let q = KnowledgeQuery {
            task_id: format!("task{}", rng.random_range(0..8)),
            task_labels: qlabels,
            free_text: text(&mut rng, 5),
            k: rng.random_range(1..12),
        };
        let got: Vec<String> = index
            .retrieve(&e, &q)
            .unwrap()
            .iter()
            .map(|h| h.entry.id().to_string())
            .collect();
        let mut unique = got.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), got.len(), "duplicates in {got:?}");
        assert!(got.len() <= q.k);
        for id in &got {
            let hit = entries.iter().find(|x| x.id() == id).unwrap();
            let KnowledgeEntry::Trick(t) = hit else {
                unreachable!()
            };
            assert_ne!(t.source_task_id, q.task_id);
        }
        if got != oracle(&entries, &e, &q) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn reloaded_index_answers_identically() {
    let e = HashEmbedder::default();
    let index = KnowledgeIndex::build(corpus(3, 200), &e).unwrap();
    let dir = tempfile::tempdir().unwrap();
    index.persist(dir.path()).unwrap();
    let back = KnowledgeIndex::load(dir.path()).unwrap();
    let q = KnowledgeQuery {
        task_id: "task1".into(),
        task_labels: labels()[..3].to_vec(),
        free_text: "boosting fold stratified".into(),
        k: 10,
    };
    assert_eq!(
        index.retrieve(&e, &q).unwrap(),
        back.retrieve(&e, &q).unwrap()
    );
}
