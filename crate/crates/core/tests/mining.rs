use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use posemine::embed::{EmbeddingStore, RowMeta};
use posemine::mine::{build_index, mine_all, mine_all_with, search_registry, topk, ExactSearch, PairTable, SearchConfig};

fn random_store(rows: usize, videos: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let meta = (0..rows)
        .map(|i| RowMeta {
            video_id: format!("clip{:03}", rng.random_range(0..videos)),
            frame_id: i as u64,
        })
        .collect();
    EmbeddingStore::new(dim, data, meta).unwrap()
}

/// Every cross-video row of `q`, fully sorted by (distance, video id, frame).
fn sorted_candidates(store: &EmbeddingStore, q: usize) -> Vec<(f64, String, u64, usize)> {
    let meta = store.meta();
    let mut all: Vec<(f64, String, u64, usize)> = (0..store.len())
        .filter(|&r| meta[r].video_id != meta[q].video_id)
        .map(|r| {
            let d2: f64 = store
                .row(q)
                .iter()
                .zip(store.row(r))
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum();
            (d2.sqrt(), meta[r].video_id.clone(), meta[r].frame_id, r)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| (&a.1, a.2).cmp(&(&b.1, b.2))));
    all
}

#[test]
fn top10_matches_full_sort_oracle() {
    let store = random_store(5000, 50, 14, 3);
    let index = build_index(store.clone()).unwrap();
    for q in (0..store.len()).step_by(7) {
        let got = topk(&index, q, 10).unwrap();
        let want = sorted_candidates(&store, q);
        let got_rows: Vec<usize> = got.neighbors.iter().map(|n| n.row).collect();
        let want_rows: Vec<usize> = want[..10].iter().map(|c| c.3).collect();
        assert_eq!(got_rows, want_rows, "query {q}");
        for (n, c) in got.neighbors.iter().zip(&want) {
            assert_eq!(n.distance, c.0);
        }
    }
}

#[test]
fn pair_table_exhaustively_optimal() {
    let store = random_store(1500, 12, 6, 8);
    let index = build_index(store.clone()).unwrap();
    let table = mine_all(&index).unwrap();
    table.verify(&index).unwrap();
    let meta = store.meta();
    for e in table.entries() {
        assert_ne!(meta[e.query].video_id, meta[e.positive].video_id);
        let best = sorted_candidates(&store, e.query)[0].0;
        assert_eq!(e.distance, best);
    }
}

#[test]
fn serial_and_parallel_mining_agree() {
    let store = random_store(3000, 20, 14, 4);
    let index = build_index(store).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mine_all(&index).unwrap())
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn mirrored_videos_pair_at_zero_distance() {
    let base = random_store(400, 5, 14, 6);
    let mut data = base.rows().to_vec();
    data.extend_from_slice(base.rows());
    let mut meta = base.meta().to_vec();
    meta.extend(base.meta().iter().map(|m| RowMeta {
        video_id: format!("twin-{}", m.video_id),
        frame_id: m.frame_id,
    }));
    let index = build_index(EmbeddingStore::new(14, data, meta).unwrap()).unwrap();
    let table = mine_all(&index).unwrap();
    assert!(table.entries().iter().all(|e| e.distance == 0.0));
}

#[test]
fn grouping_is_a_bijection() {
    let store = random_store(700, 9, 3, 2);
    let index = build_index(store).unwrap();
    let offsets = index.video_offsets();
    assert_eq!(offsets.first(), Some(&0));
    assert_eq!(offsets.last(), Some(&700));
    assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    let mut seen = vec![false; 700];
    for pos in 0..700 {
        let row = index.row_at(pos);
        assert_eq!(index.position_of(row), pos);
        assert!(!seen[row]);
        seen[row] = true;
    }
}

#[test]
fn strategies_selected_by_name_agree_at_full_probe() {
    let store = random_store(2000, 10, 14, 12);
    let index = build_index(store).unwrap();
    let reg = search_registry();
    assert_eq!(reg.names(), vec!["exact", "ivf"]);
    let mut ivf = reg.create("ivf").unwrap();
    ivf.prepare(
        &index,
        &SearchConfig {
            nlist: Some(16),
            nprobe: 16,
            seed: 1,
        },
    )
    .unwrap();
    assert_eq!(
        mine_all_with(&index, ivf.as_ref()).unwrap(),
        mine_all_with(&index, &ExactSearch).unwrap()
    );
    assert!(reg.create("annoy").is_err());
}

#[test]
fn pair_file_has_exactly_five_fields() {
    let store = random_store(50, 3, 4, 1);
    let index = build_index(store.clone()).unwrap();
    let table = mine_all(&index).unwrap();
    let mut buf = Vec::new();
    table.write_jsonl(&store, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["distance", "pos_frame_id", "pos_video_id", "query_frame_id", "query_video_id"]
        );
    }
    assert_eq!(PairTable::read_jsonl(&store, &buf[..]).unwrap(), table);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topk_is_prefix_consistent(seed in any::<u64>(), rows in 4usize..80, videos in 2usize..6, k in 1usize..10) {
        let store = random_store(rows, videos, 3, seed);
        let index = build_index(store).unwrap();
        prop_assume!(index.num_videos() >= 2);
        for q in 0..rows {
            let a = topk(&index, q, k).unwrap();
            let b = topk(&index, q, k + 1).unwrap();
            prop_assert!(a.neighbors.len() <= b.neighbors.len());
            prop_assert_eq!(&a.neighbors[..], &b.neighbors[..a.neighbors.len()]);
            prop_assert!(b.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
        }
    }
}
