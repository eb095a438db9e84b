//! Hand keypoint records: parsing, validation, mirroring and left/right
//! balancing.
//!
//! Records arrive as JSON lines, one detected hand crop per line, with 21
//! crop-normalized 2D keypoints. Coordinates use the image convention:
//! `x` grows to the right, `y` grows downward, both in `[0, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 21;

pub type Keypoints = [[f64; 2]; NUM_JOINTS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeypointRecord {
    pub video_id: String,
    pub frame_id: u64,
    pub hand: Hand,
    pub keypoints: Keypoints,
    pub detection_score: f64,
}

/// Wire shape of one line; lengths are checked after decoding so that the
/// error names the offending field.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    video_id: String,
    frame_id: u64,
    hand: Hand,
    keypoints: Vec<Vec<f64>>,
    detection_score: f64,
}

impl KeypointRecord {
    pub fn validate(&self) -> Result<()> {
        for (j, [x, y]) in self.keypoints.iter().enumerate() {
            for v in [x, y] {
                if !v.is_finite() || !(0.0..=1.0).contains(v) {
                    return Err(Error::InvalidRecord(format!(
                        "keypoint {j} coordinate {v} outside [0, 1]"
                    )));
                }
            }
        }
        if !self.detection_score.is_finite() || !(0.0..=1.0).contains(&self.detection_score) {
            return Err(Error::InvalidRecord(format!(
                "detection_score {} outside [0, 1]",
                self.detection_score
            )));
        }
        Ok(())
    }

    fn from_raw(raw: RawRecord) -> Result<Self> {
        if raw.keypoints.len() != NUM_JOINTS {
            return Err(Error::InvalidRecord(format!(
                "keypoint count {} (expected {NUM_JOINTS})",
                raw.keypoints.len()
            )));
        }
        let mut keypoints = [[0.0; 2]; NUM_JOINTS];
        for (j, pt) in raw.keypoints.iter().enumerate() {
            if pt.len() != 2 {
                return Err(Error::InvalidRecord(format!(
                    "keypoint {j} has {} coordinates (expected 2)",
                    pt.len()
                )));
            }
            keypoints[j] = [pt[0], pt[1]];
        }
        let rec = KeypointRecord {
            video_id: raw.video_id,
            frame_id: raw.frame_id,
            hand: raw.hand,
            keypoints,
            detection_score: raw.detection_score,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn key(&self) -> (&str, u64, Hand) {
        (&self.video_id, self.frame_id, self.hand)
    }
}

/// Records plus their grouping into per-video frame sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordSet {
    records: Vec<KeypointRecord>,
    videos: BTreeMap<String, Vec<usize>>,
}

impl RecordSet {
    /// Builds a set, rejecting duplicate `(video_id, frame_id, hand)` keys.
    pub fn new(records: Vec<KeypointRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut videos: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.key()) {
                return Err(Error::DuplicateRecord {
                    video_id: r.video_id.clone(),
                    frame_id: r.frame_id,
                    hand: r.hand.to_string(),
                });
            }
            videos.entry(r.video_id.clone()).or_default().push(i);
        }
        Ok(Self { records, videos })
    }

    pub fn records(&self) -> &[KeypointRecord] {
        &self.records
    }

    pub fn videos(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn count_hand(&self, hand: Hand) -> usize {
        self.records.iter().filter(|r| r.hand == hand).count()
    }

    /// Writes the set in the line-delimited record format.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Abort on the first malformed line instead of skipping it.
    pub strict: bool,
    /// Drop records whose detection score is below this value.
    pub min_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    /// `(1-based line number, message)` for every rejected line.
    pub rejected: Vec<(usize, String)>,
    pub filtered_low_score: usize,
    /// For each kept record, its position among the non-blank input lines.
    pub kept_rows: Vec<usize>,
}

/// Parses line-delimited records. Blank lines are ignored.
///
/// Lines are decoded in parallel; output order and error report are the
/// same for any thread count.
pub fn parse_records<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<(RecordSet, ParseReport)> {
    let lines = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
    let parsed: Vec<Option<Result<KeypointRecord>>> = lines
        .par_iter()
        .map(|line| {
            if line.trim().is_empty() {
                return None;
            }
            Some(
                serde_json::from_str::<RawRecord>(line)
                    .map_err(|e| Error::InvalidRecord(e.to_string()))
                    .and_then(KeypointRecord::from_raw),
            )
        })
        .collect();

    let mut report = ParseReport::default();
    let mut records = Vec::with_capacity(parsed.len());
    let mut row = 0;
    for (i, item) in parsed.into_iter().enumerate() {
        if item.is_some() {
            row += 1;
        }
        match item {
            None => {}
            Some(Ok(rec)) => {
                if opts.min_score.is_some_and(|m| rec.detection_score < m) {
                    report.filtered_low_score += 1;
                } else {
                    records.push(rec);
                    report.kept_rows.push(row - 1);
                }
            }
            Some(Err(e)) => {
                let message = match e {
                    Error::InvalidRecord(m) => m,
                    other => other.to_string(),
                };
                if opts.strict {
                    return Err(Error::Parse { line: i + 1, message });
                }
                log::warn!("skipping line {}: {message}", i + 1);
                report.rejected.push((i + 1, message));
            }
        }
    }
    Ok((RecordSet::new(records)?, report))
}

/// Horizontally flips a left-hand record into right-hand topology.
pub fn mirror_to_right(record: &KeypointRecord) -> Result<KeypointRecord> {
    if record.hand == Hand::Right {
        return Err(Error::AlreadyRight);
    }
    let mut out = record.clone();
    out.hand = Hand::Right;
    for kp in out.keypoints.iter_mut() {
        kp[0] = 1.0 - kp[0];
    }
    Ok(out)
}

/// A balanced set together with where each output record came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Balanced {
    pub set: RecordSet,
    /// For each output record: index into the input set and original side.
    pub origin: Vec<(usize, Hand)>,
}

/// Subsamples the larger hand side down to the smaller side's count, then
/// mirrors every left record to the right. Surviving records keep their
/// input order.
pub fn balance_hands(set: &RecordSet, seed: u64) -> Balanced {
    let by_side = |h: Hand| -> Vec<usize> {
        set.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.hand == h)
            .map(|(i, _)| i)
            .collect()
    };
    let left = by_side(Hand::Left);
    let right = by_side(Hand::Right);
    let keep_n = left.len().min(right.len());
    if keep_n == 0 && !set.is_empty() {
        log::warn!(
            "one hand side is empty ({} left, {} right); balanced set is empty",
            left.len(),
            right.len()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsample = |pool: &[usize]| -> Vec<usize> {
        if pool.len() == keep_n {
            return pool.to_vec();
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), keep_n)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        picked
    };
    let mut kept = subsample(&left);
    kept.extend(subsample(&right));
    kept.sort_unstable();

    let mut records = Vec::with_capacity(kept.len());
    let mut origin = Vec::with_capacity(kept.len());
    for &i in &kept {
        let r = &set.records[i];
        origin.push((i, r.hand));
        records.push(match r.hand {
            Hand::Left => mirror_to_right(r).expect("left record"),
            Hand::Right => r.clone(),
        });
    }
    // A frame holding both hands yields two right records with the same key
    // after mirroring; the frame set still partitions, so only the hand key
    // uniqueness is relaxed here.
    let mut videos: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        videos.entry(r.video_id.clone()).or_default().push(i);
    }
    Balanced {
        set: RecordSet { records, videos },
        origin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn record(video: &str, frame: u64, hand: Hand, fill: f64) -> KeypointRecord {
        KeypointRecord {
            video_id: video.into(),
            frame_id: frame,
            hand,
            keypoints: [[fill, fill]; NUM_JOINTS],
            detection_score: 0.9,
        }
    }

    fn parse(text: &str) -> Result<(RecordSet, ParseReport)> {
        parse_records(text.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn empty_stream() {
        let (set, report) = parse("").unwrap();
        assert!(set.is_empty());
        assert_eq!(set.num_videos(), 0);
        assert!(report.rejected.is_empty());
    }

    #[test]
    fn three_lines_two_videos() {
        let set = RecordSet::new(vec![
            record("a", 0, Hand::Right, 0.1),
            record("a", 1, Hand::Left, 0.2),
            record("b", 0, Hand::Right, 0.3),
        ])
        .unwrap();
        let text = String::from_utf8(set.to_jsonl_bytes()).unwrap();
        let (parsed, _) = parse(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed.num_videos(), 2);
        assert_eq!(parsed.videos()["a"], vec![0, 1]);
        assert_eq!(parsed, set);
    }

    #[test]
    fn twenty_keypoints_rejected() {
        let kps: Vec<[f64; 2]> = vec![[0.5, 0.5]; 20];
        let line = serde_json::json!({
            "video_id": "v", "frame_id": 3, "hand": "left",
            "keypoints": kps, "detection_score": 0.5
        })
        .to_string();
        let (set, report) = parse(&format!("{line}\n")).unwrap();
        assert!(set.is_empty());
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].0, 1);
        assert!(report.rejected[0].1.contains("keypoint count"));

        let strict = ParseOptions {
            strict: true,
            ..Default::default()
        };
        let err = parse_records(line.as_bytes(), &strict).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(err.to_string().contains("keypoint count"));
    }

    #[test]
    fn malformed_and_out_of_range_lines() {
        let good = serde_json::to_string(&record("v", 0, Hand::Right, 0.5)).unwrap();
        let bad_range = serde_json::to_string(&record("v", 1, Hand::Right, 1.5)).unwrap();
        let text = format!("{good}\nnot json\n\n{bad_range}\n");
        let (set, report) = parse(&text).unwrap();
        assert_eq!(set.len(), 1);
        let lines: Vec<usize> = report.rejected.iter().map(|r| r.0).collect();
        assert_eq!(lines, vec![2, 4]);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = serde_json::to_value(record("v", 0, Hand::Right, 0.5)).unwrap();
        v["extra"] = 1.into();
        let (_, report) = parse(&v.to_string()).unwrap();
        assert_eq!(report.rejected.len(), 1);
    }

    #[test]
    fn duplicate_is_fatal() {
        let r = serde_json::to_string(&record("v", 0, Hand::Right, 0.5)).unwrap();
        let err = parse(&format!("{r}\n{r}\n")).unwrap_err();
        assert!(matches!(err, Error::DuplicateRecord { .. }));
    }

    #[test]
    fn min_score_filter() {
        let mut low = record("v", 1, Hand::Right, 0.5);
        low.detection_score = 0.1;
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&record("v", 0, Hand::Right, 0.5)).unwrap(),
            serde_json::to_string(&low).unwrap()
        );
        let opts = ParseOptions {
            min_score: Some(0.5),
            ..Default::default()
        };
        let (set, report) = parse_records(text.as_bytes(), &opts).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(report.filtered_low_score, 1);
    }

    #[test]
    fn mirror_examples() {
        let mut r = record("v", 0, Hand::Left, 0.0);
        r.keypoints[0] = [0.25, 0.40];
        r.keypoints[1] = [0.5, 0.9];
        let m = mirror_to_right(&r).unwrap();
        assert_eq!(m.hand, Hand::Right);
        assert_eq!(m.keypoints[0], [0.75, 0.40]);
        assert_eq!(m.keypoints[1], [0.5, 0.9]);
        assert!(matches!(mirror_to_right(&m), Err(Error::AlreadyRight)));
    }

    #[test]
    fn mirror_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut r = record("v", 0, Hand::Left, 0.0);
            for kp in r.keypoints.iter_mut() {
                *kp = [rng.random::<f64>(), rng.random::<f64>()];
            }
            let mut once = mirror_to_right(&r).unwrap();
            once.hand = Hand::Left;
            let twice = mirror_to_right(&once).unwrap();
            for (a, b) in twice.keypoints.iter().zip(r.keypoints.iter()) {
                // 1 - (1 - x) is exact only up to one rounding
                assert!((a[0] - b[0]).abs() <= f64::EPSILON);
                assert_eq!(a[1], b[1]);
            }
        }
    }

    fn sided(n_left: usize, n_right: usize) -> RecordSet {
        let mut recs = Vec::new();
        for i in 0..n_left {
            recs.push(record(&format!("v{}", i % 3), i as u64, Hand::Left, 0.2));
        }
        for i in 0..n_right {
            recs.push(record(&format!("v{}", i % 3), i as u64, Hand::Right, 0.7));
        }
        RecordSet::new(recs).unwrap()
    }

    #[test]
    fn balance_examples() {
        let b = balance_hands(&sided(10, 10), 0);
        assert_eq!(b.set.len(), 20);
        assert!(b.set.records().iter().all(|r| r.hand == Hand::Right));

        let b = balance_hands(&sided(100, 40), 7);
        assert_eq!(b.set.len(), 80);
        let left_origin = b.origin.iter().filter(|o| o.1 == Hand::Left).count();
        assert_eq!(left_origin, 40);

        let again = balance_hands(&sided(100, 40), 7);
        assert_eq!(b.set.to_jsonl_bytes(), again.set.to_jsonl_bytes());
    }

    #[test]
    fn balance_one_side_empty() {
        let b = balance_hands(&sided(5, 0), 1);
        assert!(b.set.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn balance_counts(n_left in 0usize..40, n_right in 0usize..40, seed in 0u64..1000) {
            let b = balance_hands(&sided(n_left, n_right), seed);
            proptest::prop_assert_eq!(b.set.len(), 2 * n_left.min(n_right));
            proptest::prop_assert!(b.set.records().iter().all(|r| r.hand == Hand::Right));
            let total: usize = b.set.videos().values().map(Vec::len).sum();
            proptest::prop_assert_eq!(total, b.set.len());
        }

        #[test]
        fn jsonl_round_trip(coords in proptest::collection::vec(0.0f64..=1.0, 42 * 3), score in 0.0f64..=1.0) {
            let recs: Vec<KeypointRecord> = coords
                .chunks(42)
                .enumerate()
                .map(|(i, c)| {
                    let mut r = record("vid", i as u64, Hand::Left, 0.0);
                    for j in 0..NUM_JOINTS {
                        r.keypoints[j] = [c[2 * j], c[2 * j + 1]];
                    }
                    r.detection_score = score;
                    r
                })
                .collect();
            let set = RecordSet::new(recs).unwrap();
            let (back, _) = parse(std::str::from_utf8(&set.to_jsonl_bytes()).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, set);
        }
    }
}
