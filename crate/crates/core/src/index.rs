//! Hamming-space inverted index.
//!
//! Cases are grouped into buckets keyed by their packed code. A query is
//! hashed, then buckets are visited in growing Hamming balls around the
//! query code (radius 0, 1, 2, ...) until at least `N` candidates are found
//! or the radius cap is reached. Candidates are reranked by exact Euclidean
//! distance on the stored (normalized) features; ties break by ascending id.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{HashCode, HashFunction};
use crate::data::{CaseId, SparseCase, SparseVector};
use crate::error::{Error, Result};

pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    a.hamming(b)
}

/// `C(n, k)` saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Every code within `radius` of `center`, in nondecreasing distance order
/// starting with the center itself. Within one distance, flipped positions
/// follow lexicographic order.
pub fn hamming_ball(center: &HashCode, radius: usize) -> HammingBall {
    HammingBall {
        center: center.clone(),
        radius: radius.min(center.len()),
        combo: Vec::new(),
        started: false,
        done: false,
    }
}

/// Codes at exactly distance `t` from `center`.
pub fn hamming_sphere(center: &HashCode, t: usize) -> impl Iterator<Item = HashCode> {
    let skip = if t == 0 { 0 } else { (0..t).map(|s| binomial(center.len(), s)).sum::<u64>() as usize };
    hamming_ball(center, t).skip(skip)
}

pub struct HammingBall {
    center: HashCode,
    radius: usize,
    /// Flipped positions of the code most recently yielded.
    combo: Vec<usize>,
    started: bool,
    done: bool,
}

impl HammingBall {
    fn advance(&mut self) -> bool {
        let r = self.center.len();
        let k = self.combo.len();
        // next k-combination of 0..r in lexicographic order
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.combo[i] < r - (k - i) {
                self.combo[i] += 1;
                for j in i + 1..k {
                    self.combo[j] = self.combo[j - 1] + 1;
                }
                return true;
            }
        }
        // exhausted this distance; move to the next one
        if k < self.radius {
            self.combo = (0..k + 1).collect();
            return true;
        }
        false
    }
}

impl Iterator for HammingBall {
    type Item = HashCode;

    fn next(&mut self) -> Option<HashCode> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.center.clone());
        }
        if !self.advance() {
            self.done = true;
            return None;
        }
        let mut code = self.center.clone();
        for &m in &self.combo {
            code.flip(m);
        }
        Some(code)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    case: SparseCase,
    code: HashCode,
}

/// Buckets of case ids keyed by code, plus the case store.
#[derive(Clone, Debug, PartialEq)]
pub struct HashIndex {
    code_len: usize,
    /// Ids in each bucket are kept sorted.
    buckets: HashMap<HashCode, Vec<CaseId>>,
    entries: BTreeMap<CaseId, Entry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: CaseId,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Ranked by ascending distance, ties by ascending id.
    pub neighbors: Vec<Neighbor>,
    /// Candidates gathered before reranking.
    pub candidates: usize,
    /// Hamming radius actually searched.
    pub radius: u32,
    /// The capped ball held fewer than `N` cases.
    pub exhausted: bool,
    /// Results come from a full scan after the ball was exhausted.
    pub fell_back: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieveOptions {
    pub top_n: usize,
    pub max_radius: u32,
    /// Scan the whole case base when the capped ball holds fewer than
    /// `top_n` cases.
    pub full_scan_fallback: bool,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        RetrieveOptions {
            top_n: 10,
            max_radius: 2,
            full_scan_fallback: false,
        }
    }
}

/// Wall time per retrieval phase, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub hash_ns: u64,
    pub lookup_ns: u64,
    pub rerank_ns: u64,
}

impl PhaseTimings {
    pub fn total_ns(&self) -> u64 {
        self.hash_ns + self.lookup_ns + self.rerank_ns
    }
}

impl HashIndex {
    pub fn new(code_len: usize) -> Self {
        HashIndex {
            code_len,
            buckets: HashMap::new(),
            entries: BTreeMap::new(),
        }
    }

    /// Hashes every case and inserts it. Ids must be unique.
    pub fn build<H: HashFunction + ?Sized>(cases: &[SparseCase], hasher: &H) -> Result<Self> {
        let codes: Vec<HashCode> = cases
            .par_iter()
            .map(|c| hasher.hash_features(&c.features))
            .collect::<Result<_>>()?;
        let mut index = HashIndex::new(hasher.code_len());
        for (case, code) in cases.iter().zip(codes) {
            index.insert_with_code(case.clone(), code)?;
        }
        Ok(index)
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, code: &HashCode) -> &[CaseId] {
        self.buckets.get(code).map_or(&[], Vec::as_slice)
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&HashCode, &[CaseId])> {
        self.buckets.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn contains(&self, id: CaseId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn case(&self, id: CaseId) -> Option<&SparseCase> {
        self.entries.get(&id).map(|e| &e.case)
    }

    pub fn code(&self, id: CaseId) -> Option<&HashCode> {
        self.entries.get(&id).map(|e| &e.code)
    }

    /// Stored cases in ascending id order.
    pub fn cases(&self) -> impl Iterator<Item = &SparseCase> {
        self.entries.values().map(|e| &e.case)
    }

    pub fn codes(&self) -> impl Iterator<Item = (CaseId, &HashCode)> {
        self.entries.iter().map(|(&id, e)| (id, &e.code))
    }

    pub fn insert<H: HashFunction + ?Sized>(&mut self, case: SparseCase, hasher: &H) -> Result<()> {
        if self.entries.contains_key(&case.id) {
            return Err(Error::DuplicateId(case.id));
        }
        let code = hasher.hash_features(&case.features)?;
        self.insert_with_code(case, code)
    }

    pub fn insert_with_code(&mut self, case: SparseCase, code: HashCode) -> Result<()> {
        if code.len() != self.code_len {
            return Err(Error::CodeLength(self.code_len, code.len()));
        }
        if self.entries.contains_key(&case.id) {
            return Err(Error::DuplicateId(case.id));
        }
        let bucket = self.buckets.entry(code.clone()).or_default();
        let pos = bucket.binary_search(&case.id).unwrap_err();
        bucket.insert(pos, case.id);
        self.entries.insert(case.id, Entry { case, code });
        Ok(())
    }

    pub fn remove(&mut self, id: CaseId) -> Result<SparseCase> {
        let entry = self.entries.remove(&id).ok_or(Error::UnknownId(id))?;
        if let Some(bucket) = self.buckets.get_mut(&entry.code) {
            if let Ok(pos) = bucket.binary_search(&id) {
                bucket.remove(pos);
            }
            if bucket.is_empty() {
                self.buckets.remove(&entry.code);
            }
        }
        Ok(entry.case)
    }

    /// Recomputes every stored code under `hasher` and rebuilds the bucket
    /// map. On error the index is left as it was.
    pub fn rehash<H: HashFunction + ?Sized>(&mut self, hasher: &H) -> Result<()> {
        let ids: Vec<CaseId> = self.entries.keys().copied().collect();
        let codes: Vec<HashCode> = ids
            .par_iter()
            .map(|id| hasher.hash_features(&self.entries[id].case.features))
            .collect::<Result<_>>()?;
        let mut buckets: HashMap<HashCode, Vec<CaseId>> = HashMap::new();
        for (id, code) in ids.iter().zip(&codes) {
            buckets.entry(code.clone()).or_default().push(*id);
        }
        for (id, code) in ids.into_iter().zip(codes) {
            self.entries.get_mut(&id).expect("id from keys").code = code;
        }
        self.code_len = hasher.code_len();
        self.buckets = buckets;
        Ok(())
    }

    /// Gathers ids from Hamming balls of growing radius around `center`,
    /// finishing each radius completely, until at least `min_count` ids are
    /// found or `max_radius` is searched. Returns sorted ids and the radius
    /// searched.
    pub fn candidates(&self, center: &HashCode, min_count: usize, max_radius: u32) -> Result<(Vec<CaseId>, u32)> {
        if center.len() != self.code_len {
            return Err(Error::CodeLength(self.code_len, center.len()));
        }
        let mut out = Vec::new();
        let mut radius = 0u32;
        loop {
            let t = radius as usize;
            if t > self.code_len {
                radius = radius.saturating_sub(1);
                break;
            }
            if binomial(self.code_len, t) > self.buckets.len() as u64 {
                for (code, ids) in &self.buckets {
                    if center.hamming(code)? as usize == t {
                        out.extend_from_slice(ids);
                    }
                }
            } else {
                for code in hamming_sphere(center, t) {
                    if let Some(ids) = self.buckets.get(&code) {
                        out.extend_from_slice(ids);
                    }
                }
            }
            if out.len() >= min_count || radius >= max_radius || t == self.code_len {
                break;
            }
            radius += 1;
        }
        out.sort_unstable();
        Ok((out, radius))
    }

    fn rank(&self, query: &SparseVector, ids: impl Iterator<Item = CaseId>, top_n: usize) -> Vec<Neighbor> {
        let mut scored: Vec<(f64, CaseId)> = ids
            .map(|id| (self.entries[&id].case.features.squared_distance(query), id))
            .collect();
        let cmp = |a: &(f64, CaseId), b: &(f64, CaseId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if scored.len() > top_n {
            scored.select_nth_unstable_by(top_n - 1, cmp);
            scored.truncate(top_n);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .map(|(d2, id)| Neighbor {
                id,
                distance: d2.sqrt(),
            })
            .collect()
    }

    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.code_len as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (id, e) in &self.entries {
            w.write_all(&id.to_le_bytes())?;
            for word in e.code.words() {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Rebuilds an index from a dump, taking case features from `cases`.
    pub fn from_dump(r: &mut impl Read, cases: &[SparseCase]) -> Result<Self> {
        let (code_len, codes) = read_dump(r)?;
        let by_id: HashMap<CaseId, &SparseCase> = cases.iter().map(|c| (c.id, c)).collect();
        let mut index = HashIndex::new(code_len);
        for (id, code) in codes {
            let case = by_id.get(&id).ok_or(Error::UnknownId(id))?;
            index.insert_with_code((*case).clone(), code)?;
        }
        Ok(index)
    }
}

const DUMP_MAGIC: &[u8; 8] = b"HCBRIDX\0";
const DUMP_VERSION: u32 = 1;

/// Reads an index dump: magic, version, `r`, `n`, then `n` records of
/// `(id, packed code words)`, all little-endian.
pub fn read_dump(r: &mut impl Read) -> Result<(usize, Vec<(CaseId, HashCode)>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Checkpoint("bad index dump magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(Error::Checkpoint("unsupported index dump version".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let code_len = next(r)? as usize;
    let n = next(r)? as usize;
    let words = code_len.div_ceil(64);
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let id = next(r)?;
        let ws = (0..words).map(|_| next(r)).collect::<Result<Vec<_>>>()?;
        out.push((id, HashCode::from_words(code_len, ws)?));
    }
    Ok((code_len, out))
}

/// Hash, gather candidates, rerank. Also reports per-phase wall time.
pub fn retrieve_timed<H: HashFunction + ?Sized>(
    index: &HashIndex,
    query: &SparseVector,
    hasher: &H,
    opts: &RetrieveOptions,
) -> Result<(RetrievalResult, PhaseTimings)> {
    if opts.top_n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let t0 = Instant::now();
    let code = hasher.hash_features(query)?;
    let t1 = Instant::now();
    let (ids, radius) = index.candidates(&code, opts.top_n, opts.max_radius)?;
    let t2 = Instant::now();
    let candidates = ids.len();
    let exhausted = candidates < opts.top_n;
    let (neighbors, fell_back) = if exhausted && opts.full_scan_fallback {
        (index.rank(query, index.entries.keys().copied(), opts.top_n), true)
    } else {
        (index.rank(query, ids.into_iter(), opts.top_n), false)
    };
    let t3 = Instant::now();
    let timings = PhaseTimings {
        hash_ns: (t1 - t0).as_nanos() as u64,
        lookup_ns: (t2 - t1).as_nanos() as u64,
        rerank_ns: (t3 - t2).as_nanos() as u64,
    };
    Ok((
        RetrievalResult {
            neighbors,
            candidates,
            radius,
            exhausted,
            fell_back,
        },
        timings,
    ))
}

pub fn retrieve<H: HashFunction + ?Sized>(
    index: &HashIndex,
    query: &SparseVector,
    hasher: &H,
    opts: &RetrieveOptions,
) -> Result<RetrievalResult> {
    retrieve_timed(index, query, hasher, opts).map(|(r, _)| r)
}

/// Exact top-N over every stored case.
pub fn linear_scan(index: &HashIndex, query: &SparseVector, top_n: usize) -> Result<RetrievalResult> {
    if top_n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    Ok(RetrievalResult {
        neighbors: index.rank(query, index.entries.keys().copied(), top_n),
        candidates: index.len(),
        radius: index.code_len as u32,
        exhausted: index.len() < top_n,
        fell_back: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hashes by reading the code straight out of the first `r` features.
    struct Direct(usize);

    impl HashFunction for Direct {
        fn code_len(&self) -> usize {
            self.0
        }
        fn input_dim(&self) -> usize {
            self.0
        }
        fn hash_features(&self, x: &SparseVector) -> Result<HashCode> {
            let v: Vec<f64> = (0..self.0).map(|m| x.get(m) - 0.5).collect();
            Ok(HashCode::from_real(&v))
        }
    }

    fn bits_case(id: CaseId, bits: &[u8], label: u32) -> SparseCase {
        let dense: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        SparseCase::new(id, SparseVector::from_dense(&dense), label)
    }

    #[test]
    fn distance_identities() {
        let a = HashCode::from_real(&[1.0, -1.0, 1.0, 1.0]);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &a.negated()).unwrap(), 4);
        // r = 36, <a, b> = 20  =>  d = (36 - 20) / 2 = 8
        let x = HashCode::zeros(36).negated();
        let mut y = x.clone();
        for m in 0..8 {
            y.flip(m);
        }
        assert_eq!(x.inner(&y).unwrap(), 20);
        assert_eq!(hamming_distance(&x, &y).unwrap(), 8);
    }

    #[test]
    fn ball_sizes() {
        let c4 = HashCode::zeros(4);
        assert_eq!(hamming_ball(&c4, 0).count(), 1);
        assert_eq!(hamming_ball(&c4, 1).count(), 5);
        let c36 = HashCode::zeros(36);
        assert_eq!(hamming_ball(&c36, 2).count(), 667);
        let dists: Vec<u32> = hamming_ball(&c36, 2).map(|c| c.hamming(&c36).unwrap()).collect();
        assert!(dists.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(dists[0], 0);
        assert_eq!(hamming_sphere(&c36, 2).count(), 630);
        assert_eq!(hamming_ball(&c4, 4).count(), 16);
    }

    #[test]
    fn build_and_buckets() {
        let h = Direct(3);
        assert!(HashIndex::build(&[], &h).unwrap().is_empty());
        let cases = vec![
            bits_case(0, &[1, 0, 1], 0),
            bits_case(1, &[1, 0, 1], 1),
            bits_case(2, &[0, 0, 0], 1),
        ];
        let index = HashIndex::build(&cases, &h).unwrap();
        assert_eq!(index.num_buckets(), 2);
        let code = h.hash_features(&cases[0].features).unwrap();
        assert_eq!(index.bucket(&code), &[0, 1]);
        assert_eq!(index, HashIndex::build(&cases, &h).unwrap());
    }

    #[test]
    fn radius_expands_only_when_needed() {
        let h = Direct(4);
        let cases: Vec<SparseCase> = (0..5).map(|i| bits_case(i, &[1, 1, 0, 0], 0)).collect();
        let mut index = HashIndex::build(&cases, &h).unwrap();
        let opts = RetrieveOptions {
            top_n: 3,
            ..Default::default()
        };
        let q = bits_case(99, &[1, 1, 0, 0], 0).features;
        let res = retrieve(&index, &q, &h, &opts).unwrap();
        assert_eq!(res.radius, 0);
        assert_eq!(res.neighbors.len(), 3);
        assert_eq!(res.neighbors.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);

        // query one bit away from the only occupied bucket
        let q = bits_case(99, &[1, 1, 1, 0], 0).features;
        let res = retrieve(&index, &q, &h, &opts).unwrap();
        assert_eq!(res.radius, 1);

        // nothing within the cap: fewer than N, flagged
        for i in 0..5 {
            index.remove(i).unwrap();
        }
        index.insert(bits_case(7, &[0, 0, 1, 1], 0), &h).unwrap();
        let far = bits_case(99, &[1, 1, 0, 0], 0).features;
        let res = retrieve(&index, &far, &h, &opts).unwrap();
        assert!(res.exhausted && res.neighbors.is_empty());
        assert_eq!(res.radius, 2);
        let fb = RetrieveOptions {
            full_scan_fallback: true,
            ..opts
        };
        let res = retrieve(&index, &far, &h, &fb).unwrap();
        assert!(res.fell_back);
        assert_eq!(res.neighbors[0].id, 7);
    }

    #[test]
    fn empty_index_and_zero_n_are_errors() {
        let h = Direct(2);
        let index = HashIndex::new(2);
        let q = SparseVector::empty(2);
        assert!(matches!(retrieve(&index, &q, &h, &RetrieveOptions::default()), Err(Error::EmptyIndex)));
        assert!(matches!(linear_scan(&index, &q, 3), Err(Error::EmptyIndex)));
        let index = HashIndex::build(&[bits_case(0, &[1, 0], 0)], &h).unwrap();
        let opts = RetrieveOptions {
            top_n: 0,
            ..Default::default()
        };
        assert!(retrieve(&index, &q, &h, &opts).is_err());
    }

    #[test]
    fn linear_scan_contract() {
        let h = Direct(3);
        let cases = vec![
            bits_case(0, &[1, 0, 1], 0),
            bits_case(1, &[0, 1, 1], 1),
            bits_case(2, &[0, 0, 0], 1),
        ];
        let index = HashIndex::build(&cases, &h).unwrap();
        let res = linear_scan(&index, &cases[1].features, 10).unwrap();
        assert_eq!(res.neighbors.len(), 3);
        assert_eq!(res.neighbors[0].id, 1);
        assert_eq!(res.neighbors[0].distance, 0.0);
        assert!(res.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));

        let hashed = retrieve(
            &index,
            &cases[1].features,
            &h,
            &RetrieveOptions {
                top_n: 3,
                max_radius: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for n in &hashed.neighbors {
            let same = res.neighbors.iter().find(|m| m.id == n.id).unwrap();
            assert_eq!(same.distance, n.distance);
        }
    }

    #[test]
    fn insert_remove_round_trip() {
        let h = Direct(3);
        let base = vec![bits_case(0, &[1, 0, 1], 0), bits_case(1, &[0, 1, 1], 1)];
        let mut index = HashIndex::build(&base, &h).unwrap();
        let snapshot = index.clone();
        let extra: Vec<SparseCase> = (10..15).map(|i| bits_case(i, &[(i % 2) as u8, 1, 0], 0)).collect();
        for c in &extra {
            index.insert(c.clone(), &h).unwrap();
        }
        let res = retrieve(&index, &extra[2].features, &h, &RetrieveOptions::default()).unwrap();
        assert_eq!(res.neighbors[0].distance, 0.0);
        assert!(matches!(index.insert(extra[0].clone(), &h), Err(Error::DuplicateId(10))));
        for c in &extra {
            index.remove(c.id).unwrap();
        }
        assert_eq!(index, snapshot);
        assert!(matches!(index.remove(42), Err(Error::UnknownId(42))));
    }

    #[test]
    fn dump_round_trip() {
        let h = Direct(70);
        let cases: Vec<SparseCase> = (0..4)
            .map(|i| {
                let bits: Vec<u8> = (0..70).map(|m| ((m * (i + 1)) % 3 == 0) as u8).collect();
                bits_case(i as CaseId, &bits, 0)
            })
            .collect();
        let index = HashIndex::build(&cases, &h).unwrap();
        let mut buf = Vec::new();
        index.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 8 + 8 + 4 * (8 + 16));
        let back = HashIndex::from_dump(&mut buf.as_slice(), &cases).unwrap();
        assert_eq!(back, index);
    }

    fn arb_code(bits: usize) -> impl Strategy<Value = HashCode> {
        proptest::collection::vec(any::<bool>(), bits)
            .prop_map(|v| HashCode::from_real(&v.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect::<Vec<_>>()))
    }

    proptest! {
        #[test]
        fn popcount_matches_inner_product(a in arb_code(36), b in arb_code(36)) {
            let d = hamming_distance(&a, &b).unwrap() as i64;
            let inner: i64 = a.signs().iter().zip(b.signs()).map(|(x, y)| (x * y) as i64).sum();
            prop_assert_eq!(2 * d, 36 - inner);
        }

        #[test]
        fn hamming_is_a_metric(a in arb_code(20), b in arb_code(20), c in arb_code(20)) {
            let d = |x: &HashCode, y: &HashCode| hamming_distance(x, y).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert_eq!(d(&a, &a), 0);
        }
    }
}
