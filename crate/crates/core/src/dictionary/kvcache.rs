//! Attention-addressed key/value cache for repeated dictionary queries.

use crate::error::{invalid, ClcError, Result};
use crate::numerics::{dot, pca_fit_uncentered, softmax_in_place, squared_distance, Matrix, PcaBasis};

pub const DEFAULT_CAPACITY: usize = 300;

/// Distance under which a query counts as a cache hit.
pub const HIT_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KvCache {
    capacity: usize,
    key_dim: usize,
    value_dim: usize,
    /// Dimension used for the `1/√d_k` attention scale; kept across compression.
    scale_dim: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    hit_counts: Vec<u64>,
    insert_clock: Vec<u64>,
    payloads: Vec<Vec<(usize, f64)>>,
    payload_m: Vec<usize>,
    clock: u64,
    key_basis: Option<PcaBasis>,
    value_basis: Option<PcaBasis>,
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
}

impl KvCache {
    pub fn new(capacity: usize, key_dim: usize, value_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return invalid("cache capacity must be positive");
        }
        Ok(Self {
            capacity,
            key_dim,
            value_dim,
            scale_dim: key_dim,
            keys: Vec::new(),
            values: Vec::new(),
            hit_counts: Vec::new(),
            insert_clock: Vec::new(),
            payloads: Vec::new(),
            payload_m: Vec::new(),
            clock: 0,
            key_basis: None,
            value_basis: None,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn keys(&self) -> Matrix {
        rows_to_matrix(&self.keys, self.key_dim)
    }

    pub fn values(&self) -> Matrix {
        rows_to_matrix(&self.values, self.value_dim)
    }

    pub fn hit_counts(&self) -> &[u64] {
        &self.hit_counts
    }

    pub fn insert_clock(&self) -> &[u64] {
        &self.insert_clock
    }

    /// Basis queries must be projected with after [`kv_compress`].
    pub fn key_basis(&self) -> Option<&PcaBasis> {
        self.key_basis.as_ref()
    }

    /// Relevance `hit_count + 0.1 · recency_rank` (oldest entry has rank 0).
    pub fn relevance(&self) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.insert_clock[i]);
        let mut rho = vec![0.0; self.len()];
        for (rank, &i) in order.iter().enumerate() {
            rho[i] = self.hit_counts[i] as f64 + 0.1 * rank as f64;
        }
        rho
    }

    /// Maps a raw query into the cache's key space.
    pub fn project_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        match &self.key_basis {
            Some(b) => b.project(q),
            None => Ok(q.to_vec()),
        }
    }

    /// Maps a raw value row into the cache's value space.
    pub fn project_value(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.value_basis {
            Some(b) => b.project(v),
            None => Ok(v.to_vec()),
        }
    }

    /// Appends an entry, evicting down to `capacity − 1` first when full.
    pub fn insert(&mut self, key: Vec<f64>, value: Vec<f64>) -> Result<usize> {
        self.insert_with_payload(key, value, Vec::new(), 0)
    }

    pub(crate) fn insert_with_payload(
        &mut self,
        key: Vec<f64>,
        value: Vec<f64>,
        payload: Vec<(usize, f64)>,
        m: usize,
    ) -> Result<usize> {
        if key.len() != self.key_dim || value.len() != self.value_dim {
            return invalid("cache entry has the wrong dimension");
        }
        if self.len() >= self.capacity {
            *self = kv_evict(self, self.capacity - 1)?;
        }
        self.keys.push(key);
        self.values.push(value);
        self.hit_counts.push(0);
        self.insert_clock.push(self.clock);
        self.payloads.push(payload);
        self.payload_m.push(m);
        self.clock += 1;
        Ok(self.len() - 1)
    }

    /// Index of a cached key within [`HIT_RADIUS`] of `key`.
    pub fn lookup(&self, key: &[f64]) -> Option<usize> {
        if key.len() != self.key_dim {
            return None;
        }
        self.keys
            .iter()
            .position(|k| squared_distance(k, key) <= HIT_RADIUS * HIT_RADIUS)
    }

    pub fn bump(&mut self, entry: usize) {
        self.hit_counts[entry] += 1;
    }

    pub(crate) fn payload(&self, entry: usize) -> (&[(usize, f64)], usize) {
        (&self.payloads[entry], self.payload_m[entry])
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize) -> Matrix {
    let data = rows.iter().flatten().copied().collect();
    Matrix::new(rows.len(), cols, data).expect("rows have uniform width")
}

/// `softmax(q·Kᵀ/√d_k)·V` with the weights used.
pub fn kv_attend(q: &[f64], cache: &KvCache) -> Result<Attention> {
    if cache.is_empty() {
        return Err(ClcError::EmptyCache);
    }
    if q.len() != cache.key_dim {
        return invalid(format!(
            "query has dimension {}, cache keys have {}",
            q.len(),
            cache.key_dim
        ));
    }
    let scale = (cache.scale_dim as f64).sqrt();
    let mut weights: Vec<f64> = cache.keys.iter().map(|k| dot(q, k) / scale).collect();
    softmax_in_place(&mut weights, 1.0);
    let mut output = vec![0.0; cache.value_dim];
    for (w, v) in weights.iter().zip(&cache.values) {
        for (o, x) in output.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(Attention { output, weights })
}

/// Projects keys and values onto their leading principal directions (about
/// the origin, so dot products inside the kept span are preserved).
pub fn kv_compress(cache: &KvCache, target_dim: usize) -> Result<KvCache> {
    if cache.is_empty() {
        return Err(ClcError::EmptyCache);
    }
    if target_dim == 0 || target_dim >= cache.key_dim || target_dim >= cache.value_dim {
        return invalid(format!(
            "compressed dimension {target_dim} must be below the current dimensions ({}, {})",
            cache.key_dim, cache.value_dim
        ));
    }
    if target_dim > cache.len() {
        return invalid(format!(
            "cannot fit {target_dim} directions to {} cached rows",
            cache.len()
        ));
    }
    let key_basis = pca_fit_uncentered(&cache.keys(), target_dim)?;
    let value_basis = pca_fit_uncentered(&cache.values(), target_dim)?;
    let keys = cache
        .keys
        .iter()
        .map(|k| key_basis.project(k))
        .collect::<Result<Vec<_>>>()?;
    let values = cache
        .values
        .iter()
        .map(|v| value_basis.project(v))
        .collect::<Result<Vec<_>>>()?;
    // compose with any earlier compression so raw vectors still map in one step
    let compose = |prev: &Option<PcaBasis>, next: PcaBasis| -> Result<PcaBasis> {
        Ok(match prev {
            Some(prev) => PcaBasis {
                mean: prev.mean.clone(),
                components: next.components.matmul(&prev.components)?,
                explained_variance: next.explained_variance,
            },
            None => next,
        })
    };
    Ok(KvCache {
        key_dim: target_dim,
        value_dim: target_dim,
        keys,
        values,
        key_basis: Some(compose(&cache.key_basis, key_basis)?),
        value_basis: Some(compose(&cache.value_basis, value_basis)?),
        ..cache.clone()
    })
}

/// Keeps the `keep` most relevant entries; ties favour newer entries.
pub fn kv_evict(cache: &KvCache, keep: usize) -> Result<KvCache> {
    if keep == 0 {
        return invalid("eviction must keep at least one entry");
    }
    if keep > cache.len() {
        return invalid(format!("cannot keep {keep} of {} entries", cache.len()));
    }
    let rho = cache.relevance();
    let mut order: Vec<usize> = (0..cache.len()).collect();
    order.sort_by(|&a, &b| {
        rho[b]
            .total_cmp(&rho[a])
            .then(cache.insert_clock[b].cmp(&cache.insert_clock[a]))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    fn pick<T: Clone>(v: &[T], kept: &[usize]) -> Vec<T> {
        kept.iter().map(|&i| v[i].clone()).collect()
    }
    Ok(KvCache {
        keys: pick(&cache.keys, &kept),
        values: pick(&cache.values, &kept),
        payloads: pick(&cache.payloads, &kept),
        hit_counts: pick(&cache.hit_counts, &kept),
        insert_clock: pick(&cache.insert_clock, &kept),
        payload_m: pick(&cache.payload_m, &kept),
        ..cache.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache_from(keys: &[&[f64]], values: &[&[f64]]) -> KvCache {
        let mut c = KvCache::new(16, keys[0].len(), values[0].len()).unwrap();
        for (k, v) in keys.iter().zip(values) {
            c.insert(k.to_vec(), v.to_vec()).unwrap();
        }
        c
    }

    #[test]
    fn attend_two_entries() {
        let c = cache_from(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0], &[0.0]]);
        let a = kv_attend(&[1.0, 0.0], &c).unwrap();
        // independent evaluation: 1 / (1 + e^{-1/√2})
        let w = 1.0 / (1.0 + (-std::f64::consts::FRAC_1_SQRT_2).exp());
        assert!((a.weights[0] - w).abs() < 1e-12);
        assert!((a.output[0] - 0.6698).abs() < 5e-5);
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_keys_average_values() {
        let c = cache_from(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]], &[&[3.0, 0.0], &[0.0, 3.0], &[3.0, 3.0]]);
        let a = kv_attend(&[0.3, -2.0], &c).unwrap();
        assert!((a.output[0] - 2.0).abs() < 1e-12 && (a.output[1] - 2.0).abs() < 1e-12);
        let single = cache_from(&[&[0.5, 0.5]], &[&[7.0, -1.0]]);
        assert_eq!(kv_attend(&[9.0, 9.0], &single).unwrap().output, vec![7.0, -1.0]);
        let empty = KvCache::new(4, 2, 2).unwrap();
        assert!(matches!(kv_attend(&[0.0, 0.0], &empty), Err(ClcError::EmptyCache)));
    }

    #[test]
    fn compression_preserves_attention_in_span() {
        // rows live in span{(1,1,0,0), (0,0,1,-1)}
        let k: Vec<Vec<f64>> = [(1.0, 0.5), (-0.3, 2.0), (0.7, -1.1), (2.0, 0.2)]
            .iter()
            .map(|&(a, b)| vec![a, a, b, -b])
            .collect();
        let v: Vec<Vec<f64>> = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (-1.0, 2.0)]
            .iter()
            .map(|&(a, b)| vec![a + b, a, b, 0.0])
            .collect();
        let kr: Vec<&[f64]> = k.iter().map(|r| r.as_slice()).collect();
        let vr: Vec<&[f64]> = v.iter().map(|r| r.as_slice()).collect();
        let c = cache_from(&kr, &vr);
        let q = vec![0.4, 0.4, -0.9, 0.9];
        let before = kv_attend(&q, &c).unwrap();
        let cc = kv_compress(&c, 2).unwrap();
        let qc = cc.project_query(&q).unwrap();
        let after = kv_attend(&qc, &cc).unwrap();
        for (a, b) in before.weights.iter().zip(&after.weights) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(kv_compress(&c, 4).is_err());
    }

    #[test]
    fn single_row_compression() {
        let c = cache_from(&[&[3.0, 4.0]], &[&[0.0, 2.0]]);
        let cc = kv_compress(&c, 1).unwrap();
        assert!((cc.keys().get(0, 0) - 5.0).abs() < 1e-12);
        let back = cc.key_basis().unwrap().reconstruct(cc.keys().row(0)).unwrap();
        assert!((back[0] - 3.0).abs() < 1e-12 && (back[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eviction_by_hits_then_recency() {
        let mut c = cache_from(&[&[1.0], &[2.0], &[3.0]], &[&[1.0], &[2.0], &[3.0]]);
        for (i, h) in [5, 1, 3].into_iter().enumerate() {
            for _ in 0..h {
                c.bump(i);
            }
        }
        let e = kv_evict(&c, 2).unwrap();
        assert_eq!(e.hit_counts(), &[5, 3]);
        assert_eq!(kv_evict(&c, 3).unwrap().keys(), c.keys());
        assert!(kv_evict(&c, 0).is_err());

        let fresh = cache_from(&[&[1.0], &[2.0], &[3.0], &[4.0]], &[&[0.0][..]; 4]);
        let e = kv_evict(&fresh, 2).unwrap();
        assert_eq!(e.keys().data(), &[3.0, 4.0]);
    }

    #[test]
    fn insert_evicts_when_full() {
        let mut c = KvCache::new(2, 1, 1).unwrap();
        c.insert(vec![1.0], vec![1.0]).unwrap();
        c.bump(0);
        c.insert(vec![2.0], vec![2.0]).unwrap();
        c.insert(vec![3.0], vec![3.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.keys().data(), &[1.0, 3.0]);
        assert_eq!(c.lookup(&[3.0 + 1e-9]), Some(1));
        assert_eq!(c.lookup(&[2.0]), None);
    }
}
