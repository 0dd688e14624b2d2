//! The universal feature dictionary: construction, persistence and retrieval.

mod balltree;
mod format;
mod kmeans;
mod kvcache;

pub use balltree::{ball_tree_build, ball_tree_knn, BallNode, BallTree, Neighbor, NodeKind, DEFAULT_LEAF_SIZE};
pub use format::{dict_from_bytes, dict_load, dict_save, dict_to_bytes, DICT_MAGIC, DICT_VERSION};
pub use kmeans::{
    inertia, kmeans_plus_plus, minibatch_kmeans, nearest_centroid, repair_empty_clusters,
    select_representatives, KMeansResult,
};
pub use kvcache::{kv_attend, kv_compress, kv_evict, Attention, KvCache, DEFAULT_CAPACITY, HIT_RADIUS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::features::{extract_feature, MIN_PATCH, RAW_DIM};
use crate::image::{Image, ImagePatch};
use crate::numerics::{pca_fit, Matrix, PcaBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub id: usize,
    pub key: Vec<f64>,
    pub payload: ImagePatch,
    pub source_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildConfig {
    pub clusters: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub pca_dim: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            clusters: 256,
            batch_size: 1024,
            iterations: 100,
            seed: 0,
            pca_dim: 64,
        }
    }
}

/// A patch with a free-form provenance label.
#[derive(Debug, Clone)]
pub struct TaggedPatch {
    pub patch: ImagePatch,
    pub tag: String,
}

impl TaggedPatch {
    pub fn new(patch: ImagePatch, tag: impl Into<String>) -> Self {
        Self {
            patch,
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub entries: Vec<DictionaryEntry>,
    pub pca: PcaBasis,
    pub config: BuildConfig,
    pub content_hash: [u8; 32],
}

impl Dictionary {
    /// Assembles a dictionary and computes its content hash. Keys and the
    /// PCA basis are rounded to `f32`, the precision they are stored at.
    pub fn new(entries: Vec<DictionaryEntry>, pca: PcaBasis, config: BuildConfig) -> Result<Self> {
        let dim = pca.output_dim();
        for (i, e) in entries.iter().enumerate() {
            if e.id != i {
                return invalid("dictionary ids must be dense and ordered");
            }
            if e.key.len() != dim {
                return invalid("dictionary key dimension must match the PCA output");
            }
        }
        let pca = round_pca(&pca);
        let entries = entries
            .into_iter()
            .map(|e| DictionaryEntry {
                key: round_f32(&e.key),
                ..e
            })
            .collect();
        let mut dict = Dictionary {
            entries,
            pca,
            config,
            content_hash: [0; 32],
        };
        let bytes = dict_to_bytes(&dict);
        dict.content_hash.copy_from_slice(&bytes[bytes.len() - 32..]);
        Ok(dict)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.pca.output_dim()
    }

    pub fn keys(&self) -> Matrix {
        let data = self.entries.iter().flat_map(|e| e.key.iter().copied()).collect();
        Matrix::new(self.entries.len(), self.feature_dim(), data).expect("uniform key dimension")
    }

    pub fn ball_tree(&self) -> Result<BallTree> {
        BallTree::build(&self.keys())
    }

    pub fn hash_hex(&self) -> String {
        self.content_hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Images below the feature extractor's minimum size are edge-padded first.
    pub fn query_feature(&self, image: &Image) -> Result<Vec<f64>> {
        let (w, h) = (image.width(), image.height());
        if w >= MIN_PATCH && h >= MIN_PATCH {
            return Ok(extract_feature(image, Some(&self.pca))?.data);
        }
        let padded = Image::from_fn(w.max(MIN_PATCH), h.max(MIN_PATCH), image.channels(), |x, y, c| {
            image.get(x.min(w - 1), y.min(h - 1), c)
        })?;
        Ok(extract_feature(&padded, Some(&self.pca))?.data)
    }
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

fn round_pca(pca: &PcaBasis) -> PcaBasis {
    PcaBasis {
        mean: round_f32(&pca.mean),
        components: Matrix::new(
            pca.components.rows(),
            pca.components.cols(),
            round_f32(pca.components.data()),
        )
        .expect("same shape"),
        explained_variance: round_f32(&pca.explained_variance),
    }
}

/// Features → PCA → mini-batch k-means → one representative patch per cluster.
pub fn build_dictionary(
    patches: impl IntoIterator<Item = TaggedPatch>,
    config: BuildConfig,
) -> Result<Dictionary> {
    let patches: Vec<TaggedPatch> = patches.into_iter().collect();
    let n = patches.len();
    if config.clusters == 0 {
        return invalid("cluster count must be positive");
    }
    if n < config.clusters {
        return invalid(format!(
            "{n} patches cannot form {} clusters",
            config.clusters
        ));
    }
    if n < 2 {
        return invalid("a dictionary needs at least two patches");
    }
    if config.pca_dim == 0 {
        return invalid("PCA dimension must be positive");
    }
    let raw: Vec<Vec<f64>> = patches
        .par_iter()
        .map(|p| extract_feature(&p.patch, None).map(|f| f.data))
        .collect::<Result<_>>()?;
    let raw = Matrix::new(n, RAW_DIM, raw.concat())?;
    let pca_dim = config.pca_dim.min(RAW_DIM).min(n);
    // round first so build-time keys match what a reload computes
    let pca = round_pca(&pca_fit(&raw, pca_dim)?);
    let keys: Vec<Vec<f64>> = patches
        .par_iter()
        .map(|p| {
            extract_feature(&p.patch, Some(&pca)).map(|f| round_f32(&f.data))
        })
        .collect::<Result<_>>()?;
    let keys = Matrix::new(n, pca_dim, keys.concat())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let km = minibatch_kmeans(
        &keys,
        config.clusters,
        config.batch_size,
        config.iterations,
        &mut rng,
    )?;
    let reps = select_representatives(&keys, &km.centroids, &km.assignments);
    let entries = reps
        .iter()
        .enumerate()
        .map(|(id, &i)| DictionaryEntry {
            id,
            key: keys.row(i).to_vec(),
            payload: patches[i].patch.clone(),
            source_tag: patches[i].tag.clone(),
        })
        .collect();
    Dictionary::new(entries, pca, config)
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    /// Ranked by distance, then id.
    pub neighbors: Vec<Neighbor>,
    pub cache_hit: bool,
    pub cache_mutated: bool,
}

impl Retrieval {
    pub fn ids(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.id).collect()
    }
}

/// Multi-query retrieval: the image and its 90° rotation each fetch `m`
/// candidates; results are merged by id, ranked by best distance and cut to `m`.
///
/// The cache only short-circuits repeated queries; results are identical
/// with or without it.
pub fn retrieve(
    dict: &Dictionary,
    tree: &BallTree,
    cache: Option<&mut KvCache>,
    image: &Image,
    m: usize,
) -> Result<Retrieval> {
    if dict.is_empty() {
        return invalid("dictionary is empty");
    }
    if m == 0 || m > dict.len() {
        return invalid(format!("m={m} must be in 1..={}", dict.len()));
    }
    let q = dict.query_feature(image)?;

    if let Some(cache) = cache {
        let key = cache.project_query(&q)?;
        if let Some(entry) = cache.lookup(&key) {
            let (stored, stored_m) = cache.payload(entry);
            if stored_m >= m {
                let neighbors = stored[..m]
                    .iter()
                    .map(|&(id, distance)| Neighbor { id, distance })
                    .collect();
                cache.bump(entry);
                return Ok(Retrieval {
                    neighbors,
                    cache_hit: true,
                    cache_mutated: true,
                });
            }
        }
        let neighbors = query_tree(dict, tree, &q, image, m)?;
        let mut value = vec![0.0; dict.feature_dim()];
        for nb in &neighbors {
            for (v, k) in value.iter_mut().zip(&dict.entries[nb.id].key) {
                *v += k / neighbors.len() as f64;
            }
        }
        let value = cache.project_value(&value)?;
        let payload = neighbors.iter().map(|n| (n.id, n.distance)).collect();
        cache.insert_with_payload(key, value, payload, m)?;
        return Ok(Retrieval {
            neighbors,
            cache_hit: false,
            cache_mutated: true,
        });
    }

    Ok(Retrieval {
        neighbors: query_tree(dict, tree, &q, image, m)?,
        cache_hit: false,
        cache_mutated: false,
    })
}

fn query_tree(
    dict: &Dictionary,
    tree: &BallTree,
    q: &[f64],
    image: &Image,
    m: usize,
) -> Result<Vec<Neighbor>> {
    let q_rot = dict.query_feature(&image.rotate90())?;
    let mut merged = tree.knn(q, m)?;
    merged.extend(tree.knn(&q_rot, m)?);
    merged.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    let mut seen = vec![false; dict.len()];
    merged.retain(|n| !std::mem::replace(&mut seen[n.id], true));
    merged.truncate(m);
    Ok(merged)
}
