//! Basket files, the item catalog, train/test splitting and synthetic data.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dpp::{self, Basket, TraitMatrix};
use crate::error::{Error, Result};
use crate::mixture::sample_categorical;

/// Bidirectional map between external item ids and dense indices, in
/// first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut catalog = Catalog::new();
        for id in ids {
            if catalog.index.contains_key(&id) {
                return Err(Error::CatalogMismatch(format!("duplicate item id `{id}`")));
            }
            catalog.intern(&id);
        }
        Ok(catalog)
    }

    /// Index of `id`, adding it if new.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Resolves external ids, naming the first unknown one.
    pub fn resolve<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Basket> {
        ids.into_iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::UnknownItem(id.to_owned()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Basket::new)
    }
}

/// Input layouts for basket files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// One basket per line, comma-separated item ids.
    BasketPerLine,
    /// `basket_id,item_id` per line, grouped by basket id.
    PairList,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basket-per-line" | "baskets" => Ok(Format::BasketPerLine),
            "pair-list" | "pairs" => Ok(Format::PairList),
            _ => Err(Error::Config(format!(
                "unknown format `{s}` (expected basket-per-line or pair-list)"
            ))),
        }
    }
}

/// Where a dataset came from and what the loader filtered out.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub baskets_read: usize,
    pub duplicate_items: usize,
    pub dropped_small: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasketDataset {
    pub catalog: Catalog,
    pub baskets: Vec<Basket>,
    pub provenance: Provenance,
}

impl BasketDataset {
    pub fn num_items(&self) -> usize {
        self.catalog.len()
    }

    pub fn len(&self) -> usize {
        self.baskets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baskets.is_empty()
    }

    /// Occurrence count of every item across the baskets.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items()];
        for basket in &self.baskets {
            for &i in basket.items() {
                counts[i] += 1;
            }
        }
        counts
    }

    pub fn max_basket_size(&self) -> usize {
        self.baskets.iter().map(Basket::len).max().unwrap_or(0)
    }

    /// `M`, `N` and the basket-size histogram as key-value text.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "source={}", self.provenance.source);
        let _ = writeln!(out, "M={}", self.num_items());
        let _ = writeln!(out, "N={}", self.len());
        let _ = writeln!(out, "baskets_read={}", self.provenance.baskets_read);
        let _ = writeln!(out, "dropped_small={}", self.provenance.dropped_small);
        let _ = writeln!(out, "duplicate_items={}", self.provenance.duplicate_items);
        let mut hist = std::collections::BTreeMap::new();
        for b in &self.baskets {
            *hist.entry(b.len()).or_insert(0usize) += 1;
        }
        for (size, count) in hist {
            let _ = writeln!(out, "size_{size}={count}");
        }
        out
    }

    /// Writes basket-per-line text using external ids.
    pub fn write_baskets(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for basket in &self.baskets {
            let ids: Vec<&str> = basket.items().iter().map(|&i| self.catalog.id(i)).collect();
            out.push_str(&ids.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    fn subset(&self, indices: &[usize]) -> BasketDataset {
        BasketDataset {
            catalog: self.catalog.clone(),
            baskets: indices.iter().map(|&i| self.baskets[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Loads baskets, building a fresh catalog in first-seen order.
pub fn load_baskets(path: impl AsRef<Path>, format: Format) -> Result<BasketDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut catalog = Catalog::new();
    parse_baskets(
        BufReader::new(file),
        &path.display().to_string(),
        format,
        &mut catalog,
        true,
    )
}

/// Loads baskets against an existing catalog; unknown ids are an error.
pub fn load_baskets_with_catalog(
    path: impl AsRef<Path>,
    format: Format,
    catalog: &Catalog,
) -> Result<BasketDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut catalog = catalog.clone();
    parse_baskets(
        BufReader::new(file),
        &path.display().to_string(),
        format,
        &mut catalog,
        false,
    )
}

/// Parses basket text. With `grow = false` the catalog is fixed and an
/// unseen id is reported as a catalog mismatch.
pub fn parse_baskets<R: BufRead>(
    reader: R,
    source: &str,
    format: Format,
    catalog: &mut Catalog,
    grow: bool,
) -> Result<BasketDataset> {
    let malformed = |line: usize, reason: &str| Error::Malformed {
        path: source.to_owned(),
        line,
        reason: reason.to_owned(),
    };
    let mut lookup = |id: &str, line: usize| -> Result<usize> {
        if id.is_empty() {
            return Err(malformed(line, "empty item id"));
        }
        if grow {
            Ok(catalog.intern(id))
        } else {
            catalog.get(id).ok_or_else(|| {
                Error::CatalogMismatch(format!(
                    "{source}:{line}: item `{id}` is not in the model catalog"
                ))
            })
        }
    };

    let mut raw: Vec<Vec<usize>> = Vec::new();
    let mut groups: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        match format {
            Format::BasketPerLine => {
                let items = line
                    .split(',')
                    .map(|tok| lookup(tok.trim(), line_no))
                    .collect::<Result<Vec<_>>>()?;
                raw.push(items);
            }
            Format::PairList => {
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                let [basket_id, item_id] = fields[..] else {
                    return Err(malformed(line_no, "expected `basket_id,item_id`"));
                };
                if basket_id.is_empty() {
                    return Err(malformed(line_no, "empty basket id"));
                }
                let item = lookup(item_id, line_no)?;
                let slot = *groups.entry(basket_id.to_owned()).or_insert_with(|| {
                    raw.push(Vec::new());
                    raw.len() - 1
                });
                raw[slot].push(item);
            }
        }
    }

    let mut provenance = Provenance {
        source: source.to_owned(),
        baskets_read: raw.len(),
        ..Default::default()
    };
    let mut baskets = Vec::with_capacity(raw.len());
    for items in raw {
        let n = items.len();
        let basket = Basket::new(items);
        provenance.duplicate_items += n - basket.len();
        if basket.len() < 2 {
            provenance.dropped_small += 1;
        } else {
            baskets.push(basket);
        }
    }
    if baskets.is_empty() {
        return Err(Error::Empty(format!(
            "{source}: no baskets with at least two items"
        )));
    }
    Ok(BasketDataset {
        catalog: catalog.clone(),
        baskets,
        provenance,
    })
}

/// Uniform basket-level split. Both sides keep the full catalog; baskets
/// keep their original relative order.
pub fn split<R: Rng + ?Sized>(
    dataset: &BasketDataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(BasketDataset, BasketDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Empty(format!(
            "split of {n} baskets at {train_fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// Settings for [`generate_synthetic`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_items: usize,
    pub num_traits: usize,
    pub num_components: usize,
    pub num_baskets: usize,
    pub min_size: usize,
    pub max_size: usize,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        if self.num_components == 0 || self.num_items == 0 || self.num_traits == 0 {
            return bad("M, K and the component count must be positive".into());
        }
        if self.num_baskets == 0 {
            return bad("at least one basket is required".into());
        }
        if self.min_size < 2 || self.min_size > self.max_size {
            return bad(format!(
                "basket sizes {}..={} must satisfy 2 <= min <= max",
                self.min_size, self.max_size
            ));
        }
        if self.max_size > self.num_traits {
            return bad(format!(
                "basket size {} exceeds trait dimension {}",
                self.max_size, self.num_traits
            ));
        }
        let block = self.num_items / self.num_components;
        if block < self.max_size {
            return bad(format!(
                "{} items split into {} blocks leaves {block} per block, fewer than basket size {}",
                self.num_items, self.num_components, self.max_size
            ));
        }
        Ok(())
    }

    /// Item range owned by component `w`; the last block takes the remainder.
    pub fn block(&self, w: usize) -> std::ops::Range<usize> {
        let size = self.num_items / self.num_components;
        let end = if w + 1 == self.num_components {
            self.num_items
        } else {
            (w + 1) * size
        };
        w * size..end
    }
}

const MAX_ENUMERATED_SUBSETS: usize = 200_000;

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// All size-`size` subsets of `support` with their unnormalized
/// probabilities `det(L_A)`, for exact k-DPP sampling.
pub struct KDppTable {
    subsets: Vec<Basket>,
    probs: Vec<f64>,
}

impl KDppTable {
    pub fn new(v: &TraitMatrix, support: &[usize], size: usize) -> Result<Self> {
        if size == 0 || size > support.len() {
            return Err(Error::Infeasible(format!(
                "cannot draw {size} items from a support of {}",
                support.len()
            )));
        }
        if binomial(support.len(), size) > MAX_ENUMERATED_SUBSETS {
            return Err(Error::Infeasible("too many subsets to enumerate".into()));
        }
        let mut subsets = Vec::new();
        let mut dets = Vec::new();
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let basket = Basket::new(idx.iter().map(|&i| support[i]));
            let log_det = dpp::log_det_submatrix(v, &basket);
            subsets.push(basket);
            dets.push(log_det.exp());
            // next combination in lexicographic order
            let Some(pos) = (0..size).rev().find(|&p| idx[p] < support.len() - size + p) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..size {
                idx[p] = idx[p - 1] + 1;
            }
        }
        let total: f64 = dets.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Infeasible(
                "every subset has zero probability".into(),
            ));
        }
        let probs = dets.into_iter().map(|d| d / total).collect();
        Ok(KDppTable { subsets, probs })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Basket {
        self.subsets[sample_categorical(&self.probs, rng)].clone()
    }
}

/// Exact k-DPP draw of `size` items from `support` by enumeration.
pub fn sample_k_subset<R: Rng + ?Sized>(
    v: &TraitMatrix,
    support: &[usize],
    size: usize,
    rng: &mut R,
) -> Result<Basket> {
    Ok(KDppTable::new(v, support, size)?.sample(rng))
}

/// Approximate draw by sequential conditioning: the first item with
/// probability proportional to `L_bb`, each further item from the next-item
/// conditional.
pub fn sample_sequential<R: Rng + ?Sized>(
    v: &TraitMatrix,
    size: usize,
    rng: &mut R,
) -> Result<Basket> {
    let quality: Vec<f64> = v.as_matrix().row_iter().map(|r| r.norm_squared()).collect();
    let total: f64 = quality.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Infeasible("all item qualities are zero".into()));
    }
    let first: Vec<f64> = quality.iter().map(|q| q / total).collect();
    let mut basket = Basket::new([sample_categorical(&first, rng)]);
    while basket.len() < size {
        let probs = dpp::next_item_probs(v, &basket)?;
        basket = basket.with(sample_categorical(probs.as_slice(), rng));
    }
    Ok(basket)
}

/// Synthetic data from `W_true` low-rank DPPs with disjoint item blocks.
///
/// Component `w` has Gaussian trait rows on its block and zero rows
/// elsewhere. Each basket picks a component uniformly and a size uniformly
/// in `min_size..=max_size`, then draws an exact k-DPP sample over the
/// block (sequential conditioning when the block is too large to
/// enumerate). Returns the dataset and the generating component per basket.
pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &SynthConfig,
    rng: &mut R,
) -> Result<(BasketDataset, Vec<usize>)> {
    config.validate()?;
    let (m, k) = (config.num_items, config.num_traits);
    let components: Vec<TraitMatrix> = (0..config.num_components)
        .map(|w| {
            let block = config.block(w);
            let mut values = DMatrix::zeros(m, k);
            for i in block {
                for j in 0..k {
                    values[(i, j)] = StandardNormal.sample(rng);
                }
            }
            TraitMatrix(values)
        })
        .collect();

    let mut tables: HashMap<(usize, usize), Option<KDppTable>> = HashMap::new();
    let mut baskets = Vec::with_capacity(config.num_baskets);
    let mut labels = Vec::with_capacity(config.num_baskets);
    for _ in 0..config.num_baskets {
        let w = rng.random_range(0..config.num_components);
        let size = rng.random_range(config.min_size..=config.max_size);
        let support: Vec<usize> = config.block(w).collect();
        let table = tables.entry((w, size)).or_insert_with(|| {
            (binomial(support.len(), size) <= MAX_ENUMERATED_SUBSETS)
                .then(|| KDppTable::new(&components[w], &support, size).ok())
                .flatten()
        });
        let basket = match table {
            Some(t) => t.sample(rng),
            None => sample_sequential(&components[w], size, rng)?,
        };
        baskets.push(basket);
        labels.push(w);
    }
    let catalog = Catalog::from_ids((0..m).map(|i| format!("i{i}")))?;
    let n = baskets.len();
    Ok((
        BasketDataset {
            catalog,
            baskets,
            provenance: Provenance {
                source: format!("synthetic(M={m}, K={k}, W={})", config.num_components),
                baskets_read: n,
                ..Default::default()
            },
        },
        labels,
    ))
}

/// Writes one label per line.
pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for l in labels {
        writeln!(file, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
