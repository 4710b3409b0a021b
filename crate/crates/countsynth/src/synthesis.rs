//! Saturated count-model synthesis of contingency tables.
//!
//! Every cell of the original table is replaced by a draw from a negative
//! binomial (type I) distribution centred on the observed count: given an
//! original count N, the synthetic count is NBI(rho * N, sigma), where sigma
//! inflates the variance (Var = mu + sigma * mu^2) and rho rescales the
//! expected sample size. Sampling zeros receive a pseudocount alpha when one
//! is configured, otherwise they stay zero; structural zeros always stay
//! zero. The m replicates of an ensemble are generated independently, each
//! replicate on its own counter-based RNG stream, so results are identical
//! regardless of how the work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::table::{CellTable, ContingencyTable, RealTable};

/// Tuning parameters of the synthesis mechanism.
///
/// `sigma` is the NBI dispersion; `sigma = 0` is the Poisson limiting case.
/// `alpha` is the pseudocount given to sampling zeros (0 disables it; when
/// enabled, a small value such as 0.01 is typical). `size_factor` is
/// rho = E(n_syn) / n and multiplies every cell mean, the pseudocount
/// included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct SynthesisParams {
    pub sigma: f64,
    pub alpha: f64,
    pub m: usize,
    pub size_factor: f64,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    sigma: f64,
    #[serde(default)]
    alpha: f64,
    m: usize,
    #[serde(default = "one")]
    size_factor: f64,
    master_seed: u64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<ParamsRepr> for SynthesisParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        SynthesisParams::new(r.sigma, r.alpha, r.m, r.size_factor, r.master_seed)
    }
}

impl From<SynthesisParams> for ParamsRepr {
    fn from(p: SynthesisParams) -> Self {
        ParamsRepr {
            sigma: p.sigma,
            alpha: p.alpha,
            m: p.m,
            size_factor: p.size_factor,
            master_seed: p.master_seed,
        }
    }
}

impl SynthesisParams {
    pub fn new(
        sigma: f64,
        alpha: f64,
        m: usize,
        size_factor: f64,
        master_seed: u64,
    ) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and nonnegative, got {sigma}"
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and nonnegative, got {alpha}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter(
                "replicate count m must be at least 1".into(),
            ));
        }
        if !size_factor.is_finite() || size_factor <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "size factor must be finite and positive, got {size_factor}"
            )));
        }
        Ok(SynthesisParams {
            sigma,
            alpha,
            m,
            size_factor,
            master_seed,
        })
    }
}

/// Probability of drawing `y` from NBI(mu, sigma).
///
/// For sigma > 0 this is
/// `Gamma(y + 1/sigma) / (Gamma(y+1) Gamma(1/sigma))
///  * (sigma mu / (1 + sigma mu))^y * (1 + sigma mu)^(-1/sigma)`;
/// sigma = 0 gives the Poisson(mu) probability.
pub fn nbi_pmf(y: u64, mu: f64, sigma: f64) -> Result<f64> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "NBI mean must be finite and positive, got {mu}"
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "NBI dispersion must be finite and nonnegative, got {sigma}"
        )));
    }
    let yf = y as f64;
    let log_p = if sigma == 0.0 {
        yf * mu.ln() - mu - ln_gamma(yf + 1.0)
    } else {
        let r = 1.0 / sigma;
        let sm = sigma * mu;
        ln_gamma(yf + r) - ln_gamma(yf + 1.0) - ln_gamma(r) + yf * (sm / (1.0 + sm)).ln()
            - r * sm.ln_1p()
    };
    Ok(log_p.exp())
}

/// Exact sampler for one NBI(mu, sigma) cell distribution.
///
/// For sigma > 0 it draws the gamma-Poisson mixture: G ~ Gamma(1/sigma,
/// scale sigma*mu), then Poisson(G). For sigma = 0 it draws Poisson(mu)
/// directly. Construction is the expensive part, so samplers are cached per
/// distinct cell count during synthesis.
#[derive(Debug, Clone)]
pub enum NbiSampler {
    Poisson(Poisson<f64>),
    GammaPoisson(Gamma<f64>),
}

impl NbiSampler {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "NBI mean must be finite and positive, got {mu}"
            )));
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "NBI dispersion must be finite and nonnegative, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            let dist = Poisson::new(mu)
                .map_err(|e| Error::InvalidParameter(format!("Poisson({mu}): {e}")))?;
            Ok(NbiSampler::Poisson(dist))
        } else {
            let dist = Gamma::new(1.0 / sigma, sigma * mu)
                .map_err(|e| Error::InvalidParameter(format!("Gamma mixing({mu},{sigma}): {e}")))?;
            Ok(NbiSampler::GammaPoisson(dist))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            NbiSampler::Poisson(p) => p.sample(rng) as u64,
            NbiSampler::GammaPoisson(g) => {
                let rate = g.sample(rng);
                // a gamma draw can underflow to zero for tiny shapes
                if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(rng) as u64
                } else {
                    0
                }
            }
        }
    }
}

/// RNG for one replicate: one ChaCha stream per replicate index, all derived
/// from the master seed. Stream assignment depends only on
/// `(master_seed, replicate)`, never on scheduling, so a prefix of a larger
/// ensemble is bit-identical to a smaller ensemble with the same seed.
pub(crate) fn replicate_rng(master_seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Mix a master seed with context tags into a new seed (splitmix64 chain).
/// Used to give independent jobs (grid cells, simulation runs) their own
/// deterministic seeds.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut seed = splitmix(master);
    for &t in tags {
        seed = splitmix(seed ^ splitmix(t));
    }
    seed
}

/// Draw one synthetic replicate of `table`. `params.m` is ignored; the RNG
/// position determines the draw. Structural zeros produce no draw at all.
pub fn synthesize_once<R: Rng + ?Sized>(
    table: &ContingencyTable,
    params: &SynthesisParams,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let rho = params.size_factor;
    let mut cache: HashMap<u64, NbiSampler> = HashMap::new();
    let zero_sampler = if params.alpha > 0.0 {
        Some(NbiSampler::new(rho * params.alpha, params.sigma)?)
    } else {
        None
    };
    let mut out = vec![0u64; table.counts().len()];
    for (i, &count) in table.counts().iter().enumerate() {
        if table.is_structural_zero(i) {
            continue;
        }
        if count == 0 {
            if let Some(s) = &zero_sampler {
                out[i] = s.sample(rng);
            }
            continue;
        }
        let sampler = match cache.entry(count) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(NbiSampler::new(rho * count as f64, params.sigma)?)
            }
        };
        out[i] = sampler.sample(rng);
    }
    Ok(out)
}

/// Generate `params.m` independent synthetic replicates of `table`.
///
/// Replicates are produced in parallel; the ensemble is bit-identical for a
/// fixed master seed whatever the worker count.
pub fn synthesize(table: &ContingencyTable, params: &SynthesisParams) -> Result<SyntheticEnsemble> {
    let replicates: Vec<Vec<u64>> = (0..params.m)
        .into_par_iter()
        .map(|l| {
            let mut rng = replicate_rng(params.master_seed, l);
            synthesize_once(table, params, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n_syn = replicates
        .iter()
        .map(|counts| counts.iter().sum())
        .collect();
    Ok(SyntheticEnsemble {
        schema: table.schema().clone(),
        replicates,
        n_syn,
        params: *params,
    })
}

/// Stream the replicates one at a time in replicate order, at constant
/// memory. Rides the same per-replicate streams as [`synthesize`], so the
/// l-th yielded vector is bit-identical to `synthesize(..).replicate(l)`.
pub fn synthesize_iter<'a>(
    table: &'a ContingencyTable,
    params: &'a SynthesisParams,
) -> impl Iterator<Item = Result<Vec<u64>>> + 'a {
    (0..params.m).map(move |l| {
        let mut rng = replicate_rng(params.master_seed, l);
        synthesize_once(table, params, &mut rng)
    })
}

/// m synthetic replicates of one table, plus their totals and the parameters
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnsemble {
    schema: Schema,
    replicates: Vec<Vec<u64>>,
    n_syn: Vec<u64>,
    params: SynthesisParams,
}

impl SyntheticEnsemble {
    /// Assemble an ensemble from parts (used when loading persisted
    /// ensembles); validates lengths and totals.
    pub fn from_parts(
        schema: Schema,
        replicates: Vec<Vec<u64>>,
        params: SynthesisParams,
    ) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        for (l, rep) in replicates.iter().enumerate() {
            if rep.len() != schema.num_cells() {
                return Err(Error::InvalidTable(format!(
                    "replicate {l} has {} cells; schema declares {}",
                    rep.len(),
                    schema.num_cells()
                )));
            }
        }
        let n_syn = replicates
            .iter()
            .map(|counts| counts.iter().sum())
            .collect();
        Ok(SyntheticEnsemble {
            schema,
            replicates,
            n_syn,
            params,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn m(&self) -> usize {
        self.replicates.len()
    }

    pub fn num_cells(&self) -> usize {
        self.schema.num_cells()
    }

    pub fn params(&self) -> &SynthesisParams {
        &self.params
    }

    /// Per-replicate totals n_syn.
    pub fn totals(&self) -> &[u64] {
        &self.n_syn
    }

    pub fn mean_total(&self) -> f64 {
        self.n_syn.iter().sum::<u64>() as f64 / self.m() as f64
    }

    pub fn replicate(&self, l: usize) -> &[u64] {
        &self.replicates[l]
    }

    pub fn replicates(&self) -> &[Vec<u64>] {
        &self.replicates
    }

    /// Zero-copy table view of one replicate.
    pub fn replicate_view(&self, l: usize) -> ReplicateView<'_> {
        ReplicateView {
            schema: &self.schema,
            counts: &self.replicates[l],
        }
    }

    /// Cell-wise mean of the replicates: values[i] = (1/m) sum_l counts_l[i].
    pub fn average(&self) -> RealTable {
        average_replicates(&self.schema, &self.replicates)
    }

    /// Cell-wise sum of the replicates; the pooled total is the sum of the
    /// per-replicate totals.
    pub fn pool(&self) -> ContingencyTable {
        let m = self.m();
        let cells = self.num_cells();
        let mut sums = vec![0u64; cells];
        for l in 0..m {
            for (s, &c) in sums.iter_mut().zip(&self.replicates[l]) {
                *s += c;
            }
        }
        ContingencyTable::new(self.schema.clone(), sums)
            .expect("pooled counts match the ensemble schema")
    }
}

/// Cell-wise mean of a slice of replicates (exposed for prefix reuse).
pub(crate) fn average_replicates(schema: &Schema, replicates: &[Vec<u64>]) -> RealTable {
    assert!(!replicates.is_empty(), "average of an empty ensemble");
    let m = replicates.len() as f64;
    let cells = schema.num_cells();
    let mut sums = vec![0u64; cells];
    for rep in replicates {
        for (s, &c) in sums.iter_mut().zip(rep) {
            *s += c;
        }
    }
    let values = sums.into_iter().map(|s| s as f64 / m).collect();
    RealTable::new(schema.clone(), values).expect("averaged counts are finite and nonnegative")
}

/// Borrowed view of one replicate as a table.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateView<'a> {
    schema: &'a Schema,
    counts: &'a [u64],
}

impl CellTable for ReplicateView<'_> {
    fn schema(&self) -> &Schema {
        self.schema
    }
    fn cell(&self, index: usize) -> f64 {
        self.counts[index] as f64
    }
}
