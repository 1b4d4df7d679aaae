use crate::cmdp::OccupationMeasure;

/// Values closer than this are the same support point.
pub const MERGE_TOL: f64 = 1e-12;

/// Finite pmf over effective SNR values `h·p·1{q>0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrDistribution {
    support: Vec<f64>,
    pmf: Vec<f64>,
}

impl SnrDistribution {
    pub fn point(value: f64) -> Self {
        SnrDistribution {
            support: vec![value],
            pmf: vec![1.0],
        }
    }

    /// Sorts `(value, mass)` pairs, drops zero masses and merges values that
    /// lie within [`MERGE_TOL`] of the first value of their run.
    pub fn from_masses(masses: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut pairs: Vec<(f64, f64)> = masses.into_iter().filter(|&(_, p)| p != 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(pairs.len());
        // (sum, running compensation) per support point
        let mut sums: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match (support.last(), sums.last_mut()) {
                (Some(&last), Some((sum, comp))) if v - last <= MERGE_TOL => {
                    let t = *sum + p;
                    *comp += if sum.abs() >= p.abs() {
                        (*sum - t) + p
                    } else {
                        (p - t) + *sum
                    };
                    *sum = t;
                }
                _ => {
                    support.push(v);
                    sums.push((p, 0.0));
                }
            }
        }
        let pmf: Vec<f64> = sums.into_iter().map(|(s, c)| s + c).collect();
        if support.is_empty() {
            return Self::point(0.0);
        }
        SnrDistribution { support, pmf }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.pmf.iter().copied())
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(v, p)| p * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    /// Largest pointwise pmf difference over the union of both supports.
    pub fn linf_distance(&self, other: &SnrDistribution) -> f64 {
        let merged =
            SnrDistribution::from_masses(self.iter().chain(other.iter().map(|(v, p)| (v, -p))));
        // from_masses drops exact zeros only, so cancelled points remain
        merged.pmf.iter().fold(0.0, |m, p| m.max(p.abs()))
    }
}

/// Distribution of the effective SNR under an occupation measure.
pub fn snr_distribution(z: &OccupationMeasure) -> SnrDistribution {
    let space = z.space();
    SnrDistribution::from_masses(
        space
            .iter_pairs()
            .map(|(i, s, a)| (space.effective_snr(s, a), z.as_slice()[i])),
    )
}

/// Distribution of the sum of independent SNR variables; the empty sum is a
/// point mass at zero.
pub fn convolve<'a>(dists: impl IntoIterator<Item = &'a SnrDistribution>) -> SnrDistribution {
    dists
        .into_iter()
        .fold(SnrDistribution::point(0.0), |acc, d| {
            SnrDistribution::from_masses(
                acc.iter()
                    .flat_map(|(v, p)| d.iter().map(move |(w, q)| (v + w, p * q))),
            )
        })
}
