//! Riemannian metrics on the SPD manifold and the BW operator set.

mod bw;
mod generalized;

pub use bw::{
    bw_distance, bw_distance_sq, bw_exp, bw_geodesic, bw_inner, bw_log, bw_manifold_transport,
    bw_parallel_transport, exp_at_identity, log_at_identity, transport_from_identity,
    transport_to_identity, COMMUTATION_RTOL, NEGATIVE_RADICAND_TOL,
};
pub use generalized::{
    ai_inner, deformation_limit_inner, gbw_inner, log_differential, power_ai_inner,
    power_differential, power_gbw_inner,
};
pub(crate) use generalized::check_theta;

use crate::error::{Error, Result};
use crate::linalg::{SpdMatrix, SymmetricMatrix};

/// A metric on the SPD manifold, dispatching to the matching inner product.
#[derive(Clone, Debug)]
pub enum MetricTag {
    Bw,
    Ai,
    Gbw { m: SpdMatrix },
    PowerGbw { m: SpdMatrix, theta: f64 },
    PowerAi { theta: f64 },
}

impl MetricTag {
    pub fn power_gbw(m: SpdMatrix, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(MetricTag::PowerGbw { m, theta })
    }

    pub fn power_ai(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(MetricTag::PowerAi { theta })
    }

    pub fn inner(&self, x: &SpdMatrix, s1: &SymmetricMatrix, s2: &SymmetricMatrix) -> Result<f64> {
        match self {
            MetricTag::Bw => bw_inner(x, s1, s2),
            MetricTag::Ai => ai_inner(x, s1, s2),
            MetricTag::Gbw { m } => gbw_inner(m, x, s1, s2),
            MetricTag::PowerGbw { m, theta } => power_gbw_inner(m, *theta, x, s1, s2),
            MetricTag::PowerAi { theta } => power_ai_inner(*theta, x, s1, s2),
        }
    }

    pub fn norm(&self, x: &SpdMatrix, s: &SymmetricMatrix) -> Result<f64> {
        let v = self.inner(x, s, s)?;
        if v < 0.0 {
            return Err(Error::numerical("metric norm", format!("negative squared norm {v:e}")));
        }
        Ok(v.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{random_spd, random_symmetric};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tag_dispatch_matches_free_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = random_spd(&mut rng, 3, 10.0);
        let m = random_spd(&mut rng, 3, 10.0);
        let s = random_symmetric(&mut rng, 3);
        let tags = [
            (MetricTag::Bw, bw_inner(&x, &s, &s).unwrap()),
            (MetricTag::Ai, ai_inner(&x, &s, &s).unwrap()),
            (MetricTag::Gbw { m: m.clone() }, gbw_inner(&m, &x, &s, &s).unwrap()),
            (
                MetricTag::power_gbw(m.clone(), 0.5).unwrap(),
                power_gbw_inner(&m, 0.5, &x, &s, &s).unwrap(),
            ),
            (MetricTag::power_ai(2.0).unwrap(), power_ai_inner(2.0, &x, &s, &s).unwrap()),
        ];
        for (tag, expected) in tags {
            assert_eq!(tag.inner(&x, &s, &s).unwrap(), expected);
            assert!(tag.norm(&x, &s).unwrap() > 0.0);
        }
        assert!(MetricTag::power_ai(0.0).is_err());
        assert!(MetricTag::power_gbw(m, f64::NAN).is_err());
    }
}
