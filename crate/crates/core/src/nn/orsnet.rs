use rand::Rng;

use super::cab::{build_stack, run_stack};
use super::{check_channels, ActKind, Cab, Conv};
use crate::autograd::{Graph, Var};
use crate::error::{dim_err, Result};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;

/// Original-resolution block: `x + conv3x3(CAB_k(...CAB_1(x)))`.
#[derive(Clone, Debug)]
pub struct Orb {
    cabs: Vec<Cab>,
    tail: Conv,
    channels: usize,
}

impl Orb {
    pub fn new<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        channels: usize,
        n_cabs: usize,
        reduction: usize,
        act: ActKind,
    ) -> Result<Self> {
        Ok(Self {
            cabs: build_stack(b, n_cabs, channels, reduction, act)?,
            tail: Conv::new(b, "tail", channels, channels, 3)?,
            channels,
        })
    }

    pub fn cabs(&self) -> &[Cab] {
        &self.cabs
    }

    pub fn tail(&self) -> &Conv {
        &self.tail
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        check_channels(g, x, self.channels, "ORB")?;
        let y = run_stack(&self.cabs, g, ps, x)?;
        let y = self.tail.forward(g, ps, y)?;
        g.add(x, y)
    }
}

/// Chain of ORBs at full resolution.
#[derive(Clone, Debug)]
pub struct OrsNet {
    orbs: Vec<Orb>,
    channels: usize,
}

impl OrsNet {
    pub fn new<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        channels: usize,
        n_orbs: usize,
        n_cabs_per_orb: usize,
        reduction: usize,
        act: ActKind,
    ) -> Result<Self> {
        let orbs = (0..n_orbs)
            .map(|i| Orb::new(&mut b.scope(&format!("orb{i}")), channels, n_cabs_per_orb, reduction, act))
            .collect::<Result<_>>()?;
        Ok(Self { orbs, channels })
    }

    pub fn orbs(&self) -> &[Orb] {
        &self.orbs
    }

    /// Runs the ORBs in order. `injections[i]`, when present, is added to the
    /// output of ORB `i`; it must already be at full resolution and width.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Var,
        injections: Option<&[Var]>,
    ) -> Result<Var> {
        check_channels(g, x, self.channels, "ORSNet")?;
        let inj = injections.unwrap_or(&[]);
        if inj.len() > self.orbs.len() {
            return Err(dim_err!("ORSNet has {} ORBs but received {} injections", self.orbs.len(), inj.len()));
        }
        let mut y = x;
        for (i, orb) in self.orbs.iter().enumerate() {
            y = orb.forward(g, ps, y)?;
            if let Some(&f) = inj.get(i) {
                let (sy, sf) = (g.shape(y), g.shape(f));
                if sy != sf {
                    return Err(dim_err!("ORSNet injection {i} has shape {sf}, expected {sy}"));
                }
                y = g.add(y, f)?;
            }
        }
        Ok(y)
    }
}
