use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use super::arch::{ArchDescriptor, LayerSpec, Plan, PlannedLayer};
use super::layers::{self, Aux};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::videodata::Clip;

/// A network: descriptor, resolved plan and one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    desc: ArchDescriptor,
    plan: Plan,
    params: Vec<f32>,
    seed: u64,
}

/// Activations saved by [`Network::forward_train`].
#[derive(Debug)]
pub struct Tape {
    trunk: Vec<Vec<f32>>,
    trunk_aux: Vec<Aux>,
    heads: Vec<(Vec<Vec<f32>>, Vec<Aux>)>,
}

impl Tape {
    pub fn head_output(&self, head: usize) -> &[f32] {
        let (acts, _) = &self.heads[head];
        acts.last().map(|v| v.as_slice()).unwrap_or(&self.trunk[self.trunk.len() - 1])
    }
}

fn init_layer(spec: &LayerSpec, last_in_head: bool, rng: &mut impl Rng, out: &mut Vec<f32>) {
    let (n_w, n_b) = spec.param_split();
    let fan_in = match spec {
        LayerSpec::Conv3d {
            in_channels, kernel, ..
        } => in_channels * kernel.iter().product::<usize>(),
        LayerSpec::DepthwiseConv3d { kernel, .. } => kernel.iter().product(),
        LayerSpec::Dense { in_features, .. } => *in_features,
        LayerSpec::ChannelNorm { .. } => {
            out.extend(std::iter::repeat(1.0).take(n_w));
            out.extend(std::iter::repeat(0.0).take(n_b));
            return;
        }
        _ => return,
    };
    let gain = if last_in_head { 1.0 } else { 2.0 };
    let std = (gain / fan_in as f64).sqrt();
    for _ in 0..n_w {
        let z: f64 = rng.sample(StandardNormal);
        out.push((z * std) as f32);
    }
    out.extend(std::iter::repeat(0.0).take(n_b));
}

impl Network {
    /// He-normal initialization, deterministic in `seed`.
    pub fn new(desc: ArchDescriptor, seed: u64) -> Result<Self> {
        let plan = desc.plan()?;
        let mut params = Vec::with_capacity(plan.param_count);
        for (i, l) in plan.trunk.iter().enumerate() {
            let mut rng = rng_for(seed, i as u64);
            init_layer(&l.spec, false, &mut rng, &mut params);
        }
        for (h, (_, layers)) in plan.heads.iter().enumerate() {
            for (i, l) in layers.iter().enumerate() {
                let mut rng = rng_for(seed, 1_000 + (h * 100 + i) as u64);
                init_layer(&l.spec, i + 1 == layers.len(), &mut rng, &mut params);
            }
        }
        debug_assert_eq!(params.len(), plan.param_count);
        Ok(Network {
            desc,
            plan,
            params,
            seed,
        })
    }

    pub fn from_params(desc: ArchDescriptor, params: Vec<f32>, seed: u64) -> Result<Self> {
        let plan = desc.plan()?;
        if params.len() != plan.param_count {
            return Err(Error::ShapeMismatch {
                expected: vec![plan.param_count],
                got: vec![params.len()],
            });
        }
        Ok(Network {
            desc,
            plan,
            params,
            seed,
        })
    }

    pub fn descriptor(&self) -> &ArchDescriptor {
        &self.desc
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter range owned by head `name`.
    pub fn head_param_range(&self, name: &str) -> Option<Range<usize>> {
        let (_, layers) = self.plan.heads.iter().find(|(n, _)| n == name)?;
        let start = layers.first().map(|l| l.param_offset)?;
        let end = layers.last().map(|l| l.param_range().end)?;
        Some(start..end)
    }

    fn check_input(&self, input: &[f32]) -> Result<()> {
        let expect: usize = self.desc.input.iter().product();
        if input.len() != expect {
            return Err(Error::ShapeMismatch {
                expected: self.desc.input.to_vec(),
                got: vec![input.len()],
            });
        }
        Ok(())
    }

    fn run(&self, layers: &[PlannedLayer], input: Vec<f32>) -> Vec<f32> {
        layers.iter().fold(input, |x, l| {
            layers::forward(l, &self.params[l.param_range()], &x, false).0
        })
    }

    /// Outputs of every head, in descriptor order. Input is `(C, T, H, W)`.
    pub fn forward(&self, input: &[f32]) -> Result<Vec<Vec<f32>>> {
        self.check_input(input)?;
        let embed = self.run(&self.plan.trunk, input.to_vec());
        Ok(self
            .plan
            .heads
            .iter()
            .map(|(_, layers)| self.run(layers, embed.clone()))
            .collect())
    }

    pub fn forward_train(&self, input: &[f32]) -> Result<Tape> {
        self.check_input(input)?;
        let mut trunk = vec![input.to_vec()];
        let mut trunk_aux = Vec::with_capacity(self.plan.trunk.len());
        for l in &self.plan.trunk {
            let (y, aux) = layers::forward(l, &self.params[l.param_range()], trunk.last().unwrap(), true);
            trunk.push(y);
            trunk_aux.push(aux);
        }
        let embed = trunk.last().unwrap();
        let heads = self
            .plan
            .heads
            .iter()
            .map(|(_, layers)| {
                let mut acts = vec![embed.clone()];
                let mut auxs = Vec::with_capacity(layers.len());
                for l in layers {
                    let (y, aux) = layers::forward(l, &self.params[l.param_range()], acts.last().unwrap(), true);
                    acts.push(y);
                    auxs.push(aux);
                }
                (acts, auxs)
            })
            .collect();
        Ok(Tape {
            trunk,
            trunk_aux,
            heads,
        })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂(head output)` for
    /// each head (`None` = no loss on that head).
    pub fn backward(&self, tape: &Tape, head_grads: &[Option<&[f32]>], grad: &mut [f32]) {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(head_grads.len(), self.plan.heads.len());
        let embed_len = tape.trunk.last().map(|v| v.len()).unwrap_or(0);
        let mut d_embed = vec![0.0f32; embed_len];
        let mut any = false;
        for (((_, layers), (acts, auxs)), g) in self.plan.heads.iter().zip(&tape.heads).zip(head_grads) {
            let Some(g) = g else { continue };
            any = true;
            let mut cur = g.to_vec();
            for (i, l) in layers.iter().enumerate().rev() {
                let r = l.param_range();
                cur = layers::backward(l, &self.params[r.clone()], &acts[i], &acts[i + 1], &auxs[i], &cur, &mut grad[r], true)
                    .expect("input gradient requested");
            }
            for (d, c) in d_embed.iter_mut().zip(&cur) {
                *d += c;
            }
        }
        if !any {
            return;
        }
        let mut cur = d_embed;
        for (i, l) in self.plan.trunk.iter().enumerate().rev() {
            let r = l.param_range();
            let need_input = i > 0;
            match layers::backward(
                l,
                &self.params[r.clone()],
                &tape.trunk[i],
                &tape.trunk[i + 1],
                &tape.trunk_aux[i],
                &cur,
                &mut grad[r],
                need_input,
            ) {
                Some(g) => cur = g,
                None => break,
            }
        }
    }
}

/// Reorders a clip volume from `(L, 3, H, W)` to the network's `(3, L, H, W)`.
pub fn clip_input(clip: &Clip) -> Vec<f32> {
    let [l, c, h, w] = clip.shape();
    let plane = h * w;
    let mut out = vec![0.0f32; clip.volume.len()];
    for t in 0..l {
        for ch in 0..c {
            let src = &clip.volume[(t * c + ch) * plane..(t * c + ch + 1) * plane];
            out[(ch * l + t) * plane..(ch * l + t + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

pub(crate) fn check_clip(desc: &ArchDescriptor, clip: &Clip) -> Result<()> {
    let [l, c, h, w] = clip.shape();
    let want = desc.input;
    if [c, l, h, w] != want || clip.volume.len() != want.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            expected: vec![want[1], want[0], want[2], want[3]],
            got: vec![l, c, h, w],
        });
    }
    Ok(())
}
