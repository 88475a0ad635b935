//! Teacher and student clip classifiers.
//!
//! Both are [`Network`]s built from an [`ArchDescriptor`]; the wrappers here
//! fix which heads mean what. The teacher has one `class` head. The student
//! has a `class` head and a one-logit `confidence` head on a shared trunk.

pub mod arch;
mod checkpoint;
mod layers;
mod network;

pub use arch::{profile, reference_student, reference_teacher, ArchDescriptor, HeadSpec, LayerSpec, ModelProfile, Shape};
pub use checkpoint::{load_checkpoint, save_checkpoint, ParameterCheckpoint, CHECKPOINT_VERSION};
pub use network::{clip_input, Network, Tape};

use crate::error::{Error, Result};
use crate::videodata::Clip;

pub const CLASS_HEAD: &str = "class";
pub const CONFIDENCE_HEAD: &str = "confidence";

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    pub class_logits: Logits,
    pub confidence_logit: f64,
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} produced non-finite output")))
    }
}

#[derive(Debug, Clone)]
pub struct Teacher {
    net: Network,
    class_head: usize,
}

impl Teacher {
    pub fn new(net: Network) -> Result<Self> {
        let class_head = net
            .descriptor()
            .head_index(CLASS_HEAD)
            .ok_or_else(|| Error::Architecture("teacher needs a `class` head".into()))?;
        Ok(Teacher { net, class_head })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn num_classes(&self) -> usize {
        self.net.descriptor().head_output_len(CLASS_HEAD).unwrap_or(0)
    }

    pub fn forward(&self, clip: &Clip) -> Result<Logits> {
        network::check_clip(self.net.descriptor(), clip)?;
        let mut outs = self.net.forward(&clip_input(clip))?;
        let logits = to_f64(&outs.swap_remove(self.class_head));
        check_finite(&logits, "teacher")?;
        Ok(Logits(logits))
    }

    pub fn profile(&self) -> ModelProfile {
        profile(self.net.descriptor()).expect("validated descriptor")
    }
}

#[derive(Debug, Clone)]
pub struct Student {
    net: Network,
    class_head: usize,
    conf_head: usize,
}

impl Student {
    pub fn new(net: Network) -> Result<Self> {
        let d = net.descriptor();
        let class_head = d
            .head_index(CLASS_HEAD)
            .ok_or_else(|| Error::Architecture("student needs a `class` head".into()))?;
        let conf_head = d
            .head_index(CONFIDENCE_HEAD)
            .ok_or_else(|| Error::Architecture("student needs a `confidence` head".into()))?;
        if d.head_output_len(CONFIDENCE_HEAD) != Some(1) {
            return Err(Error::Architecture("confidence head must output one logit".into()));
        }
        Ok(Student {
            net,
            class_head,
            conf_head,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn class_head(&self) -> usize {
        self.class_head
    }

    pub fn conf_head(&self) -> usize {
        self.conf_head
    }

    pub fn num_classes(&self) -> usize {
        self.net.descriptor().head_output_len(CLASS_HEAD).unwrap_or(0)
    }

    pub fn forward(&self, clip: &Clip) -> Result<StudentOutput> {
        network::check_clip(self.net.descriptor(), clip)?;
        let outs = self.net.forward(&clip_input(clip))?;
        let class_logits = to_f64(&outs[self.class_head]);
        let confidence_logit = outs[self.conf_head][0] as f64;
        check_finite(&class_logits, "student")?;
        check_finite(&[confidence_logit], "student confidence")?;
        Ok(StudentOutput {
            class_logits: Logits(class_logits),
            confidence_logit,
        })
    }

    pub fn profile(&self) -> ModelProfile {
        profile(self.net.descriptor()).expect("validated descriptor")
    }
}
