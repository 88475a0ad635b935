use super::{sigmoid, ClassDistribution, ConfidenceScore, LossConfig, PseudoLabel, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::nets::{Logits, StudentOutput};

/// Scalar loss split into its distillation and confidence parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub kd: f64,
    pub conf: f64,
}

/// Loss value plus gradients w.r.t. the student's class logits and
/// confidence logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub parts: LossParts,
    pub d_class_logits: Vec<f64>,
    pub d_conf_logit: f64,
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{what} is not finite")))
    }
}

/// `softmax(logits / tau)` with max subtraction.
pub fn softened_softmax(logits: &[f64], tau: f64) -> Result<ClassDistribution> {
    if !(tau > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite or empty logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| ((s - max) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(ClassDistribution::new_unchecked(exps.into_iter().map(|e| e / z).collect()))
}

/// Blends the softened teacher distribution with the uniform distribution.
/// For `z = 1` the teacher keeps weight `z̃`; otherwise it keeps `1 − z̃`.
pub fn mix_teacher_targets(p_teacher: &ClassDistribution, z_tilde: ConfidenceScore, z: PseudoLabel) -> ClassDistribution {
    let c = p_teacher.len();
    let u = 1.0 / c as f64;
    let w = if z.0 { z_tilde.value() } else { 1.0 - z_tilde.value() };
    ClassDistribution::new_unchecked(p_teacher.probs().iter().map(|&p| w * p + (1.0 - w) * u).collect())
}

/// `τ² · KL(target ‖ student)`, student floored at 1e−12 inside the log.
pub fn kd_loss(target: &ClassDistribution, student: &ClassDistribution, tau: f64) -> Result<f64> {
    if target.len() != student.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![target.len()],
            got: vec![student.len()],
        });
    }
    let kl: f64 = target
        .probs()
        .iter()
        .zip(student.probs())
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &s)| t * (t.ln() - s.max(LOG_FLOOR).ln()))
        .sum();
    finite((tau * tau * kl).max(0.0), "distillation loss")
}

/// [`kd_loss`] of `softmax(student_logits/τ)` and its gradient in the logits.
/// The target is a constant.
pub fn kd_loss_grad(target: &ClassDistribution, student_logits: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    let q = softened_softmax(student_logits, tau)?;
    let loss = kd_loss(target, &q, tau)?;
    // Only unfloored classes contribute to the derivative of the log term.
    let active_mass: f64 = target
        .probs()
        .iter()
        .zip(q.probs())
        .filter(|(_, &s)| s >= LOG_FLOOR)
        .map(|(&t, _)| t)
        .sum();
    let grad = target
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&t, &s)| {
            let t_active = if s >= LOG_FLOOR { t } else { 0.0 };
            tau * (s * active_mass - t_active)
        })
        .collect();
    Ok((loss, grad))
}

fn clamp_conf(z: f64) -> f64 {
    z.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR)
}

/// `−[μ·z·log z̃ + (1−z)·log(1−z̃)]`.
pub fn confidence_bce(z_tilde: ConfidenceScore, z: PseudoLabel, mu: f64) -> f64 {
    let zt = clamp_conf(z_tilde.value());
    let zv = z.value();
    -(mu * zv * zt.ln() + (1.0 - zv) * (1.0 - zt).ln())
}

/// [`confidence_bce`] at `z̃ = sigmoid(logit)` and its derivative in the logit.
pub fn confidence_bce_grad(conf_logit: f64, z: PseudoLabel, mu: f64) -> (f64, f64) {
    let raw = sigmoid(conf_logit);
    let loss = confidence_bce(ConfidenceScore(raw), z, mu);
    if raw != clamp_conf(raw) {
        return (loss, 0.0);
    }
    let zv = z.value();
    (loss, -mu * zv * (1.0 - raw) + (1.0 - zv) * raw)
}

/// Total = KD(mixed teacher target, softened student) + λ·BCE(z̃, z).
pub fn condi_sr_loss(teacher: &Logits, student: &StudentOutput, z: PseudoLabel, cfg: &LossConfig) -> Result<LossParts> {
    Ok(condi_sr_grad(teacher, student, z, cfg)?.parts)
}

/// Gradients of [`condi_sr_loss`]. The mixed target is held constant, so
/// the confidence logit learns only through the BCE term.
pub fn condi_sr_grad(teacher: &Logits, student: &StudentOutput, z: PseudoLabel, cfg: &LossConfig) -> Result<LossGrad> {
    if teacher.len() != student.class_logits.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![teacher.len()],
            got: vec![student.class_logits.len()],
        });
    }
    let p_t = softened_softmax(teacher.as_slice(), cfg.tau)?;
    let z_tilde = ConfidenceScore::from_logit(student.confidence_logit);
    let target = mix_teacher_targets(&p_t, z_tilde, z);
    let (kd, d_class) = kd_loss_grad(&target, student.class_logits.as_slice(), cfg.tau)?;
    let (conf, d_conf) = confidence_bce_grad(student.confidence_logit, z, cfg.mu);
    let total = finite(kd + cfg.lambda * conf, "total loss")?;
    Ok(LossGrad {
        parts: LossParts { total, kd, conf },
        d_class_logits: d_class,
        d_conf_logit: cfg.lambda * d_conf,
    })
}

/// BCE on the pseudo labels alone; class logits are ignored.
pub fn naive_bce_loss(student: &StudentOutput, z: PseudoLabel, mu: f64) -> LossParts {
    naive_bce_grad(student, z, mu).parts
}

pub fn naive_bce_grad(student: &StudentOutput, z: PseudoLabel, mu: f64) -> LossGrad {
    let (conf, d_conf) = confidence_bce_grad(student.confidence_logit, z, mu);
    LossGrad {
        parts: LossParts {
            total: conf,
            kd: 0.0,
            conf,
        },
        d_class_logits: vec![0.0; student.class_logits.len()],
        d_conf_logit: d_conf,
    }
}

/// Plain soft-label distillation from the teacher.
pub fn st_ent_loss(teacher: &Logits, student: &StudentOutput, tau: f64) -> Result<f64> {
    Ok(st_ent_grad(teacher, student, tau)?.parts.total)
}

pub fn st_ent_grad(teacher: &Logits, student: &StudentOutput, tau: f64) -> Result<LossGrad> {
    if teacher.len() != student.class_logits.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![teacher.len()],
            got: vec![student.class_logits.len()],
        });
    }
    let target = softened_softmax(teacher.as_slice(), tau)?;
    let (kd, d_class) = kd_loss_grad(&target, student.class_logits.as_slice(), tau)?;
    Ok(LossGrad {
        parts: LossParts {
            total: kd,
            kd,
            conf: 0.0,
        },
        d_class_logits: d_class,
        d_conf_logit: 0.0,
    })
}

/// `−log max(p_y, 1e−12)`.
pub fn cross_entropy(p: &ClassDistribution, label: usize) -> f64 {
    -p.probs()[label].max(LOG_FLOOR).ln()
}

/// Self-confidence baseline: the prediction is interpolated toward the
/// one-hot label by `1 − c` and the interpolation is penalized by `−log c`.
pub fn st_conf_loss(student: &StudentOutput, label: usize, conf_weight: f64) -> Result<f64> {
    Ok(st_conf_grad(student, label, conf_weight)?.parts.total)
}

pub fn st_conf_grad(student: &StudentOutput, label: usize, conf_weight: f64) -> Result<LossGrad> {
    let logits = student.class_logits.as_slice();
    if label >= logits.len() {
        return Err(Error::config(format!("label {label} out of range")));
    }
    let p = softened_softmax(logits, 1.0)?;
    let raw = sigmoid(student.confidence_logit);
    let c = clamp_conf(raw);
    let p_y = p.probs()[label];
    let mixed_y = c * p_y + (1.0 - c);
    let task = -mixed_y.max(LOG_FLOOR).ln();
    let penalty = -conf_weight * c.ln();
    let total = finite(task + penalty, "st-conf loss")?;

    let d_mixed = if mixed_y > LOG_FLOOR { -1.0 / mixed_y } else { 0.0 };
    let d_class = p
        .probs()
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let delta = if k == label { 1.0 } else { 0.0 };
            d_mixed * c * p_y * (delta - pk)
        })
        .collect();
    let d_c = d_mixed * (p_y - 1.0) - conf_weight / c;
    let d_conf = if raw == c { d_c * c * (1.0 - c) } else { 0.0 };
    Ok(LossGrad {
        parts: LossParts {
            total,
            kd: task,
            conf: penalty,
        },
        d_class_logits: d_class,
        d_conf_logit: d_conf,
    })
}
