//! Discrete ℓ∞ attacks on 8-bit images. Gradient signs are taken in float
//! space; every update is applied to the byte values, so adversarial images stay
//! in `{0, …, 255}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Image8, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackBudget {
    /// Perturbation bound in 8-bit levels (`ε = k / 255`).
    pub eps_steps: u8,
    /// 1 = FGSM.
    pub iterations: usize,
    /// Class whose cross-entropy is ascended.
    pub target: usize,
}

impl AttackBudget {
    pub fn fgsm(eps_steps: u8, target: usize) -> Self {
        Self {
            eps_steps,
            iterations: 1,
            target,
        }
    }

    pub fn pgd(eps_steps: u8, iterations: usize, target: usize) -> Self {
        Self {
            eps_steps,
            iterations,
            target,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eps_steps == 0 {
            return Err(Error::InvalidParameter(
                "eps steps must be in 1..=255".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "attack needs at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    #[serde(skip)]
    pub adversarial: Option<Image8>,
    /// `sign(adversarial - original)` per byte, interleaved like the image.
    pub delta_sign: Vec<i8>,
    pub success: bool,
    /// `f_target(X) - f_target(X*)`.
    pub probability_drop: f64,
    pub iterations_used: usize,
}

impl AttackResult {
    pub fn adversarial(&self) -> &Image8 {
        self.adversarial
            .as_ref()
            .expect("attack result carries its image")
    }
}

/// Maps interleaved byte index to the channel-major tensor index.
fn tensor_index(img: &Image8, i: usize) -> usize {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let ch = i % c;
    let pix = i / c;
    ch * h * w + pix
}

fn loss_signs(model: &Model, img: &Image8, target: usize) -> Result<Vec<i32>> {
    let g = model.loss_gradient(&img.to_tensor(), target)?;
    Ok((0..img.pixels().len())
        .map(|i| {
            let v = g.data()[tensor_index(img, i)];
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect())
}

/// True iff the argmax class differs between the two images.
pub fn attack_success(model: &Model, original: &Image8, adversarial: &Image8) -> Result<bool> {
    if !original.same_shape(adversarial) {
        return Err(Error::ShapeMismatch {
            expected: vec![original.height(), original.width(), original.channels()],
            got: vec![
                adversarial.height(),
                adversarial.width(),
                adversarial.channels(),
            ],
        });
    }
    Ok(model.predict(&original.to_tensor())?.class
        != model.predict(&adversarial.to_tensor())?.class)
}

fn finish(
    model: &Model,
    original: &Image8,
    adv: Image8,
    target: usize,
    iterations_used: usize,
) -> Result<AttackResult> {
    let delta_sign = original
        .pixels()
        .iter()
        .zip(adv.pixels())
        .map(|(&a, &b)| (i16::from(b) - i16::from(a)).signum() as i8)
        .collect();
    let clean = model.forward(&original.to_tensor())?;
    let attacked = model.forward(&adv.to_tensor())?;
    if target >= clean.len() {
        return Err(Error::InvalidClass {
            class: target,
            arity: clean.len(),
        });
    }
    Ok(AttackResult {
        success: clean.argmax() != attacked.argmax(),
        probability_drop: clean.data()[target] - attacked.data()[target],
        delta_sign,
        adversarial: Some(adv),
        iterations_used,
    })
}

/// One signed step of `k` levels along `sign(∂L/∂X)`, clipped to `[0, 255]`.
/// Zero-gradient bytes are left unchanged.
pub fn fgsm(model: &Model, image: &Image8, budget: &AttackBudget) -> Result<AttackResult> {
    budget.validate()?;
    if budget.iterations != 1 {
        return Err(Error::InvalidParameter(
            "FGSM runs exactly one iteration".into(),
        ));
    }
    let k = i32::from(budget.eps_steps);
    let signs = loss_signs(model, image, budget.target)?;
    let mut adv = image.clone();
    for (px, s) in adv.pixels_mut().iter_mut().zip(&signs) {
        *px = (i32::from(*px) + k * s).clamp(0, 255) as u8;
    }
    finish(model, image, adv, budget.target, 1)
}

/// Iterated FGSM. The first iteration is the full FGSM step; later ones move
/// each byte by one level along the current sign and project back into the
/// `k`-level ball around the original. Stops as soon as the prediction flips.
pub fn pgd(model: &Model, image: &Image8, budget: &AttackBudget) -> Result<AttackResult> {
    budget.validate()?;
    let first = fgsm(
        model,
        image,
        &AttackBudget {
            iterations: 1,
            ..*budget
        },
    )?;
    if first.success || budget.iterations == 1 {
        return Ok(first);
    }
    let k = i32::from(budget.eps_steps);
    let clean_class = model.predict(&image.to_tensor())?.class;
    let mut adv = first.adversarial.expect("fgsm returns its image");
    for it in 2..=budget.iterations {
        let signs = loss_signs(model, &adv, budget.target)?;
        for ((px, &orig), s) in adv.pixels_mut().iter_mut().zip(image.pixels()).zip(&signs) {
            let o = i32::from(orig);
            let delta = (i32::from(*px) - o + s).clamp(-k, k);
            *px = (o + delta).clamp(0, 255) as u8;
        }
        if model.predict(&adv.to_tensor())?.class != clean_class || it == budget.iterations {
            return finish(model, image, adv, budget.target, it);
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Dense, Layer, LayerKind};

    /// Two-class linear softmax on a 1x2x2 image with logits (w·x, 0).
    fn linear(w: [f64; 4], bias: f64) -> Model {
        let mut d = Dense::zeros(4, 2);
        d.weight[..4].copy_from_slice(&w);
        d.bias[0] = bias;
        Model::new(
            vec![1, 2, 2],
            vec![
                Layer::new("fc", LayerKind::Dense(d)),
                Layer::new("softmax", LayerKind::Softmax),
            ],
        )
        .unwrap()
    }

    #[test]
    fn positive_loss_gradient_moves_up_except_at_255() {
        // Loss against class 1 rises when class 0's logit rises: ∂L/∂x = p0 * w > 0.
        let m = linear([1.0, 2.0, 3.0, 4.0], 0.0);
        let img = Image8::new(2, 2, 1, vec![10, 255, 0, 254]).unwrap();
        let r = fgsm(&m, &img, &AttackBudget::fgsm(1, 1)).unwrap();
        assert_eq!(r.adversarial().pixels(), &[11, 255, 1, 255]);
        assert_eq!(r.delta_sign, vec![1, 0, 1, 1]);
    }

    #[test]
    fn zero_gradient_leaves_image_untouched() {
        let m = linear([0.0; 4], 0.0);
        let img = Image8::new(2, 2, 1, vec![10, 20, 30, 40]).unwrap();
        let r = fgsm(&m, &img, &AttackBudget::fgsm(3, 0)).unwrap();
        assert_eq!(r.adversarial(), &img);
        assert!(!r.success);
        assert!(r.delta_sign.iter().all(|&d| d == 0));
    }

    #[test]
    fn success_flag_matches_attack_success() {
        // Logit of class 0 is w·x - 0.02: at x = 0 class 1 wins; the attack on
        // class 1 pushes every byte up by 8 levels and flips the decision.
        let m = linear([1.0; 4], -0.1);
        let img = Image8::filled(2, 2, 1, 0);
        let r = fgsm(&m, &img, &AttackBudget::fgsm(8, 1)).unwrap();
        assert!(r.success);
        assert!(attack_success(&m, &img, r.adversarial()).unwrap());
        assert!(!attack_success(&m, &img, &img).unwrap());
        assert!(r.probability_drop > 0.0);
    }

    #[test]
    fn pgd_with_one_iteration_is_fgsm() {
        let m = linear([0.3, -0.2, 0.5, -0.1], 0.05);
        let img = Image8::new(2, 2, 1, vec![100, 120, 140, 160]).unwrap();
        for k in [1u8, 4, 9] {
            assert_eq!(
                pgd(&m, &img, &AttackBudget::pgd(k, 1, 0)).unwrap(),
                fgsm(&m, &img, &AttackBudget::fgsm(k, 0)).unwrap()
            );
        }
    }

    #[test]
    fn budget_validation() {
        let m = linear([1.0; 4], 0.0);
        let img = Image8::filled(2, 2, 1, 9);
        assert!(fgsm(&m, &img, &AttackBudget::fgsm(0, 0)).is_err());
        assert!(fgsm(&m, &img, &AttackBudget::pgd(1, 3, 0)).is_err());
        assert!(pgd(&m, &img, &AttackBudget::pgd(1, 0, 0)).is_err());
        assert!(matches!(
            fgsm(&m, &img, &AttackBudget::fgsm(1, 5)),
            Err(Error::InvalidClass { .. })
        ));
        assert!(attack_success(&m, &img, &Image8::filled(2, 1, 1, 0)).is_err());
    }
}
