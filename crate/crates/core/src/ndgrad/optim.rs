use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// One SGD step with heavy-ball momentum and optional L2 weight decay:
/// `v ← momentum·v + (g + wd·p)`, `p ← p − lr·v`.
pub fn sgd_step(
    param: &mut Tensor2,
    grad: &Tensor2,
    velocity: &mut Tensor2,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(velocity) {
        return Err(Error::dim(
            "sgd_step",
            format!("{:?}", param.shape()),
            format!("grad {:?}, velocity {:?}", grad.shape(), velocity.shape()),
        ));
    }
    if lr < 0.0 {
        return Err(Error::contract("sgd_step", format!("negative learning rate {lr}")));
    }
    for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        let g = if weight_decay != 0.0 { g + weight_decay * *p } else { *g };
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
