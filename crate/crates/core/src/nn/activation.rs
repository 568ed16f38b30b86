use super::{NnError, Tensor};

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(libm::tanh)
}

/// Backward pass through `tanh`, given the forward *output* `y`.
pub fn tanh_backward(y: &Tensor, grad_y: &Tensor) -> Result<Tensor, NnError> {
    y.same_shape(grad_y)?;
    let mut g = grad_y.clone();
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= 1.0 - yv * yv;
    }
    Ok(g)
}
