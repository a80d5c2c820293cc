use ndarray::{ArrayViewMut, Dimension};

use super::Activation;

const SQRT_2_OVER_PI: f32 = 0.797_884_6;

pub fn gelu_tanh(x: f32) -> f32 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu_exact(x: f32) -> f32 {
    let x = f64::from(x);
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::GeluTanhApprox => gelu_tanh(x),
            Activation::GeluExact => gelu_exact(x),
        }
    }

    pub fn apply_inplace<D: Dimension>(self, mut xs: ArrayViewMut<'_, f32, D>) {
        match self {
            Activation::GeluTanhApprox => xs.mapv_inplace(gelu_tanh),
            Activation::GeluExact => xs.mapv_inplace(gelu_exact),
        }
    }
}

/// Applies the configured GeLU to every element.
pub fn gelu(activation: Activation, xs: &[f32]) -> Vec<f32> {
    xs.iter().map(|&x| activation.apply(x)).collect()
}
