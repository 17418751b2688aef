use crate::autodiff::graph::Var;
use crate::autodiff::tensor::Tensor;
use crate::error::{config_err, Result};
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

// Fallible, so not the std operator traits.
#[allow(clippy::should_implement_trait)]
impl<'g, T: Scalar> Var<'g, T> {
    fn unary(
        self,
        forward: impl Fn(T) -> T,
        // derivative from (input, output)
        deriv: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let x = self.value();
        let out = x.map(forward);
        self.graph().record(
            out,
            &[self],
            Box::new(move |a| {
                let g = a.grad.data();
                let data = a.inputs[0]
                    .data()
                    .iter()
                    .zip(a.output.data())
                    .zip(g)
                    .map(|((&x, &y), &g)| g * deriv(x, y))
                    .collect();
                vec![Some(Tensor::new(a.grad.shape(), data).expect("shape"))]
            }),
        )
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        Ok(self.graph().record(
            out,
            &[self, other],
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.clone()),
                    a.needs[1].then(|| a.grad.clone()),
                ]
            }),
        ))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.graph().record(
            out,
            &[self, other],
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.clone()),
                    a.needs[1].then(|| a.grad.map(|g| -g)),
                ]
            }),
        ))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.graph().record(
            out,
            &[self, other],
            Box::new(|a| {
                vec![
                    a.needs[0].then(|| a.grad.zip_map(a.inputs[1], |g, y| g * y)),
                    a.needs[1].then(|| a.grad.zip_map(a.inputs[0], |g, x| g * x)),
                ]
            }),
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let out = Tensor::scalar(x.sum());
        self.graph().record(
            out,
            &[self],
            Box::new(|a| {
                let g = a.grad.data()[0];
                vec![Some(Tensor::full(a.inputs[0].shape(), g))]
            }),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = T::lit(self.value().numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// `Σ x_i · w_i` with constant weights.
    pub fn dot_const(self, weights: &[T]) -> Result<Var<'g, T>> {
        let x = self.value();
        if x.numel() != weights.len() {
            return Err(config_err!(
                "dot_const: {} elements vs {} weights",
                x.numel(),
                weights.len()
            ));
        }
        let s = x.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let w = weights.to_vec();
        Ok(self.graph().record(
            Tensor::scalar(s),
            &[self],
            Box::new(move |a| {
                let g = a.grad.data()[0];
                let data = w.iter().map(|&w| w * g).collect();
                vec![Some(Tensor::new(a.inputs[0].shape(), data).expect("shape"))]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.graph().record(
            out,
            &[self],
            Box::new(|a| {
                vec![Some(
                    a.grad
                        .clone()
                        .reshape(a.inputs[0].shape())
                        .expect("reshape back"),
                )]
            }),
        ))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
