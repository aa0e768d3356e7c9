use rand::Rng;

use super::tensor::{lit, Graph, Param, Parameterized, Real, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Two affine layers with an activation between them.
#[derive(Debug)]
pub struct Mlp<T> {
    pub w1: Param<T>,
    pub b1: Param<T>,
    pub w2: Param<T>,
    pub b2: Param<T>,
    pub hidden_activation: Activation,
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Result<Self> {
        let w1 = glorot(input, hidden, rng);
        let w2 = glorot(hidden, output, rng);
        Self::from_parts(name, input, hidden, output, w1, vec![T::zero(); hidden], w2, vec![T::zero(); output])
    }

    /// An all-zero network; every output is exactly zero.
    pub fn zeros(name: &str, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Self::from_parts(
            name,
            input,
            hidden,
            output,
            vec![T::zero(); hidden * input],
            vec![T::zero(); hidden],
            vec![T::zero(); output * hidden],
            vec![T::zero(); output],
        )
    }

    /// Builds from row-major `w1: hidden×input` and `w2: output×hidden`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: Vec<T>,
    ) -> Result<Self> {
        Ok(Mlp {
            w1: Param::new(format!("{name}.w1"), hidden, input, w1)?,
            b1: Param::new(format!("{name}.b1"), 1, hidden, b1)?,
            w2: Param::new(format!("{name}.w2"), output, hidden, w2)?,
            b2: Param::new(format!("{name}.b2"), 1, output, b2)?,
            hidden_activation: Activation::Relu,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape().1
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape().0
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape().0
    }

    /// `w2·relu(w1·x + b1) + b2`, row-wise over a `B×input` batch.
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, width) = g.shape(x)?;
        if width != self.input_dim() {
            return Err(Error::dim(
                "mlp_forward",
                format!("input width {} ({})", self.input_dim(), self.w1.name()),
                format!("input width {width}"),
            ));
        }
        let w1 = g.param(&self.w1);
        let b1 = g.param(&self.b1);
        let w2 = g.param(&self.w2);
        let b2 = g.param(&self.b2);
        let h = g.linear(x, w1, b1)?;
        let h = match self.hidden_activation {
            Activation::Relu => g.relu(h)?,
        };
        g.linear(h, w2, b2)
    }
}

impl<T: Real> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Mlp {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            hidden_activation: self.hidden_activation,
        }
    }
}

impl<T> Parameterized<T> for Mlp<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn glorot<T: Real, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| lit(rng.random_range(-a..a))).collect()
}
