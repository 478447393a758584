//! Fully connected networks on the tape and in plain `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::NamedTensor;
use crate::tape::sigmoid;
use crate::{AutodiffError, ParamStore, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            hidden_activation: HiddenActivation::Tanh,
            output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.input_dim)
            .chain(self.hidden_widths.iter().copied())
            .chain(std::iter::once(self.output_dim));
        for (i, d) in all.enumerate() {
            if d == 0 {
                return Err(AutodiffError::Shape {
                    context: format!("MlpSpec dimension {i}"),
                    expected: ">= 1".into(),
                    got: "0".into(),
                });
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }
}

/// Network description plus its parameters.
///
/// Parameters are stored as `layer{l}.weight` (`fan_out x fan_in`) followed
/// by `layer{l}.bias` (`fan_out x 1`) for each layer in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    layers: Vec<NamedTensor>,
    spec: MlpSpec,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpDocument {
            layers: self.params.to_layers(),
            spec: self.spec.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = MlpDocument::deserialize(d)?;
        let mlp = Mlp {
            params: ParamStore::from_layers(&doc.layers),
            spec: doc.spec,
        };
        mlp.check_params().map_err(serde::de::Error::custom)?;
        Ok(mlp)
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            params.push(format!("layer{l}.weight"), Tensor::new(fan_out, fan_in, w));
            params.push(format!("layer{l}.bias"), Tensor::zeros(fan_out, 1));
        }
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        for (l, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            params.push(format!("layer{l}.weight"), Tensor::zeros(fan_out, fan_in));
            params.push(format!("layer{l}.bias"), Tensor::zeros(fan_out, 1));
        }
        Ok(Self { spec, params })
    }

    pub fn check_params(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes: Vec<(usize, usize)> =
            self.params.tensors().iter().map(|t| (t.rows, t.cols)).collect();
        check_param_shapes(&self.spec, &shapes)
    }

    /// Flat indices of the weight matrices (biases excluded).
    pub fn weight_indices(&self) -> Vec<usize> {
        (0..self.spec.n_layers()).map(|l| 2 * l).collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Plain forward evaluation.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.spec.input_dim);
        let p = self.params.tensors();
        let last = self.spec.n_layers() - 1;
        let mut h = x.to_vec();
        for l in 0..=last {
            let mut z = p[2 * l].matvec(&h);
            for (zi, b) in z.iter_mut().zip(&p[2 * l + 1].data) {
                *zi += b;
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else if self.spec.output_activation == OutputActivation::Sigmoid {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            h = z;
        }
        h
    }

    /// Plain gradient of a scalar-output network with respect to its input.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.spec.output_dim != 1 {
            return Err(non_scalar_output(self.spec.output_dim));
        }
        let p = self.params.tensors();
        let last = self.spec.n_layers() - 1;
        let mut acts = vec![x.to_vec()];
        for l in 0..=last {
            let mut z = p[2 * l].matvec(acts.last().unwrap());
            for (zi, b) in z.iter_mut().zip(&p[2 * l + 1].data) {
                *zi += b;
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else if self.spec.output_activation == OutputActivation::Sigmoid {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        let out = acts[last + 1][0];
        let mut delta = vec![match self.spec.output_activation {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => out * (1.0 - out),
        }];
        for l in (0..=last).rev() {
            let mut up = p[2 * l].matvec_t(&delta);
            if l > 0 {
                for (u, a) in up.iter_mut().zip(&acts[l]) {
                    *u *= 1.0 - a * a;
                }
            }
            delta = up;
        }
        Ok(delta)
    }
}

fn non_scalar_output(dim: usize) -> AutodiffError {
    AutodiffError::Shape {
        context: "potential network output".into(),
        expected: "1".into(),
        got: dim.to_string(),
    }
}

fn check_param_shapes(spec: &MlpSpec, shapes: &[(usize, usize)]) -> Result<()> {
    let dims = spec.layer_dims();
    if shapes.len() != 2 * dims.len() {
        return Err(AutodiffError::Shape {
            context: "parameter list".into(),
            expected: format!("{} tensors", 2 * dims.len()),
            got: format!("{} tensors", shapes.len()),
        });
    }
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let (w, b) = (&shapes[2 * l], &shapes[2 * l + 1]);
        if w.0 != fan_out || w.1 != fan_in {
            return Err(AutodiffError::Shape {
                context: format!("layer{l}.weight"),
                expected: format!("{fan_out}x{fan_in}"),
                got: format!("{}x{}", w.0, w.1),
            });
        }
        if b.0 != fan_out || b.1 != 1 {
            return Err(AutodiffError::Shape {
                context: format!("layer{l}.bias"),
                expected: format!("{fan_out}x1"),
                got: format!("{}x{}", b.0, b.1),
            });
        }
    }
    Ok(())
}

/// Records a forward pass of the network on `tape`.
///
/// `params` are the bound parameter vars in flat order (see [`Mlp::bind`]).
pub fn forward_mlp(tape: &mut Tape, spec: &MlpSpec, params: &[Var], x: Var) -> Result<Var> {
    let xv = tape.value(x);
    if xv.cols != 1 || xv.rows != spec.input_dim {
        return Err(AutodiffError::Shape {
            context: "layer0 input".into(),
            expected: format!("{}x1", spec.input_dim),
            got: xv.shape_str(),
        });
    }
    let shapes: Vec<(usize, usize)> = params
        .iter()
        .map(|&p| {
            let t = tape.value(p);
            (t.rows, t.cols)
        })
        .collect();
    check_param_shapes(spec, &shapes)?;

    let last = spec.n_layers() - 1;
    let mut h = x;
    for l in 0..=last {
        let z = tape.matvec(params[2 * l], h);
        let z = tape.add(z, params[2 * l + 1]);
        h = if l < last {
            tape.tanh(z)
        } else {
            match spec.output_activation {
                OutputActivation::Identity => z,
                OutputActivation::Sigmoid => tape.sigmoid(z),
            }
        };
    }
    Ok(h)
}

/// `dV/dx` for a scalar-output network, recorded so that it can itself be
/// differentiated with respect to the parameters.
pub fn grad_wrt_input(tape: &mut Tape, spec: &MlpSpec, params: &[Var], x: Var) -> Result<Var> {
    if spec.output_dim != 1 {
        return Err(non_scalar_output(spec.output_dim));
    }
    let v = forward_mlp(tape, spec, params, x)?;
    Ok(tape.grad(v, &[x])?[0])
}
