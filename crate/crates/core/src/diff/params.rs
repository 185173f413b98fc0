use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// One named trainable array with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn as_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.value.clone()).expect("param shape")
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        if value.len() != rows * cols {
            return Err(Error::contract(format!("parameter {name}: shape {rows}x{cols} vs {} values", value.len())));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.params.push(Param { name, rows, cols, grad: vec![0.0; value.len()], value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in &self.params {
            if !p.value.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { name: p.name.clone() });
            }
            if !p.grad.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { name: format!("{}.grad", p.name) });
            }
        }
        Ok(())
    }
}
