//! Whole-model save and load: one `.rntd` file per parameter tensor plus a
//! `model.txt` carrying the activation and dimensions.

use std::fs;
use std::path::Path;

use transducer_distill_core::model::TENSOR_NAMES;
use transducer_distill_core::{Activation, Matrix, ToyTransducerParams};

use crate::error::{PipelineError, Result};
use crate::tensor_file::{read_tensor, write_tensor, Tensor};

/// Biases are stored as rank-1 tensors, weights as rank-2.
const IS_VECTOR: [bool; 7] = [false, true, false, true, false, false, true];

pub fn save_params(dir: &Path, params: &ToyTransducerParams) -> Result<()> {
    fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    let meta = format!(
        "activation={}\ninput_dim={}\nhidden={}\nvocab={}\n",
        params.activation,
        params.input_dim(),
        params.hidden(),
        params.vocab()
    );
    let meta_path = dir.join("model.txt");
    fs::write(&meta_path, meta).map_err(PipelineError::io(&meta_path))?;
    let tensors = TENSOR_NAMES
        .iter()
        .zip(params.tensors())
        .zip(params.tensor_shapes());
    for (((name, data), (rows, cols)), is_vector) in tensors.zip(IS_VECTOR) {
        let dims = if is_vector {
            vec![rows]
        } else {
            vec![rows, cols]
        };
        let tensor = Tensor::new(dims, data.to_vec()).expect("parameter shapes are consistent");
        write_tensor(&dir.join(format!("{name}.rntd")), &tensor)?;
    }
    Ok(())
}

pub fn load_params(dir: &Path) -> Result<ToyTransducerParams> {
    let meta_path = dir.join("model.txt");
    let text = fs::read_to_string(&meta_path).map_err(PipelineError::io(&meta_path))?;
    let activation = text
        .lines()
        .find_map(|l| l.strip_prefix("activation="))
        .ok_or_else(|| {
            PipelineError::Invalid(format!("{}: missing activation", meta_path.display()))
        })?
        .trim()
        .parse::<Activation>()?;

    let load = |name: &str| -> Result<Tensor> { read_tensor(&dir.join(format!("{name}.rntd"))) };
    let matrix = |name: &str| -> Result<Matrix> {
        let t = load(name)?;
        match t.dims[..] {
            [rows, cols] => Ok(Matrix::from_vec(rows, cols, t.data)?),
            _ => Err(PipelineError::Invalid(format!(
                "{name}: expected a matrix, got dims {:?}",
                t.dims
            ))),
        }
    };
    let vector = |name: &str| -> Result<Vec<f64>> {
        let t = load(name)?;
        match t.dims[..] {
            [_] => Ok(t.data),
            _ => Err(PipelineError::Invalid(format!(
                "{name}: expected a vector, got dims {:?}",
                t.dims
            ))),
        }
    };
    let params = ToyTransducerParams {
        enc_w1: matrix("enc_w1")?,
        enc_b1: vector("enc_b1")?,
        enc_w2: matrix("enc_w2")?,
        enc_b2: vector("enc_b2")?,
        embed: matrix("embed")?,
        joint_w: matrix("joint_w")?,
        joint_b: vector("joint_b")?,
        activation,
    };
    params.validate()?;
    Ok(params)
}
