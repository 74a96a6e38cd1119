use std::path::Path;

use crate::container::{Container, DType, Data, Entry};
use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::scalar::Scalar;

use super::AdadeltaState;

fn to_data<T: Scalar>(v: &[T]) -> Data {
    match T::DTYPE {
        DType::F64 => Data::F64(v.iter().map(|x| x.to_f64_lossless()).collect()),
        _ => Data::F32(v.iter().map(|x| x.to_f64_lossless() as f32).collect()),
    }
}

fn from_entry<T: Scalar>(e: &Entry) -> Result<Vec<T>> {
    e.data
        .to_f64()
        .map(|v| v.into_iter().map(T::of).collect())
        .ok_or_else(|| Error::Format(format!("entry `{}` is not floating point", e.name)))
}

fn format_tag<T: Scalar>() -> &'static str {
    match T::DTYPE {
        DType::F64 => "float64",
        _ => "float32",
    }
}

/// Float container for a model, optionally carrying optimizer state.
pub fn model_container<T: Scalar>(model: &Model<T>, optimizer: Option<&AdadeltaState<T>>) -> Container {
    let mut entries: Vec<Entry> = model
        .state()
        .into_iter()
        .map(|(name, shape, values)| Entry::new(name, shape, to_data(values)))
        .collect();
    if let Some(opt) = optimizer {
        entries.push(Entry::new(
            "opt.hyper",
            vec![3],
            Data::F64(vec![opt.lr, opt.rho, opt.epsilon]),
        ));
        for (i, name) in opt.names.iter().enumerate() {
            let n = opt.sq_grad[i].len();
            entries.push(Entry::new(format!("opt.sq_grad.{}", name), vec![n], to_data(&opt.sq_grad[i])));
            entries.push(Entry::new(
                format!("opt.sq_update.{}", name),
                vec![n],
                to_data(&opt.sq_update[i]),
            ));
        }
    }
    Container {
        format: format_tag::<T>().into(),
        arch: model.config().to_text(),
        entries,
    }
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: &Path) -> Result<u64> {
    model_container(model, None).save(path)
}

/// Saves parameters together with the Adadelta accumulators, the way a
/// resumable training checkpoint is stored.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, optimizer: &AdadeltaState<T>, path: &Path) -> Result<u64> {
    model_container(model, Some(optimizer)).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, Option<AdadeltaState<T>>)> {
    let c = Container::load(path)?;
    model_from_container(&c)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>> {
    Ok(load_checkpoint(path)?.0)
}

pub(crate) fn model_from_container<T: Scalar>(
    c: &Container,
) -> Result<(Model<T>, Option<AdadeltaState<T>>)> {
    if !c.format.starts_with("float") {
        return Err(Error::Format(format!(
            "expected a float model container, found `{}`",
            c.format
        )));
    }
    let config = ModelConfig::from_text(&c.arch)?;
    let mut model = Model::<T>::zeros(config)?;
    let names: Vec<String> = model.state().into_iter().map(|(n, _, _)| n).collect();
    for name in &names {
        let values = from_entry::<T>(c.entry(name)?)?;
        model.set_state(name, &values)?;
    }
    let opt = match c.entry("opt.hyper") {
        Err(_) => None,
        Ok(h) => {
            let hyper = h.data.to_f64().unwrap_or_default();
            if hyper.len() != 3 {
                return Err(Error::Format("opt.hyper must hold lr, rho, epsilon".into()));
            }
            let mut opt = AdadeltaState::with_hyper(&model, hyper[0], hyper[1], hyper[2]);
            for i in 0..opt.names.len() {
                let name = opt.names[i].clone();
                let g = from_entry::<T>(c.entry(&format!("opt.sq_grad.{}", name))?)?;
                let u = from_entry::<T>(c.entry(&format!("opt.sq_update.{}", name))?)?;
                if g.len() != opt.sq_grad[i].len() || u.len() != g.len() {
                    return Err(Error::Format(format!("optimizer state for `{}` has wrong size", name)));
                }
                opt.sq_grad[i] = g;
                opt.sq_update[i] = u;
            }
            Some(opt)
        }
    };
    Ok((model, opt))
}
