use crate::data::{Epoch, Recording};
use crate::error::{Error, Result};

/// Subtracts the across-channel mean at every sample of `channels`.
fn car_in_place<T>(channels: &mut [&mut [T]])
where
    T: Copy + Into<f64> + FromF64,
{
    let n_ch = channels.len();
    let n = channels.first().map_or(0, |c| c.len());
    for t in 0..n {
        let mean = channels.iter().map(|c| c[t].into()).sum::<f64>() / n_ch as f64;
        for c in channels.iter_mut() {
            c[t] = T::from_f64(c[t].into() - mean);
        }
    }
}

pub trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// Common average reference over every channel of a recording.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    if rec.n_channels() < 2 {
        return Err(Error::invalid("common average reference needs at least 2 channels"));
    }
    let mut out = rec.clone();
    let mut views: Vec<&mut [f64]> = out.samples_mut().iter_mut().map(Vec::as_mut_slice).collect();
    car_in_place(&mut views);
    Ok(out)
}

/// Common average reference over the channels of one epoch.
pub fn common_average_reference_epoch(epoch: &Epoch) -> Result<Epoch> {
    if epoch.n_channels() < 2 {
        return Err(Error::invalid("common average reference needs at least 2 channels"));
    }
    let mut out = epoch.clone();
    let n = out.n_samples();
    let mut views: Vec<&mut [f32]> = out.data_mut().chunks_exact_mut(n).collect();
    car_in_place(&mut views);
    Ok(out)
}
