use ndarray::{s, Array2};

use super::FeatureTensor;
use crate::error::{Error, Result};

/// Cuts or pads a tensor to `target_frames` frames.
///
/// Short inputs are zero-padded on the right with mask 0 over the padding; long
/// inputs are centre-cropped. Values and the voice-activity mask of the kept
/// original frames are carried over unchanged.
pub fn window_and_mask(feats: &FeatureTensor, target_frames: usize) -> Result<FeatureTensor> {
    if target_frames == 0 || target_frames % 16 != 0 {
        return Err(Error::InvalidArgument(format!(
            "target_frames {target_frames} is not a positive multiple of 16"
        )));
    }
    let t = feats.frames();
    let f = feats.freq_bins();
    let (values, mut mask) = if t >= target_frames {
        let start = (t - target_frames) / 2;
        (
            feats.values.slice(s![start..start + target_frames, ..]).to_owned(),
            feats.mask[start..start + target_frames].to_vec(),
        )
    } else {
        let mut values = Array2::zeros((target_frames, f));
        values.slice_mut(s![..t, ..]).assign(&feats.values);
        let mut mask = feats.mask.clone();
        mask.resize(target_frames, 0);
        (values, mask)
    };
    if !mask.iter().any(|&m| m != 0) {
        // Cropping removed every active frame; fall back to the kept original frames.
        for m in mask.iter_mut().take(t.min(target_frames)) {
            *m = 1;
        }
    }
    Ok(FeatureTensor {
        values,
        mask,
        frame_hop: feats.frame_hop,
        label: feats.label,
    })
}
