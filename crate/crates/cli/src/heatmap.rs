//! First-layer weight heatmaps as binary portable pixmaps.

use ramdqn::network::LayerKind;
use ramdqn::{Error, InputStream, Network, Result, Scalar, Tensor};

/// Weights `[nodes, cells]` of the first dense layer, which must read RAM
/// directly.
pub fn first_layer_weights<T: Scalar>(net: &Network<T>) -> Result<Tensor<T>> {
    let (index, spec) = net
        .layers()
        .iter()
        .enumerate()
        .find(|(i, _)| net.layer_params(*i).is_some())
        .ok_or_else(|| Error::Config("network has no parameterized layer".into()))?;
    let reads_ram = |from: usize| {
        matches!(
            net.layers()[from].kind,
            LayerKind::Input {
                stream: InputStream::Ram,
                ..
            }
        )
    };
    match spec.kind {
        LayerKind::Dense { .. } if reads_ram(spec.inputs[0]) => {
            Ok(net.layer_params(index).expect("found above").weight.clone())
        }
        LayerKind::Conv2d { .. } => Err(Error::Config(format!(
            "first layer `{}` is a convolution over screens; heatmaps need a dense layer on RAM",
            spec.name
        ))),
        _ => Err(Error::Config(format!(
            "first layer `{}` does not read RAM directly",
            spec.name
        ))),
    }
}

/// P6 image with one row per input cell and one column per node. Positive
/// weights light the red channel, negative ones the blue channel, both
/// scaled by the largest magnitude.
pub fn heatmap_ppm<T: Scalar>(weight: &Tensor<T>) -> Result<Vec<u8>> {
    let &[nodes, cells] = weight.shape() else {
        return Err(Error::Shape(format!(
            "heatmap needs a rank-2 weight, got {:?}",
            weight.shape()
        )));
    };
    let max_abs = weight
        .data()
        .iter()
        .map(|&w| Scalar::to_f64(w).abs())
        .fold(0.0, f64::max);
    let mut out = format!("P6\n{nodes} {cells}\n255\n").into_bytes();
    for cell in 0..cells {
        for node in 0..nodes {
            let w = Scalar::to_f64(weight.data()[node * cells + cell]);
            let level = |v: f64| {
                if max_abs > 0.0 && v > 0.0 {
                    (255.0 * v / max_abs).round() as u8
                } else {
                    0
                }
            };
            out.extend_from_slice(&[level(w), 0, level(-w)]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(ppm: &[u8]) -> &[u8] {
        &ppm[b"P6\n128 128\n255\n".len()..]
    }

    #[test]
    fn zero_weights_are_black() {
        let ppm = heatmap_ppm(&Tensor::<f32>::zeros(&[128, 128])).unwrap();
        assert!(ppm.starts_with(b"P6\n128 128\n255\n"));
        assert_eq!(pixels(&ppm).len(), 128 * 128 * 3);
        assert!(pixels(&ppm).iter().all(|&b| b == 0));
    }

    #[test]
    fn single_positive_weight_is_pure_red() {
        let mut w = Tensor::<f32>::zeros(&[128, 128]);
        w.data_mut()[9 * 128 + 5] = 0.7;
        let ppm = heatmap_ppm(&w).unwrap();
        let px = &pixels(&ppm)[(5 * 128 + 9) * 3..][..3];
        assert_eq!(px, [255, 0, 0]);
        assert_eq!(pixels(&ppm).iter().filter(|&&b| b != 0).count(), 1);
    }

    #[test]
    fn negation_swaps_red_and_blue() {
        let data: Vec<f32> = (0..12).map(|i| (i as f32 - 5.5) * 0.3).collect();
        let w = Tensor::new(vec![3, 4], data).unwrap();
        let a = heatmap_ppm(&w).unwrap();
        let b = heatmap_ppm(&w.map(|v| -v)).unwrap();
        let header = b"P6\n3 4\n255\n".len();
        for (pa, pb) in a[header..].chunks(3).zip(b[header..].chunks(3)) {
            assert_eq!((pa[0], pa[1], pa[2]), (pb[2], pb[1], pb[0]));
        }
    }
}
