//! Row-wise affine map `y = x W^T + b` with `W` stored `[out, in]`.

pub(crate) fn forward(x: &[f64], inputs: usize, weight: &[f64], bias: &[f64], outputs: usize) -> Vec<f64> {
    let rows = x.len() / inputs;
    let mut y = vec![0.0; rows * outputs];
    for r in 0..rows {
        let xr = &x[r * inputs..(r + 1) * inputs];
        let yr = &mut y[r * outputs..(r + 1) * outputs];
        for (o, yv) in yr.iter_mut().enumerate() {
            let wr = &weight[o * inputs..(o + 1) * inputs];
            *yv = bias[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    y
}

pub(crate) fn backward(
    x: &[f64],
    inputs: usize,
    weight: &[f64],
    outputs: usize,
    gy: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Vec<f64>> {
    let rows = gy.len() / outputs;
    if let Some((gw, gb)) = grads {
        for r in 0..rows {
            let xr = &x[r * inputs..(r + 1) * inputs];
            for o in 0..outputs {
                let g = gy[r * outputs + o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                gw[o * inputs..(o + 1) * inputs].iter_mut().zip(xr).for_each(|(d, v)| *d += g * v);
            }
        }
    }
    need_input.then(|| {
        let mut gx = vec![0.0; rows * inputs];
        for r in 0..rows {
            let gxr = &mut gx[r * inputs..(r + 1) * inputs];
            for o in 0..outputs {
                let g = gy[r * outputs + o];
                if g == 0.0 {
                    continue;
                }
                gxr.iter_mut().zip(&weight[o * inputs..(o + 1) * inputs]).for_each(|(d, w)| *d += g * w);
            }
        }
        gx
    })
}
