use std::io::{Cursor, Read};
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLP\0";
const FORMAT_VERSION: u32 = 1;
/// Keeps squashed outputs strictly inside the action box.
const TANH_MARGIN: f64 = 1e-12;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `mid + half * tanh(z)` per output, mapping onto `(low, high)`.
    ScaledTanh { low: Vec<f64>, high: Vec<f64> },
}

/// Fully connected network with rectifier hidden units.
///
/// Parameters live in one flat vector. For every layer the weight matrix
/// (`in x out`, row-major) is followed by its bias (`out`), so the count is
/// `sum (in_i + 1) * out_i`.
#[derive(Debug)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    // a clone is a distinct network: tapes from one are stale for the other
    fn clone(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            params: self.params.clone(),
            output: self.output.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths && self.params == other.params && self.output == other.output
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    /// Input to every layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Array2<f64>>,
    /// Raw tanh values of the output layer (squashed nets only).
    squash: Option<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].nrows()
    }
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// Builds a network from explicit parameters.
    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(Error::contract(format!(
                "network needs >= 2 positive layer widths, got {widths:?}"
            )));
        }
        let expected = param_count(&widths);
        if params.len() != expected {
            return Err(Error::contract(format!(
                "widths {widths:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        if let OutputActivation::ScaledTanh { low, high } = &output {
            let out = *widths.last().unwrap();
            if low.len() != out || high.len() != out || low.iter().zip(high).any(|(l, h)| l >= h) {
                return Err(Error::contract(format!(
                    "output box must have {out} increasing intervals"
                )));
            }
        }
        Ok(Self {
            widths,
            params,
            output,
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))` for weights
    /// and biases; the last layer is additionally multiplied by
    /// `final_layer_scale`.
    pub fn init<R: Rng + ?Sized>(
        widths: Vec<usize>,
        output: OutputActivation,
        final_layer_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Vec::with_capacity(param_count(&widths));
        let n_layers = widths.len().saturating_sub(1);
        for (l, w) in widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let scale = if l + 1 == n_layers { final_layer_scale } else { 1.0 };
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.gen_range(-bound..bound) * scale);
            }
        }
        Self::from_parts(widths, params, output)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> &OutputActivation {
        &self.output
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.widths == other.widths && self.output == other.output
    }

    /// Weight (`in x out`) and bias views of layer `l`.
    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (off, n_in, n_out) = self.layer_offset(l);
        let w = ArrayView2::from_shape((n_in, n_out), &self.params[off..off + n_in * n_out])
            .expect("layout");
        let b = ArrayView1::from(&self.params[off + n_in * n_out..off + (n_in + 1) * n_out]);
        (w, b)
    }

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let off = param_count(&self.widths[..=l]);
        (off, self.widths[l], self.widths[l + 1])
    }

    /// Batched forward pass: one input per row.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(input.ncols())?;
        let mut layer_inputs = Vec::with_capacity(self.n_layers());
        let mut act = input.to_owned();
        for l in 0..self.n_layers() {
            let z = self.affine(l, act.view());
            layer_inputs.push(act);
            act = z;
            if l + 1 < self.n_layers() {
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        let squash = self.squash_output(&mut act);
        Ok((
            act,
            Tape {
                net_id: self.id,
                generation: self.generation,
                layer_inputs,
                squash,
            },
        ))
    }

    /// Batched forward pass without recording a tape.
    pub fn predict_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut act = self.affine(0, input);
        for l in 1..self.n_layers() {
            act.mapv_inplace(|v| v.max(0.0));
            act = self.affine(l, act.view());
        }
        self.squash_output(&mut act);
        Ok(act)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, tape) = self.forward_batch(x)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.predict_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. `output_grad` holds dL/d(output) per row; returns the
    /// flat parameter gradient (summed over rows) and dL/d(input) per row.
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::contract(
                "stale tape: network changed or differs since the forward pass",
            ));
        }
        let batch = tape.batch_size();
        if output_grad.dim() != (batch, self.output_dim()) {
            return Err(Error::contract(format!(
                "output gradient must be {}x{}, got {:?}",
                batch,
                self.output_dim(),
                output_grad.dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = output_grad.to_owned();
        if let (Some(t), OutputActivation::ScaledTanh { low, high }) = (&tape.squash, &self.output) {
            for (mut row, trow) in delta.rows_mut().into_iter().zip(t.rows()) {
                for (j, (d, tv)) in row.iter_mut().zip(trow).enumerate() {
                    let half = 0.5 * (high[j] - low[j]);
                    *d *= if tv.abs() >= 1.0 - TANH_MARGIN {
                        0.0
                    } else {
                        half * (1.0 - tv * tv)
                    };
                }
            }
        }
        for l in (0..self.n_layers()).rev() {
            let (off, n_in, n_out) = self.layer_offset(l);
            let a_prev = &tape.layer_inputs[l];
            {
                let (gw, gb) = grads[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                let mut gw = ArrayViewMut2::from_shape((n_in, n_out), gw).expect("layout");
                general_mat_mul(1.0, &a_prev.t(), &delta, 0.0, &mut gw);
                for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = s;
                }
            }
            let (w, _) = self.layer(l);
            let mut prev = delta.dot(&w.t());
            if l > 0 {
                // rectifier gate: layer input l is the post-activation of layer l-1
                prev.zip_mut_with(a_prev, |d, a| {
                    if *a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    fn affine(&self, l: usize, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let (w, b) = self.layer(l);
        let mut z = Array2::zeros((input.nrows(), w.ncols()));
        for mut row in z.rows_mut() {
            row.assign(&b);
        }
        general_mat_mul(1.0, &input, &w, 1.0, &mut z);
        z
    }

    fn squash_output(&self, act: &mut Array2<f64>) -> Option<Array2<f64>> {
        let OutputActivation::ScaledTanh { low, high } = &self.output else {
            return None;
        };
        let t = act.mapv(f64::tanh);
        for (mut row, trow) in act.rows_mut().into_iter().zip(t.rows()) {
            for (j, (o, tv)) in row.iter_mut().zip(trow).enumerate() {
                let half = 0.5 * (high[j] - low[j]);
                let mid = 0.5 * (high[j] + low[j]);
                *o = mid + half * tv.clamp(-1.0 + TANH_MARGIN, 1.0 - TANH_MARGIN);
            }
        }
        Some(t)
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n != self.input_dim() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {n}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Serializes to the versioned little-endian checkpoint blob:
    /// magic, version, output tag (+ bounds), widths, then parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + 8 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        match &self.output {
            OutputActivation::Identity => buf.write_u8(0).unwrap(),
            OutputActivation::ScaledTanh { low, high } => {
                buf.write_u8(1).unwrap();
                buf.write_u32::<LittleEndian>(low.len() as u32).unwrap();
                for v in low.iter().chain(high) {
                    buf.write_f64::<LittleEndian>(*v).unwrap();
                }
            }
        }
        buf.write_u32::<LittleEndian>(self.widths.len() as u32).unwrap();
        for w in &self.widths {
            buf.write_u32::<LittleEndian>(*w as u32).unwrap();
        }
        buf.write_u64::<LittleEndian>(self.params.len() as u64).unwrap();
        for p in &self.params {
            buf.write_f64::<LittleEndian>(*p).unwrap();
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("network blob: {what}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let read_f64s = |r: &mut Cursor<&[u8]>, n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| r.read_f64::<LittleEndian>().map_err(|_| bad("truncated data")))
                .collect()
        };
        let output = match r.read_u8().map_err(|_| bad("truncated header"))? {
            0 => OutputActivation::Identity,
            1 => {
                let n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
                let low = read_f64s(&mut r, n)?;
                let high = read_f64s(&mut r, n)?;
                OutputActivation::ScaledTanh { low, high }
            }
            t => return Err(bad(&format!("unknown output tag {t}"))),
        };
        let n_widths = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        if n_widths > 1024 {
            return Err(bad("implausible layer count"));
        }
        let widths = (0..n_widths)
            .map(|_| {
                r.read_u32::<LittleEndian>()
                    .map(|w| w as usize)
                    .map_err(|_| bad("truncated widths"))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        if widths.len() < 2 || n != param_count(&widths) {
            return Err(bad("parameter count does not match widths"));
        }
        let params = read_f64s(&mut r, n)?;
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Self::from_parts(widths, params, output)
    }
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::contract(format!(
            "soft update between different shapes {:?} and {:?}",
            target.widths(),
            online.widths()
        )));
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64, widths: Vec<usize>, squash: bool) -> Mlp {
        let out = *widths.last().unwrap();
        let output = if squash {
            OutputActivation::ScaledTanh {
                low: vec![-2.0; out],
                high: vec![3.0; out],
            }
        } else {
            OutputActivation::Identity
        };
        Mlp::init(widths, output, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    /// Straight-line forward with explicit loops over the documented layout.
    fn oracle_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let w = net.widths();
        let p = net.params();
        let mut off = 0;
        let mut act = x.to_vec();
        for l in 0..w.len() - 1 {
            let (n_in, n_out) = (w[l], w[l + 1]);
            let mut next = vec![0.0; n_out];
            for j in 0..n_out {
                let mut s = p[off + n_in * n_out + j];
                for i in 0..n_in {
                    s += act[i] * p[off + i * n_out + j];
                }
                next[j] = if l + 2 < w.len() { s.max(0.0) } else { s };
            }
            off += (n_in + 1) * n_out;
            act = next;
        }
        if let OutputActivation::ScaledTanh { low, high } = net.output_activation() {
            for (j, a) in act.iter_mut().enumerate() {
                *a = 0.5 * (low[j] + high[j]) + 0.5 * (high[j] - low[j]) * a.tanh();
            }
        }
        act
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::from_parts(vec![3, 4, 2], vec![0.0; param_count(&[3, 4, 2])], OutputActivation::Identity).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let net = Mlp::from_parts(vec![1, 1], vec![2.0, 1.0], OutputActivation::Identity).unwrap();
        let (out, tape) = net.forward(&[3.0]).unwrap();
        assert_eq!(out, vec![7.0]);
        let (g, gin) = net.backward(&tape, array![[1.0]].view()).unwrap();
        assert_eq!(gin, array![[2.0]]);
        assert_eq!(g, vec![3.0, 1.0]);
    }

    #[test]
    fn parameter_count_formula() {
        let net = random_net(0, vec![5, 64, 64, 1], false);
        assert_eq!(net.n_params(), 6 * 64 + 65 * 64 + 65);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        for (seed, squash) in [(1, false), (2, true)] {
            let net = random_net(seed, vec![4, 7, 5, 2], squash);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let got = net.predict(&x).unwrap();
                let want = oracle_forward(&net, &x);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let net = random_net(3, vec![3, 8, 8, 2], true);
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0], [0.0, 0.0, 0.0]];
        let batch = net.predict_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = net.predict(row.as_slice().unwrap()).unwrap();
            assert_eq!(batch.row(i).to_vec(), single);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = random_net(4, vec![3, 6, 1], false);
        let x = array![[0.3, -0.2, 1.0], [1.0, 1.0, 1.0]];
        let (_, tape) = net.forward_batch(x.view()).unwrap();
        let (g, gin) = net.backward(&tape, Array2::zeros((2, 1)).view()).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(gin.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for seed in 0..10u64 {
            let squash = seed % 2 == 0;
            let net = random_net(seed, vec![3, 6, 5, 2], squash);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let weights = [0.7, -1.3];
            let loss = |n: &Mlp, x: &[f64]| -> f64 {
                n.predict(x).unwrap().iter().zip(weights).map(|(o, w)| o * w).sum()
            };
            let (_, tape) = net.forward(&x).unwrap();
            let og = ArrayView2::from_shape((1, 2), &weights).unwrap();
            let (g, gin) = net.backward(&tape, og).unwrap();
            for i in 0..net.n_params() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                assert_rel(g[i], fd);
            }
            for i in 0..3 {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
                assert_rel(gin[[0, i]], fd);
            }
        }
    }

    fn assert_rel(analytic: f64, fd: f64) {
        let scale = analytic.abs().max(fd.abs()).max(1e-6);
        assert!((analytic - fd).abs() / scale < 1e-4, "analytic {analytic} vs fd {fd}");
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut net = random_net(5, vec![2, 3, 1], false);
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        let other = net.clone();
        assert!(matches!(
            other.backward(&tape, array![[1.0]].view()),
            Err(Error::Contract(_))
        ));
        net.params_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&tape, array![[1.0]].view()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn input_shape_mismatch_is_contract_error() {
        let net = random_net(6, vec![2, 3, 1], false);
        assert!(matches!(net.predict(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn soft_update_arithmetic() {
        let zeros = Mlp::from_parts(vec![1, 1], vec![0.0, 0.0], OutputActivation::Identity).unwrap();
        let ones = Mlp::from_parts(vec![1, 1], vec![1.0, 1.0], OutputActivation::Identity).unwrap();
        let mut t = zeros.clone();
        soft_update(&mut t, &ones, 0.005).unwrap();
        assert_eq!(t.params(), &[0.005, 0.005]);
        let mut t = zeros.clone();
        soft_update(&mut t, &ones, 1.0).unwrap();
        assert_eq!(t.params(), ones.params());
        let mut t = zeros.clone();
        soft_update(&mut t, &ones, 0.0).unwrap();
        assert_eq!(t.params(), zeros.params());
        let wide = random_net(0, vec![1, 2, 1], false);
        assert!(soft_update(&mut t, &wide, 0.5).is_err());
    }

    #[test]
    fn blob_round_trip_and_corruption() {
        let net = random_net(8, vec![4, 16, 16, 1], true);
        let bytes = net.to_bytes();
        let back = Mlp::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Mlp::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Mlp::from_bytes(&bad).is_err());
    }

    proptest! {
        #[test]
        fn actor_output_stays_strictly_inside(scale in 1.0f64..1e12, seed in 0u64..50) {
            let net = random_net(seed, vec![2, 8, 1], true);
            for x in [[scale, -scale], [-scale, scale], [scale, scale]] {
                let out = net.predict(&x).unwrap()[0];
                prop_assert!(out > -2.0 && out < 3.0, "{}", out);
            }
        }
    }
}
