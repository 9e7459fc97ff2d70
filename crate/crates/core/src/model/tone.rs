use super::Linear;
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};
use rand::Rng;

/// One scalar-to-scalar channel: `sigmoid(W2 relu(W1 x + b1) + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl ChannelMlp {
    fn eval(&self, x: f64) -> f64 {
        let w1 = self.hidden.weight.data();
        let b1 = self.hidden.bias.data();
        let w2 = self.out.weight.data();
        let mut z = self.out.bias.data()[0];
        for j in 0..w1.len() {
            z += w2[j] * (w1[j] * x + b1[j]).max(0.0);
        }
        crate::autodiff::sigmoid(z)
    }
}

/// Three independent channel mappers, one per RGB channel, acting on
/// log-exposure `ln e + ln dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToneMapperParams {
    pub channels: [ChannelMlp; 3],
}

pub struct ToneVars {
    channels: [(Var, Var, Var, Var); 3],
}

impl ToneVars {
    pub(crate) fn from_channels(channels: [(Var, Var, Var, Var); 3]) -> Self {
        ToneVars { channels }
    }

    pub fn handles(&self) -> Vec<Var> {
        self.channels.iter().flat_map(|&(a, b, c, d)| [a, b, c, d]).collect()
    }

    /// Maps log-exposures `[N, 3]` to colors `[N, 3]`, channel by channel.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut cols = Vec::with_capacity(3);
        for (c, &(w1, b1, w2, b2)) in self.channels.iter().enumerate() {
            let xc = tape.columns(x, c, 1)?;
            let h = tape.linear(xc, w1, b1)?;
            let h = tape.relu(h)?;
            let z = tape.linear(h, w2, b2)?;
            cols.push(tape.sigmoid(z)?);
        }
        tape.concat(&cols)
    }
}

/// Log-exposure interval covered by the initial hidden-unit kinks.
pub const INIT_KINK_RANGE: (f64, f64) = (-8.0, 6.0);

impl ToneMapperParams {
    pub const TENSOR_COUNT: usize = 12;

    /// Random weights with the hidden kinks spread evenly over
    /// [`INIT_KINK_RANGE`], so every unit is active somewhere in the range of
    /// log exposures a scene produces, and the output bias set so that
    /// `g(0) = 0.5`. With `monotone` all weights start non-negative.
    pub fn init(hidden: usize, monotone: bool, rng: &mut impl Rng) -> Self {
        let (lo, hi) = INIT_KINK_RANGE;
        let mut make = || {
            let mut first = Linear::init(1, hidden, rng);
            let mut out = Linear::init(hidden, 1, rng);
            if monotone {
                first.weight.data_mut().iter_mut().for_each(|w| *w = w.abs());
                out.weight.data_mut().iter_mut().for_each(|w| *w = w.abs());
            }
            let w: Vec<f64> = first.weight.data().to_vec();
            for (k, b) in first.bias.data_mut().iter_mut().enumerate() {
                let kink = lo + (hi - lo) * (k as f64 + 0.5) / hidden as f64;
                *b = -w[k] * kink;
            }
            // center the curve: g(0) = 0.5 before training
            let b1 = first.bias.data();
            let z0: f64 = out.weight.data().iter().zip(b1).map(|(v, b)| v * b.max(0.0)).sum();
            out.bias.data_mut()[0] = -z0;
            ChannelMlp { hidden: first, out }
        };
        ToneMapperParams {
            channels: [make(), make(), make()],
        }
    }

    /// Every channel realizes `g(x) = sigmoid(relu(x) - relu(-x)) = sigmoid(x)`.
    pub fn sigmoid_construction() -> Self {
        let ch = ChannelMlp {
            hidden: Linear::from_parts(
                Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap(),
                Tensor::zeros(&[1, 2]),
            )
            .unwrap(),
            out: Linear::from_parts(
                Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(),
                Tensor::zeros(&[1, 1]),
            )
            .unwrap(),
        };
        ToneMapperParams {
            channels: [ch.clone(), ch.clone(), ch],
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.channels[0].hidden.outputs()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.channels
            .iter()
            .flat_map(|c| [&c.hidden.weight, &c.hidden.bias, &c.out.weight, &c.out.bias])
            .collect()
    }

    pub fn from_tensors(hidden: usize, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != Self::TENSOR_COUNT {
            return Err(Error::Shape(format!(
                "tone mapper needs {} tensors, got {}",
                Self::TENSOR_COUNT,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = || -> Result<ChannelMlp> {
            let hidden_layer = Linear::from_parts(it.next().unwrap(), it.next().unwrap())?;
            let out = Linear::from_parts(it.next().unwrap(), it.next().unwrap())?;
            if hidden_layer.weight.shape() != [1, hidden] || out.weight.shape() != [hidden, 1] {
                return Err(Error::Shape(format!(
                    "tone channel shapes {:?}/{:?} do not match hidden width {hidden}",
                    hidden_layer.weight.shape(),
                    out.weight.shape()
                )));
            }
            Ok(ChannelMlp {
                hidden: hidden_layer,
                out,
            })
        };
        Ok(ToneMapperParams {
            channels: [next()?, next()?, next()?],
        })
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<ToneVars> {
        let mut reg = |c: &ChannelMlp| -> Result<(Var, Var, Var, Var)> {
            let (a, b) = c.hidden.register(tape, trainable)?;
            let (d, e) = c.out.register(tape, trainable)?;
            Ok((a, b, d, e))
        };
        Ok(ToneVars {
            channels: [
                reg(&self.channels[0])?,
                reg(&self.channels[1])?,
                reg(&self.channels[2])?,
            ],
        })
    }

    /// Color of channel `c` at log-exposure `x`.
    pub fn eval_channel(&self, c: usize, x: f64) -> f64 {
        self.channels[c].eval(x)
    }

    /// `g_c(ln_e[c] + ln_dt)` for each channel.
    pub fn tone_map(&self, ln_e: [f64; 3], ln_dt: f64) -> Result<[f64; 3]> {
        if !ln_dt.is_finite() || ln_e.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("tone_map"));
        }
        Ok(std::array::from_fn(|c| self.eval_channel(c, ln_e[c] + ln_dt)))
    }

    /// Clamps all weights to be non-negative, making each channel monotone.
    pub fn project_monotone(&mut self) {
        for ch in &mut self.channels {
            ch.hidden.weight.data_mut().iter_mut().for_each(|w| *w = w.max(0.0));
            ch.out.weight.data_mut().iter_mut().for_each(|w| *w = w.max(0.0));
        }
    }
}

/// Sampled response curve: colors per channel at each log-exposure.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfCurve {
    pub log_exposure: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl CrfCurve {
    pub const CSV_HEADER: &'static str = "log_exposure,red,green,blue";

    pub fn len(&self) -> usize {
        self.log_exposure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_exposure.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.colors.iter().map(|v| v[c]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (x, c) in self.log_exposure.iter().zip(&self.colors) {
            s.push_str(&format!("{x},{},{},{}\n", c[0], c[1], c[2]));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == Self::CSV_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "expected header `{}`, found {:?}",
                    Self::CSV_HEADER,
                    other
                )))
            }
        }
        let mut curve = CrfCurve {
            log_exposure: Vec::new(),
            colors: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))?;
            if vals.len() != 4 {
                return Err(Error::Format(format!("row {} has {} fields", i + 2, vals.len())));
            }
            curve.log_exposure.push(vals[0]);
            curve.colors.push([vals[1], vals[2], vals[3]]);
        }
        Ok(curve)
    }
}

/// Evaluates every channel of the tone mapper on a sorted log-exposure grid.
pub fn crf_curve_export(params: &ToneMapperParams, grid: &[f64]) -> Result<CrfCurve> {
    if grid.is_empty() {
        return Err(Error::Input("curve export needs a non-empty grid".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("curve grid contains non-finite values".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Input("curve grid must be sorted".into()));
    }
    Ok(CrfCurve {
        log_exposure: grid.to_vec(),
        colors: grid
            .iter()
            .map(|&x| std::array::from_fn(|c| params.eval_channel(c, x)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_construction_values() {
        let g = ToneMapperParams::sigmoid_construction();
        assert_eq!(g.tone_map([0.0; 3], 0.0).unwrap(), [0.5; 3]);
        let doubled = g.tone_map([0.0; 3], 2f64.ln()).unwrap();
        for v in doubled {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        assert!(g.eval_channel(0, -60.0) < 1e-20);
        assert!(g.eval_channel(0, 60.0) >= 1.0 - 1e-15);
    }

    #[test]
    fn curve_export_on_small_grid() {
        let g = ToneMapperParams::sigmoid_construction();
        let c = crf_curve_export(&g, &[-1.0, 0.0, 1.0]).unwrap();
        let expected = [0.2689414213699951, 0.5, 0.7310585786300049];
        for (row, e) in c.colors.iter().zip(expected) {
            for v in row {
                assert!((v - e).abs() < 1e-12);
            }
        }
        let zero = crf_curve_export(&g, &[0.0]).unwrap();
        assert_eq!(zero.colors, vec![[0.5; 3]]);
        assert!(matches!(crf_curve_export(&g, &[]), Err(Error::Input(_))));
        assert!(matches!(crf_curve_export(&g, &[1.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn tape_forward_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ToneMapperParams::init(8, false, &mut rng);
        let xs = [-3.0, -0.5, 0.0, 0.7, 1.0, 2.5];
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, false).unwrap();
        let x = tape.constant(Tensor::matrix(2, 3, xs.to_vec()).unwrap()).unwrap();
        let y = vars.forward(&mut tape, x).unwrap();
        for (i, v) in tape.value(y).data().iter().enumerate() {
            assert!((v - p.eval_channel(i % 3, xs[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn exposure_shift_equivalence_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ToneMapperParams::init(8, false, &mut rng);
        // k chosen so that ln_e + k and ln_dt - k are exact in binary
        let a = p.tone_map([0.5, -1.25, 2.0], -0.75).unwrap();
        let b = p.tone_map([0.5 + 0.25, -1.25 + 0.25, 2.0 + 0.25], -0.75 - 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_wrt_log_radiance_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ToneMapperParams::init(8, false, &mut rng);
        let ln_e = Tensor::matrix(1, 3, vec![0.3, -0.8, 1.1]).unwrap();
        let r = finite_diff_check(
            |tape, v| {
                let vars = p.register(tape, false)?;
                let shift = tape.constant(Tensor::matrix(1, 3, vec![-0.4; 3])?)?;
                let x = tape.add(v[0], shift)?;
                let y = vars.forward(tape, x)?;
                tape.sum(y)
            },
            &[ln_e],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
    }

    #[test]
    fn monotone_projection_yields_monotone_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ToneMapperParams::init(16, false, &mut rng);
        p.project_monotone();
        let grid: Vec<f64> = (0..200).map(|i| -10.0 + 0.1 * i as f64).collect();
        let c = crf_curve_export(&p, &grid).unwrap();
        for w in c.colors.windows(2) {
            for ch in 0..3 {
                assert!(w[1][ch] >= w[0][ch]);
            }
        }
    }

    #[test]
    fn monotone_init_is_increasing_across_the_kink_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ToneMapperParams::init(16, true, &mut rng);
        let (lo, hi) = INIT_KINK_RANGE;
        for c in 0..3 {
            let ys: Vec<f64> = (0..=40).map(|i| p.eval_channel(c, lo + (hi - lo) * i as f64 / 40.0)).collect();
            // strictly increasing once past the first kink
            assert!(ys[2..].windows(2).all(|w| w[1] > w[0]), "{ys:?}");
            assert!((p.eval_channel(c, 0.0) - 0.5).abs() < 1e-12);
            assert!(ys[0] < 0.15 && ys[40] > 0.9, "{ys:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = ToneMapperParams::sigmoid_construction();
        let c = crf_curve_export(&g, &[-2.0, 0.0, 0.5]).unwrap();
        assert_eq!(CrfCurve::from_csv(&c.to_csv()).unwrap(), c);
        assert!(CrfCurve::from_csv("x,y\n").is_err());
    }
}
