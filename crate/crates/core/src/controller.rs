//! CPG-clocked MLP control policy.
//!
//! The network sees `[cpg; goal; centered positions; velocities]` and emits
//! one command in (-1, 1) per edge. Commands become target strains only on
//! edges with actuator share.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{MaterialLibrary, ACTUATOR};
use crate::error::{invalid, Result};
use crate::lattice::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgConfig {
    pub n_cpg: usize,
    /// rad/s
    pub omega: f64,
}

impl Default for CpgConfig {
    fn default() -> Self {
        Self { n_cpg: 10, omega: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub x_goal: Vec2,
}

impl Default for GoalSpec {
    fn default() -> Self {
        Self { x_goal: Vec2::new(2.0, 0.1) }
    }
}

/// Input width for a lattice with `num_nodes` nodes.
pub fn input_dim(n_cpg: usize, num_nodes: usize) -> usize {
    n_cpg + 2 + 4 * num_nodes
}

/// Two-layer tanh MLP. Weight matrices are stored row-major with the fan-in
/// as the leading index: `w1[i * hidden + h]`, `w2[h * output + e]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 8] = b"TBMLP001";

impl ControllerParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![0.0; input * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * output],
            b2: vec![0.0; output],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.input, self.hidden, self.output)
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters flattened in the order w1, b1, w2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return invalid(format!("expected {} parameters, got {}", self.num_params(), flat.len()));
        }
        let (a, rest) = flat.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.num_params());
        out.extend_from_slice(BINARY_MAGIC);
        for d in [self.input, self.hidden, self.output] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 || &bytes[..8] != BINARY_MAGIC {
            return invalid("not a controller checkpoint");
        }
        let dim = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
        let mut p = Self::zeros(dim(0), dim(1), dim(2));
        let body = &bytes[32..];
        if body.len() != 8 * p.num_params() {
            return invalid("controller checkpoint has the wrong length for its header");
        }
        let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        p.set_flat(&flat)?;
        Ok(p)
    }

    pub fn sha256(&self) -> String {
        hex_digest(&self.to_bytes())
    }

    /// Forward pass into caller-owned buffers.
    pub(crate) fn forward_into(&self, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let nh = self.hidden;
        hidden.copy_from_slice(&self.b1);
        for (i, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w1[i * nh..(i + 1) * nh];
            for (a, w) in hidden.iter_mut().zip(row) {
                *a += x * w;
            }
        }
        for a in hidden.iter_mut() {
            *a = a.tanh();
        }
        let no = self.output;
        out.copy_from_slice(&self.b2);
        for (h, &x) in hidden.iter().enumerate() {
            let row = &self.w2[h * no..(h + 1) * no];
            for (a, w) in out.iter_mut().zip(row) {
                *a += x * w;
            }
        }
        for a in out.iter_mut() {
            *a = a.tanh();
        }
    }

    /// Reverse pass. Accumulates parameter cotangents into `grad` when given
    /// and writes the input cotangent into `input_bar`.
    pub(crate) fn backward_into(
        &self,
        input: &[f64],
        hidden: &[f64],
        out: &[f64],
        out_bar: &[f64],
        grad: Option<&mut ControllerParams>,
        scratch_a2: &mut [f64],
        scratch_a1: &mut [f64],
        input_bar: &mut [f64],
    ) {
        let (nh, no) = (self.hidden, self.output);
        for ((a, &u), &ub) in scratch_a2.iter_mut().zip(out).zip(out_bar) {
            *a = ub * (1.0 - u * u);
        }
        for h in 0..nh {
            let row = &self.w2[h * no..(h + 1) * no];
            let s: f64 = row.iter().zip(scratch_a2.iter()).map(|(w, a)| w * a).sum();
            scratch_a1[h] = s * (1.0 - hidden[h] * hidden[h]);
        }
        for (i, ib) in input_bar.iter_mut().enumerate() {
            let row = &self.w1[i * nh..(i + 1) * nh];
            *ib = row.iter().zip(scratch_a1.iter()).map(|(w, a)| w * a).sum();
        }
        if let Some(g) = grad {
            for (b, a) in g.b2.iter_mut().zip(scratch_a2.iter()) {
                *b += a;
            }
            for (h, &x) in hidden.iter().enumerate() {
                let row = &mut g.w2[h * no..(h + 1) * no];
                for (w, a) in row.iter_mut().zip(scratch_a2.iter()) {
                    *w += x * a;
                }
            }
            for (b, a) in g.b1.iter_mut().zip(scratch_a1.iter()) {
                *b += a;
            }
            for (i, &x) in input.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut g.w1[i * nh..(i + 1) * nh];
                for (w, a) in row.iter_mut().zip(scratch_a1.iter()) {
                    *w += x * a;
                }
            }
        }
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Xavier-uniform weights on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn xavier_init(seed: u64, dims: (usize, usize, usize)) -> Result<ControllerParams> {
    let (input, hidden, output) = dims;
    if input == 0 || hidden == 0 || output == 0 {
        return invalid(format!("layer widths must be positive, got {dims:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ControllerParams::zeros(input, hidden, output);
    let a1 = (6.0 / (input + hidden) as f64).sqrt();
    let d1 = Uniform::new_inclusive(-a1, a1);
    for w in p.w1.iter_mut() {
        *w = d1.sample(&mut rng);
    }
    let a2 = (6.0 / (hidden + output) as f64).sqrt();
    let d2 = Uniform::new_inclusive(-a2, a2);
    for w in p.w2.iter_mut() {
        *w = d2.sample(&mut rng);
    }
    Ok(p)
}

pub fn cpg_signals(t: f64, cfg: &CpgConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.n_cpg];
    cpg_into(t, cfg, &mut out);
    out
}

pub(crate) fn cpg_into(t: f64, cfg: &CpgConfig, out: &mut [f64]) {
    let n = cfg.n_cpg as f64;
    for (j, c) in out.iter_mut().enumerate() {
        *c = (cfg.omega * t + 2.0 * std::f64::consts::PI * j as f64 / n).sin();
    }
}

pub fn assemble_input(positions: &[Vec2], velocities: &[Vec2], goal: &GoalSpec, cpg: &[f64]) -> Result<Vec<f64>> {
    if positions.len() != velocities.len() {
        return invalid(format!("{} positions but {} velocities", positions.len(), velocities.len()));
    }
    let mut out = vec![0.0; input_dim(cpg.len(), positions.len())];
    assemble_into(positions, velocities, goal, cpg, &mut out);
    Ok(out)
}

pub(crate) fn assemble_into(positions: &[Vec2], velocities: &[Vec2], goal: &GoalSpec, cpg: &[f64], out: &mut [f64]) {
    let nc = cpg.len();
    let nm = positions.len();
    out[..nc].copy_from_slice(cpg);
    out[nc] = goal.x_goal.x;
    out[nc + 1] = goal.x_goal.y;
    let mut center = Vec2::zeros();
    for p in positions {
        center += p;
    }
    center /= nm as f64;
    let off = nc + 2;
    for (i, p) in positions.iter().enumerate() {
        out[off + 2 * i] = p.x - center.x;
        out[off + 2 * i + 1] = p.y - center.y;
    }
    let off = off + 2 * nm;
    for (i, v) in velocities.iter().enumerate() {
        out[off + 2 * i] = v.x;
        out[off + 2 * i + 1] = v.y;
    }
}

pub fn forward(theta: &ControllerParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != theta.input {
        return invalid(format!("input has length {}, network expects {}", input.len(), theta.input));
    }
    let mut hidden = vec![0.0; theta.hidden];
    let mut out = vec![0.0; theta.output];
    theta.forward_into(input, &mut hidden, &mut out);
    Ok(out)
}

/// `eps_target = z~_actuator * a_max * u` per edge.
pub fn target_strains(u: &[f64], ratios: &[[f64; 3]], lib: &MaterialLibrary) -> Vec<f64> {
    let a_max = lib.actuator_strain_limit();
    u.iter().zip(ratios).map(|(&ui, r)| r[ACTUATOR] * a_max * ui).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn xavier_is_deterministic_and_shaped() {
        let a = xavier_init(7, (156, 32, 110)).unwrap();
        let b = xavier_init(7, (156, 32, 110)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.w1.len(), 156 * 32);
        assert_eq!(a.w2.len(), 32 * 110);
        assert!(a.b1.iter().chain(&a.b2).all(|&v| v == 0.0));
        let c = xavier_init(8, (156, 32, 110)).unwrap();
        assert_ne!(a.w1, c.w1);
        assert!(xavier_init(1, (0, 3, 3)).is_err());
    }

    #[test]
    fn xavier_moments() {
        // w1 of a (156, 32) layer has 4992 entries; two draws give ~1e4 samples.
        let mut samples = xavier_init(1, (156, 32, 110)).unwrap().w1;
        samples.extend(xavier_init(2, (156, 32, 110)).unwrap().w1);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = (6.0f64 / 188.0).sqrt() / 3f64.sqrt();
        assert!((var.sqrt() - expected).abs() / expected < 0.05);
    }

    #[test]
    fn cpg_examples() {
        let cfg = CpgConfig { n_cpg: 10, omega: 10.0 };
        let c = cpg_signals(0.0, &cfg);
        assert_eq!(c[0], 0.0);
        assert!(c[5].abs() < 1e-15);
        assert!((c[1] - 0.587785).abs() < 1e-6);
        let period = 2.0 * std::f64::consts::PI / cfg.omega;
        for t in [0.0, 0.37, 1.9, 12.3] {
            let a = cpg_signals(t, &cfg);
            let b = cpg_signals(t + period, &cfg);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
                assert!(x.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn input_layout() {
        let goal = GoalSpec::default();
        let cpg = vec![0.5; 10];
        let pos = vec![Vec2::new(0.3, 0.2); 36];
        let vel = vec![Vec2::new(1.0, -1.0); 36];
        let inp = assemble_input(&pos, &vel, &goal, &cpg).unwrap();
        assert_eq!(inp.len(), 156);
        assert_eq!(&inp[10..12], &[2.0, 0.1]);
        assert!(inp[12..12 + 72].iter().all(|&v| v.abs() < 1e-15));
        assert_eq!(inp[84], 1.0);
        assert!(assemble_input(&pos, &vel[..3], &goal, &cpg).is_err());
        for n in 2..=8usize {
            for m in 2..=8usize {
                assert_eq!(input_dim(10, n * m), 10 + 2 + 4 * n * m);
            }
        }
    }

    #[test]
    fn centered_offsets_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<Vec2> = (0..17).map(|_| Vec2::new(rng.gen(), rng.gen())).collect();
        let vel = vec![Vec2::zeros(); 17];
        let inp = assemble_input(&pos, &vel, &GoalSpec::default(), &[]).unwrap();
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in 0..17 {
            sx += inp[2 + 2 * i];
            sy += inp[3 + 2 * i];
        }
        assert!(sx.abs() < 1e-14 && sy.abs() < 1e-14);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = ControllerParams::zeros(5, 4, 3);
        assert_eq!(forward(&p, &[1.0, -2.0, 3.0, 0.5, 0.1]).unwrap(), vec![0.0; 3]);
        assert!(forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn outputs_are_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in 0..1000u64 {
            let mut p = xavier_init(s, (6, 5, 4)).unwrap();
            for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
                *w *= rng.gen_range(0.1..20.0);
            }
            let inp: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = forward(&p, &inp).unwrap();
            assert!(u.iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
        }
    }

    #[test]
    fn output_jacobian_matches_fd() {
        let mut p = xavier_init(5, (7, 6, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for b in p.b1.iter_mut().chain(p.b2.iter_mut()) {
            *b = rng.gen_range(-0.5..0.5);
        }
        let inp: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ubar: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut hidden = vec![0.0; 6];
        let mut out = vec![0.0; 4];
        p.forward_into(&inp, &mut hidden, &mut out);
        let mut g = ControllerParams::zeros(7, 6, 4);
        let mut ibar = vec![0.0; 7];
        p.backward_into(&inp, &hidden, &out, &ubar, Some(&mut g), &mut [0.0; 4], &mut [0.0; 6], &mut ibar);
        let f = |q: &ControllerParams, x: &[f64]| -> f64 {
            forward(q, x).unwrap().iter().zip(&ubar).map(|(a, b)| a * b).sum()
        };
        let flat = p.to_flat();
        let gflat = g.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[i] += h;
            fm[i] -= h;
            let fd = (f(&p.with_flat(&fp).unwrap(), &inp) - f(&p.with_flat(&fm).unwrap(), &inp)) / (2.0 * h);
            let rel = (fd - gflat[i]).abs() / fd.abs().max(gflat[i].abs()).max(1e-8);
            assert!(rel < 1e-6, "param {i}: fd {fd} analytic {}", gflat[i]);
        }
        for i in 0..7 {
            let mut xp = inp.clone();
            let mut xm = inp.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&p, &xp) - f(&p, &xm)) / (2.0 * h);
            assert!((fd - ibar[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn strain_examples() {
        let lib = MaterialLibrary::default();
        let eps = target_strains(&[0.7, 1.0, -1.0], &[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.25, 0.25, 0.5]], &lib);
        assert_eq!(eps[0], 0.0);
        assert_eq!(eps[1], 0.35);
        assert!((eps[2] + 0.175).abs() < 1e-15);
    }

    #[test]
    fn end_to_end_strain_gradient_matches_fd() {
        // d(sum_e c_e * eps_e)/dtheta through forward and target_strains.
        let lib = MaterialLibrary::default();
        let p = xavier_init(21, (6, 5, 3)).unwrap();
        let ratios = [[0.2, 0.3, 0.5], [0.1, 0.1, 0.8], [0.6, 0.3, 0.1]];
        let c = [1.0, -2.0, 0.5];
        let inp = [0.3, -0.1, 0.8, 0.05, -0.4, 0.9];
        let obj = |q: &ControllerParams| -> f64 {
            let u = forward(q, &inp).unwrap();
            target_strains(&u, &ratios, &lib).iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let ubar: Vec<f64> = (0..3).map(|e| c[e] * ratios[e][2] * 0.35).collect();
        let mut hidden = vec![0.0; 5];
        let mut out = vec![0.0; 3];
        p.forward_into(&inp, &mut hidden, &mut out);
        let mut g = ControllerParams::zeros(6, 5, 3);
        p.backward_into(&inp, &hidden, &out, &ubar, Some(&mut g), &mut [0.0; 3], &mut [0.0; 5], &mut [0.0; 6]);
        let flat = p.to_flat();
        let gflat = g.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[i] += 1e-6;
            fm[i] -= 1e-6;
            let fd = (obj(&p.with_flat(&fp).unwrap()) - obj(&p.with_flat(&fm).unwrap())) / 2e-6;
            let rel = (fd - gflat[i]).abs() / fd.abs().max(gflat[i].abs()).max(1e-9);
            assert!(rel < 1e-5);
        }
    }

    #[test]
    fn rejects_corrupt_binary() {
        let p = xavier_init(1, (3, 2, 2)).unwrap();
        let mut b = p.to_bytes();
        b.pop();
        assert!(ControllerParams::from_bytes(&b).is_err());
        assert!(ControllerParams::from_bytes(b"nope").is_err());
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_bit_exact(seed in any::<u64>(), i in 1..20usize, h in 1..10usize, o in 1..12usize) {
            let p = xavier_init(seed, (i, h, o)).unwrap();
            let back = ControllerParams::from_bytes(&p.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), p.to_bytes());
        }

        #[test]
        fn strains_never_exceed_limit(u in prop::collection::vec(-1.0..=1.0f64, 1..20), a in 0.0..=1.0f64) {
            let lib = MaterialLibrary::default();
            let ratios = vec![[1.0 - a, 0.0, a]; u.len()];
            for e in target_strains(&u, &ratios, &lib) {
                prop_assert!(e.abs() <= 0.35);
            }
        }
    }
}
