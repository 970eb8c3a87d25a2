//! Central finite differences against the analytic backward passes, in f64.

use macforge::backbone::{init_params, ActivationTensor, LayerSpec, NetParams, NetSpec, Network};
use macforge::descriptor::{l2n, mac, mac_backward, Descriptor};
use macforge::loss::{contrastive_loss, l2n_backward, triplet_loss, PairLabel};
use macforge::numeric::SeededStream;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 24;

/// Worst relative error over all instances of one operator.
#[derive(Debug, Clone)]
pub struct Report {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub worst: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.instances >= 20 && self.worst < TOL
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros comparable.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + H) - f(x - H)) / (2.0 * H)
}

fn uniform_vec(s: &mut SeededStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| s.uniform(lo, hi)).collect()
}

/// Values with pairwise gaps of at least `gap` and magnitude at least `gap`.
fn spread_values(s: &mut SeededStream, n: usize, gap: f64) -> Vec<f64> {
    let mut levels: Vec<f64> = (0..n)
        .map(|i| {
            let v = (i as f64 + 1.0) * 2.0 * gap + s.uniform(0.0, 0.5 * gap);
            if s.bernoulli(0.3) { -v } else { v }
        })
        .collect();
    s.shuffle(&mut levels);
    levels
}

struct Tally {
    worst: f64,
    checked: usize,
}

impl Tally {
    fn new() -> Self {
        Tally { worst: 0.0, checked: 0 }
    }
    fn add(&mut self, a: f64, n: f64) {
        self.worst = self.worst.max(rel_err(a, n));
        self.checked += 1;
    }
    fn report(self, name: &'static str) -> Report {
        Report {
            name,
            instances: INSTANCES,
            checked: self.checked,
            worst: self.worst,
        }
    }
}

fn weighted_output(net: &Network<f64>, x: &ActivationTensor<f64>, r: &ActivationTensor<f64>) -> f64 {
    net.infer(x).unwrap().inner(r)
}

/// Checks every parameter and input entry of `net` under `L = ⟨r, net(x)⟩`.
fn check_network(net: &Network<f64>, x: &ActivationTensor<f64>, s: &mut SeededStream, tally: &mut Tally) {
    let (y, tape) = net.forward(x).unwrap();
    let r = ActivationTensor::from_vec(y.width(), y.height(), y.maps(), uniform_vec(s, y.data().len(), -1.0, 1.0)).unwrap();
    let (pg, xg) = net.backward(&tape, &r).unwrap();
    for c in 0..net.params.convs.len() {
        for which in 0..2 {
            let n = if which == 0 { net.params.convs[c].weight.len() } else { net.params.convs[c].bias.len() };
            for i in 0..n {
                let mut probe = net.clone();
                let mut f = |v: f64| {
                    let p = &mut probe.params.convs[c];
                    if which == 0 { p.weight[i] = v } else { p.bias[i] = v }
                    weighted_output(&probe, x, &r)
                };
                let base = if which == 0 { net.params.convs[c].weight[i] } else { net.params.convs[c].bias[i] };
                let numeric = central(&mut f, base);
                let analytic = if which == 0 { pg.convs[c].weight[i] } else { pg.convs[c].bias[i] };
                tally.add(analytic, numeric);
            }
        }
    }
    for i in 0..x.data().len() {
        let mut probe = x.clone();
        let mut f = |v: f64| {
            probe.data_mut()[i] = v;
            weighted_output(net, &probe, &r)
        };
        let numeric = central(&mut f, x.data()[i]);
        tally.add(xg.data()[i], numeric);
    }
}

pub fn conv(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-conv");
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let (cin, cout) = (s.range_inclusive(1, 3), s.range_inclusive(1, 4));
        let kernel = [1, 3, 5][s.index(3)];
        let stride = s.range_inclusive(1, 2);
        let pad = s.range_inclusive(0, kernel / 2);
        let (w, h) = (s.range_inclusive(kernel, kernel + 4), s.range_inclusive(kernel, kernel + 4));
        let spec = NetSpec(vec![LayerSpec::conv(cin, cout, kernel, stride, pad)]);
        let mut params = init_params::<f64>(&spec, &s.derive_named("init")).unwrap();
        for b in &mut params.convs[0].bias {
            *b = s.uniform(-0.5, 0.5);
        }
        let net = Network::new(spec, params).unwrap();
        let x = ActivationTensor::from_vec(w, h, cin, uniform_vec(&mut s, w * h * cin, -1.0, 1.0)).unwrap();
        check_network(&net, &x, &mut s, &mut tally);
    }
    tally.report("conv")
}

pub fn maxpool(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-pool");
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let window = s.range_inclusive(2, 3);
        let stride = s.range_inclusive(1, 3);
        let maps = s.range_inclusive(1, 3);
        let (w, h) = (s.range_inclusive(window, 8), s.range_inclusive(window, 8));
        let spec = NetSpec(vec![LayerSpec::pool(window, stride)]);
        let net = Network::<f64>::new(spec.clone(), NetParams::zeros_like(&spec)).unwrap();
        let x = ActivationTensor::from_vec(w, h, maps, spread_values(&mut s, w * h * maps, 1e-3)).unwrap();
        check_network(&net, &x, &mut s, &mut tally);
    }
    tally.report("maxpool")
}

pub fn mac_pool(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-mac");
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let (w, h, k) = (s.range_inclusive(2, 6), s.range_inclusive(2, 6), s.range_inclusive(2, 5));
        let x = ActivationTensor::from_vec(w, h, k, spread_values(&mut s, w * h * k, 1e-3)).unwrap();
        let r = uniform_vec(&mut s, k, -1.0, 1.0);
        let loss = |x: &ActivationTensor<f64>| mac(x).values().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let g = mac_backward(&x, &r);
        for i in 0..x.data().len() {
            let mut probe = x.clone();
            let mut f = |v: f64| {
                probe.data_mut()[i] = v;
                loss(&probe)
            };
            tally.add(g.data()[i], central(&mut f, x.data()[i]));
        }
    }
    tally.report("mac")
}

pub fn l2n_norm(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-l2n");
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let k = s.range_inclusive(2, 20);
        let f = uniform_vec(&mut s, k, -1.0, 1.0);
        let r = uniform_vec(&mut s, k, -1.0, 1.0);
        let loss = |f: &[f64]| l2n(&Descriptor::raw(f.to_vec())).values().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let g = l2n_backward(&f, &r);
        for i in 0..k {
            let mut probe = f.clone();
            let mut fun = |v: f64| {
                probe[i] = v;
                loss(&probe)
            };
            tally.add(g[i], central(&mut fun, f[i]));
        }
    }
    tally.report("l2n")
}

fn unit(s: &mut SeededStream, k: usize) -> Vec<f64> {
    l2n(&Descriptor::raw(uniform_vec(s, k, 0.0, 1.0))).into_values()
}

pub fn contrastive(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-contrastive");
    let tau = 0.7;
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let k = s.range_inclusive(2, 16);
        let label = if t % 2 == 0 { PairLabel::Matching } else { PairLabel::NonMatching };
        // Away from the hinge and from d = 0.
        let (a, b) = loop {
            let a = unit(&mut s, k);
            let b = unit(&mut s, k);
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if (d - tau).abs() > 1e-3 && d > 1e-3 && (label == PairLabel::Matching || d < tau) {
                break (a, b);
            }
        };
        let l = contrastive_loss(&Descriptor::raw(a.clone()), &Descriptor::raw(b.clone()), label, tau).unwrap();
        for (which, grad) in [(0, &l.grad_a), (1, &l.grad_b)] {
            for i in 0..k {
                let mut fun = |v: f64| {
                    let (mut a2, mut b2) = (a.clone(), b.clone());
                    if which == 0 { a2[i] = v } else { b2[i] = v }
                    contrastive_loss(&Descriptor::raw(a2), &Descriptor::raw(b2), label, tau).unwrap().loss
                };
                let base = if which == 0 { a[i] } else { b[i] };
                tally.add(grad[i], central(&mut fun, base));
            }
        }
    }
    tally.report("contrastive")
}

pub fn triplet(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-triplet");
    let margin = 0.1;
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let k = s.range_inclusive(2, 16);
        let raw = |q: &[f64], p: &[f64], n: &[f64]| {
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            margin + d(q, p) - d(q, n)
        };
        let (q, p, n) = loop {
            let (q, p, n) = (unit(&mut s, k), unit(&mut s, k), unit(&mut s, k));
            if raw(&q, &p, &n).abs() > 1e-3 {
                break (q, p, n);
            }
        };
        let l = triplet_loss(&Descriptor::raw(q.clone()), &Descriptor::raw(p.clone()), &Descriptor::raw(n.clone()), margin).unwrap();
        for (which, grad) in [(0, &l.grad_q), (1, &l.grad_p), (2, &l.grad_n)] {
            for i in 0..k {
                let mut fun = |v: f64| {
                    let mut xs = [q.clone(), p.clone(), n.clone()];
                    xs[which][i] = v;
                    let [a, b, c] = xs.map(Descriptor::raw);
                    triplet_loss(&a, &b, &c, margin).unwrap().loss
                };
                let base = [&q, &p, &n][which][i];
                tally.add(grad[i], central(&mut fun, base));
            }
        }
    }
    tally.report("triplet")
}

/// Two convolutions with relu and max pooling between them.
pub fn stacked(seed: u64) -> Report {
    let root = SeededStream::new(seed, 0).derive_named("grad-stacked");
    let mut tally = Tally::new();
    for t in 0..INSTANCES {
        let mut s = root.derive(t as u64);
        let (mid, out) = (s.range_inclusive(2, 4), s.range_inclusive(1, 3));
        let spec = NetSpec(vec![
            LayerSpec::conv(3, mid, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::pool(2, 2),
            LayerSpec::conv(mid, out, 3, 1, 1),
        ]);
        let mut params = init_params::<f64>(&spec, &s.derive_named("init")).unwrap();
        for b in &mut params.convs[0].bias {
            *b = s.uniform(0.05, 0.3);
        }
        let net = Network::new(spec, params).unwrap();
        let (w, h) = (s.range_inclusive(4, 7), s.range_inclusive(4, 7));
        let x = ActivationTensor::from_vec(w, h, 3, uniform_vec(&mut s, w * h * 3, -1.0, 1.0)).unwrap();
        check_network(&net, &x, &mut s, &mut tally);
    }
    tally.report("stacked")
}

pub fn all(seed: u64) -> Vec<Report> {
    vec![
        conv(seed),
        maxpool(seed),
        mac_pool(seed),
        l2n_norm(seed),
        contrastive(seed),
        triplet(seed),
    ]
}
