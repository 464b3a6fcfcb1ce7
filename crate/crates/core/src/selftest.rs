//! Quick invariant checks run by `spinn selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::counter::count_ops;
use crate::flops::{count_fields, ArchSpec};
use crate::jet::mlp_jet_forward;
use crate::model::{spinn_fields, Arch, Collocation, DerivRequest, FieldProvider, MlpParams, SeparableModel};
use crate::pde::PdeProblem;
use crate::tape::Tape;
use crate::tensor::{self, read_grid, write_grid, AxisGrid, GridHeader, Tensor};
use crate::train::{train, TrainConfig};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> std::result::Result<String, String>;

const CHECKS: [(&str, Check); 7] = [
    ("merge equals sum of products", merge_check),
    ("tape gradients match differences", tape_check),
    ("jets match difference stencils", jet_check),
    ("manufactured residuals vanish", residual_check),
    ("op estimator matches engine", flops_check),
    ("training is deterministic", determinism_check),
    ("grid files round trip", grid_io_check),
];

pub fn run_selftest() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult { name, passed: true, detail },
            Err(detail) => CheckResult { name, passed: false, detail },
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn merge_check() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.gen_range(2..=4);
        let r = rng.gen_range(1..=6);
        let ns: Vec<usize> = (0..d).map(|_| rng.gen_range(1..=5)).collect();
        let fs: Vec<Tensor> = ns.iter().map(|&n| rand_tensor(&mut rng, &[n, r])).collect();
        let m = tensor::merge(&fs.iter().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        let total: usize = ns.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0; d];
            for k in (0..d).rev() {
                idx[k] = rem % ns[k];
                rem /= ns[k];
            }
            let want: f64 = (0..r).map(|j| (0..d).map(|i| fs[i].data()[idx[i] * r + j]).product::<f64>()).sum();
            worst = worst.max((m.data()[flat] - want).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn tape_check() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let bias = rand_tensor(&mut rng, &[2]);
    let loss = |a: &Tensor, b: &Tensor, grad: bool| {
        let mut tape = Tape::new();
        let (ia, ib) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.constant(bias.clone());
        let m = tape.matmul(ia, ib).unwrap();
        let s = tape.add(m, c).unwrap();
        let t = tape.tanh(s).unwrap();
        let q = tape.square(t);
        let w = tape.mul(q, t).unwrap();
        let z = tape.scale(w, 0.7);
        let root = tape.mean(z).unwrap();
        let v = tape.value(root).data()[0];
        let g = grad.then(|| {
            let mut g = tape.backward(root).unwrap();
            (g.take(ia).unwrap(), g.take(ib).unwrap())
        });
        (v, g)
    };
    let (_, g) = loss(&a, &b, true);
    let (ga, _) = g.unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for e in 0..a.len() {
        let mut p = a.clone();
        p.data_mut()[e] += h;
        let mut m = a.clone();
        m.data_mut()[e] -= h;
        let fd = (loss(&p, &b, false).0 - loss(&m, &b, false).0) / (2.0 * h);
        worst = worst.max((fd - ga.data()[e]).abs() / fd.abs().max(1e-6));
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e}"))
}

fn jet_check() -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = MlpParams::glorot(&[1, 16, 16, 16, 16, 16, 3], &mut rng).unwrap();
    let xs = [-0.6, 0.05, 0.7];
    let mut tape = Tape::new();
    let vars = net.to_tape(&mut tape);
    let j = mlp_jet_forward(&mut tape, &vars, &Tensor::column(&xs)).map_err(|e| e.to_string())?;
    let h = 1e-3;
    let mut worst = 0.0f64;
    for (row, &x) in xs.iter().enumerate() {
        let f = |t: f64| net.forward(&Tensor::column(&[t])).unwrap().into_data();
        let (m2, m1, z, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
        for k in 0..3 {
            let d2 = (-m2[k] + 16.0 * m1[k] - 30.0 * z[k] + 16.0 * p1[k] - p2[k]) / (12.0 * h * h);
            let got = tape.value(j.second).data()[row * 3 + k];
            worst = worst.max((got - d2).abs() / d2.abs().max(1e-2));
        }
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e}"))
}

fn residual_check() -> std::result::Result<String, String> {
    let mut worst = 0.0f64;
    for name in ["helmholtz3d", "klein-gordon3d"] {
        let p = PdeProblem::by_name(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..1000).flat_map(|_| p.bounds().into_iter().map(|(a, b)| rng.gen_range(a..b)).collect::<Vec<_>>()).collect();
        let pts = Tensor::new(vec![1000, 3], data).unwrap();
        let mut tape = Tape::new();
        let exact = p.exact_fields().unwrap();
        let f = exact.fields(&mut tape, &Collocation::Points(&pts), &p.residual_request()).map_err(|e| e.to_string())?;
        let source = p.source_field(&Collocation::Points(&pts)).map_err(|e| e.to_string())?;
        let r = p.residual(&mut tape, &f, source.as_ref()).map_err(|e| e.to_string())?;
        worst = tape.value(r).data().iter().fold(worst, |m, v| m.max(v.abs()));
    }
    ensure(worst < 1e-6, || format!("max residual {worst:e}"))?;
    Ok(format!("max residual {worst:.1e}"))
}

fn flops_check() -> std::result::Result<String, String> {
    let ns = [5, 4, 6];
    let g = AxisGrid::uniform_per_axis(&[(0.0, 1.0); 3], &ns).unwrap();
    let m = SeparableModel::init(&[10, 10], 4, 3, 0).unwrap();
    let spec = ArchSpec::spinn(&[10, 10], 4, &ns).unwrap();
    let req = DerivRequest::all(3);
    let (_, got) = count_ops(|| {
        let mut tape = Tape::new();
        let v = m.to_tape(&mut tape);
        spinn_fields(&mut tape, &v, &g, &req).unwrap();
    });
    let want = count_fields(&spec, &req);
    ensure(got == want, || format!("engine {got:?}, estimate {want:?}"))?;
    Ok(format!("{} ops", got.total()))
}

fn determinism_check() -> std::result::Result<String, String> {
    let cfg = TrainConfig { arch: Arch::Spinn, n: 6, rank: 4, hidden: vec![8, 8], iterations: 5, eval_every: 5, ..Default::default() };
    let (a, ma) = train(&cfg).map_err(|e| e.to_string())?;
    let (b, mb) = train(&cfg).map_err(|e| e.to_string())?;
    ensure(a.losses == b.losses && ma == mb, || "runs differ".into())?;
    Ok(format!("{} identical loss records", a.losses.len()))
}

fn grid_io_check() -> std::result::Result<String, String> {
    let g = AxisGrid::uniform(&[(-1.0, 1.0), (0.0, 2.0)], 5).unwrap();
    let t = g.evaluate(|x| (x[0] * x[1]).sin());
    let header = GridHeader { shape: g.shape(), bounds: g.bounds().to_vec(), field: "check".into() };
    let mut buf = Vec::new();
    write_grid(&mut buf, &header, &t).map_err(|e| e.to_string())?;
    let (h2, t2) = read_grid(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(h2 == header && t2 == t, || "round trip changed the grid".into())?;
    Ok(format!("{} bytes", buf.len()))
}
