//! Exercise the tape-based reverse-mode substrate directly: build a small
//! compute graph by hand, pull every gradient out of one backward sweep,
//! and corroborate each against central finite differences. The same cross
//! check then runs through a full model, both for its parameters and for
//! the input-gradient path the attacks rely on.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use donet::blocks::{BlockKind, InputShape, Model, ModelConfig};
use donet::check::{max_rel_err, numerical_grad};
use donet::perturb::AttackModel;
use donet::tensor::Mode;
use donet::{Graph, Tensor};

const FD_STEP: f64 = 1e-5;

fn main() -> donet::Result<()> {
    // -- A hand-built graph ---------------------------------------------------
    // y = sum(relu(x W) * m) + sum(log(softmax(x W)))
    let x0 = vec![0.3, -0.8, 0.5, 0.1, 0.9, -0.4];
    let w0 = vec![0.2, -0.5, 0.7, 1.1, -0.3, 0.4, -0.9, 0.6, 0.05];
    let m0 = vec![1.0, 0.5, -1.5, 0.25, 2.0, -0.75];

    let run = |xv: &[f64], wv: &[f64], mv: &[f64]| -> donet::Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::new(vec![2, 3], xv.to_vec())?);
        let w = g.leaf(&Tensor::new(vec![3, 3], wv.to_vec())?);
        let m = g.leaf(&Tensor::new(vec![2, 3], mv.to_vec())?);
        let h = g.matmul(&x, &w)?;
        let a = g.relu(&h)?;
        let masked = g.mul(&a, &m)?;
        let s1 = g.sum(&masked)?;
        let p = g.softmax(&h)?;
        let lp = g.log(&p)?;
        let s2 = g.sum(&lp)?;
        let y = g.add(&s1, &s2)?;
        let grads = g.backward(&y)?;
        let out = vec![grads.wrt(&x)?.to_vec(), grads.wrt(&w)?.to_vec(), grads.wrt(&m)?.to_vec()];
        Ok((y.item(), out))
    };

    let (y, analytic) = run(&x0, &w0, &m0)?;
    println!("hand-built graph, y = {y:.6}");
    let leaves: [(&str, &[f64]); 3] = [("x", &x0), ("W", &w0), ("mask", &m0)];
    for (i, (name, v)) in leaves.iter().enumerate() {
        let fd = numerical_grad(
            |p| {
                let mut args: [&[f64]; 3] = [&x0, &w0, &m0];
                args[i] = p;
                run(args[0], args[1], args[2]).unwrap().0
            },
            v,
            FD_STEP,
        );
        println!(
            "  d y / d {name:<4} reverse vs central differences: max rel err {:.3e}",
            max_rel_err(&analytic[i], &fd)
        );
    }

    // -- Through a whole model --------------------------------------------------
    // Every parameter of a two-block classifier, then the gradient with
    // respect to the input batch itself.
    let cfg = ModelConfig {
        kind: BlockKind::InGatingSig,
        input: InputShape::Dense { features: 3 },
        width: 5,
        depth: 2,
        classes: 3,
        lambda_init: (0.1, 0.3),
    };
    let model = Model::build(&cfg, 21)?;
    let x = Tensor::new(vec![4, 3], vec![
        0.2, 0.8, 0.4, 0.6, 0.3, 0.7, 0.1, 0.9, 0.5, 0.45, 0.55, 0.65,
    ])?;
    let y = vec![0, 1, 2, 1];

    let loss_at = |m: &Model| -> f64 {
        let mut m = m.clone();
        let mut g = Graph::new();
        let pass = m.forward(&mut g, &x, Mode::Train).unwrap();
        g.softmax_cross_entropy(&pass.logits, &y).unwrap().item()
    };

    let mut probe = model.clone();
    let mut g = Graph::new();
    let pass = probe.forward(&mut g, &x, Mode::Train)?;
    let loss = g.softmax_cross_entropy(&pass.logits, &y)?;
    let grads = g.backward(&loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (pi, bound) in pass.bound.iter().enumerate() {
        let analytic = grads.wrt(bound)?;
        let base = model.params()[pi].value.data().to_vec();
        let fd = numerical_grad(
            |p| {
                let mut m = model.clone();
                m.params_mut()[pi].value = Tensor::new(
                    model.params()[pi].value.shape().to_vec(),
                    p.to_vec(),
                )
                .unwrap();
                loss_at(&m)
            },
            &base,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(analytic, &fd));
        checked += analytic.len();
    }
    println!(
        "\ngated two-block model: {} parameter entries across {} tensors, worst rel err {:.3e}",
        checked,
        pass.bound.len(),
        worst
    );

    let (_, gx) = model.clone().loss_and_input_grad(&x, &y)?;
    let fd = numerical_grad(
        |p| {
            let xt = Tensor::new(vec![4, 3], p.to_vec()).unwrap();
            let mut m = model.clone();
            let mut g = Graph::new();
            let pass = m.forward(&mut g, &xt, Mode::Eval).unwrap();
            g.softmax_cross_entropy(&pass.logits, &y).unwrap().item()
        },
        x.data(),
        FD_STEP,
    );
    println!("input gradient (attack path): max rel err {:.3e}", max_rel_err(&gx, &fd));
    Ok(())
}
