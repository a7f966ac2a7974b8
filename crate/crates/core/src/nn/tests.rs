use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::layers::*;
use super::*;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn assert_grads<F: Fn(&mut Graph) -> Var>(ps: &ParamSet, f: F) {
    let r = check_gradients(ps, f, 1e-5, 1e-5);
    assert!(
        r.max_rel_error < 1e-5,
        "worst {} analytic {} numeric {} rel {}",
        r.worst_param,
        r.worst_analytic,
        r.worst_numeric,
        r.max_rel_error
    );
}

#[test]
fn elementwise_and_matrix_ops() {
    let mut rng = rng();
    let mut ps = ParamSet::new();
    let a = ps.add_uniform("a.x", 3, 4, 1.0, &mut rng);
    let b = ps.add_uniform("b.x", 4, 2, 1.0, &mut rng);
    let r = ps.add_uniform("r.x", 1, 2, 1.0, &mut rng);
    assert_grads(&ps, |g| {
        let a = g.param(a);
        let b = g.param(b);
        let r = g.param(r);
        let m = g.matmul(a, b);
        let m = g.add_row(m, r);
        let t = g.tanh(m);
        let s = g.sigmoid(m);
        let p = g.mul(t, s);
        let q = g.mul_row(p, r);
        let e = g.exp(q);
        let sq = g.square(e);
        let d = g.sub(sq, t);
        let tr = g.transpose(d);
        let sc = g.scale(tr, 0.7);
        g.mean(sc)
    });
}

#[test]
fn softmax_family_and_selection() {
    let mut rng = rng();
    let mut ps = ParamSet::new();
    let a = ps.add_uniform("a.x", 4, 5, 2.0, &mut rng);
    assert_grads(&ps, |g| {
        let a = g.param(a);
        let ls = g.log_softmax_rows(a);
        let sm = g.softmax_rows(a);
        let x = g.select_sum(ls, &[(0, 1), (1, 4), (3, 0), (3, 0)]);
        let y = g.slice_cols(sm, 1, 3);
        let y = g.square(y);
        let y = g.sum(y);
        g.add(x, y)
    });
}

#[test]
fn structural_ops() {
    let mut rng = rng();
    let mut ps = ParamSet::new();
    let a = ps.add_uniform("a.x", 5, 3, 1.0, &mut rng);
    let b = ps.add_uniform("b.x", 2, 3, 1.0, &mut rng);
    assert_grads(&ps, |g| {
        let a = g.param(a);
        let b = g.param(b);
        let c = g.concat_rows(&[a, b]);
        let d = g.concat_cols(&[c, c]);
        let e = g.gather_rows(d, &[0, 6, 6, 3]);
        let f = g.slice_rows(c, 1, 4);
        let f = g.unfold(f, 3, 1);
        let p = g.max_pool_rows(c, 2, 2);
        let ln = g.layer_norm(f, 1e-5);
        let s1 = g.square(e);
        let s1 = g.sum(s1);
        let s2 = g.square(p);
        let s2 = g.mean(s2);
        let s3 = g.tanh(ln);
        let s3 = g.sum(s3);
        let s = g.add(s1, s2);
        g.add(s, s3)
    });
}

#[test]
fn recurrent_and_attention_layers() {
    let mut rng = rng();
    let mut ps = ParamSet::new();
    let x = ps.add_uniform("x.x", 4, 3, 1.0, &mut rng);
    let lstm = BiLstm::new(&mut ps, "lstm", 3, 2, &mut rng);
    let gru = BiGru::new(&mut ps, "gru", 3, 2, &mut rng);
    let att = MultiHeadAttention::new(&mut ps, "att", 4, 2, &mut rng);
    let conv = Conv1d::new(&mut ps, "conv", 3, 4, 3, &mut rng);
    let hw = Highway::new(&mut ps, "hw", 4, &mut rng);
    let ln = LayerNorm::new(&mut ps, "ln", 4);
    let mask = causal_mask(4);
    assert_grads(&ps, |g| {
        let x = g.param(x);
        let l = lstm.forward(g, x);
        let r = gru.forward(g, x);
        let h = g.add(l, r);
        let c = conv.forward(g, x);
        let c = hw.forward(g, c);
        let c = ln.forward(g, c);
        let a = att.forward(g, h, c, Some(&mask));
        let s = g.square(a);
        g.sum(s)
    });
}

#[test]
fn param_reuse_accumulates() {
    let mut ps = ParamSet::new();
    let a = ps.add("a.x", Mat::from_elem((1, 1), 3.0));
    let mut g = Graph::new(&ps);
    let v = g.param(a);
    let v2 = g.param(a);
    assert_eq!(v, v2);
    let m = g.mul(v, v);
    let l = g.add(m, v);
    let grads = g.backward(l);
    assert!((grads.get(a)[[0, 0]] - 7.0).abs() < 1e-12);
}

#[test]
fn safetensors_round_trip() {
    let mut rng = rng();
    let mut ps = ParamSet::new();
    ps.add_uniform("enc.w", 3, 4, 1.0, &mut rng);
    ps.add_uniform("dec.b", 1, 2, 1.0, &mut rng);
    let bytes = ps.to_safetensors().unwrap();
    let mut other = ps.clone();
    for id in other.ids().collect::<Vec<_>>() {
        other.value_mut(id).fill(0.0);
    }
    other.load_safetensors(&bytes).unwrap();
    assert_eq!(ps, other);
    assert_eq!(ps.groups(), vec!["enc".to_string(), "dec".to_string()]);
}
