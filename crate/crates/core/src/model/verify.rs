//! Independent double-double evaluation of the training loss, used as the
//! finite-difference oracle for the hand-written backward pass.

use super::config::VisualStream;
use super::params::OrParams;
use super::train::TrainExample;
use crate::error::{Error, Result};
use crate::numkit::{Dd, LstmParams, Tensor};

fn dd_matvec(m: &Tensor, x: &[Dd], out: &mut [Dd]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.data().chunks_exact(cols)) {
        *o = *o + row.iter().zip(x).map(|(&a, &b)| Dd::from(a) * b).sum::<Dd>();
    }
}

fn dd_lstm(p: &LstmParams, inputs: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let h = p.hidden_dim;
    let mut hs = Vec::with_capacity(inputs.len());
    let mut hp = vec![Dd::ZERO; h];
    let mut c = vec![Dd::ZERO; h];
    for x in inputs {
        let mut a: Vec<Dd> = p.b.data().iter().map(|&v| Dd::from(v)).collect();
        dd_matvec(&p.w_x, x, &mut a);
        dd_matvec(&p.w_h, &hp, &mut a);
        for j in 0..h {
            let i = a[j].sigmoid();
            let f = a[h + j].sigmoid();
            let o = a[2 * h + j].sigmoid();
            let g = a[3 * h + j].tanh();
            c[j] = f * c[j] + i * g;
            hp[j] = o * c[j].tanh();
        }
        hs.push(hp.clone());
    }
    hs
}

fn lift(v: &[f64]) -> Vec<Dd> {
    v.iter().map(|&x| Dd::from(x)).collect()
}

/// Summed NLL of one example, in double-double.
fn example_nll(params: &OrParams, ex: &TrainExample) -> Dd {
    let f = &ex.features;
    let mut local = Vec::new();
    let mut global = Vec::new();
    for s in VisualStream::LOCAL {
        if let Some(p) = params.stream(s) {
            let seq: Vec<Vec<Dd>> = f.stream_inputs(s).iter().map(|x| lift(x)).collect();
            local.extend(dd_lstm(p, &seq).pop().unwrap_or_default());
        }
    }
    local.extend(lift(&f.spatial));
    for s in VisualStream::GLOBAL {
        if let Some(p) = params.stream(s) {
            let seq: Vec<Vec<Dd>> = f.stream_inputs(s).iter().map(|x| lift(x)).collect();
            global.extend(dd_lstm(p, &seq).pop().unwrap_or_default());
        }
    }

    let lang_in: Vec<Vec<Dd>> = ex
        .expression
        .input_ids()
        .iter()
        .map(|&i| lift(params.embedding.row(i)))
        .collect();
    let lang = dd_lstm(&params.lstm_language, &lang_in);
    let with = |fixed: &[Dd]| -> Vec<Vec<Dd>> { lang.iter().map(|h| [h.as_slice(), fixed].concat()).collect() };
    let hl = dd_lstm(&params.lstm_local_fusion, &with(&local));
    let hg = dd_lstm(&params.lstm_global_fusion, &with(&global));

    let mut nll = Dd::ZERO;
    for ((l, g), &t) in hl.iter().zip(&hg).zip(ex.expression.target_ids()) {
        let mut z = lift(params.r.data());
        dd_matvec(&params.w_local, l, &mut z);
        dd_matvec(&params.w_global, g, &mut z);
        let m = z.iter().fold(z[0], |a, &b| if b.hi > a.hi { b } else { a });
        let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<Dd>().ln();
        nll = nll + lse - z[t];
    }
    nll
}

/// Mean per-token NLL over `examples`, evaluated in double-double.
pub fn reference_loss(params: &OrParams, examples: &[TrainExample]) -> Result<Dd> {
    let mut tokens = 0usize;
    let mut total = Dd::ZERO;
    for ex in examples {
        ex.features.check(&params.config)?;
        ex.expression.check_ids(params.config.vocab_size)?;
        tokens += ex.expression.len();
        total = total + example_nll(params, ex);
    }
    if tokens == 0 {
        return Err(Error::Contract("empty dataset".into()));
    }
    Ok(total / Dd::from(tokens as f64))
}
