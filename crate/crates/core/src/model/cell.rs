//! Recurrent cells. Gate equations:
//!
//! GRU: `z = sig(Wz x + Uz h + bz)`, `r = sig(Wr x + Ur h + br)`,
//! `h~ = tanh(Wh x + Uh (r.h) + bh)`, `h' = (1 - z).h + z.h~`.
//!
//! LSTM: `f/i/o = sig(W x + U h + b)`, `c~ = tanh(Wc x + Uc h + bc)`,
//! `c' = f.c + i.c~`, `h' = o.tanh(c')`.

use rand::Rng;

use crate::autodiff::{SubstrateError, Tape, Tensor, ValueId};

use super::{Binder, CellKind};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub wf: Tensor,
    pub uf: Tensor,
    pub bf: Tensor,
    pub wi: Tensor,
    pub ui: Tensor,
    pub bi: Tensor,
    pub wo: Tensor,
    pub uo: Tensor,
    pub bo: Tensor,
    pub wc: Tensor,
    pub uc: Tensor,
    pub bc: Tensor,
}

/// Weights of one recurrent cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Gru(GruParams),
    Lstm(LstmParams),
}

fn init_matrix(out: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..out * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_raw(vec![out, fan_in], data)
}

impl CellParams {
    pub fn init(kind: CellKind, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        match kind {
            CellKind::Gru => CellParams::Gru(GruParams {
                wz: init_matrix(hidden, input_dim, rng),
                uz: init_matrix(hidden, hidden, rng),
                bz: Tensor::zeros(&[hidden]),
                wr: init_matrix(hidden, input_dim, rng),
                ur: init_matrix(hidden, hidden, rng),
                br: Tensor::zeros(&[hidden]),
                wh: init_matrix(hidden, input_dim, rng),
                uh: init_matrix(hidden, hidden, rng),
                bh: Tensor::zeros(&[hidden]),
            }),
            CellKind::Lstm => CellParams::Lstm(LstmParams {
                wf: init_matrix(hidden, input_dim, rng),
                uf: init_matrix(hidden, hidden, rng),
                bf: Tensor::zeros(&[hidden]),
                wi: init_matrix(hidden, input_dim, rng),
                ui: init_matrix(hidden, hidden, rng),
                bi: Tensor::zeros(&[hidden]),
                wo: init_matrix(hidden, input_dim, rng),
                uo: init_matrix(hidden, hidden, rng),
                bo: Tensor::zeros(&[hidden]),
                wc: init_matrix(hidden, input_dim, rng),
                uc: init_matrix(hidden, hidden, rng),
                bc: Tensor::zeros(&[hidden]),
            }),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Gru(_) => CellKind::Gru,
            CellParams::Lstm(_) => CellKind::Lstm,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.wz.shape()[0],
            CellParams::Lstm(p) => p.wf.shape()[0],
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CellParams::Gru(p) => p.wz.shape()[1],
            CellParams::Lstm(p) => p.wf.shape()[1],
        }
    }

    pub fn for_each(&self, f: &mut impl FnMut(&str, &Tensor)) {
        match self {
            CellParams::Gru(p) => {
                f("wz", &p.wz);
                f("uz", &p.uz);
                f("bz", &p.bz);
                f("wr", &p.wr);
                f("ur", &p.ur);
                f("br", &p.br);
                f("wh", &p.wh);
                f("uh", &p.uh);
                f("bh", &p.bh);
            }
            CellParams::Lstm(p) => {
                f("wf", &p.wf);
                f("uf", &p.uf);
                f("bf", &p.bf);
                f("wi", &p.wi);
                f("ui", &p.ui);
                f("bi", &p.bi);
                f("wo", &p.wo);
                f("uo", &p.uo);
                f("bo", &p.bo);
                f("wc", &p.wc);
                f("uc", &p.uc);
                f("bc", &p.bc);
            }
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor)) {
        match self {
            CellParams::Gru(p) => {
                f("wz", &mut p.wz);
                f("uz", &mut p.uz);
                f("bz", &mut p.bz);
                f("wr", &mut p.wr);
                f("ur", &mut p.ur);
                f("br", &mut p.br);
                f("wh", &mut p.wh);
                f("uh", &mut p.uh);
                f("bh", &mut p.bh);
            }
            CellParams::Lstm(p) => {
                f("wf", &mut p.wf);
                f("uf", &mut p.uf);
                f("bf", &mut p.bf);
                f("wi", &mut p.wi);
                f("ui", &mut p.ui);
                f("bi", &mut p.bi);
                f("wo", &mut p.wo);
                f("uo", &mut p.uo);
                f("bo", &mut p.bo);
                f("wc", &mut p.wc);
                f("uc", &mut p.uc);
                f("bc", &mut p.bc);
            }
        }
    }
}

/// RNN state handles: hidden vector plus the LSTM cell memory.
#[derive(Debug, Clone, Copy)]
pub struct CellStateIds {
    pub hidden: ValueId,
    pub memory: Option<ValueId>,
}

/// A cell bound onto a tape.
#[derive(Debug, Clone)]
pub enum BoundCell {
    Gru {
        z: (ValueId, ValueId, ValueId),
        r: (ValueId, ValueId, ValueId),
        h: (ValueId, ValueId, ValueId),
        hidden: usize,
    },
    Lstm {
        f: (ValueId, ValueId, ValueId),
        i: (ValueId, ValueId, ValueId),
        o: (ValueId, ValueId, ValueId),
        c: (ValueId, ValueId, ValueId),
        hidden: usize,
    },
}

impl BoundCell {
    // Binding order matches `CellParams::for_each`.
    pub fn bind(b: &mut Binder<'_>, params: &CellParams) -> Self {
        match params {
            CellParams::Gru(p) => BoundCell::Gru {
                z: (b.bind(&p.wz), b.bind(&p.uz), b.bind(&p.bz)),
                r: (b.bind(&p.wr), b.bind(&p.ur), b.bind(&p.br)),
                h: (b.bind(&p.wh), b.bind(&p.uh), b.bind(&p.bh)),
                hidden: p.wz.shape()[0],
            },
            CellParams::Lstm(p) => BoundCell::Lstm {
                f: (b.bind(&p.wf), b.bind(&p.uf), b.bind(&p.bf)),
                i: (b.bind(&p.wi), b.bind(&p.ui), b.bind(&p.bi)),
                o: (b.bind(&p.wo), b.bind(&p.uo), b.bind(&p.bo)),
                c: (b.bind(&p.wc), b.bind(&p.uc), b.bind(&p.bc)),
                hidden: p.wf.shape()[0],
            },
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            BoundCell::Gru { hidden, .. } | BoundCell::Lstm { hidden, .. } => *hidden,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> CellStateIds {
        let h = tape.input(Tensor::zeros(&[self.hidden_size()]));
        let memory = match self {
            BoundCell::Gru { .. } => None,
            BoundCell::Lstm { .. } => Some(tape.input(Tensor::zeros(&[self.hidden_size()]))),
        };
        CellStateIds { hidden: h, memory }
    }

    /// One recurrent step; the new hidden vector is also the cell output.
    pub fn step(
        &self,
        tape: &mut Tape,
        input: ValueId,
        state: &CellStateIds,
    ) -> Result<CellStateIds, SubstrateError> {
        let gate = |tape: &mut Tape, (w, u, b): (ValueId, ValueId, ValueId), x: ValueId, h: ValueId| {
            let wx = tape.matmul(w, x)?;
            let uh = tape.matmul(u, h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, b)
        };
        match self {
            BoundCell::Gru { z, r, h, .. } => {
                let hp = state.hidden;
                let za = gate(tape, *z, input, hp)?;
                let zg = tape.sigmoid(za)?;
                let ra = gate(tape, *r, input, hp)?;
                let rg = tape.sigmoid(ra)?;
                let rh = tape.mul(rg, hp)?;
                let ha = gate(tape, *h, input, rh)?;
                let hc = tape.tanh(ha)?;
                // (1 - z) . h + z . h~
                let neg_z = tape.scale(zg, -1.0)?;
                let one_minus_z = tape.offset(neg_z, 1.0)?;
                let keep = tape.mul(one_minus_z, hp)?;
                let update = tape.mul(zg, hc)?;
                let hn = tape.add(keep, update)?;
                Ok(CellStateIds { hidden: hn, memory: None })
            }
            BoundCell::Lstm { f, i, o, c, .. } => {
                let hp = state.hidden;
                let cp = state.memory.ok_or_else(|| {
                    SubstrateError::invalid("lstm_step", "missing cell memory in state")
                })?;
                let fa = gate(tape, *f, input, hp)?;
                let fg = tape.sigmoid(fa)?;
                let ia = gate(tape, *i, input, hp)?;
                let ig = tape.sigmoid(ia)?;
                let oa = gate(tape, *o, input, hp)?;
                let og = tape.sigmoid(oa)?;
                let ca = gate(tape, *c, input, hp)?;
                let cc = tape.tanh(ca)?;
                let keep = tape.mul(fg, cp)?;
                let write = tape.mul(ig, cc)?;
                let cn = tape.add(keep, write)?;
                let ct = tape.tanh(cn)?;
                let hn = tape.mul(og, ct)?;
                Ok(CellStateIds { hidden: hn, memory: Some(cn) })
            }
        }
    }
}
