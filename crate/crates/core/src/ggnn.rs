//! Gated graph network over a recruitment graph, and the per-entity node
//! embedding tables that seed it.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Trainable `[entities + 1, d]` table; the last row is the shared cold-start
/// row used for entities unknown to the table.
#[derive(Clone, Debug)]
pub struct NodeTable {
    pub table: ParamId,
    pub entities: usize,
}

impl NodeTable {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        entities: usize,
        d: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add_gaussian(name, &[entities + 1, d], std, rng)?;
        Ok(Self { table, entities })
    }

    pub fn cold_row(&self) -> usize {
        self.entities
    }

    /// Initial node states `g⁰`, one row per id; `None` selects the cold row.
    pub fn lookup(&self, tape: &mut Tape<'_>, ids: &[Option<usize>]) -> Result<Var> {
        let rows = ids
            .iter()
            .map(|id| match *id {
                Some(i) if i >= self.entities => Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.entities,
                }),
                Some(i) => Ok(Some(i)),
                None => Ok(Some(self.cold_row())),
            })
            .collect::<Result<Vec<_>>>()?;
        let t = tape.param(self.table);
        tape.gather_rows(t, &rows)
    }
}

/// One propagation layer. Weights are stored for row-vector products.
#[derive(Clone, Debug)]
pub struct GgnnLayer {
    pub h: ParamId,
    pub b: ParamId,
    pub w_z: ParamId,
    pub m_z: ParamId,
    pub w_r: ParamId,
    pub m_r: ParamId,
    pub w_h: ParamId,
    pub m_h: ParamId,
}

impl GgnnLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut reg = |name: &str, shape: &[usize]| store.add_gaussian(format!("{prefix}.{name}"), shape, std, rng);
        Ok(Self {
            h: reg("h", &[d, d])?,
            b: reg("b", &[1, d])?,
            w_z: reg("w_z", &[d, d])?,
            m_z: reg("m_z", &[d, d])?,
            w_r: reg("w_r", &[d, d])?,
            m_r: reg("m_r", &[d, d])?,
            w_h: reg("w_h", &[d, d])?,
            m_h: reg("m_h", &[d, d])?,
        })
    }

    /// `states: [nodes, d]`, `adjacency: [nodes, nodes]`.
    pub fn step(&self, tape: &mut Tape<'_>, states: Var, adjacency: Var) -> Result<Var> {
        self.step_with_gate_offset(tape, states, adjacency, 0.0)
    }

    /// [`step`](Self::step) with a constant added to the update-gate
    /// pre-activation. An offset of `-∞` closes the gate entirely.
    #[doc(hidden)]
    pub fn step_with_gate_offset(&self, tape: &mut Tape<'_>, states: Var, adjacency: Var, offset: f64) -> Result<Var> {
        let nodes = tape.value(states).rows();
        let adj = tape.shape(adjacency);
        if adj != [nodes, nodes] {
            return Err(Error::ShapeMismatch {
                op: "ggnn_step",
                lhs: adj.to_vec(),
                rhs: tape.shape(states).to_vec(),
            });
        }
        let messages = tape.linear(states, self.h, None)?;
        let a = tape.matmul(adjacency, messages)?;
        let bias = tape.param(self.b);
        let a = tape.add_row(a, bias)?;

        let gate = |tape: &mut Tape<'_>, w: ParamId, m: ParamId, g: Var| -> Result<Var> {
            let x = tape.linear(a, w, None)?;
            let y = tape.linear(g, m, None)?;
            tape.add(x, y)
        };
        let mut z = gate(tape, self.w_z, self.m_z, states)?;
        if offset != 0.0 {
            z = tape.affine(z, 1.0, offset);
        }
        let z = tape.sigmoid(z);
        let r = gate(tape, self.w_r, self.m_r, states)?;
        let r = tape.sigmoid(r);
        let rg = tape.mul(r, states)?;
        let cand = gate(tape, self.w_h, self.m_h, rg)?;
        let cand = tape.tanh(cand);
        // (1 − z) ⊙ g + z ⊙ g̃, written as g + z ⊙ (g̃ − g)
        let delta = tape.sub(cand, states)?;
        let moved = tape.mul(z, delta)?;
        tape.add(states, moved)
    }
}

#[derive(Clone, Debug)]
pub struct Ggnn {
    pub layers: Vec<GgnnLayer>,
}

impl Ggnn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        layers: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Infeasible("a graph network needs at least one layer".into()));
        }
        let layers = (0..layers)
            .map(|t| GgnnLayer::new(store, &format!("{prefix}.layer{t}"), d, std, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Applies every layer in order; row 0 of the result is the current entity.
    pub fn run(&self, tape: &mut Tape<'_>, initial: Var, adjacency: Var) -> Result<Var> {
        let mut g = initial;
        for layer in &self.layers {
            g = layer.step(tape, g, adjacency)?;
        }
        Ok(g)
    }
}
