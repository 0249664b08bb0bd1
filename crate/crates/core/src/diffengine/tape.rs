use std::cell::{Cell, RefCell};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type NodeId = usize;

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(1);

/// A forward value, optionally tied to a node of an [`AdjointTape`].
/// Values without a node are constants and receive no gradient.
#[derive(Debug, Clone)]
pub struct DiffValue<T> {
    value: ArrayD<T>,
    node: Option<(usize, NodeId)>,
}

impl<T: Real> DiffValue<T> {
    pub fn constant(value: ArrayD<T>) -> Self {
        Self { value, node: None }
    }

    pub fn scalar_constant(v: T) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn value(&self) -> &ArrayD<T> {
        &self.value
    }

    pub fn into_value(self) -> ArrayD<T> {
        self.value
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node.map(|(_, n)| n)
    }

    pub fn is_constant(&self) -> bool {
        self.node.is_none()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// The value of a one-element result.
    pub fn scalar(&self) -> Option<T> {
        (self.value.len() == 1).then(|| *self.value.iter().next().expect("one element"))
    }
}

/// Vector-Jacobian product of one recorded primitive: maps the output
/// cotangent to one cotangent per input (`None` for constant inputs).
pub type Adjoint<T> = Box<dyn FnOnce(&ArrayD<T>) -> Vec<Option<ArrayD<T>>>>;

struct Entry<T> {
    name: &'static str,
    inputs: Vec<Option<NodeId>>,
    adjoint: Option<Adjoint<T>>,
}

/// Records primitives during a forward pass and replays their adjoints in
/// reverse for exactly one backward pass.
///
/// A tape is confined to one thread. Primitives with non-differentiable
/// points also fold their branch pattern into a kink signature, which the
/// gradient checker uses to tell whether a finite-difference stencil crossed
/// a kink.
pub struct AdjointTape<T> {
    id: usize,
    entries: RefCell<Vec<Entry<T>>>,
    finished: Cell<bool>,
    kinks: RefCell<DefaultHasher>,
}

impl<T: Real> Default for AdjointTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> AdjointTape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            entries: RefCell::new(Vec::new()),
            finished: Cell::new(false),
            kinks: RefCell::new(DefaultHasher::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finished(&self) -> bool {
        self.finished.get()
    }

    fn ensure_recording(&self) -> Result<()> {
        if self.finished.get() {
            return Err(Error::Lifecycle("tape has already been consumed by a backward pass".into()));
        }
        Ok(())
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: ArrayD<T>) -> Result<DiffValue<T>> {
        self.ensure_recording()?;
        let mut entries = self.entries.borrow_mut();
        entries.push(Entry { name: "leaf", inputs: Vec::new(), adjoint: None });
        Ok(DiffValue { value, node: Some((self.id, entries.len() - 1)) })
    }

    /// Whether `v` needs a gradient on this tape.
    pub fn tracks(&self, v: &DiffValue<T>) -> bool {
        matches!(v.node, Some((tape, _)) if tape == self.id)
    }

    /// Records a primitive. When no input is tracked the result is a
    /// constant and the adjoint is dropped.
    pub fn record(
        &self,
        name: &'static str,
        value: ArrayD<T>,
        inputs: &[&DiffValue<T>],
        adjoint: Adjoint<T>,
    ) -> Result<DiffValue<T>> {
        self.ensure_recording()?;
        for v in inputs {
            if let Some((tape, _)) = v.node {
                if tape != self.id {
                    return Err(Error::Contract(format!("{name}: input recorded on a different tape")));
                }
            }
        }
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|v| v.node()).collect();
        if ids.iter().all(Option::is_none) {
            return Ok(DiffValue::constant(value));
        }
        let mut entries = self.entries.borrow_mut();
        entries.push(Entry { name, inputs: ids, adjoint: Some(adjoint) });
        Ok(DiffValue { value, node: Some((self.id, entries.len() - 1)) })
    }

    /// Folds a primitive's branch pattern into the kink signature.
    pub fn note_branches<I: IntoIterator<Item = i8>>(&self, name: &'static str, branches: I) {
        let mut h = self.kinks.borrow_mut();
        name.hash(&mut *h);
        for b in branches {
            b.hash(&mut *h);
        }
    }

    pub fn kink_signature(&self) -> u64 {
        self.kinks.borrow().finish()
    }

    /// Names of recorded primitives in order, for diagnostics.
    pub fn primitive_names(&self) -> Vec<&'static str> {
        self.entries.borrow().iter().map(|e| e.name).collect()
    }

    /// Reverse pass from a scalar `loss`; returns `∂loss/∂leaf` for each
    /// requested leaf (zeros for leaves the loss does not depend on). The tape
    /// is consumed.
    pub fn backward(&self, loss: &DiffValue<T>, leaves: &[&DiffValue<T>]) -> Result<Vec<ArrayD<T>>> {
        self.ensure_recording()?;
        if loss.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        for leaf in leaves {
            if let Some((tape, _)) = leaf.node {
                if tape != self.id {
                    return Err(Error::Contract("leaf recorded on a different tape".into()));
                }
            }
        }
        if let Some((tape, _)) = loss.node {
            if tape != self.id {
                return Err(Error::Contract("loss recorded on a different tape".into()));
            }
        }
        self.finished.set(true);
        let mut entries = std::mem::take(&mut *self.entries.borrow_mut());
        let mut grads: Vec<Option<ArrayD<T>>> = (0..entries.len()).map(|_| None).collect();
        if let Some(root) = loss.node() {
            grads[root] = Some(ArrayD::from_elem(loss.value.raw_dim(), T::one()));
            for i in (0..=root).rev() {
                let entry = &mut entries[i];
                let Some(adjoint) = entry.adjoint.take() else { continue };
                let Some(g) = grads[i].take() else { continue };
                let contribs = adjoint(&g);
                debug_assert_eq!(contribs.len(), entry.inputs.len(), "{}", entry.name);
                for (input, c) in entry.inputs.iter().zip(contribs) {
                    if let (Some(j), Some(c)) = (input, c) {
                        match &mut grads[*j] {
                            Some(acc) => *acc += &c,
                            slot @ None => *slot = Some(c),
                        }
                    }
                }
            }
        }
        Ok(leaves
            .iter()
            .map(|leaf| {
                leaf.node()
                    .and_then(|j| grads[j].take())
                    .unwrap_or_else(|| ArrayD::zeros(leaf.value.raw_dim()))
            })
            .collect())
    }
}
