//! Flat named parameter collection with per-tensor positivity flags.
//!
//! Tensors tagged `pos_required` are the inter-layer weights the positivity
//! constraint applies to; their concatenation in store order is the flattened
//! constrained vector of dimension `d` that the backends reparametrize.

#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub pos_required: bool,
}

impl ParamTensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>, pos_required: bool) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        ParamTensor { name: name.to_string(), shape, data, pos_required }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fan-in: the leading extent (weights are stored `[in, out]`).
    pub fn fan_in(&self) -> usize {
        *self.shape.first().unwrap_or(&1)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { tensors: Vec::new() }
    }

    pub fn push(&mut self, t: ParamTensor) {
        assert!(
            self.get(&t.name).is_none(),
            "duplicate parameter name {}",
            t.name
        );
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    /// Total element count of positivity-flagged tensors.
    pub fn flagged_len(&self) -> usize {
        self.tensors.iter().filter(|t| t.pos_required).map(|t| t.len()).sum()
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Concatenate the flagged tensors in store order.
    pub fn flatten_flagged(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flagged_len());
        for t in self.tensors.iter().filter(|t| t.pos_required) {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Write a flat vector back into the flagged tensors. Inverse of
    /// [`ParamStore::flatten_flagged`].
    pub fn unflatten_flagged(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flagged_len(), "unflatten length mismatch");
        let mut off = 0;
        for t in self.tensors.iter_mut().filter(|t| t.pos_required) {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// Concatenate every tensor in store order (flagged and unflagged alike).
    pub fn flatten_all(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn unflatten_all(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.total_len(), "unflatten length mismatch");
        let mut off = 0;
        for t in self.tensors.iter_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// (offset, len) of each tensor inside the `flatten_all` vector; used for
    /// per-layer blocks in filter normalization.
    pub fn block_layout(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.tensors.len());
        let mut off = 0;
        for t in &self.tensors {
            out.push((off, t.len()));
            off += t.len();
        }
        out
    }

    /// Versioned CSV snapshot: one header line, then one line per tensor with
    /// name, `x`-joined shape, flag, and the raw values.
    pub fn to_snapshot_csv(&self) -> String {
        let mut s = String::from("snapshot_v1\n");
        for t in &self.tensors {
            let shape = t
                .shape
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("x");
            s.push_str(&format!("{},{},{}", t.name, shape, u8::from(t.pos_required)));
            for v in &t.data {
                s.push(',');
                s.push_str(&format!("{v:?}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_snapshot_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("snapshot_v1") => {}
            other => return Err(format!("bad snapshot header: {other:?}")),
        }
        let mut store = ParamStore::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let name = parts.next().ok_or(format!("line {}: missing name", ln + 2))?;
            let shape_s = parts.next().ok_or(format!("line {}: missing shape", ln + 2))?;
            let flag_s = parts.next().ok_or(format!("line {}: missing flag", ln + 2))?;
            let shape: Vec<usize> = if shape_s.is_empty() {
                vec![]
            } else {
                shape_s
                    .split('x')
                    .map(|p| p.parse().map_err(|e| format!("line {}: {e}", ln + 2)))
                    .collect::<Result<_, _>>()?
            };
            let data: Vec<f64> = parts
                .map(|p| p.parse().map_err(|e| format!("line {}: {e}", ln + 2)))
                .collect::<Result<_, _>>()?;
            let flag = flag_s == "1";
            store.push(ParamTensor::new(name, shape, data, flag));
        }
        Ok(store)
    }
}
