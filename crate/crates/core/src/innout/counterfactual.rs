use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::error::Result;
use crate::gnn::{edge_embedding, LinkModel, RowOverlay};
use crate::graph::{Adjacency, Graph, ToggledView};
use crate::tensor::DenseMatrix;

/// Cached layer outputs of a frozen encoder on one graph, used to evaluate
/// the same encoder on that graph with a single edge toggled.
///
/// Only rows within `ℓ` hops of the toggled endpoints can differ at layer
/// `ℓ`, so those are the only rows ever recomputed; everything else is read
/// from the cache. Recomputed rows use the same row-wise arithmetic as
/// [`LinkModel::encode_layers`], which makes the result bit-identical to a
/// full forward pass on the toggled graph.
pub struct Counterfactual<'a> {
    model: &'a LinkModel,
    graph: &'a Graph,
    layers: Vec<DenseMatrix>,
}

type FreshRows = HashMap<usize, Vec<f64>>;

impl<'a> Counterfactual<'a> {
    pub fn new(model: &'a LinkModel, graph: &'a Graph, x: &DenseMatrix) -> Result<Self> {
        let layers = model.encode_layers(graph, x)?;
        Ok(Self { model, graph, layers })
    }

    /// Final embeddings `H` on the unmodified graph.
    pub fn embeddings(&self) -> &DenseMatrix {
        self.layers.last().expect("input layer present")
    }

    pub fn model(&self) -> &LinkModel {
        self.model
    }

    /// Hop distance (up to `max`) from `{u, v}` in the toggled view.
    fn distances(view: &ToggledView<'_>, u: usize, v: usize, max: usize) -> HashMap<usize, usize> {
        let mut dist = HashMap::from([(u, 0), (v, 0)]);
        let mut queue = VecDeque::from([u, v]);
        while let Some(a) = queue.pop_front() {
            let d = dist[&a];
            if d == max {
                continue;
            }
            for &b in view.neighbors(a).iter() {
                dist.entry(b).or_insert_with(|| {
                    queue.push_back(b);
                    d + 1
                });
            }
        }
        dist
    }

    /// Recomputes the rows each layer needs. With `targets = None` every
    /// changed row is recomputed (full `H⁺`); otherwise only what the target
    /// rows of the last layer depend on.
    fn recompute(&self, view: &ToggledView<'_>, targets: Option<&[usize]>) -> Result<Vec<FreshRows>> {
        let depth = self.model.layers();
        let (u, v) = view.endpoints();
        let dist = Self::distances(view, u, v, depth);
        let changed = |l: usize, i: usize| dist.get(&i).is_some_and(|&d| d <= l);

        // rows to compute at layer l (index l = output of layer l)
        let mut plan: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); depth + 1];
        match targets {
            None => {
                for (&i, &d) in &dist {
                    for set in plan.iter_mut().take(depth + 1).skip(d.max(1)) {
                        set.insert(i);
                    }
                }
            }
            Some(rows) => {
                let mut need: BTreeSet<usize> = rows.iter().copied().collect();
                for l in (1..=depth).rev() {
                    plan[l] = need.iter().copied().filter(|&i| changed(l, i)).collect();
                    let mut below = BTreeSet::new();
                    for &i in &plan[l] {
                        below.insert(i);
                        below.extend(view.neighbors(i).iter().copied());
                    }
                    need = below;
                }
            }
        }

        let mut fresh: Vec<FreshRows> = vec![HashMap::new(); depth + 1];
        for l in 1..=depth {
            let rows: Vec<usize> = plan[l].iter().copied().collect();
            if rows.is_empty() {
                continue;
            }
            let prev_fresh = if l == 1 { None } else { Some(&fresh[l - 1]) };
            let overlay = RowOverlay::new(&self.layers[l - 1], prev_fresh);
            let out = self.model.layer_rows(view, &overlay, l - 1, &rows)?;
            let layer: FreshRows = rows
                .iter()
                .enumerate()
                .map(|(k, &i)| (i, out.row(k).to_vec()))
                .collect();
            fresh[l] = layer;
        }
        Ok(fresh)
    }

    /// `H⁺` for the graph with `(u, v)` toggled, via localized recomputation.
    pub fn toggled_embeddings(&self, u: usize, v: usize) -> Result<DenseMatrix> {
        let view = ToggledView::new(self.graph, u, v)?;
        let fresh = self.recompute(&view, None)?;
        let mut out = self.embeddings().clone();
        for (&i, row) in fresh.last().expect("last layer") {
            out.row_mut(i).copy_from_slice(row);
        }
        Ok(out)
    }

    /// `(h⁺_u, h⁺_v)` computing only the rows they depend on.
    pub fn toggled_endpoints(&self, u: usize, v: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ToggledView::new(self.graph, u, v)?;
        let fresh = self.recompute(&view, Some(&[u, v]))?;
        let last = fresh.last().expect("last layer");
        let pick = |i: usize| last.get(&i).cloned().unwrap_or_else(|| self.embeddings().row(i).to_vec());
        Ok((pick(u), pick(v)))
    }

    /// `(h_uv, h⁺_uv)`: the edge embedding on the observed graph and on the
    /// graph with `(u, v)` toggled.
    pub fn edge_pair(&self, u: usize, v: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let psi = self.model.config.scorer.psi;
        let h = self.embeddings();
        let h_uv = edge_embedding(h.row(u), h.row(v), psi)?;
        let (pu, pv) = self.toggled_endpoints(u, v)?;
        let h_plus = edge_embedding(&pu, &pv, psi)?;
        Ok((h_uv, h_plus))
    }
}
