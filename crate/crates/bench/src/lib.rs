//! Shared fixtures for the pipeline benchmarks.

use edgecal::data::{generate_sbm, SbmSpec};
use edgecal::{DenseMatrix, EncoderConfig, EncoderKind, Graph, LinkModel, ModelConfig, ScorerConfig};

/// The default two-block SBM and an untrained model with the default
/// dimensions for `kind`.
pub fn fixture(kind: EncoderKind) -> (Graph, DenseMatrix, LinkModel) {
    let (g, x) = generate_sbm(&SbmSpec::default(), 0).expect("valid SBM spec");
    let config = ModelConfig {
        encoder: EncoderConfig::default_for(kind),
        scorer: ScorerConfig::default(),
        in_dim: x.cols(),
    };
    let model = LinkModel::init(config, 0).expect("valid model config");
    (g, x, model)
}

/// `n` node pairs spread over the graph, half of them existing edges.
pub fn query_pairs(g: &Graph, n: usize) -> Vec<(usize, usize)> {
    let edges = g.edges();
    let nodes = edgecal::Adjacency::node_count(g);
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                edges[(i * 7919) % edges.len()]
            } else {
                let u = (i * 31) % nodes;
                (u, (u + 1 + (i * 17) % (nodes - 1)) % nodes)
            }
        })
        .collect()
}
