//! Dense and self-attention layers, and the IDM / policy network builders.

mod attention;
mod network;

pub use attention::SelfAttentionLayer;
pub use network::{
    build_net, build_vector_net, DenseLayer, Layer, LayerSpec, NetOptions, Network, NetworkSpec,
    Role, Standardizer, VECTOR_HIDDEN,
};
