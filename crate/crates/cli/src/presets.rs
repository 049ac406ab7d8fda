//! Configurations shipped with the tool, usable as `--config preset:NAME`.

const PRESETS: &[(&str, &str)] = &[
    ("split_mnist", include_str!("../../../configs/split_mnist.toml")),
    ("permuted_mnist_small", include_str!("../../../configs/permuted_mnist_small.toml")),
    ("permuted_mnist_medium", include_str!("../../../configs/permuted_mnist_medium.toml")),
    ("hyper_sweep", include_str!("../../../configs/hyper_sweep.toml")),
    ("mnist_compression", include_str!("../../../configs/mnist_compression.toml")),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}
