"""Service layer: data formats, networks, training, inference and evaluation."""
