"""File formats, manifests, preprocessing, phantom synthesis and model persistence."""
