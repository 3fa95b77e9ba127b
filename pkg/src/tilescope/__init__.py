"""Full-coverage tiled detection of AI-generated high-resolution images."""
