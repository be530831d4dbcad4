"""Event segmentation and hierarchical event memory for long-video tokens."""
