"""Dense phrase grounding: one segmentation mask per noun phrase of an image description."""

__version__ = "0.1.0"
