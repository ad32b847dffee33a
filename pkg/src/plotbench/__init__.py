"""Vision-language model benchmark for plant-plot simulation configs."""

__version__ = "0.1.0"
