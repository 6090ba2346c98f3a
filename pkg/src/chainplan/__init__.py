"""Compositional long-horizon 2D planning from a short-horizon diffusion
denoiser, via chain factor graphs and sphere-guided message passing."""

__version__ = "0.1.0"
