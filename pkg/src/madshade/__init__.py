"""Material-agnostic denoising: project noisy incident radiance onto a
BSDF-derived basis, denoise it with a scale-invariant U-Net, and shade with
a neural material decoder."""

__version__ = "0.1.0"
