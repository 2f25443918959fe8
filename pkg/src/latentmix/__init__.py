"""Meta-RL with imaginary tasks mixed from learned latent task beliefs."""

__version__ = "0.1.0"
