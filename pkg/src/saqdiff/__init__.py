"""Style-aware quantized latent diffusion for one-shot glyph-style generation."""
from .estimators import (GlyphAutoencoder, SlantProbe, StyleDiffusionGenerator, check_images, check_latents,
                         check_texts)

__version__ = "0.1.0"
__all__ = ["GlyphAutoencoder", "StyleDiffusionGenerator", "SlantProbe", "check_images", "check_latents",
           "check_texts", "__version__"]
