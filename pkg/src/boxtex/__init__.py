"""boxtex: part-aware textured meshes via deformed template boxes.

Pipeline: fit a box to each part, unfold it into a 4l x 3l RGBA atlas, bake
source colors onto it, learn discrete texture codes and geometry latents,
sample new textures autoregressively conditioned on geometry (and on a seed
part for style coherence), then render with an alpha-aware ray tracer.
"""

__version__ = "0.1.0"
