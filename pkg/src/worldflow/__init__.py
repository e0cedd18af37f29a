"""worldflow: desk-scale colored-voxel world generation.

Procedural scene synthesis, a chunk-level vector-set autoencoder, masked
quad rectified-flow refinement with raster-scan assembly, a sketch-conditioned
variable-size world model, and a reconstruction/distribution metric suite,
all on a small numpy autodiff substrate.
"""

__version__ = "0.1.0"
