"""Temporally coherent optimisation-based style transfer for videos and cubemap panoramas."""
from .energy import LossWeights, longterm_energy, shortterm_energy, temporal_loss
from .flow import (detect_disocclusion, detect_motion_boundary, longterm_weights,
                   shortterm_weights, warp_flow, warp_image)
from .imgcore import (FlowField, ImageFormatError, Sequence, SequenceManifest, WeightMap,
                      read_flo, read_image, write_flo, write_image)
from .perceptual import ExtractorConfig, FeatureExtractor, LayerSpec
from .solver import NumericalFailure, SolverConfig, minimize
from .video import InitStrategy, LongTermConfig, stylize_sequence

__version__ = "0.1.0"
