"""Backscatter lip-motion sensing pipeline: scene simulation, signal isolation,
unit segmentation and clustering, subword lexicon, and sequence decoding."""

__version__ = "0.1.0"
