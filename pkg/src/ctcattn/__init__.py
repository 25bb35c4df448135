"""Joint CTC/attention encoder-decoder with a CTC probe of source-target attention heads."""

__version__ = "0.1.0"
