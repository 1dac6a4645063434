"""Semi-supervised EEG emotion recognition with an attention-based
recurrent autoencoder, on a small numpy autodiff engine."""

__version__ = "0.1.0"
