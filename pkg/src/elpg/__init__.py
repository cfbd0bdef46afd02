"""Prior-guided adaptive time-frequency graph network for EEG classification.

Modules
-------
tensor      float64 tensors, reverse-mode autodiff, Adam, gradient checks
signal      trimming, FIR band filtering, normalization, windowing
infofeat    differential entropy and cross-band mutual information
attention   channel-band mask, KL sparsity penalty, BiLSTM encoder
graph       seed/mask/distance adjacency, parcellation, positional codes
model       virtual centers, global attention, gated GCN, classifier
training    losses, early stopping, cross-validation, metrics, ablations
data_io     file formats, feature cache, synthetic cohorts
"""

from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
