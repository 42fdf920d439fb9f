"""Decoupled spatio-temporal forecasting with adaptive graphs and hypergraphs.

The spatial branch mixes learned-graph and hypergraph convolutions; the
temporal branch runs a small causal transformer over patches of the
node-averaged series; a sigmoid gate blends the two forecasts.
"""

from .autodiff import GradCheckConfig, ParamStore, Tensor, grad_check
from .config import ModelConfig, SynthConfig, load_config
from .data import SpatioTemporalDataset, WindowSpec, load_dataset, make_windows, split_dataset, zscore_normalize
from .harness import ForecastReport, ablate, run
from .metrics import metrics
from .model import STHSepNet, gated_fusion, load_checkpoint, save_checkpoint
from .synth import generate, synth

__version__ = "0.1.0"
