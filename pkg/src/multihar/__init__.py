"""Multi-user Wi-Fi activity counting with a quantized edge/cloud split.

The pipeline: a convolutional backbone compresses amplitude windows on the
edge, a residual vector quantizer turns features into a few bits per
position, and a cloud-side transformer decodes a fixed query set into an
activity multiset.  Everything runs on a small reverse-mode autodiff engine
over numpy arrays.
"""

from .config import ConfigError, RunConfig, desk_config, load_config, paper_config, save_config
from .csi import (
    CsiSample,
    CsitError,
    SynthConfig,
    load_tensor_file,
    split_dataset,
    synth_dataset,
    synth_sample,
    write_tensor_file,
)
from .edge_cloud import (
    BandwidthReport,
    CloudRuntime,
    CloudServer,
    EdgeClient,
    EdgeRuntime,
    bandwidth_report,
    loopback_run,
)
from .matching import hungarian, hypothesis_space_sizes, matching_loss, pad_targets, total_loss
from .metrics import MetricReport, aggregate_reports, evaluate_counts, standardize
from .model import ActivityModel
from .rvq import (
    ProtocolError,
    RvqCodebooks,
    capacity,
    deserialize_indices,
    rvq_decode,
    rvq_encode,
    rvq_loss,
    serialize_indices,
)
from .tensor import Tensor
from .training import NumericError, build_dataset, evaluate_model, train

__version__ = "0.1.0"

__all__ = [
    "ActivityModel",
    "BandwidthReport",
    "CloudRuntime",
    "CloudServer",
    "ConfigError",
    "CsiSample",
    "CsitError",
    "EdgeClient",
    "EdgeRuntime",
    "MetricReport",
    "NumericError",
    "ProtocolError",
    "RunConfig",
    "RvqCodebooks",
    "SynthConfig",
    "Tensor",
    "aggregate_reports",
    "bandwidth_report",
    "build_dataset",
    "capacity",
    "desk_config",
    "deserialize_indices",
    "evaluate_counts",
    "evaluate_model",
    "hungarian",
    "hypothesis_space_sizes",
    "load_config",
    "load_tensor_file",
    "loopback_run",
    "matching_loss",
    "pad_targets",
    "paper_config",
    "rvq_decode",
    "rvq_encode",
    "rvq_loss",
    "save_config",
    "serialize_indices",
    "split_dataset",
    "standardize",
    "synth_dataset",
    "synth_sample",
    "total_loss",
    "train",
    "write_tensor_file",
]
