"""CAN bus false-data-injection detection with an LSTM, adversarial attacks and retraining."""

from ._core import (
    CanadvError,
    CommandResult,
    ConfigError,
    Label,
    Window,
    cid_to_mid,
    decode_frame,
    decode_trace,
    encode_frame,
    load_windows,
    parameter_count,
    predict_probabilities,
    run,
    signal_names,
)

__version__ = "0.1.0"

__all__ = [
    "CanadvError",
    "CommandResult",
    "ConfigError",
    "Label",
    "Window",
    "cid_to_mid",
    "decode_frame",
    "decode_trace",
    "encode_frame",
    "load_windows",
    "parameter_count",
    "predict_probabilities",
    "run",
    "signal_names",
]
