from ._core import (
    ConfigError,
    DecodeError,
    EncodedUnit,
    Error,
    FitError,
    InfeasibleError,
    InvariantViolation,
    OutOfRangeError,
    ProtocolError,
    calibrate,
    decode,
    encode,
    min_rate,
    predict,
    residual,
    run,
    select_config,
    synthetic_scan,
    target_bitrate,
)

__version__ = "0.1.0"
