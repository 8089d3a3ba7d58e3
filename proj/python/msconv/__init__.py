from ._core import (
    FLOP_CONVENTION,
    FormatError,
    Network,
    NumericError,
    ShapeError,
    avg_pool2,
    bicubic_resize,
    calibrate_input_size,
    conv2d,
    nearest_subsample2,
    nearest_upsample2,
    pixel_shuffle,
    psnr_y,
    rearrangement_identity_error,
    verify,
)

__all__ = [
    "FLOP_CONVENTION",
    "FormatError",
    "Network",
    "NumericError",
    "ShapeError",
    "avg_pool2",
    "bicubic_resize",
    "calibrate_input_size",
    "conv2d",
    "nearest_subsample2",
    "nearest_upsample2",
    "pixel_shuffle",
    "psnr_y",
    "rearrangement_identity_error",
    "verify",
]
