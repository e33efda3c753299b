"""Saliency-guided training and white-box adversarial attacks on a small CNN.

The heavy lifting lives in the C++ extension module; this package re-exports
its surface. Images are float32 arrays shaped N x 1 x 28 x 28 with pixels in
[0, 1]; labels are plain integer lists/arrays.
"""

from ._core import (
    DimensionError,
    IoError,
    Model,
    ParameterError,
    accuracy,
    attack,
    eps_grid,
    input_gradients,
    load_idx,
    mask_low_gradient_pixels,
    render_svg,
    robustness_sweep,
    selfcheck,
    set_num_threads,
    synthetic_two_class,
    train_model,
)

__all__ = [
    "DimensionError",
    "IoError",
    "Model",
    "ParameterError",
    "accuracy",
    "attack",
    "eps_grid",
    "input_gradients",
    "load_idx",
    "mask_low_gradient_pixels",
    "render_svg",
    "robustness_sweep",
    "selfcheck",
    "set_num_threads",
    "synthetic_two_class",
    "train_model",
]

__version__ = "0.1.0"
