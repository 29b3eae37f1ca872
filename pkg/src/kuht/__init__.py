"""Kernel hypothesis tests with finite-sample thresholds and exact error analysis."""

from kuht.errors import KuhtError
from kuht.kernels import KernelSpec, gaussian, imq, delta, family, parse_kernel
from kuht.targets import RngStream, gauss, laplace, mixture, finite, parse_model

__version__ = "0.1.0"

__all__ = [
    "KuhtError", "KernelSpec", "gaussian", "imq", "delta", "family", "parse_kernel",
    "RngStream", "gauss", "laplace", "mixture", "finite", "parse_model",
]
