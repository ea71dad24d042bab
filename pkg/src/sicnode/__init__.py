"""Simulation of an electron-nuclear spin register: spectra, DDRF gates,
dephasing, tomography and experiment runners."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .spincore import SpinRegisterParams, build_hamiltonian, transition_table  # noqa: E402
from .states import DensityMatrix  # noqa: E402

__all__ = ["SpinRegisterParams", "build_hamiltonian", "transition_table", "DensityMatrix",
           "__version__"]
