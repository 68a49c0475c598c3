"""Monte-Carlo toolkit for two-beam intensity correlations in a driven
three-level lambda medium under laser phase noise, with decoherence-rate
extraction by master-curve scaling."""

__version__ = "0.1.0"

from . import calibration, cli, dynamics, noise, observables

__all__ = ["calibration", "cli", "dynamics", "noise", "observables",
           "__version__"]
