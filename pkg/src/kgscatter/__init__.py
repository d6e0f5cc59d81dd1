"""Klein-Gordon fields on 1+1 dimensional asymptotically static spacetimes
with a circle Cauchy surface: model reduction, approximate diagonalization
of the Cauchy evolution, in/out states and their smoothing diagnostics."""

__version__ = "0.1.0"
