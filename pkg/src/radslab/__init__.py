"""radslab: radiative transfer on a slab across diffusion scaling regimes.

Kinetic (discrete-ordinates) solvers for the coupled transfer + energy
balance system, half-space Milne and thermalization layer solvers, initial
layer integrators, the bulk diffusion-limit solvers, and a study harness
that cross-verifies kinetic solutions against the matched limits.
"""

__version__ = "0.1.0"
