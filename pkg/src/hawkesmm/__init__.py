"""Numerical toolkit for optimal market making under self-exciting order flow.

Pipeline: approximate a completely monotone excitation kernel by a sum of
exponentials (`kernels`), lift the intensity dynamics to a finite Markov state and
simulate exactly (`hawkes`), solve the control problem on a grid (`hjb`) or
estimate its value pointwise by a branching particle method (`branching`), and
evaluate strategies closed-loop by Monte Carlo (`marketsim`).  The `cli` module
wires the stages into reproducible experiments emitting CSV and figure files.
"""

__version__ = "0.1.0"
